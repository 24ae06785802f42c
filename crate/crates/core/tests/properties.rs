//! Invariants over randomly generated inputs.

mod common;

use proptest::prelude::*;
use qwf_core::baselines::{MajorityBaseline, QuestionWordList};
use qwf_core::corpus::{agreement_report, binarize, split_dataset, AnnotatedQuery, LabeledQuery};
use qwf_core::metrics::{accuracy, BleuStats};
use qwf_core::rerank::{
    baseline_top1, default_lambda_grid, evaluate_selection, oracle_select, rerank, tune_lambda, Candidate, Chooser,
    NBestList, RerankerModel,
};

fn lists_strategy() -> impl Strategy<Value = Vec<NBestList>> {
    let cand = (prop::collection::vec(0u8..5, 1..7), -5.0f64..0.0, 0.0f64..=1.0);
    let list = (prop::collection::vec(0u8..5, 1..7), prop::collection::vec(cand, 1..6));
    prop::collection::vec(list, 1..6).prop_map(|ls| {
        ls.into_iter()
            .enumerate()
            .map(|(i, (reference, cands))| NBestList {
                id: format!("l{i}"),
                reference: reference.iter().map(|w| format!("w{w}")).collect(),
                candidates: cands
                    .into_iter()
                    .enumerate()
                    .map(|(r, (toks, g, p))| Candidate {
                        rank: r as u32 + 1,
                        tokens: toks.iter().map(|w| format!("w{w}")).collect(),
                        gen_score: (g * 4.0).round() / 4.0,
                        p_wf: Some((p * 4.0).round() / 4.0),
                    })
                    .collect(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn lambda_zero_reproduces_top1(lists in lists_strategy()) {
        let m = RerankerModel::default();
        for l in &lists {
            // Top-1 means highest gen score among the ranks; generators emit
            // them in descending order, so sort the same way here.
            let mut l = l.clone();
            l.candidates.sort_by(|a, b| b.gen_score.total_cmp(&a.gen_score));
            for (i, c) in l.candidates.iter_mut().enumerate() {
                c.rank = i as u32 + 1;
            }
            prop_assert_eq!(rerank(&l, &m).unwrap(), baseline_top1(&l).unwrap());
        }
    }

    #[test]
    fn tuned_dev_bleu_dominates_baseline(lists in lists_strategy()) {
        let tuned = tune_lambda(&lists, &default_lambda_grid(), false).unwrap();
        let at_zero = evaluate_selection(&lists, Chooser::Reranked, &RerankerModel::default()).unwrap();
        prop_assert!(tuned.dev_bleu4 >= at_zero.bleu4);
        prop_assert_eq!(tuned.curve.len(), 51);
    }

    #[test]
    fn oracle_dominates_every_candidate(lists in lists_strategy()) {
        for l in &lists {
            let best = oracle_select(l).unwrap();
            let best_score = BleuStats::from_pair(&best.tokens, &l.reference).smoothed_bleu(4);
            for c in &l.candidates {
                let s = BleuStats::from_pair(&c.tokens, &l.reference).smoothed_bleu(4);
                prop_assert!(best_score >= s);
                if s == best_score {
                    prop_assert!(best.rank <= c.rank);
                }
            }
        }
    }

    #[test]
    fn rerank_ignores_candidate_order(lists in lists_strategy(), lambda in 0.0f64..10.0) {
        let m = RerankerModel::new(lambda).unwrap();
        for l in &lists {
            let mut rev = l.clone();
            rev.candidates.reverse();
            let a = rerank(l, &m).unwrap();
            let b = rerank(&rev, &m).unwrap();
            let distinct = l.candidates.iter().filter(|c| m.score(c).unwrap() == m.score(a).unwrap()).count() == 1;
            if distinct {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn huge_lambda_picks_max_p_wf(lists in lists_strategy()) {
        let m = RerankerModel::new(1e6).unwrap();
        for l in &lists {
            let max_p = l.candidates.iter().map(|c| c.p_wf.unwrap()).fold(f64::MIN, f64::max);
            prop_assert_eq!(rerank(l, &m).unwrap().p_wf.unwrap(), max_p);
        }
    }

    #[test]
    fn accuracy_is_permutation_invariant(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..40), rot in 0usize..40) {
        let (p, g): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let r = accuracy(&p, &g).unwrap();
        let k = rot % pairs.len();
        let (mut p2, mut g2) = (p.clone(), g.clone());
        p2.rotate_left(k);
        g2.rotate_left(k);
        prop_assert_eq!(r, accuracy(&p2, &g2).unwrap());
        prop_assert_eq!(r.tp + r.fp + r.tn + r.fn_, r.n);
    }

    #[test]
    fn majority_accuracy_is_label_frequency(train in prop::collection::vec(0u8..2, 1..30), eval in prop::collection::vec(0u8..2, 1..30)) {
        let lq = |l: &u8| LabeledQuery { text: String::new(), label: *l };
        let m = MajorityBaseline::fit(&train.iter().map(lq).collect::<Vec<_>>()).unwrap();
        let preds = vec![m.predict(); eval.len()];
        let freq = eval.iter().filter(|&&l| l == m.label).count() as f64 / eval.len() as f64;
        prop_assert_eq!(accuracy(&preds, &eval).unwrap().accuracy, freq);
    }

    #[test]
    fn question_word_rule_reads_only_first_token(first in "[a-z]{1,6}", rest1 in prop::collection::vec("[a-z?]{1,5}", 0..5), rest2 in prop::collection::vec("[a-z?]{1,5}", 0..5)) {
        let list = QuestionWordList::default();
        let mut a = vec![first.clone()];
        a.extend(rest1);
        let mut b = vec![first];
        b.extend(rest2);
        prop_assert_eq!(list.classify(&a), list.classify(&b));
    }

    #[test]
    fn split_is_a_partition(votes in prop::collection::vec(0u8..6, 3..60), seed in any::<u64>()) {
        let qs: Vec<AnnotatedQuery> = votes.iter().enumerate().map(|(i, &v)| AnnotatedQuery::new(format!("q{i}"), v).unwrap()).collect();
        let n = qs.len();
        let sizes = (n / 2, n / 4, n - n / 2 - n / 4);
        let s = split_dataset(&qs, sizes, seed).unwrap();
        prop_assert_eq!(s.sizes(), sizes);
        let mut texts: Vec<String> = s.all().into_iter().map(|q| q.text().to_string()).collect();
        texts.sort();
        let mut orig: Vec<String> = qs.iter().map(|q| q.text().to_string()).collect();
        orig.sort();
        prop_assert_eq!(texts, orig);
        prop_assert_eq!(split_dataset(&qs, sizes, seed).unwrap(), s);
    }

    #[test]
    fn report_counts_are_consistent(votes in prop::collection::vec(0u8..6, 2..60)) {
        let qs: Vec<AnnotatedQuery> = votes.iter().map(|&v| AnnotatedQuery::new("q", v).unwrap()).collect();
        if let Ok(r) = agreement_report(&qs) {
            prop_assert_eq!(r.histogram.values().sum::<usize>(), qs.len());
            prop_assert_eq!(r.agreement_count, votes.iter().filter(|&&v| v <= 1 || v >= 4).count());
            prop_assert!(r.kappa <= 1.0);
        }
        let labels = binarize(&qs, 0.8);
        prop_assert_eq!(labels.iter().filter(|l| l.label == 1).count(), votes.iter().filter(|&&v| v >= 4).count());
    }
}

#[test]
fn synthetic_fixture_tunes_to_references() {
    let lists = common::rerank_fixture();
    let base = evaluate_selection(&lists, Chooser::Baseline, &RerankerModel::default()).unwrap();
    assert!(base.bleu4 < 1.0);
    let tuned = tune_lambda(&lists, &default_lambda_grid(), false).unwrap();
    assert_eq!(tuned.dev_bleu4, 1.0);
    assert!(tuned.model.lambda > 0.0);
    let r = evaluate_selection(&lists, Chooser::Reranked, &tuned.model).unwrap();
    assert_eq!((r.bleu1, r.bleu4), (1.0, 1.0));
    let o = evaluate_selection(&lists, Chooser::Oracle, &RerankerModel::default()).unwrap();
    assert_eq!((o.bleu1, o.bleu4), (1.0, 1.0));
    let grid0 = tune_lambda(&lists, &[0.0], false).unwrap();
    assert_eq!(grid0.model.lambda, 0.0);
    assert_eq!(grid0.dev_bleu4, base.bleu4);
}

#[test]
fn single_candidate_oracle_equals_baseline() {
    let mut lists = common::rerank_fixture();
    for l in &mut lists {
        l.candidates.truncate(1);
    }
    let m = RerankerModel::default();
    assert_eq!(
        evaluate_selection(&lists, Chooser::Oracle, &m).unwrap(),
        evaluate_selection(&lists, Chooser::Baseline, &m).unwrap()
    );
}
