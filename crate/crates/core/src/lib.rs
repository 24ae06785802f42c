//! Query well-formedness: decide whether a search query is a well-formed
//! natural-language question.
//!
//! The crate covers the full experimental pipeline: the annotated corpus and
//! its agreement statistics ([`corpus`]), n-gram featurization
//! ([`featurize`]), a perceptron POS tagger ([`postag`]), the embedding-sum
//! feed-forward classifier ([`ffnet`]), reference baselines ([`baselines`]),
//! accuracy and BLEU ([`metrics`]), and n-best reranking of generated
//! questions by well-formedness ([`rerank`]).

pub mod baselines;
pub mod container;
pub mod corpus;
pub mod error;
pub mod featurize;
pub mod ffnet;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod postag;
pub mod rerank;
pub mod seed;

pub use corpus::{AnnotatedQuery, DatasetSplit, LabeledQuery};
pub use error::{Error, Result};
pub use featurize::{FamilySet, FeatureFamily, FeatureSpace, FeatureVector, QueryAnalysis};
pub use ffnet::{FfnConfig, FfnModel, TargetMode};
pub use optim::TrainReport;
pub use pipeline::{Classifier, Pipeline, Tagging};
pub use postag::{PerceptronTagger, TaggedSentence};
pub use rerank::{Candidate, NBestList, RerankerModel};
