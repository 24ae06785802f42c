//! Central finite-difference gradient checking for flat parameter vectors.

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Index of the worst parameter.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator, so that two gradients
/// that are both ~0 compare as equal instead of amplifying rounding noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares `analytic` against `(loss(p + h e_i) - loss(p - h e_i)) / 2h`
/// for every index in `indices`.
pub fn check<F>(params: &mut [f64], analytic: &[f64], step: f64, indices: impl IntoIterator<Item = usize>, mut loss: F) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    let mut out = GradCheck { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    for i in indices {
        let orig = params[i];
        params[i] = orig + step;
        let plus = loss(params);
        params[i] = orig - step;
        let minus = loss(params);
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        out.checked += 1;
        if err > out.max_rel_error || out.checked == 1 {
            out = GradCheck { max_rel_error: err, worst_index: i, analytic: analytic[i], numeric, checked: out.checked };
        }
    }
    out
}
