//! Finite-difference gradient verification.

/// Default central-difference step for double precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares an analytic gradient against central differences of `f` at `x`.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check(f: impl Fn(&[f64]) -> f64, analytic: &[f64], x: &[f64], h: f64) -> f64 {
    assert!(h > 0.0, "step must be positive");
    assert_eq!(analytic.len(), x.len(), "gradient/point length mismatch");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_fd_accuracy() {
        let f = |x: &[f64]| x[0] * x[0];
        let err = grad_check(f, &[6.0], &[3.0], DEFAULT_STEP);
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |x: &[f64]| x[0] * x[0];
        let err = grad_check(f, &[5.0], &[3.0], DEFAULT_STEP);
        assert!(err > 0.1);
    }
}
