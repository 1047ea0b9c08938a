//! Central finite-difference verification of analytic gradients.

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates skipped because the one-sided differences disagree, i.e.
    /// the perturbation straddles a ReLU or max-pool kink.
    pub skipped: Vec<usize>,
    pub checked: usize,
}

/// `|analytic − numeric| / max(1e-6, |analytic| + |numeric|)`. The floor keeps
/// coordinates with a vanishing gradient from being judged on rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Maximum relative error between `analytic` and central differences of `f`
/// around `point`, using step `h` on every coordinate.
pub fn finite_difference_check<F>(mut f: F, point: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len());
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let numeric = central_difference(&mut f, &mut x, i, h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Like [`finite_difference_check`] but skips coordinates where the function
/// is visibly non-differentiable at scale `h`.
pub fn finite_difference_check_kinked<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    h: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len());
    let mut x = point.to_vec();
    let f0 = f(&x);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        skipped: Vec::new(),
        checked: 0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        // Smooth functions give one-sided slopes within O(h·f''); a kink gives
        // an O(1) jump.
        if (forward - backward).abs() > 1e-3 * (forward.abs() + backward.abs()) + 1e-6 {
            report.skipped.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}

fn central_difference<F>(f: &mut F, x: &mut [f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[i];
    x[i] = orig + h;
    let fp = f(x);
    x[i] = orig - h;
    let fm = f(x);
    x[i] = orig;
    (fp - fm) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form() {
        // f(x) = xᵀ A x with symmetric A, gradient 2 A x
        let a = [[2.0, 0.5, -1.0], [0.5, 3.0, 0.25], [-1.0, 0.25, 1.5]];
        let f = |x: &[f64]| {
            (0..3)
                .map(|i| (0..3).map(|j| x[i] * a[i][j] * x[j]).sum::<f64>())
                .sum::<f64>()
        };
        let x = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = (0..3)
            .map(|i| 2.0 * (0..3).map(|j| a[i][j] * x[j]).sum::<f64>())
            .collect();
        assert!(finite_difference_check(f, &x, &grad, 1e-5) < 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| x[0] * x[0];
        assert!(finite_difference_check(f, &[1.0], &[3.0], 1e-5) > 0.1);
    }

    #[test]
    fn kink_is_skipped() {
        let f = |x: &[f64]| x[0].abs() + x[1] * x[1];
        let r = finite_difference_check_kinked(f, &[0.0, 1.0], &[0.0, 2.0], 1e-5);
        assert_eq!(r.skipped, vec![0]);
        assert!(r.max_rel_error < 1e-8);
    }
}
