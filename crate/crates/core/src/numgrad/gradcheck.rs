//! Central finite differences, used to audit analytic gradients.

/// Step for per-operation gradient audits.
pub const FD_STEP: f64 = 1e-5;

/// Step for whole-model audits, where most gradients are tiny next to the
/// loss and rounding error dominates at smaller steps.
pub const AUDIT_STEP: f64 = 1e-3;

/// Magnitude below which both gradients are treated as zero.
pub const ZERO_FLOOR: f64 = 1e-7;

/// Central-difference gradient of `f` at `point`.
pub fn central_difference<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + step;
            let hi = f(&x);
            x[i] = point[i] - step;
            let lo = f(&x);
            x[i] = point[i];
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|)`, or 0 when both are below [`ZERO_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
