//! Central finite differences for verifying analytic gradients.

/// Step used by all float64 gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Differences at or below this are treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-8;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|)`, or 0 when `|a − n| ≤ ABS_FLOOR`.
///
/// The floor absorbs finite-difference roundoff (about `1e-11` for O(1)
/// losses at `h = 1e-5`) on gradients that are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Largest [`relative_error`] over paired slices.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let g = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[1.5, -3.0], FD_STEP);
        assert!(relative_error(3.0 * 1.5 * 1.5, g[0]) < 1e-8);
        assert!(relative_error(2.0, g[1]) < 1e-8);
    }

    #[test]
    fn floor_applies_to_tiny_differences() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2e-17, 3e-11), 0.0);
        assert_eq!(relative_error(0.0, 1e-6), 1.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
