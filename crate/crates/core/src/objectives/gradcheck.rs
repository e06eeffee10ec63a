use ndarray::{Array2, ArrayView2};

/// Compares the analytic gradient returned by `f` with central finite
/// differences of step `eps` on every coordinate of `x`.
///
/// Returns `max |analytic - numeric| / max(1e-8, |numeric|)`.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match the input");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe).0;
        probe[i] = x[i] - eps;
        let down = f(&probe).0;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1e-8));
    }
    worst
}

/// Concatenates matrices in row-major order.
pub fn flatten(parts: &[ArrayView2<f64>]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Splits a flat vector back into matrices of the given shapes.
pub fn unflatten(x: &[f64], shapes: &[(usize, usize)]) -> Vec<Array2<f64>> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = Array2::from_shape_vec((r, c), x[offset..offset + r * c].to_vec()).expect("shape fits");
            offset += r * c;
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_quadratic() {
        let f = |x: &[f64]| (x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect());
        assert!(grad_check(f, &[0.3, -1.2, 2.0], 1e-5) < 1e-8);
        let wrong = |x: &[f64]| (x.iter().map(|v| v * v).sum(), x.iter().map(|v| 3.0 * v).collect());
        assert!(grad_check(wrong, &[0.3, -1.2, 2.0], 1e-5) > 0.4);
    }

    #[test]
    fn flatten_round_trip() {
        let a = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64);
        let b = Array2::from_shape_fn((1, 2), |(_, j)| -(j as f64));
        let flat = flatten(&[a.view(), b.view()]);
        let back = unflatten(&flat, &[(2, 3), (1, 2)]);
        assert_eq!(back, vec![a, b]);
    }
}
