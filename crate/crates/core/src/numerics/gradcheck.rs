use crate::error::{Error, Result};

/// Compares `analytic_grad` against central differences of `f` at `x`.
///
/// Returns the largest per-coordinate error `|g_i - d_i| / max(|d_i|, floor)`,
/// where `d` is the finite-difference gradient and `floor` is
/// `max(1e-8, 1e-6 * max_j |d_j|)` so coordinates with vanishing gradient do
/// not blow up the ratio.
pub fn finite_diff_check<F>(mut f: F, x: &[f64], analytic_grad: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic_grad.len() != x.len() {
        return Err(Error::shape("finite_diff_check", x.len(), analytic_grad.len()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("finite difference step {h}")));
    }
    let fd = central_differences(&mut f, x, h)?;
    let scale = fd.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let floor = (1e-6 * scale).max(1e-8);
    Ok(fd
        .iter()
        .zip(analytic_grad)
        .map(|(d, g)| (g - d).abs() / d.abs().max(floor))
        .fold(0.0, f64::max))
}

pub fn central_differences<F>(f: &mut F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i} +/- {h}")));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_diff_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function() {
        let err = finite_diff_check(|_| 4.2, &[1.0, 2.0], &[0.0, 0.0], 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_detected() {
        let x = [0.4f64, -1.3];
        let f = |x: &[f64]| x[0].sin() * x[1] + x[1] * x[1];
        let g = [x[0].cos() * x[1], x[0].sin() + 2.0 * x[1]];
        assert!(finite_diff_check(f, &x, &g, 1e-4).unwrap() < 1e-6);
        let wrong: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let err = finite_diff_check(f, &x, &wrong, 1e-4).unwrap();
        assert!((err - 1.0).abs() < 1e-5, "{err}");
    }

    #[test]
    fn non_finite_objective_rejected() {
        let r = finite_diff_check(|x| (x[0]).ln(), &[0.0], &[1.0], 1e-4);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
