//! Derivative-accuracy diagnostics.
//!
//! The first-order check measures, along random tangent directions,
//!   e(t) = |f(R_x(t d)) - f(x) - t <grad f(x), d>|
//! over a list of log-spaced steps and fits the log-log slope. A correct
//! gradient leaves only the quadratic Taylor remainder, so the slope is
//! close to 2. The second-order check subtracts the Hessian model term as
//! well; an exact Hessian yields slope 3, while a Gauss-Newton surrogate is
//! expected to show slope 2 away from zero residual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Manifold;
use crate::scalar::{cast, Real};

/// Outcome of a slope test.
#[derive(Debug, Clone)]
pub struct DerivativeCheck<T> {
    /// Per-direction fitted slopes.
    pub slopes: Vec<T>,
    /// Mean slope over the tested directions.
    pub mean_slope: T,
}

/// Default step list: 25 log-spaced points between 1e-4 and 1e-1.
pub fn default_check_steps<T: Real>() -> Vec<T> {
    let n = 25;
    let (lo, hi) = (1e-4f64.ln(), 1e-1f64.ln());
    (0..n)
        .map(|i| cast::<T>((lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// First-order slope test at `x`; seeded directions make the result
/// reproducible.
pub fn check_gradient<T, M, F, G>(
    m: &M,
    cost: F,
    grad: G,
    x: &M::Point,
    directions: usize,
    steps: &[T],
    seed: u64,
) -> DerivativeCheck<T>
where
    T: Real,
    M: Manifold<T>,
    F: Fn(&M::Point) -> T,
    G: Fn(&M::Point) -> M::Tangent,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = cost(x);
    let g = m.project_tangent(x, &grad(x));
    let mut slopes = Vec::with_capacity(directions);
    for _ in 0..directions.max(1) {
        let d = m.rand_tangent(x, &mut rng);
        let gd = m.inner(x, &g, &d);
        let errors: Vec<(T, T)> = steps
            .iter()
            .map(|&t| {
                let moved = m.retract(x, &m.scale(&d, t));
                let e = (cost(&moved) - f0 - t * gd).abs();
                (t, e)
            })
            .collect();
        slopes.push(fit_slope(&errors, f0, cast::<T>(2.0)));
    }
    let mean = slopes.iter().fold(T::zero(), |a, &b| a + b) / cast::<T>(slopes.len() as f64);
    DerivativeCheck {
        slopes,
        mean_slope: mean,
    }
}

/// Second-order slope test; `hess_vec` is the candidate Hessian operator.
#[allow(clippy::too_many_arguments)]
pub fn check_hessian<T, M, F, G, H>(
    m: &M,
    cost: F,
    grad: G,
    hess_vec: H,
    x: &M::Point,
    directions: usize,
    steps: &[T],
    seed: u64,
) -> DerivativeCheck<T>
where
    T: Real,
    M: Manifold<T>,
    F: Fn(&M::Point) -> T,
    G: Fn(&M::Point) -> M::Tangent,
    H: Fn(&M::Point, &M::Tangent) -> M::Tangent,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = cost(x);
    let g = m.project_tangent(x, &grad(x));
    let half = cast::<T>(0.5);
    let mut slopes = Vec::with_capacity(directions);
    for _ in 0..directions.max(1) {
        let d = m.rand_tangent(x, &mut rng);
        let gd = m.inner(x, &g, &d);
        let hd = hess_vec(x, &d);
        let dhd = m.inner(x, &d, &hd);
        let errors: Vec<(T, T)> = steps
            .iter()
            .map(|&t| {
                let moved = m.retract(x, &m.scale(&d, t));
                let model = f0 + t * gd + half * t * t * dhd;
                (t, (cost(&moved) - model).abs())
            })
            .collect();
        slopes.push(fit_slope(&errors, f0, cast::<T>(3.0)));
    }
    let mean = slopes.iter().fold(T::zero(), |a, &b| a + b) / cast::<T>(slopes.len() as f64);
    DerivativeCheck {
        slopes,
        mean_slope: mean,
    }
}

/// Least-squares slope of ln(e) against ln(t), ignoring points drowned in
/// floating-point noise. When every point sits at the noise floor the model
/// matches to machine precision and the ideal slope is reported.
fn fit_slope<T: Real>(errors: &[(T, T)], f0: T, ideal: T) -> T {
    let floor = T::epsilon() * (T::one() + f0.abs()) * cast::<T>(100.0);
    let pts: Vec<(T, T)> = errors
        .iter()
        .filter(|&&(_, e)| e > floor)
        .map(|&(t, e)| (t.ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return ideal;
    }
    let n = cast::<T>(pts.len() as f64);
    let sx = pts.iter().fold(T::zero(), |a, p| a + p.0);
    let sy = pts.iter().fold(T::zero(), |a, p| a + p.1);
    let sxx = pts.iter().fold(T::zero(), |a, p| a + p.0 * p.0);
    let sxy = pts.iter().fold(T::zero(), |a, p| a + p.0 * p.1);
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
#[allow(clippy::ptr_arg)] // closures must match Fn(&M::Point) with Point = Vec<f64>
mod tests {
    use super::*;
    use crate::manifold::EuclideanManifold;

    fn quad_cost(x: &Vec<f64>) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn quad_grad(x: &Vec<f64>) -> Vec<f64> {
        x.iter().map(|v| 2.0 * v).collect()
    }

    #[test]
    fn exact_gradient_has_slope_two() {
        let m = EuclideanManifold::new(3);
        let x = vec![0.4, -0.2, 0.9];
        let steps = default_check_steps::<f64>();
        let check = check_gradient(&m, quad_cost, quad_grad, &x, 3, &steps, 0);
        assert!(
            check.mean_slope > 1.8 && check.mean_slope < 2.2,
            "slope = {}",
            check.mean_slope
        );
    }

    #[test]
    fn scaled_gradient_has_slope_one() {
        let m = EuclideanManifold::new(3);
        let x = vec![0.4, -0.2, 0.9];
        let steps = default_check_steps::<f64>();
        let bad = |x: &Vec<f64>| x.iter().map(|v| 1.0 * v).collect::<Vec<f64>>();
        let check = check_gradient(&m, quad_cost, bad, &x, 3, &steps, 0);
        assert!(
            check.mean_slope > 0.8 && check.mean_slope < 1.2,
            "slope = {}",
            check.mean_slope
        );
    }

    #[test]
    fn exact_hessian_of_cubic_cost_has_slope_three() {
        // Cubic term gives a genuinely cubic remainder.
        let m = EuclideanManifold::new(2);
        let cost = |x: &Vec<f64>| x.iter().map(|v| v * v + v * v * v).sum::<f64>();
        let grad = |x: &Vec<f64>| {
            x.iter()
                .map(|v| 2.0 * v + 3.0 * v * v)
                .collect::<Vec<f64>>()
        };
        let hess = |x: &Vec<f64>, v: &Vec<f64>| {
            x.iter()
                .zip(v)
                .map(|(&xi, &vi)| (2.0 + 6.0 * xi) * vi)
                .collect::<Vec<f64>>()
        };
        let x = vec![0.3, -0.1];
        let steps = default_check_steps::<f64>();
        let check = check_hessian(&m, cost, grad, hess, &x, 3, &steps, 0);
        assert!(
            check.mean_slope > 2.7 && check.mean_slope < 3.3,
            "slope = {}",
            check.mean_slope
        );
    }

    #[test]
    fn pure_quadratic_with_exact_hessian_reports_ideal_slope() {
        // Remainder is zero to machine precision; the check reports 3.
        let m = EuclideanManifold::new(2);
        let hess = |_: &Vec<f64>, v: &Vec<f64>| v.iter().map(|t| 2.0 * t).collect::<Vec<f64>>();
        let steps = default_check_steps::<f64>();
        let check = check_hessian(
            &m,
            quad_cost,
            quad_grad,
            hess,
            &vec![0.5, 0.25],
            2,
            &steps,
            0,
        );
        assert!((check.mean_slope - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_hessian_operator_has_slope_two() {
        let m = EuclideanManifold::new(2);
        let cost = |x: &Vec<f64>| x.iter().map(|v| v * v + v * v * v).sum::<f64>();
        let grad = |x: &Vec<f64>| {
            x.iter()
                .map(|v| 2.0 * v + 3.0 * v * v)
                .collect::<Vec<f64>>()
        };
        let hess = |_: &Vec<f64>, v: &Vec<f64>| vec![0.0; v.len()];
        let steps = default_check_steps::<f64>();
        let check = check_hessian(&m, cost, grad, hess, &vec![0.3, -0.1], 3, &steps, 0);
        assert!(
            check.mean_slope > 1.8 && check.mean_slope < 2.2,
            "slope = {}",
            check.mean_slope
        );
    }
}
