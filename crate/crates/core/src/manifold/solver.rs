//! First- and second-order solvers on manifolds.
//!
//! [`rgd_solve`] is steepest descent with backtracking Armijo line search
//! (a fixed-step mode is available for fidelity experiments). [`rtr_solve`]
//! is a classic trust-region outer loop with a Steihaug-Toint truncated-CG
//! inner solve. Both stop on the Riemannian gradient norm.

use std::time::Instant;

use thiserror::Error;

use super::Manifold;
use crate::scalar::{cast, Real};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-finite cost at iteration {0}")]
    NonFiniteCost(usize),
    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// Stopping and step-control parameters for both solvers.
#[derive(Debug, Clone)]
pub struct SolverConfig<T> {
    pub max_iters: usize,
    /// Gradient-norm stopping threshold.
    pub grad_tol: T,
    /// First Armijo trial step.
    pub initial_step: T,
    /// Backtracking contraction factor, in (0, 1).
    pub contraction: T,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: T,
    /// Halvings allowed before the line search gives up.
    pub max_backtracks: usize,
    /// When set, gradient descent takes this fixed step with no line search.
    pub fixed_step: Option<T>,
    pub tr_initial_radius: T,
    pub tr_max_radius: T,
    /// Steps with reduction ratio above this are accepted.
    pub tr_accept_ratio: T,
    /// Ratio below which the radius shrinks.
    pub tr_shrink_threshold: T,
    /// Ratio above which the radius may grow (when the step hit the boundary).
    pub tr_expand_threshold: T,
    pub tr_shrink_factor: T,
    pub tr_expand_factor: T,
    /// Radius below this value terminates with `TrustRadiusCollapse`.
    pub tr_min_radius: T,
    /// Size the radii from the problem dimension (`sqrt(dim)` max, an eighth
    /// of that initially) instead of the explicit fields above.
    pub tr_auto_radius: bool,
    /// Truncated-CG relative residual target.
    pub tcg_kappa: T,
    /// Truncated-CG superlinear exponent.
    pub tcg_theta: T,
    /// Seed for any randomized component (kept for reproducibility; the
    /// solvers themselves are deterministic).
    pub rng_seed: Option<u64>,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: cast(1e-8),
            initial_step: cast(1.0),
            contraction: cast(0.5),
            sufficient_decrease: cast(1e-4),
            max_backtracks: 50,
            fixed_step: None,
            tr_initial_radius: cast(1.0),
            tr_max_radius: cast(100.0),
            tr_accept_ratio: cast(0.05),
            tr_shrink_threshold: cast(0.25),
            tr_expand_threshold: cast(0.75),
            tr_shrink_factor: cast(0.25),
            tr_expand_factor: cast(2.0),
            tr_min_radius: cast(1e-14),
            tr_auto_radius: true,
            tcg_kappa: cast(0.1),
            tcg_theta: cast(1.0),
            rng_seed: None,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    // NaN parameters must fail the positivity tests, hence the negated form.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SolverError> {
        let pos = [
            ("grad_tol", self.grad_tol),
            ("initial_step", self.initial_step),
            ("sufficient_decrease", self.sufficient_decrease),
            ("tr_initial_radius", self.tr_initial_radius),
            ("tr_max_radius", self.tr_max_radius),
            ("tr_min_radius", self.tr_min_radius),
            ("tcg_kappa", self.tcg_kappa),
        ];
        for (name, v) in pos {
            if !(v > T::zero()) {
                return Err(SolverError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        if !(self.contraction > T::zero() && self.contraction < T::one()) {
            return Err(SolverError::InvalidConfig(
                "contraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Reason the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient norm fell below `grad_tol`.
    GradTol,
    /// Iteration budget exhausted.
    MaxIters,
    /// Line search could not find sufficient decrease.
    StepTooSmall,
    /// Trust-region radius underflowed.
    TrustRadiusCollapse,
}

#[derive(Debug, Clone)]
pub struct IterationRecord<T> {
    pub cost: T,
    pub grad_norm: T,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport<P, T> {
    pub final_point: P,
    pub final_cost: T,
    /// Outer iterations performed; `history.len() == iterations + 1`.
    pub iterations: usize,
    pub history: Vec<IterationRecord<T>>,
    pub termination: Termination,
}

impl<P, T: Real> SolveReport<P, T> {
    pub fn converged(&self) -> bool {
        self.termination == Termination::GradTol
    }
}

fn finite_or<T: Real>(v: T, err: SolverError) -> Result<T, SolverError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(err)
    }
}

/// Riemannian gradient descent: `x_{k+1} = retract(x_k, -alpha_k grad f(x_k))`.
///
/// `grad` may return an ambient vector; it is projected onto the tangent
/// space before use. Non-finite cost or gradient at an accepted point is an
/// error; non-finite trial points during the line search are simply rejected.
pub fn rgd_solve<T, M, F, G>(
    m: &M,
    cost: F,
    grad: G,
    x0: M::Point,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<M::Point, T>, SolverError>
where
    T: Real,
    M: Manifold<T>,
    F: Fn(&M::Point) -> T,
    G: Fn(&M::Point) -> M::Tangent,
{
    cfg.validate()?;
    let clock = Instant::now();
    let mut x = x0;
    let mut f = finite_or(cost(&x), SolverError::NonFiniteCost(0))?;
    let mut history = Vec::with_capacity(cfg.max_iters + 1);
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;

    for k in 0..=cfg.max_iters {
        let g = m.project_tangent(&x, &grad(&x));
        let gnorm = finite_or(m.norm(&x, &g), SolverError::NonFiniteGradient(k))?;
        history.push(IterationRecord {
            cost: f,
            grad_norm: gnorm,
            elapsed_s: clock.elapsed().as_secs_f64(),
        });
        if gnorm < cfg.grad_tol {
            termination = Termination::GradTol;
            break;
        }
        if k == cfg.max_iters {
            termination = Termination::MaxIters;
            break;
        }

        let direction = m.scale(&g, -T::one());
        if let Some(alpha) = cfg.fixed_step {
            // Algorithm-faithful mode: constant step, no acceptance test.
            x = m.retract(&x, &m.scale(&direction, alpha));
            f = finite_or(cost(&x), SolverError::NonFiniteCost(k + 1))?;
            iterations += 1;
            continue;
        }

        // Backtracking Armijo line search along -grad.
        let slope = -gnorm * gnorm;
        let mut alpha = cfg.initial_step;
        let mut accepted = false;
        for _ in 0..=cfg.max_backtracks {
            let candidate = m.retract(&x, &m.scale(&direction, alpha));
            let fc = cost(&candidate);
            if fc.is_finite() && fc <= f + cfg.sufficient_decrease * alpha * slope {
                x = candidate;
                f = fc;
                accepted = true;
                break;
            }
            alpha = alpha * cfg.contraction;
        }
        if !accepted {
            termination = Termination::StepTooSmall;
            break;
        }
        iterations += 1;
    }

    Ok(SolveReport {
        final_cost: f,
        final_point: x,
        iterations,
        history,
        termination,
    })
}

/// Steihaug-Toint truncated conjugate gradient for the trust-region subproblem
///   min_s <g, s> + 0.5 <s, H s>   s.t.  ||s|| <= radius.
/// Returns the step and whether the boundary was hit.
fn truncated_cg<T, M, H>(
    m: &M,
    x: &M::Point,
    g: &M::Tangent,
    hess_vec: &H,
    radius: T,
    cfg: &SolverConfig<T>,
) -> (M::Tangent, bool)
where
    T: Real,
    M: Manifold<T>,
    H: Fn(&M::Point, &M::Tangent) -> M::Tangent,
{
    let mut eta = m.zero_tangent(x);
    let mut r = g.clone();
    let mut delta = m.scale(g, -T::one());
    let r0_norm = m.norm(x, &r);
    if r0_norm == T::zero() {
        return (eta, false);
    }
    let target = r0_norm * cfg.tcg_kappa.min(r0_norm.powf(cfg.tcg_theta));
    let max_inner = m.dim().max(1);

    let mut r_sq = r0_norm * r0_norm;
    for _ in 0..max_inner {
        let h_delta = hess_vec(x, &delta);
        let curvature = m.inner(x, &delta, &h_delta);
        let eta_sq = m.inner(x, &eta, &eta);
        let eta_delta = m.inner(x, &eta, &delta);
        let delta_sq = m.inner(x, &delta, &delta);

        if curvature <= T::zero() {
            let tau = boundary_step(eta_sq, eta_delta, delta_sq, radius);
            return (m.lincomb(T::one(), &eta, tau, &delta), true);
        }
        let alpha = r_sq / curvature;
        let new_norm_sq = eta_sq + (alpha + alpha) * eta_delta + alpha * alpha * delta_sq;
        if new_norm_sq >= radius * radius {
            let tau = boundary_step(eta_sq, eta_delta, delta_sq, radius);
            return (m.lincomb(T::one(), &eta, tau, &delta), true);
        }
        eta = m.lincomb(T::one(), &eta, alpha, &delta);
        r = m.lincomb(T::one(), &r, alpha, &h_delta);
        let r_sq_new = m.inner(x, &r, &r);
        if r_sq_new.sqrt() <= target {
            return (eta, false);
        }
        let beta = r_sq_new / r_sq;
        delta = m.lincomb(-T::one(), &r, beta, &delta);
        r_sq = r_sq_new;
    }
    (eta, false)
}

/// Positive root of ||eta + tau * delta|| = radius.
fn boundary_step<T: Real>(eta_sq: T, eta_delta: T, delta_sq: T, radius: T) -> T {
    let disc = eta_delta * eta_delta + delta_sq * (radius * radius - eta_sq);
    (-eta_delta + disc.max(T::zero()).sqrt()) / delta_sq
}

/// Riemannian trust-region solver with truncated-CG subproblem solves.
///
/// `hess_vec` must be a symmetric operator on the tangent space at its first
/// argument; a Gauss-Newton surrogate is the intended default for
/// least-squares costs.
pub fn rtr_solve<T, M, F, G, H>(
    m: &M,
    cost: F,
    grad: G,
    hess_vec: H,
    x0: M::Point,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<M::Point, T>, SolverError>
where
    T: Real,
    M: Manifold<T>,
    F: Fn(&M::Point) -> T,
    G: Fn(&M::Point) -> M::Tangent,
    H: Fn(&M::Point, &M::Tangent) -> M::Tangent,
{
    cfg.validate()?;
    let clock = Instant::now();
    let mut x = x0;
    let mut f = finite_or(cost(&x), SolverError::NonFiniteCost(0))?;
    let (mut radius, max_radius) = if cfg.tr_auto_radius {
        let typical = cast::<T>((m.dim().max(1) as f64).sqrt());
        (typical / cast::<T>(8.0), typical)
    } else {
        (cfg.tr_initial_radius, cfg.tr_max_radius)
    };
    let mut history = Vec::with_capacity(cfg.max_iters + 1);
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;

    for k in 0..=cfg.max_iters {
        let g = m.project_tangent(&x, &grad(&x));
        let gnorm = finite_or(m.norm(&x, &g), SolverError::NonFiniteGradient(k))?;
        history.push(IterationRecord {
            cost: f,
            grad_norm: gnorm,
            elapsed_s: clock.elapsed().as_secs_f64(),
        });
        if gnorm < cfg.grad_tol {
            termination = Termination::GradTol;
            break;
        }
        if k == cfg.max_iters {
            termination = Termination::MaxIters;
            break;
        }

        let (step, hit_boundary) = truncated_cg(m, &x, &g, &hess_vec, radius, cfg);
        let h_step = hess_vec(&x, &step);
        let predicted = -(m.inner(&x, &g, &step) + cast::<T>(0.5) * m.inner(&x, &step, &h_step));
        let candidate = m.retract(&x, &step);
        let fc = cost(&candidate);
        let actual = f - fc;

        let ratio = if predicted > T::zero() && fc.is_finite() {
            actual / predicted
        } else {
            -T::one()
        };

        if ratio < cfg.tr_shrink_threshold {
            radius = radius * cfg.tr_shrink_factor;
        } else if ratio > cfg.tr_expand_threshold && hit_boundary {
            radius = (radius * cfg.tr_expand_factor).min(max_radius);
        }
        if ratio > cfg.tr_accept_ratio && fc.is_finite() {
            x = candidate;
            f = fc;
        }
        iterations += 1;
        if radius < cfg.tr_min_radius {
            // Record the state reached before the radius underflowed.
            let g = m.project_tangent(&x, &grad(&x));
            let gnorm = finite_or(m.norm(&x, &g), SolverError::NonFiniteGradient(k + 1))?;
            history.push(IterationRecord {
                cost: f,
                grad_norm: gnorm,
                elapsed_s: clock.elapsed().as_secs_f64(),
            });
            termination = Termination::TrustRadiusCollapse;
            break;
        }
    }

    Ok(SolveReport {
        final_cost: f,
        final_point: x,
        iterations,
        history,
        termination,
    })
}

#[cfg(test)]
#[allow(clippy::ptr_arg)] // closures must match Fn(&M::Point) with Point = Vec<f64>
mod tests {
    use super::*;
    use crate::manifold::EuclideanManifold;
    use approx::assert_relative_eq;

    fn quadratic_cost(x: &Vec<f64>) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn quadratic_grad(x: &Vec<f64>) -> Vec<f64> {
        x.iter().map(|v| 2.0 * v).collect()
    }

    #[test]
    fn rgd_minimizes_quadratic() {
        let m = EuclideanManifold::new(2);
        let cfg = SolverConfig::<f64> {
            grad_tol: 1e-9,
            ..Default::default()
        };
        let report = rgd_solve(&m, quadratic_cost, quadratic_grad, vec![1.0, 1.0], &cfg).unwrap();
        assert!(report.converged());
        assert!(report.final_cost < 1e-12);
        assert_relative_eq!(report.final_point[0], 0.0, epsilon = 1e-6);
        assert_eq!(report.history.len(), report.iterations + 1);
    }

    #[test]
    fn rgd_cost_history_non_increasing() {
        let m = EuclideanManifold::new(3);
        let cfg = SolverConfig::<f64>::default();
        let cost = |x: &Vec<f64>| {
            x.iter()
                .enumerate()
                .map(|(i, v)| (i + 1) as f64 * v * v)
                .sum::<f64>()
        };
        let grad = |x: &Vec<f64>| {
            x.iter()
                .enumerate()
                .map(|(i, v)| 2.0 * (i + 1) as f64 * v)
                .collect::<Vec<f64>>()
        };
        let report = rgd_solve(&m, cost, grad, vec![1.0, -2.0, 3.0], &cfg).unwrap();
        for w in report.history.windows(2) {
            assert!(w[1].cost <= w[0].cost + 1e-15);
        }
    }

    #[test]
    fn rgd_rejects_non_finite_start() {
        let m = EuclideanManifold::new(1);
        let cfg = SolverConfig::<f64>::default();
        let err = rgd_solve(&m, |_| f64::NAN, quadratic_grad, vec![1.0], &cfg).unwrap_err();
        assert!(matches!(err, SolverError::NonFiniteCost(0)));
    }

    #[test]
    fn rgd_reports_step_too_small_instead_of_crashing() {
        // Gradient deliberately points uphill: no Armijo step can succeed.
        let m = EuclideanManifold::new(1);
        let cfg = SolverConfig::<f64> {
            max_backtracks: 8,
            ..Default::default()
        };
        let report = rgd_solve(&m, |x: &Vec<f64>| x[0], |_| vec![-1.0], vec![0.0], &cfg).unwrap();
        assert_eq!(report.termination, Termination::StepTooSmall);
    }

    #[test]
    fn rtr_solves_quadratic_in_two_outer_iterations() {
        // With a radius admitting the full step, the quadratic model is
        // exact and the first tCG solve lands on the minimizer.
        let m = EuclideanManifold::new(4);
        let cfg = SolverConfig::<f64> {
            grad_tol: 1e-10,
            tr_auto_radius: false,
            tr_initial_radius: 10.0,
            ..Default::default()
        };
        let hess = |_: &Vec<f64>, v: &Vec<f64>| v.iter().map(|t| 2.0 * t).collect::<Vec<f64>>();
        let report = rtr_solve(
            &m,
            quadratic_cost,
            quadratic_grad,
            hess,
            vec![1.0, 2.0, -1.0, 0.5],
            &cfg,
        )
        .unwrap();
        assert!(report.converged());
        assert!(
            report.iterations <= 2,
            "took {} iterations",
            report.iterations
        );
        assert!(report.final_cost < 1e-18);
    }

    #[test]
    fn solvers_are_deterministic() {
        let m = EuclideanManifold::new(2);
        let cfg = SolverConfig::<f64> {
            rng_seed: Some(0),
            ..Default::default()
        };
        let a = rgd_solve(&m, quadratic_cost, quadratic_grad, vec![0.3, -0.7], &cfg).unwrap();
        let b = rgd_solve(&m, quadratic_cost, quadratic_grad, vec![0.3, -0.7], &cfg).unwrap();
        assert_eq!(a.final_point, b.final_point);
        assert_eq!(a.iterations, b.iterations);
        let ha: Vec<(u64, u64)> = a
            .history
            .iter()
            .map(|r| (r.cost.to_bits(), r.grad_norm.to_bits()))
            .collect();
        let hb: Vec<(u64, u64)> = b
            .history
            .iter()
            .map(|r| (r.cost.to_bits(), r.grad_norm.to_bits()))
            .collect();
        assert_eq!(ha, hb);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let m = EuclideanManifold::new(1);
        let cfg = SolverConfig::<f64> {
            contraction: 1.5,
            ..Default::default()
        };
        let err = rgd_solve(&m, quadratic_cost, quadratic_grad, vec![1.0], &cfg).unwrap_err();
        assert!(matches!(err, SolverError::InvalidConfig(_)));
    }
}
