//! Transmission-system power flow.
//!
//! Classical solvers (Newton-Raphson, decoupled, fast-decoupled, DC, DC with
//! losses) next to an unconstrained least-squares formulation in `R^{2n}`
//! whose unknowns are the subsystem-1 state (angles and PQ magnitudes) plus
//! the subsystem-2 closure quantities (slack P and Q, PV-bus Q), solved with
//! the trust-region engine.
//!
//! Reported iteration counts follow the convention of the comparison tables:
//! Newton-Raphson reports the index of the mismatch evaluation that met the
//! tolerance (so a flat-start solution reports 1), while the decoupled
//! variants report the number of half-iterations actually applied per family.

use num_complex::Complex;
use thiserror::Error;

use crate::linalg::{solve, LinalgError};
use crate::manifold::{
    rgd_solve, rtr_solve, EuclideanManifold, SolveReport, SolverConfig, SolverError,
};
use crate::network::{BusKind, CaseError, NetworkCase};
use crate::scalar::{cast, Real};
use crate::solution::{series_loss_kw, BranchFlow, FlowSolution};

#[derive(Debug, Error)]
pub enum EptsError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("zero-impedance branch {from}-{to}")]
    ZeroImpedance { from: u32, to: u32 },
    #[error("singular system: {0}")]
    Singular(#[from] LinalgError),
    #[error("did not converge within {0} iterations")]
    Diverged(usize),
    #[error("inactive branch set leaves the network disconnected")]
    Disconnected,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Real and imaginary parts of the dense bus admittance matrix.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix<T> {
    pub g: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
}

impl<T: Real> AdmittanceMatrix<T> {
    pub fn n(&self) -> usize {
        self.g.len()
    }
}

/// Assembles the bus admittance matrix from the pi-model branches (series
/// impedance, half line charging at each terminal) and the bus shunts.
pub fn build_ybus<T: Real>(case: &NetworkCase<T>) -> Result<AdmittanceMatrix<T>, EptsError> {
    let n = case.n_buses();
    let zero = T::zero();
    let mut g = vec![vec![zero; n]; n];
    let mut b = vec![vec![zero; n]; n];
    for (k, br) in case.branches().iter().enumerate() {
        if !br.status {
            continue;
        }
        if br.r == zero && br.x == zero {
            return Err(EptsError::ZeroImpedance {
                from: br.from_bus,
                to: br.to_bus,
            });
        }
        let (i, j) = case.branch_endpoints(k);
        let ys = Complex::new(br.r, br.x).inv();
        g[i][i] = g[i][i] + ys.re;
        g[j][j] = g[j][j] + ys.re;
        b[i][i] = b[i][i] + ys.im + br.b_shunt_half;
        b[j][j] = b[j][j] + ys.im + br.b_shunt_half;
        g[i][j] = g[i][j] - ys.re;
        g[j][i] = g[j][i] - ys.re;
        b[i][j] = b[i][j] - ys.im;
        b[j][i] = b[j][i] - ys.im;
    }
    for (k, bus) in case.buses().iter().enumerate() {
        b[k][k] = b[k][k] + bus.shunt_b;
    }
    Ok(AdmittanceMatrix { g, b })
}

/// Power-balance evaluation: active and reactive injections at every bus for
/// the polar voltage profile `(v, theta)`.
pub fn calc_pq<T: Real>(v: &[T], theta: &[T], y: &AdmittanceMatrix<T>) -> (Vec<T>, Vec<T>) {
    let n = y.n();
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    for k in 0..n {
        let mut pk = T::zero();
        let mut qk = T::zero();
        for m in 0..n {
            let t = theta[k] - theta[m];
            let (s, c) = (t.sin(), t.cos());
            pk = pk + v[m] * (y.g[k][m] * c + y.b[k][m] * s);
            qk = qk + v[m] * (y.g[k][m] * s - y.b[k][m] * c);
        }
        p[k] = v[k] * pk;
        q[k] = v[k] * qk;
    }
    (p, q)
}

/// Bus classification and specified injections shared by all solvers.
#[derive(Debug, Clone)]
pub struct EptsIndex<T> {
    /// PV bus indices in input order.
    pub pv: Vec<usize>,
    /// PQ bus indices in input order.
    pub pq: Vec<usize>,
    pub slack: usize,
    /// Net specified active injection per bus (meaningful off-slack).
    pub p_spec: Vec<T>,
    /// Net specified reactive injection per bus (meaningful at PQ buses).
    pub q_spec: Vec<T>,
    /// Voltage set points (slack and PV buses).
    pub v_set: Vec<T>,
}

impl<T: Real> EptsIndex<T> {
    pub fn new(case: &NetworkCase<T>) -> Self {
        let mut pv = Vec::new();
        let mut pq = Vec::new();
        let mut p_spec = Vec::new();
        let mut q_spec = Vec::new();
        let mut v_set = Vec::new();
        for (k, bus) in case.buses().iter().enumerate() {
            match bus.kind {
                BusKind::Slack => {}
                BusKind::Pv => pv.push(k),
                BusKind::Pq => pq.push(k),
            }
            p_spec.push(bus.p_injection());
            q_spec.push(bus.q_injection());
            v_set.push(bus.v_set.unwrap_or_else(T::one));
        }
        Self {
            pv,
            pq,
            slack: case.slack_index(),
            p_spec,
            q_spec,
            v_set,
        }
    }

    /// Angle-unknown buses: PV first, then PQ.
    pub fn angle_buses(&self) -> Vec<usize> {
        let mut v = self.pv.clone();
        v.extend_from_slice(&self.pq);
        v
    }

    /// Flat start: set points at slack/PV, unit magnitude at PQ, zero angles.
    pub fn flat_profile(&self, case: &NetworkCase<T>) -> (Vec<T>, Vec<T>) {
        let n = case.n_buses();
        let mut v = vec![T::one(); n];
        let mut theta = vec![T::zero(); n];
        for (k, bus) in case.buses().iter().enumerate() {
            if let Some(vs) = bus.v_set {
                v[k] = vs;
            }
            if let Some(t) = bus.theta_set {
                theta[k] = t;
            }
        }
        (v, theta)
    }
}

/// Subsystem-1 mismatches at a voltage profile: `dP` over PV then PQ buses,
/// `dQ` over PQ buses (specified minus calculated).
pub fn mismatches<T: Real>(
    idx: &EptsIndex<T>,
    v: &[T],
    theta: &[T],
    y: &AdmittanceMatrix<T>,
) -> (Vec<T>, Vec<T>) {
    let (p, q) = calc_pq(v, theta, y);
    let dp = idx
        .angle_buses()
        .iter()
        .map(|&k| idx.p_spec[k] - p[k])
        .collect();
    let dq = idx.pq.iter().map(|&k| idx.q_spec[k] - q[k]).collect();
    (dp, dq)
}

fn max_abs<T: Real>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |a, v| a.max(v.abs()))
}

/// dP/dtheta entry (k, m) of the Jacobian.
fn dp_dtheta<T: Real>(y: &AdmittanceMatrix<T>, v: &[T], theta: &[T], k: usize, m: usize) -> T {
    if k == m {
        let mut acc = T::zero();
        for j in 0..y.n() {
            if j == k {
                continue;
            }
            let t = theta[k] - theta[j];
            acc = acc + v[j] * (-y.g[k][j] * t.sin() + y.b[k][j] * t.cos());
        }
        v[k] * acc
    } else {
        let t = theta[k] - theta[m];
        v[k] * v[m] * (y.g[k][m] * t.sin() - y.b[k][m] * t.cos())
    }
}

/// dP/dV entry (k, m).
fn dp_dv<T: Real>(y: &AdmittanceMatrix<T>, v: &[T], theta: &[T], k: usize, m: usize) -> T {
    if k == m {
        let mut acc = T::zero();
        for j in 0..y.n() {
            if j == k {
                continue;
            }
            let t = theta[k] - theta[j];
            acc = acc + v[j] * (y.g[k][j] * t.cos() + y.b[k][j] * t.sin());
        }
        acc + (v[k] + v[k]) * y.g[k][k]
    } else {
        let t = theta[k] - theta[m];
        v[k] * (y.g[k][m] * t.cos() + y.b[k][m] * t.sin())
    }
}

/// dQ/dtheta entry (k, m).
fn dq_dtheta<T: Real>(y: &AdmittanceMatrix<T>, v: &[T], theta: &[T], k: usize, m: usize) -> T {
    if k == m {
        let mut acc = T::zero();
        for j in 0..y.n() {
            if j == k {
                continue;
            }
            let t = theta[k] - theta[j];
            acc = acc + v[j] * (y.g[k][j] * t.cos() + y.b[k][j] * t.sin());
        }
        v[k] * acc
    } else {
        let t = theta[k] - theta[m];
        -v[k] * v[m] * (y.g[k][m] * t.cos() + y.b[k][m] * t.sin())
    }
}

/// dQ/dV entry (k, m).
fn dq_dv<T: Real>(y: &AdmittanceMatrix<T>, v: &[T], theta: &[T], k: usize, m: usize) -> T {
    if k == m {
        let mut acc = T::zero();
        for j in 0..y.n() {
            if j == k {
                continue;
            }
            let t = theta[k] - theta[j];
            acc = acc + v[j] * (y.g[k][j] * t.sin() - y.b[k][j] * t.cos());
        }
        acc - (v[k] + v[k]) * y.b[k][k]
    } else {
        let t = theta[k] - theta[m];
        v[k] * (y.g[k][m] * t.sin() - y.b[k][m] * t.cos())
    }
}

/// One convergence-trace sample: mismatch measure and elapsed seconds.
pub type TracePoint<T> = (T, f64);

/// Solution, reported iteration count, per-iteration trace.
pub type NewtonSolve<T> = (FlowSolution<T>, usize, Vec<TracePoint<T>>);

/// Solution, P-theta and Q-V half-iteration counts, per-cycle trace.
pub type DecoupledSolve<T> = (FlowSolution<T>, usize, usize, Vec<TracePoint<T>>);

/// Solution plus the optimizer run that produced it.
pub type EptsSolve<T> = (FlowSolution<T>, SolveReport<Vec<T>, T>);

/// Full Newton-Raphson on subsystem 1, then direct evaluation of the
/// subsystem-2 quantities. Returns the solution and the reported iteration
/// count.
pub fn newton_raphson_solve<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_iters: usize,
) -> Result<(FlowSolution<T>, usize), EptsError> {
    newton_raphson_solve_traced(case, tol, max_iters).map(|(s, k, _)| (s, k))
}

/// [`newton_raphson_solve`] plus the per-iteration mismatch trace.
pub fn newton_raphson_solve_traced<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_iters: usize,
) -> Result<NewtonSolve<T>, EptsError> {
    let clock = std::time::Instant::now();
    let y = build_ybus(case)?;
    let idx = EptsIndex::new(case);
    let (mut v, mut theta) = idx.flat_profile(case);
    let ang = idx.angle_buses();
    let na = ang.len();
    let npq = idx.pq.len();
    let mut trace = Vec::new();

    for k in 1..=max_iters {
        let (dp, dq) = mismatches(&idx, &v, &theta, &y);
        let worst = max_abs(&dp).max(max_abs(&dq));
        trace.push((worst, clock.elapsed().as_secs_f64()));
        if worst < tol {
            return Ok((solution_from_profile(case, &y, &v, &theta), k, trace));
        }
        let mut jac = vec![vec![T::zero(); na + npq]; na + npq];
        for (a, &kb) in ang.iter().enumerate() {
            for (bcol, &mb) in ang.iter().enumerate() {
                jac[a][bcol] = dp_dtheta(&y, &v, &theta, kb, mb);
            }
            for (bcol, &mb) in idx.pq.iter().enumerate() {
                jac[a][na + bcol] = dp_dv(&y, &v, &theta, kb, mb);
            }
        }
        for (a, &kb) in idx.pq.iter().enumerate() {
            for (bcol, &mb) in ang.iter().enumerate() {
                jac[na + a][bcol] = dq_dtheta(&y, &v, &theta, kb, mb);
            }
            for (bcol, &mb) in idx.pq.iter().enumerate() {
                jac[na + a][na + bcol] = dq_dv(&y, &v, &theta, kb, mb);
            }
        }
        let mut rhs = dp;
        rhs.extend(dq);
        let dx = solve(&jac, &rhs)?;
        for (a, &kb) in ang.iter().enumerate() {
            theta[kb] = theta[kb] + dx[a];
        }
        for (a, &kb) in idx.pq.iter().enumerate() {
            v[kb] = v[kb] + dx[na + a];
        }
        if !dx.iter().all(|t| t.is_finite()) {
            return Err(EptsError::Diverged(k));
        }
    }
    Err(EptsError::Diverged(max_iters))
}

/// Decoupled alternation shared by the decoupled and fast-decoupled methods.
fn decoupled_loop<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_half_iters: usize,
    fast: bool,
    bpp_includes_bus_shunt: bool,
) -> Result<DecoupledSolve<T>, EptsError> {
    let clock = std::time::Instant::now();
    let y = build_ybus(case)?;
    let idx = EptsIndex::new(case);
    let (mut v, mut theta) = idx.flat_profile(case);
    let ang = idx.angle_buses();
    let na = ang.len();
    let npq = idx.pq.len();

    // Constant matrices for the fast-decoupled scheme (XB variant):
    // B' from 1/x over angle buses, ignoring resistance and shunts;
    // B'' from the imaginary part of Ybus over PQ buses.
    let (bp, bpp) = if fast {
        let mut bp = vec![vec![T::zero(); na]; na];
        let pos_of: std::collections::HashMap<usize, usize> =
            ang.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        for (kbr, br) in case.branches().iter().enumerate() {
            if !br.status {
                continue;
            }
            let (i, j) = case.branch_endpoints(kbr);
            let inv_x = T::one() / br.x;
            if let Some(&a) = pos_of.get(&i) {
                bp[a][a] = bp[a][a] + inv_x;
            }
            if let Some(&b) = pos_of.get(&j) {
                bp[b][b] = bp[b][b] + inv_x;
            }
            if let (Some(&a), Some(&b)) = (pos_of.get(&i), pos_of.get(&j)) {
                bp[a][b] = bp[a][b] - inv_x;
                bp[b][a] = bp[b][a] - inv_x;
            }
        }
        let y_for_bpp = if bpp_includes_bus_shunt {
            y.clone()
        } else {
            let mut shuntless = case.clone();
            shuntless = strip_bus_shunts(&shuntless);
            build_ybus(&shuntless)?
        };
        let mut bpp = vec![vec![T::zero(); npq]; npq];
        for (a, &k) in idx.pq.iter().enumerate() {
            for (b, &m) in idx.pq.iter().enumerate() {
                bpp[a][b] = -y_for_bpp.b[k][m];
            }
        }
        (Some(bp), Some(bpp))
    } else {
        (None, None)
    };

    let mut p_half = 0;
    let mut q_half = 0;
    let mut trace = Vec::new();
    loop {
        let (dp, dq) = mismatches(&idx, &v, &theta, &y);
        let worst = max_abs(&dp).max(max_abs(&dq));
        trace.push((worst, clock.elapsed().as_secs_f64()));
        if worst < tol {
            return Ok((
                solution_from_profile(case, &y, &v, &theta),
                p_half,
                q_half,
                trace,
            ));
        }
        if p_half + q_half >= max_half_iters {
            return Err(EptsError::Diverged(max_half_iters));
        }

        // P-theta half-iteration.
        let dtheta = if let Some(bp) = &bp {
            let rhs: Vec<T> = ang.iter().zip(&dp).map(|(&k, &m)| m / v[k]).collect();
            solve(bp, &rhs)?
        } else {
            let mut h = vec![vec![T::zero(); na]; na];
            for (a, &kb) in ang.iter().enumerate() {
                for (b, &mb) in ang.iter().enumerate() {
                    h[a][b] = dp_dtheta(&y, &v, &theta, kb, mb);
                }
            }
            solve(&h, &dp)?
        };
        for (a, &kb) in ang.iter().enumerate() {
            theta[kb] = theta[kb] + dtheta[a];
        }
        p_half += 1;

        // Q-V half-iteration on the refreshed angles.
        if npq > 0 {
            let (_, dq) = mismatches(&idx, &v, &theta, &y);
            let dv = if let Some(bpp) = &bpp {
                let rhs: Vec<T> = idx.pq.iter().zip(&dq).map(|(&k, &m)| m / v[k]).collect();
                solve(bpp, &rhs)?
            } else {
                let mut l = vec![vec![T::zero(); npq]; npq];
                for (a, &kb) in idx.pq.iter().enumerate() {
                    for (b, &mb) in idx.pq.iter().enumerate() {
                        l[a][b] = dq_dv(&y, &v, &theta, kb, mb);
                    }
                }
                solve(&l, &dq)?
            };
            for (a, &kb) in idx.pq.iter().enumerate() {
                v[kb] = v[kb] + dv[a];
            }
            q_half += 1;
        }
        if !v.iter().chain(theta.iter()).all(|t| t.is_finite()) {
            return Err(EptsError::Diverged(p_half + q_half));
        }
    }
}

fn strip_bus_shunts<T: Real>(case: &NetworkCase<T>) -> NetworkCase<T> {
    let buses = case
        .buses()
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.shunt_b = T::zero();
            b
        })
        .collect();
    NetworkCase::new(
        case.s_base_mva(),
        case.v_base_kv(),
        buses,
        case.branches().to_vec(),
        case.v_limits().0,
        case.v_limits().1,
    )
    .expect("stripping shunts keeps the case valid")
}

/// Decoupled method: H and L Jacobian blocks re-evaluated each pass.
pub fn decoupled_solve<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_half_iters: usize,
) -> Result<(FlowSolution<T>, usize, usize), EptsError> {
    decoupled_loop(case, tol, max_half_iters, false, true).map(|(s, p, q, _)| (s, p, q))
}

/// [`decoupled_solve`] plus the per-cycle mismatch trace.
pub fn decoupled_solve_traced<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_half_iters: usize,
) -> Result<DecoupledSolve<T>, EptsError> {
    decoupled_loop(case, tol, max_half_iters, false, true)
}

/// Fast-decoupled method with constant B'/B'' matrices (XB scheme). Bus
/// shunts enter B'' through the imaginary part of Ybus.
pub fn fast_decoupled_solve<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_half_iters: usize,
) -> Result<(FlowSolution<T>, usize, usize), EptsError> {
    decoupled_loop(case, tol, max_half_iters, true, true).map(|(s, p, q, _)| (s, p, q))
}

/// [`fast_decoupled_solve`] plus the per-cycle mismatch trace.
pub fn fast_decoupled_solve_traced<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_half_iters: usize,
) -> Result<DecoupledSolve<T>, EptsError> {
    decoupled_loop(case, tol, max_half_iters, true, true)
}

/// Fast-decoupled variant with bus shunts excluded from B''; kept for
/// comparison since both variants must converge on the cases in scope.
pub fn fast_decoupled_solve_no_bus_shunt<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_half_iters: usize,
) -> Result<(FlowSolution<T>, usize, usize), EptsError> {
    decoupled_loop(case, tol, max_half_iters, true, false).map(|(s, p, q, _)| (s, p, q))
}

/// Non-iterative DC result: angles, per-bus active injections and branch
/// active flows.
#[derive(Debug, Clone)]
pub struct DcSolution<T> {
    pub bus_id: Vec<u32>,
    pub theta: Vec<T>,
    /// Net active injection per bus (slack entry closes the balance).
    pub p_bus: Vec<T>,
    /// Branch flows `(from, to, p)` following the case branch order.
    pub flows: Vec<(u32, u32, T)>,
}

fn dc_susceptance_matrix<T: Real>(case: &NetworkCase<T>, non_slack: &[usize]) -> Vec<Vec<T>> {
    let pos_of: std::collections::HashMap<usize, usize> =
        non_slack.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let m = non_slack.len();
    let mut bp = vec![vec![T::zero(); m]; m];
    for (kbr, br) in case.branches().iter().enumerate() {
        if !br.status {
            continue;
        }
        let (i, j) = case.branch_endpoints(kbr);
        let inv_x = T::one() / br.x;
        if let Some(&a) = pos_of.get(&i) {
            bp[a][a] = bp[a][a] + inv_x;
        }
        if let Some(&b) = pos_of.get(&j) {
            bp[b][b] = bp[b][b] + inv_x;
        }
        if let (Some(&a), Some(&b)) = (pos_of.get(&i), pos_of.get(&j)) {
            bp[a][b] = bp[a][b] - inv_x;
            bp[b][a] = bp[b][a] - inv_x;
        }
    }
    bp
}

fn dc_solve_injections<T: Real>(case: &NetworkCase<T>, p_inj: &[T]) -> Result<Vec<T>, EptsError> {
    let n = case.n_buses();
    let slack = case.slack_index();
    let non_slack: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let bp = dc_susceptance_matrix(case, &non_slack);
    let rhs: Vec<T> = non_slack.iter().map(|&k| p_inj[k]).collect();
    let sol = solve(&bp, &rhs)?;
    let mut theta = vec![T::zero(); n];
    let slack_theta = case.buses()[slack].theta_set.unwrap_or_else(T::zero);
    theta[slack] = slack_theta;
    for (i, &k) in non_slack.iter().enumerate() {
        theta[k] = sol[i] + slack_theta;
    }
    Ok(theta)
}

fn dc_flows<T: Real>(case: &NetworkCase<T>, theta: &[T]) -> Vec<(u32, u32, T)> {
    case.branches()
        .iter()
        .enumerate()
        .filter(|(_, br)| br.status)
        .map(|(k, br)| {
            let (i, j) = case.branch_endpoints(k);
            (br.from_bus, br.to_bus, (theta[i] - theta[j]) / br.x)
        })
        .collect()
}

/// Linear DC power flow: `theta = B'^{-1} P` with `B'` built from `1/x`.
pub fn dc_solve<T: Real>(case: &NetworkCase<T>) -> Result<DcSolution<T>, EptsError> {
    let idx = EptsIndex::new(case);
    let theta = dc_solve_injections(case, &idx.p_spec)?;
    let slack = case.slack_index();
    let mut p_bus = idx.p_spec.clone();
    let non_slack_sum = p_bus
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != slack)
        .fold(T::zero(), |a, (_, &p)| a + p);
    p_bus[slack] = -non_slack_sum;
    Ok(DcSolution {
        bus_id: case.buses().iter().map(|b| b.id).collect(),
        theta: theta.clone(),
        p_bus,
        flows: dc_flows(case, &theta),
    })
}

/// DC power flow with one loss-feedback pass: branch losses
/// `g_km (theta_k - theta_m)^2` from the lossless solve are allocated half
/// to each terminal as fictitious demand and the system is re-solved once.
/// The slack report nets out its own allocated share.
pub fn dc_losses_solve<T: Real>(case: &NetworkCase<T>) -> Result<DcSolution<T>, EptsError> {
    let idx = EptsIndex::new(case);
    let theta0 = dc_solve_injections(case, &idx.p_spec)?;
    let n = case.n_buses();
    let slack = case.slack_index();
    let half = cast::<T>(0.5);

    let mut alloc = vec![T::zero(); n];
    for (k, br) in case.branches().iter().enumerate() {
        if !br.status {
            continue;
        }
        let (i, j) = case.branch_endpoints(k);
        let g = br.r / (br.r * br.r + br.x * br.x);
        let d = theta0[i] - theta0[j];
        let loss = g * d * d;
        alloc[i] = alloc[i] + half * loss;
        alloc[j] = alloc[j] + half * loss;
    }

    let p_adjusted: Vec<T> = idx
        .p_spec
        .iter()
        .zip(&alloc)
        .map(|(&p, &a)| p - a)
        .collect();
    let theta = dc_solve_injections(case, &p_adjusted)?;

    let mut p_bus = p_adjusted.clone();
    let non_slack_sum = p_bus
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != slack)
        .fold(T::zero(), |a, (_, &p)| a + p);
    p_bus[slack] = -non_slack_sum - alloc[slack];

    Ok(DcSolution {
        bus_id: case.buses().iter().map(|b| b.id).collect(),
        theta: theta.clone(),
        p_bus,
        flows: dc_flows(case, &theta),
    })
}

/// Builds the full physical solution from a converged polar profile.
pub fn solution_from_profile<T: Real>(
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
    v: &[T],
    theta: &[T],
) -> FlowSolution<T> {
    let n = case.n_buses();
    let (p, q) = calc_pq(v, theta, y);
    let phasors: Vec<Complex<T>> = (0..n)
        .map(|k| Complex::from_polar(v[k], theta[k]))
        .collect();
    let s_base = case.s_base_mva();

    let mut branches = Vec::with_capacity(case.branches().len());
    let mut total_loss = T::zero();
    for (k, br) in case.branches().iter().enumerate() {
        if !br.status {
            continue;
        }
        let (i, j) = case.branch_endpoints(k);
        let ys = Complex::new(br.r, br.x).inv();
        let series_current = (phasors[i] - phasors[j]) * ys;
        let charging = Complex::new(T::zero(), br.b_shunt_half);
        let from_current = series_current + phasors[i] * charging;
        let s_from = phasors[i] * from_current.conj();
        let loss = series_loss_kw(br.r, series_current.norm(), s_base);
        total_loss = total_loss + loss;
        branches.push(BranchFlow {
            from: br.from_bus,
            to: br.to_bus,
            p: s_from.re,
            q: s_from.im,
            i_mag: series_current.norm(),
            loss_kw: loss,
        });
    }

    let slack = case.slack_index();
    let v_min = v.iter().fold(T::infinity(), |a, &x| a.min(x));
    FlowSolution {
        s_base_mva: s_base,
        bus_id: case.buses().iter().map(|b| b.id).collect(),
        v: phasors,
        bus_p: p.clone(),
        bus_q: q.clone(),
        branches,
        p_slack: p[slack],
        q_slack: q[slack],
        total_loss_kw: total_loss,
        v_min,
    }
}

/// Real optimization vector in `R^{2n}`, ordered
/// `[theta_pv, theta_pq, v_pq, p_slack, q_slack, q_pv]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EptsState<T> {
    pub x: Vec<T>,
}

/// Residual vector of the least-squares formulation: subsystem-1 mismatches
/// followed by the subsystem-2 closure equations. `h = 0` exactly at a
/// power-flow solution.
#[derive(Debug, Clone)]
pub struct MismatchSet<T> {
    pub values: Vec<T>,
}

impl<T: Real> MismatchSet<T> {
    pub fn norm(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &v| a + v * v).sqrt()
    }
}

/// Layout bookkeeping for [`EptsState`].
#[derive(Debug, Clone)]
pub struct EptsLayout {
    pub n_pv: usize,
    pub n_pq: usize,
}

impl EptsLayout {
    pub fn new(idx: &EptsIndex<impl Real>) -> Self {
        Self {
            n_pv: idx.pv.len(),
            n_pq: idx.pq.len(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * (1 + self.n_pv + self.n_pq)
    }

    pub fn theta_pv(&self, i: usize) -> usize {
        i
    }

    pub fn theta_pq(&self, i: usize) -> usize {
        self.n_pv + i
    }

    pub fn v_pq(&self, i: usize) -> usize {
        self.n_pv + self.n_pq + i
    }

    pub fn p_slack(&self) -> usize {
        self.n_pv + 2 * self.n_pq
    }

    pub fn q_slack(&self) -> usize {
        self.n_pv + 2 * self.n_pq + 1
    }

    pub fn q_pv(&self, i: usize) -> usize {
        self.n_pv + 2 * self.n_pq + 2 + i
    }
}

impl<T: Real> EptsState<T> {
    /// The all-zeros start used by the trust-region solve.
    pub fn zeros(layout: &EptsLayout) -> Self {
        Self {
            x: vec![T::zero(); layout.dim()],
        }
    }

    /// Expands the state into a full polar profile plus the closure values.
    fn unpack(
        &self,
        idx: &EptsIndex<T>,
        layout: &EptsLayout,
        case: &NetworkCase<T>,
    ) -> (Vec<T>, Vec<T>, T, T, Vec<T>) {
        let n = case.n_buses();
        let mut v = vec![T::one(); n];
        let mut theta = vec![T::zero(); n];
        let slack_bus = &case.buses()[idx.slack];
        v[idx.slack] = slack_bus.v_set.unwrap_or_else(T::one);
        theta[idx.slack] = slack_bus.theta_set.unwrap_or_else(T::zero);
        for (i, &k) in idx.pv.iter().enumerate() {
            v[k] = idx.v_set[k];
            theta[k] = self.x[layout.theta_pv(i)];
        }
        for (i, &k) in idx.pq.iter().enumerate() {
            theta[k] = self.x[layout.theta_pq(i)];
            v[k] = self.x[layout.v_pq(i)];
        }
        let p_slack = self.x[layout.p_slack()];
        let q_slack = self.x[layout.q_slack()];
        let q_pv: Vec<T> = (0..idx.pv.len()).map(|i| self.x[layout.q_pv(i)]).collect();
        (v, theta, p_slack, q_slack, q_pv)
    }

    /// Packs a solved profile (for example the Newton-Raphson solution) into
    /// a state vector, filling the closure entries from `calc_pq`.
    pub fn from_profile(
        case: &NetworkCase<T>,
        y: &AdmittanceMatrix<T>,
        v: &[T],
        theta: &[T],
    ) -> Self {
        let idx = EptsIndex::new(case);
        let layout = EptsLayout::new(&idx);
        let (p, q) = calc_pq(v, theta, y);
        let mut x = vec![T::zero(); layout.dim()];
        for (i, &k) in idx.pv.iter().enumerate() {
            x[layout.theta_pv(i)] = theta[k];
            x[layout.q_pv(i)] = q[k];
        }
        for (i, &k) in idx.pq.iter().enumerate() {
            x[layout.theta_pq(i)] = theta[k];
            x[layout.v_pq(i)] = v[k];
        }
        x[layout.p_slack()] = p[idx.slack];
        x[layout.q_slack()] = q[idx.slack];
        Self { x }
    }
}

/// Assembles the residual vector `h(x)`.
pub fn epts_residuals<T: Real>(
    state: &EptsState<T>,
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
) -> MismatchSet<T> {
    let idx = EptsIndex::new(case);
    let layout = EptsLayout::new(&idx);
    let (v, theta, p_slack, q_slack, q_pv) = state.unpack(&idx, &layout, case);
    let (p, q) = calc_pq(&v, &theta, y);

    let mut values = Vec::with_capacity(layout.dim());
    for &k in &idx.angle_buses() {
        values.push(idx.p_spec[k] - p[k]);
    }
    for &k in &idx.pq {
        values.push(idx.q_spec[k] - q[k]);
    }
    values.push(p_slack - p[idx.slack]);
    values.push(q_slack - q[idx.slack]);
    for (i, &k) in idx.pv.iter().enumerate() {
        values.push(q_pv[i] - q[k]);
    }
    MismatchSet { values }
}

/// Sum of squared residuals.
pub fn epts_cost<T: Real>(
    state: &EptsState<T>,
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
) -> T {
    epts_residuals(state, case, y)
        .values
        .iter()
        .fold(T::zero(), |a, &v| a + v * v)
}

/// Dense Jacobian of the residual map, rows in residual order and columns in
/// state order. Subsystem-2 variables enter their own rows linearly.
pub fn epts_jacobian<T: Real>(
    state: &EptsState<T>,
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
) -> Vec<Vec<T>> {
    let idx = EptsIndex::new(case);
    let layout = EptsLayout::new(&idx);
    let (v, theta, _, _, _) = state.unpack(&idx, &layout, case);
    let dim = layout.dim();
    let mut jac = vec![vec![T::zero(); dim]; dim];

    // One power-injection row: derivatives of P_k (or Q_k) against every
    // state angle and magnitude column, negated for the spec-minus-calc form.
    let fill_row = |row: &mut Vec<T>, k: usize, is_p: bool| {
        for (i, &m) in idx.pv.iter().enumerate() {
            let d = if is_p {
                dp_dtheta(y, &v, &theta, k, m)
            } else {
                dq_dtheta(y, &v, &theta, k, m)
            };
            row[layout.theta_pv(i)] = row[layout.theta_pv(i)] - d;
        }
        for (i, &m) in idx.pq.iter().enumerate() {
            let dt = if is_p {
                dp_dtheta(y, &v, &theta, k, m)
            } else {
                dq_dtheta(y, &v, &theta, k, m)
            };
            row[layout.theta_pq(i)] = row[layout.theta_pq(i)] - dt;
            let dv = if is_p {
                dp_dv(y, &v, &theta, k, m)
            } else {
                dq_dv(y, &v, &theta, k, m)
            };
            row[layout.v_pq(i)] = row[layout.v_pq(i)] - dv;
        }
    };

    let mut r = 0;
    for &k in &idx.angle_buses() {
        fill_row(&mut jac[r], k, true);
        r += 1;
    }
    for &k in &idx.pq {
        fill_row(&mut jac[r], k, false);
        r += 1;
    }
    fill_row(&mut jac[r], idx.slack, true);
    jac[r][layout.p_slack()] = jac[r][layout.p_slack()] + T::one();
    r += 1;
    fill_row(&mut jac[r], idx.slack, false);
    jac[r][layout.q_slack()] = jac[r][layout.q_slack()] + T::one();
    r += 1;
    for (i, &k) in idx.pv.iter().enumerate() {
        fill_row(&mut jac[r], k, false);
        jac[r][layout.q_pv(i)] = jac[r][layout.q_pv(i)] + T::one();
        r += 1;
    }
    jac
}

/// Analytic gradient `2 J^T h`.
pub fn epts_gradient<T: Real>(
    state: &EptsState<T>,
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
) -> Vec<T> {
    let h = epts_residuals(state, case, y).values;
    let jac = epts_jacobian(state, case, y);
    let dim = h.len();
    let two = cast::<T>(2.0);
    let mut g = vec![T::zero(); dim];
    for (row, &hi) in jac.iter().zip(&h) {
        for (gj, &jij) in g.iter_mut().zip(row) {
            *gj = *gj + two * jij * hi;
        }
    }
    g
}

/// Gauss-Newton Hessian-vector product `2 J^T (J t)`.
pub fn epts_gauss_newton_hess_vec<T: Real>(
    state: &EptsState<T>,
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
    tangent: &[T],
) -> Vec<T> {
    let jac = epts_jacobian(state, case, y);
    let dim = tangent.len();
    let mut jt = vec![T::zero(); dim];
    for (i, row) in jac.iter().enumerate() {
        jt[i] = row
            .iter()
            .zip(tangent)
            .fold(T::zero(), |a, (&j, &t)| a + j * t);
    }
    let two = cast::<T>(2.0);
    let mut out = vec![T::zero(); dim];
    for (row, &ji) in jac.iter().zip(&jt) {
        for (oj, &jij) in out.iter_mut().zip(row) {
            *oj = *oj + two * jij * ji;
        }
    }
    out
}

/// Minimizes the mismatch cost with the trust-region solver from the
/// all-zeros start, then unpacks the state into the physical solution.
pub fn solve_epts<T: Real>(
    case: &NetworkCase<T>,
    cfg: &SolverConfig<T>,
) -> Result<EptsSolve<T>, EptsError> {
    let y = build_ybus(case)?;
    let idx = EptsIndex::new(case);
    let layout = EptsLayout::new(&idx);
    let manifold = EuclideanManifold::new(layout.dim());
    let cost = |x: &Vec<T>| epts_cost(&EptsState { x: x.clone() }, case, &y);
    let grad = |x: &Vec<T>| epts_gradient(&EptsState { x: x.clone() }, case, &y);
    let hess = |x: &Vec<T>, t: &Vec<T>| {
        epts_gauss_newton_hess_vec(&EptsState { x: x.clone() }, case, &y, t)
    };
    let x0 = EptsState::zeros(&layout).x;
    let report = rtr_solve(&manifold, cost, grad, hess, x0, cfg)?;
    let state = EptsState {
        x: report.final_point.clone(),
    };
    let (v, theta, _, _, _) = state.unpack(&idx, &layout, case);
    Ok((solution_from_profile(case, &y, &v, &theta), report))
}

/// Steepest-descent variant of [`solve_epts`], available for comparison runs.
pub fn solve_epts_gradient_descent<T: Real>(
    case: &NetworkCase<T>,
    cfg: &SolverConfig<T>,
) -> Result<EptsSolve<T>, EptsError> {
    let y = build_ybus(case)?;
    let idx = EptsIndex::new(case);
    let layout = EptsLayout::new(&idx);
    let manifold = EuclideanManifold::new(layout.dim());
    let cost = |x: &Vec<T>| epts_cost(&EptsState { x: x.clone() }, case, &y);
    let grad = |x: &Vec<T>| epts_gradient(&EptsState { x: x.clone() }, case, &y);
    let x0 = EptsState::zeros(&layout).x;
    let report = rgd_solve(&manifold, cost, grad, x0, cfg)?;
    let state = EptsState {
        x: report.final_point.clone(),
    };
    let (v, theta, _, _, _) = state.unpack(&idx, &layout, case);
    Ok((solution_from_profile(case, &y, &v, &theta), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{BranchRecord, BusKind, BusRecord};
    use approx::assert_relative_eq;

    fn bus(id: u32, kind: BusKind) -> BusRecord<f64> {
        BusRecord {
            id,
            kind,
            p_demand: 0.0,
            q_demand: 0.0,
            p_gen: None,
            q_gen: None,
            v_set: match kind {
                BusKind::Pq => None,
                _ => Some(1.0),
            },
            theta_set: match kind {
                BusKind::Slack => Some(0.0),
                _ => None,
            },
            shunt_b: 0.0,
        }
    }

    fn line(from: u32, to: u32, r: f64, x: f64) -> BranchRecord<f64> {
        BranchRecord {
            from_bus: from,
            to_bus: to,
            r,
            x,
            b_shunt_half: 0.0,
            status: true,
            i_max: None,
            i_min: None,
        }
    }

    fn shunt_free_case() -> NetworkCase<f64> {
        NetworkCase::new(
            100.0,
            230.0,
            vec![
                bus(1, BusKind::Slack),
                bus(2, BusKind::Pq),
                bus(3, BusKind::Pq),
            ],
            vec![
                line(1, 2, 0.01, 0.05),
                line(2, 3, 0.02, 0.06),
                line(1, 3, 0.015, 0.04),
            ],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn ybus_row_sums_vanish_without_shunts() {
        let y = build_ybus(&shunt_free_case()).unwrap();
        for k in 0..3 {
            let gs: f64 = y.g[k].iter().sum();
            let bs: f64 = y.b[k].iter().sum();
            assert_relative_eq!(gs, 0.0, epsilon = 1e-12);
            assert_relative_eq!(bs, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn isolated_bus_with_shunt_only() {
        let mut b3 = bus(3, BusKind::Pq);
        b3.shunt_b = -0.05;
        let case = NetworkCase::new(
            100.0,
            230.0,
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq), b3],
            vec![line(1, 2, 0.01, 0.05)],
            None,
            None,
        )
        .unwrap();
        let y = build_ybus(&case).unwrap();
        let k = case.index_of(3).unwrap();
        assert_eq!(y.g[k][k], 0.0);
        assert_relative_eq!(y.b[k][k], -0.05);
    }

    #[test]
    fn zero_impedance_rejected_at_construction() {
        // The ybus guard for r = x = 0 is defensive; the constructor already
        // refuses such branches.
        let err = NetworkCase::<f64>::new(
            100.0,
            230.0,
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![line(1, 2, 0.0, 0.0)],
            None,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("zero impedance"));
    }

    #[test]
    fn flat_profile_on_shunt_free_network_has_zero_injections() {
        let case = shunt_free_case();
        let y = build_ybus(&case).unwrap();
        let (p, q) = calc_pq(&[1.0; 3], &[0.0; 3], &y);
        for k in 0..3 {
            assert_relative_eq!(p[k], 0.0, epsilon = 1e-13);
            assert_relative_eq!(q[k], 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn injections_scale_quadratically_with_voltage() {
        // P and Q are bilinear in the voltage magnitudes at fixed angles.
        let case = shunt_free_case();
        let y = build_ybus(&case).unwrap();
        let v1 = [1.0, 0.97, 1.02];
        let v2: Vec<f64> = v1.iter().map(|v| 2.0 * v).collect();
        let th = [0.0; 3];
        let (p1, q1) = calc_pq(&v1, &th, &y);
        let (p2, q2) = calc_pq(&v2, &th, &y);
        for k in 0..3 {
            assert_relative_eq!(p2[k], 4.0 * p1[k], max_relative = 1e-12);
            assert_relative_eq!(q2[k], 4.0 * q1[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn cost_equals_squared_residual_norm() {
        let case = shunt_free_case();
        let y = build_ybus(&case).unwrap();
        let idx = EptsIndex::new(&case);
        let layout = EptsLayout::new(&idx);
        let mut state = EptsState::zeros(&layout);
        for (i, xi) in state.x.iter_mut().enumerate() {
            *xi = 0.9 + 0.01 * i as f64;
        }
        let h = epts_residuals(&state, &case, &y);
        let direct: f64 = h.values.iter().map(|v| v * v).sum();
        assert_eq!(direct, epts_cost(&state, &case, &y));
    }

    #[test]
    fn cost_and_gradient_vanish_at_an_exact_solution() {
        let mut b2 = bus(2, BusKind::Pq);
        b2.p_demand = 0.5;
        b2.q_demand = 0.2;
        let case = NetworkCase::new(
            100.0,
            230.0,
            vec![bus(1, BusKind::Slack), b2],
            vec![line(1, 2, 0.01, 0.05)],
            None,
            None,
        )
        .unwrap();
        let y = build_ybus(&case).unwrap();
        let (sol, _) = newton_raphson_solve(&case, 1e-14, 100).unwrap();
        let v: Vec<f64> = (0..2).map(|i| sol.v_mag(i)).collect();
        let th: Vec<f64> = (0..2).map(|i| sol.v_angle(i)).collect();
        let state = EptsState::from_profile(&case, &y, &v, &th);
        assert!(epts_cost(&state, &case, &y) < 1e-18);
        for g in epts_gradient(&state, &case, &y) {
            assert!(g.abs() < 1e-9, "gradient entry {g}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let case = shunt_free_case();
        let y = build_ybus(&case).unwrap();
        let idx = EptsIndex::new(&case);
        let layout = EptsLayout::new(&idx);
        let mut x0 = EptsState::zeros(&layout).x;
        for (i, xi) in x0.iter_mut().enumerate() {
            *xi = 0.95 + 0.02 * (i as f64 * 0.9).sin();
        }
        let jac = epts_jacobian(&EptsState { x: x0.clone() }, &case, &y);
        let h = 1e-7;
        for col in 0..x0.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[col] += h;
            xm[col] -= h;
            let hp = epts_residuals(&EptsState { x: xp }, &case, &y).values;
            let hm = epts_residuals(&EptsState { x: xm }, &case, &y).values;
            for row in 0..hp.len() {
                let fd = (hp[row] - hm[row]) / (2.0 * h);
                assert!(
                    (jac[row][col] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                    "J[{row}][{col}] = {} vs fd {fd}",
                    jac[row][col]
                );
            }
        }
    }
}
