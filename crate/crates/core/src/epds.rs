//! Distribution-system power flow.
//!
//! Two routes to the same answer: a classic backward-forward sweep fixed
//! point (`bfs_sweep_solve`, the oracle), and an unconstrained least-squares
//! formulation whose residual is one sweep's voltage update
//! (`bfs_residuals`), minimized over `R^{2(n-1)}` with the manifold solvers.
//!
//! The state packs the load-bus voltages as interleaved real/imaginary
//! parts; the slack voltage is pinned to the nominal phasor. Residuals are
//! emitted for all `n` buses with the slack entry structurally zero, which
//! keeps indexing aligned with the sweep.

use num_complex::Complex;
use thiserror::Error;

use crate::manifold::{
    rgd_solve, rtr_solve, EuclideanManifold, SolveReport, SolverConfig, SolverError,
};
use crate::network::{check_radial, reorder_branches, CaseError, NetworkCase};
use crate::scalar::{cast, Real};
use crate::solution::{series_loss_kw, BranchFlow, FlowSolution};

#[derive(Debug, Error)]
pub enum EpdsError {
    #[error("case is not radial: active branches must form a spanning tree")]
    NotRadial,
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("zero voltage at bus index {0}: current injection undefined")]
    ZeroVoltage(usize),
    #[error("sweep did not converge within {0} sweeps")]
    SweepDiverged(usize),
    #[error("state length {got} does not match 2(n-1) = {want}")]
    StateLength { got: usize, want: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Branch traversal order for the sweeps: senders and receivers as internal
/// bus indices, each receiver appearing exactly once, every sender reachable
/// through earlier branches.
#[derive(Debug, Clone)]
pub struct BfsOrdering<T> {
    senders: Vec<usize>,
    receivers: Vec<usize>,
    z: Vec<Complex<T>>,
    r: Vec<T>,
    n: usize,
}

impl<T: Real> BfsOrdering<T> {
    /// Builds the sweep ordering from the active branches of a radial case.
    pub fn new(case: &NetworkCase<T>) -> Result<Self, EpdsError> {
        if !check_radial(case) {
            return Err(EpdsError::NotRadial);
        }
        let active: Vec<&crate::network::BranchRecord<T>> =
            case.branches().iter().filter(|b| b.status).collect();
        let edges: Vec<(u32, u32)> = active.iter().map(|b| (b.from_bus, b.to_bus)).collect();
        let slack_id = case.buses()[0].id;
        let ordered = reorder_branches(&edges, slack_id).map_err(EpdsError::Case)?;

        let mut senders = Vec::with_capacity(ordered.len());
        let mut receivers = Vec::with_capacity(ordered.len());
        let mut z = Vec::with_capacity(ordered.len());
        let mut r = Vec::with_capacity(ordered.len());
        for &(a, b) in &ordered {
            // Find the matching record (either orientation).
            let rec = active
                .iter()
                .find(|br| {
                    (br.from_bus == a && br.to_bus == b) || (br.from_bus == b && br.to_bus == a)
                })
                .expect("ordered edge stems from the active set");
            senders.push(case.index_of(a).unwrap());
            receivers.push(case.index_of(b).unwrap());
            z.push(Complex::new(rec.r, rec.x));
            r.push(rec.r);
        }
        Ok(Self {
            senders,
            receivers,
            z,
            r,
            n: case.n_buses(),
        })
    }

    pub fn n_buses(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }

    pub fn senders(&self) -> &[usize] {
        &self.senders
    }

    pub fn receivers(&self) -> &[usize] {
        &self.receivers
    }

    /// Backward sweep: accumulates per-bus injections into branch flows.
    /// Works for any additive quantity (currents here, residual adjoints in
    /// the gradient).
    fn accumulate_backward(&self, injections: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut aux = injections.to_vec();
        let mut branch = vec![Complex::new(T::zero(), T::zero()); self.len()];
        for i in (0..self.len()).rev() {
            branch[i] = aux[self.receivers[i]];
            aux[self.senders[i]] = aux[self.senders[i]] + branch[i];
        }
        branch
    }

    /// Forward sweep: propagates slack-referenced sums along paths.
    fn propagate_forward(&self, start: Complex<T>, weights: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut acc = vec![Complex::new(T::zero(), T::zero()); self.n];
        acc[0] = start;
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.n];
        out[0] = start;
        for i in 0..self.len() {
            let v = acc[self.senders[i]] + weights[i];
            acc[self.receivers[i]] = v;
            out[self.receivers[i]] = v;
        }
        out
    }
}

/// Real optimization vector of length `2(n-1)`: entry `2k` is the real part
/// and `2k+1` the imaginary part of load-bus `k+1`'s voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct EpdsState<T> {
    pub x: Vec<T>,
}

impl<T: Real> EpdsState<T> {
    /// Nominal voltages with zero imaginary part.
    pub fn flat_start(case: &NetworkCase<T>) -> Self {
        let v_nom = case.slack_voltage();
        let n = case.n_buses();
        let mut x = Vec::with_capacity(2 * (n - 1));
        for _ in 1..n {
            x.push(v_nom.re);
            x.push(v_nom.im);
        }
        Self { x }
    }

    pub fn from_vector(x: Vec<T>) -> Self {
        Self { x }
    }

    /// Packs full complex bus voltages (slack first) into a state.
    pub fn from_voltages(v: &[Complex<T>]) -> Self {
        let mut x = Vec::with_capacity(2 * (v.len() - 1));
        for vk in &v[1..] {
            x.push(vk.re);
            x.push(vk.im);
        }
        Self { x }
    }

    /// Expands the state into full bus voltages, pinning the slack phasor.
    pub fn voltages(&self, v_nom: Complex<T>) -> Vec<Complex<T>> {
        let mut v = Vec::with_capacity(self.x.len() / 2 + 1);
        v.push(v_nom);
        for pair in self.x.chunks_exact(2) {
            v.push(Complex::new(pair[0], pair[1]));
        }
        v
    }

    fn check_len(&self, n: usize) -> Result<(), EpdsError> {
        if self.x.len() != 2 * (n - 1) {
            Err(EpdsError::StateLength {
                got: self.x.len(),
                want: 2 * (n - 1),
            })
        } else {
            Ok(())
        }
    }
}

/// Complex demand per bus in internal order.
fn demands<T: Real>(case: &NetworkCase<T>) -> Vec<Complex<T>> {
    case.buses()
        .iter()
        .map(|b| Complex::new(b.p_demand, b.q_demand))
        .collect()
}

/// Injected load currents `(S_D(k) / V(k))*`.
fn injected_currents<T: Real>(
    sd: &[Complex<T>],
    v: &[Complex<T>],
) -> Result<Vec<Complex<T>>, EpdsError> {
    sd.iter()
        .zip(v)
        .enumerate()
        .map(|(k, (&s, &vk))| {
            if vk.norm_sqr() == T::zero() {
                if s.norm_sqr() == T::zero() {
                    // No demand draws no current even at zero voltage.
                    Ok(Complex::new(T::zero(), T::zero()))
                } else {
                    Err(EpdsError::ZeroVoltage(k))
                }
            } else {
                Ok((s / vk).conj())
            }
        })
        .collect()
}

/// Branch currents and recalculated voltages of one backward-forward pass.
type SweepPass<T> = (Vec<Complex<T>>, Vec<Complex<T>>);

/// One backward-forward pass from the voltage profile `v`.
fn sweep_once<T: Real>(
    ord: &BfsOrdering<T>,
    sd: &[Complex<T>],
    v: &[Complex<T>],
    v_nom: Complex<T>,
) -> Result<SweepPass<T>, EpdsError> {
    let injections = injected_currents(sd, v)?;
    let branch_currents = ord.accumulate_backward(&injections);
    let drops: Vec<Complex<T>> = branch_currents
        .iter()
        .zip(&ord.z)
        .map(|(&i, &z)| -(z * i))
        .collect();
    let v_calc = ord.propagate_forward(v_nom, &drops);
    Ok((branch_currents, v_calc))
}

/// Sweep residuals `V_calc - V` for the packed state; the slack entry is
/// structurally zero.
pub fn bfs_residuals<T: Real>(
    state: &EpdsState<T>,
    case: &NetworkCase<T>,
    ord: &BfsOrdering<T>,
) -> Result<Vec<Complex<T>>, EpdsError> {
    state.check_len(ord.n_buses())?;
    let v_nom = case.slack_voltage();
    let v = state.voltages(v_nom);
    let sd = demands(case);
    let (_, v_calc) = sweep_once(ord, &sd, &v, v_nom)?;
    Ok(v_calc.iter().zip(&v).map(|(&a, &b)| a - b).collect())
}

/// Sum of squared residual magnitudes; zero exactly at a power-flow solution.
pub fn bfs_cost<T: Real>(
    state: &EpdsState<T>,
    case: &NetworkCase<T>,
    ord: &BfsOrdering<T>,
) -> Result<T, EpdsError> {
    Ok(bfs_residuals(state, case, ord)?
        .iter()
        .fold(T::zero(), |acc, h| acc + h.norm_sqr()))
}

/// Shared core of the gradient and the vector-Jacobian product.
///
/// For weights `u` (complex per bus, representing a real covector on the
/// stacked Re/Im residual coordinates), computes `J^T u` where `J` is the
/// Jacobian of the residual map. The derivative flows through two adjoint
/// sweeps that mirror the forward ones: weights are accumulated down the
/// tree like currents, then path sums of `Z * subtree-weight` are propagated
/// up like voltage drops.
fn bfs_vjp<T: Real>(
    state: &EpdsState<T>,
    case: &NetworkCase<T>,
    ord: &BfsOrdering<T>,
    u: &[Complex<T>],
) -> Result<Vec<T>, EpdsError> {
    state.check_len(ord.n_buses())?;
    let v_nom = case.slack_voltage();
    let v = state.voltages(v_nom);
    let sd = demands(case);

    let u_conj: Vec<Complex<T>> = u.iter().map(|w| w.conj()).collect();
    let subtree = ord.accumulate_backward(&u_conj);
    let weights: Vec<Complex<T>> = subtree.iter().zip(&ord.z).map(|(&s, &z)| z * s).collect();
    let path = ord.propagate_forward(Complex::new(T::zero(), T::zero()), &weights);

    let mut out = vec![T::zero(); state.x.len()];
    for b in 1..ord.n_buses() {
        let vb = v[b];
        if vb.norm_sqr() == T::zero() && sd[b].norm_sqr() != T::zero() {
            return Err(EpdsError::ZeroVoltage(b));
        }
        // d I_n(b) / d Re(V_b) = -conj(S_b) / conj(V_b)^2, and the Im-part
        // derivative carries an extra factor j.
        let sens = if sd[b].norm_sqr() == T::zero() {
            Complex::new(T::zero(), T::zero())
        } else {
            sd[b].conj() / (vb.conj() * vb.conj())
        };
        // (J^T u) entries: Re/Im of W_b s_b - u_b, where W_b is the path sum
        // of Z times subtree-accumulated conj(u).
        let k = path[b] * sens - u[b];
        out[2 * (b - 1)] = k.re;
        out[2 * (b - 1) + 1] = k.im;
    }
    Ok(out)
}

/// Directional derivative of the residual map along a state perturbation:
/// `J * t` as a complex vector per bus.
fn bfs_jvp<T: Real>(
    state: &EpdsState<T>,
    case: &NetworkCase<T>,
    ord: &BfsOrdering<T>,
    tangent: &[T],
) -> Result<Vec<Complex<T>>, EpdsError> {
    state.check_len(ord.n_buses())?;
    let v_nom = case.slack_voltage();
    let v = state.voltages(v_nom);
    let sd = demands(case);

    let zero = Complex::new(T::zero(), T::zero());
    let mut d_inj = vec![zero; ord.n_buses()];
    let mut d_v = vec![zero; ord.n_buses()];
    for b in 1..ord.n_buses() {
        let dv = Complex::new(tangent[2 * (b - 1)], tangent[2 * (b - 1) + 1]);
        d_v[b] = dv;
        if sd[b].norm_sqr() != T::zero() {
            let vb = v[b];
            if vb.norm_sqr() == T::zero() {
                return Err(EpdsError::ZeroVoltage(b));
            }
            d_inj[b] = -(sd[b].conj() / (vb.conj() * vb.conj())) * dv.conj();
        }
    }
    let d_branch = ord.accumulate_backward(&d_inj);
    let d_drops: Vec<Complex<T>> = d_branch
        .iter()
        .zip(&ord.z)
        .map(|(&i, &z)| -(z * i))
        .collect();
    let d_vcalc = ord.propagate_forward(zero, &d_drops);
    Ok(d_vcalc.iter().zip(&d_v).map(|(&a, &b)| a - b).collect())
}

/// Analytic gradient of [`bfs_cost`]: `2 sum_i Re(h_i* grad h_i)` assembled
/// over the real parameters by the adjoint sweeps.
pub fn bfs_cost_gradient<T: Real>(
    state: &EpdsState<T>,
    case: &NetworkCase<T>,
    ord: &BfsOrdering<T>,
) -> Result<Vec<T>, EpdsError> {
    let h = bfs_residuals(state, case, ord)?;
    let two = cast::<T>(2.0);
    Ok(bfs_vjp(state, case, ord, &h)?
        .into_iter()
        .map(|g| g * two)
        .collect())
}

/// Gauss-Newton Hessian-vector product `2 J^T (J t)` for the sweep cost.
pub fn bfs_gauss_newton_hess_vec<T: Real>(
    state: &EpdsState<T>,
    case: &NetworkCase<T>,
    ord: &BfsOrdering<T>,
    tangent: &[T],
) -> Result<Vec<T>, EpdsError> {
    let jt = bfs_jvp(state, case, ord, tangent)?;
    let two = cast::<T>(2.0);
    Ok(bfs_vjp(state, case, ord, &jt)?
        .into_iter()
        .map(|g| g * two)
        .collect())
}

/// One convergence-trace sample: residual measure and elapsed seconds.
pub type TracePoint<T> = (T, f64);

/// Solution plus the optimizer run that produced it.
pub type EpdsSolve<T> = (FlowSolution<T>, SolveReport<Vec<T>, T>);

/// Solution plus the per-sweep mismatch trace.
pub type SweepSolve<T> = (FlowSolution<T>, Vec<TracePoint<T>>);

/// Classic backward-forward sweep fixed point; the independent oracle for
/// the optimization route. Converges when the largest apparent-power
/// mismatch `|S_D - V_calc . I_n*|` falls below `tol`.
pub fn bfs_sweep_solve<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_sweeps: usize,
) -> Result<FlowSolution<T>, EpdsError> {
    bfs_sweep_solve_traced(case, tol, max_sweeps).map(|(sol, _)| sol)
}

/// [`bfs_sweep_solve`] plus the per-sweep mismatch trace.
pub fn bfs_sweep_solve_traced<T: Real>(
    case: &NetworkCase<T>,
    tol: T,
    max_sweeps: usize,
) -> Result<SweepSolve<T>, EpdsError> {
    let clock = std::time::Instant::now();
    let ord = BfsOrdering::new(case)?;
    let v_nom = case.slack_voltage();
    let sd = demands(case);
    let mut v = vec![v_nom; case.n_buses()];
    let mut trace = Vec::new();
    for sweep in 0..max_sweeps {
        let injections = injected_currents(&sd, &v)?;
        let (_, v_calc) = sweep_once(&ord, &sd, &v, v_nom)?;
        let mut err = T::zero();
        for k in 0..case.n_buses() {
            let delivered = v_calc[k] * injections[k].conj();
            err = err.max((sd[k] - delivered).norm());
        }
        trace.push((err, clock.elapsed().as_secs_f64()));
        if v_calc
            .iter()
            .any(|vk| !vk.re.is_finite() || !vk.im.is_finite())
        {
            return Err(EpdsError::SweepDiverged(sweep + 1));
        }
        v = v_calc;
        if err < tol {
            return Ok((solution_from_voltages(case, &ord, &v), trace));
        }
    }
    Err(EpdsError::SweepDiverged(max_sweeps))
}

/// Assembles the physical solution from a voltage profile. Branch currents
/// come from Ohm's law on the series impedances, so the result is internally
/// consistent for any profile and exact at the sweep fixed point.
pub fn solution_from_voltages<T: Real>(
    case: &NetworkCase<T>,
    ord: &BfsOrdering<T>,
    v: &[Complex<T>],
) -> FlowSolution<T> {
    let sd = demands(case);
    let s_base = case.s_base_mva();

    let mut branches = Vec::with_capacity(ord.len());
    let mut branch_currents = Vec::with_capacity(ord.len());
    let mut total_loss = T::zero();
    for i in 0..ord.len() {
        let s_idx = ord.senders[i];
        let r_idx = ord.receivers[i];
        let current = (v[s_idx] - v[r_idx]) / ord.z[i];
        branch_currents.push(current);
        let s_send = v[s_idx] * current.conj();
        let loss = series_loss_kw(ord.r[i], current.norm(), s_base);
        total_loss = total_loss + loss;
        branches.push(BranchFlow {
            from: case.buses()[s_idx].id,
            to: case.buses()[r_idx].id,
            p: s_send.re,
            q: s_send.im,
            i_mag: current.norm(),
            loss_kw: loss,
        });
    }

    // Substation injection covers the feeder draw plus its own demand.
    let mut feeder = Complex::new(T::zero(), T::zero());
    for (s_idx, current) in ord.senders.iter().zip(&branch_currents) {
        if *s_idx == 0 {
            feeder = feeder + *current;
        }
    }
    let s_slack = v[0] * feeder.conj() + sd[0];

    let mut bus_p = Vec::with_capacity(case.n_buses());
    let mut bus_q = Vec::with_capacity(case.n_buses());
    for (k, s) in sd.iter().enumerate() {
        if k == 0 {
            bus_p.push(s_slack.re - s.re);
            bus_q.push(s_slack.im - s.im);
        } else {
            bus_p.push(-s.re);
            bus_q.push(-s.im);
        }
    }

    let v_min = v.iter().fold(T::infinity(), |acc, vk| acc.min(vk.norm()));
    FlowSolution {
        s_base_mva: s_base,
        bus_id: case.buses().iter().map(|b| b.id).collect(),
        v: v.to_vec(),
        bus_p,
        bus_q,
        branches,
        p_slack: s_slack.re,
        q_slack: s_slack.im,
        total_loss_kw: total_loss,
        v_min,
    }
}

/// Minimizes the sweep-residual cost with Riemannian gradient descent from
/// the flat start. Non-convergence is reported in the `SolveReport`, not
/// raised.
pub fn solve_epds<T: Real>(
    case: &NetworkCase<T>,
    cfg: &SolverConfig<T>,
) -> Result<EpdsSolve<T>, EpdsError> {
    let ord = BfsOrdering::new(case)?;
    let dim = 2 * (case.n_buses() - 1);
    let manifold = EuclideanManifold::new(dim);
    let cost = |x: &Vec<T>| {
        bfs_cost(&EpdsState::from_vector(x.clone()), case, &ord).unwrap_or_else(|_| T::nan())
    };
    let grad = |x: &Vec<T>| {
        bfs_cost_gradient(&EpdsState::from_vector(x.clone()), case, &ord)
            .unwrap_or_else(|_| vec![T::nan(); dim])
    };
    let x0 = EpdsState::flat_start(case).x;
    let report = rgd_solve(&manifold, cost, grad, x0, cfg)?;
    let v = EpdsState::from_vector(report.final_point.clone()).voltages(case.slack_voltage());
    Ok((solution_from_voltages(case, &ord, &v), report))
}

/// Same cost minimized with the trust-region solver and the Gauss-Newton
/// Hessian surrogate.
pub fn solve_epds_trust_region<T: Real>(
    case: &NetworkCase<T>,
    cfg: &SolverConfig<T>,
) -> Result<EpdsSolve<T>, EpdsError> {
    let ord = BfsOrdering::new(case)?;
    let dim = 2 * (case.n_buses() - 1);
    let manifold = EuclideanManifold::new(dim);
    let cost = |x: &Vec<T>| {
        bfs_cost(&EpdsState::from_vector(x.clone()), case, &ord).unwrap_or_else(|_| T::nan())
    };
    let grad = |x: &Vec<T>| {
        bfs_cost_gradient(&EpdsState::from_vector(x.clone()), case, &ord)
            .unwrap_or_else(|_| vec![T::nan(); dim])
    };
    let hess = |x: &Vec<T>, t: &Vec<T>| {
        bfs_gauss_newton_hess_vec(&EpdsState::from_vector(x.clone()), case, &ord, t)
            .unwrap_or_else(|_| vec![T::nan(); dim])
    };
    let x0 = EpdsState::flat_start(case).x;
    let report = rtr_solve(&manifold, cost, grad, hess, x0, cfg)?;
    let v = EpdsState::from_vector(report.final_point.clone()).voltages(case.slack_voltage());
    Ok((solution_from_voltages(case, &ord, &v), report))
}

/// Applies a Master-side switch vector: replaces branch statuses and
/// re-orders the active branches into sweep order (inactive branches keep
/// their relative order at the tail). Errors when the active graph is not a
/// spanning tree.
pub fn apply_switch_vector<T: Real>(
    case: &NetworkCase<T>,
    y: &[bool],
) -> Result<NetworkCase<T>, EpdsError> {
    assert_eq!(
        y.len(),
        case.branches().len(),
        "switch vector length must match branch count"
    );
    let switched = case.with_statuses(y);
    let active: Vec<crate::network::BranchRecord<T>> = switched
        .branches()
        .iter()
        .filter(|b| b.status)
        .cloned()
        .collect();
    let edges: Vec<(u32, u32)> = active.iter().map(|b| (b.from_bus, b.to_bus)).collect();
    let slack_id = switched.buses()[0].id;
    let ordered = reorder_branches(&edges, slack_id).map_err(EpdsError::Case)?;
    if ordered.len() != switched.n_buses() - 1 {
        return Err(EpdsError::NotRadial);
    }

    let mut remaining = active;
    let mut new_order = Vec::with_capacity(switched.branches().len());
    for &(a, b) in &ordered {
        let pos = remaining
            .iter()
            .position(|br| {
                (br.from_bus == a && br.to_bus == b) || (br.from_bus == b && br.to_bus == a)
            })
            .expect("ordered edge stems from the active set");
        let mut rec = remaining.remove(pos);
        if rec.from_bus != a {
            std::mem::swap(&mut rec.from_bus, &mut rec.to_bus);
        }
        new_order.push(rec);
    }
    for br in switched.branches().iter().filter(|b| !b.status) {
        new_order.push(br.clone());
    }
    Ok(switched.with_branch_order(new_order))
}

/// Penalty value `sum max(0, g_i)^p + sum |h_i|^p`.
pub fn penalty_terms<T: Real>(g_values: &[T], h_values: &[T], p: u32) -> T {
    let g_part = g_values
        .iter()
        .fold(T::zero(), |acc, &g| acc + g.max(T::zero()).powi(p as i32));
    let h_part = h_values
        .iter()
        .fold(T::zero(), |acc, &h| acc + h.abs().powi(p as i32));
    g_part + h_part
}

/// Penalty weight and exponent for augmented costs.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig<T> {
    pub mu: T,
    pub p: u32,
}

impl<T: Real> Default for PenaltyConfig<T> {
    fn default() -> Self {
        Self { mu: T::one(), p: 2 }
    }
}

impl<T: Real> PenaltyConfig<T> {
    /// Augmented objective `f + mu * alpha`.
    pub fn augment(&self, f: T, g_values: &[T], h_values: &[T]) -> T {
        f + self.mu * penalty_terms(g_values, h_values, self.p)
    }
}

/// Maximum absolute violations of the full distribution power-flow model,
/// one figure per equation family.
#[derive(Debug, Clone)]
pub struct EpdsValidation<T> {
    /// Active power balance at every bus.
    pub p_balance: T,
    /// Reactive power balance at every bus.
    pub q_balance: T,
    /// Voltage-drop identity over every branch.
    pub voltage_drop: T,
    /// Apparent-power identity over every branch.
    pub apparent_power: T,
    /// Current-limit violation (zero when inside bounds or no limits given).
    pub current_bounds: T,
    /// Voltage-limit violation.
    pub voltage_bounds: T,
}

impl<T: Real> EpdsValidation<T> {
    /// Largest equality-family residual.
    pub fn max_equality(&self) -> T {
        self.p_balance
            .max(self.q_balance)
            .max(self.voltage_drop)
            .max(self.apparent_power)
    }
}

/// Evaluates the full model residuals on a solved operating point.
///
/// Power balances follow the losses-at-sending-bus convention: each branch
/// draws its receiving-end flow plus its series loss from the sender. The
/// voltage-drop and apparent-power identities use receiving-end flows, which
/// makes both exact on sweep solutions.
pub fn validate_epds_solution<T: Real>(
    sol: &FlowSolution<T>,
    case: &NetworkCase<T>,
) -> EpdsValidation<T> {
    let n = case.n_buses();
    let idx_of_id = |id: u32| case.index_of(id).expect("solution ids stem from the case");
    let kw = case.s_base_mva() * cast::<T>(1000.0);

    // Receiving-end flows and currents per branch.
    struct Edge<T> {
        from: usize,
        to: usize,
        p_recv: T,
        q_recv: T,
        i_sq: T,
        r: T,
        x: T,
        z_sq: T,
        i_mag: T,
        i_max: Option<T>,
        i_min: Option<T>,
    }
    let mut edges: Vec<Edge<T>> = Vec::with_capacity(sol.branches.len());
    for bf in &sol.branches {
        let from = idx_of_id(bf.from);
        let to = idx_of_id(bf.to);
        // Match the case record for impedance and limits (either orientation).
        let rec = case
            .branches()
            .iter()
            .find(|br| {
                br.status
                    && ((br.from_bus == bf.from && br.to_bus == bf.to)
                        || (br.from_bus == bf.to && br.to_bus == bf.from))
            })
            .expect("solution branch stems from the case");
        let loss_pu = bf.loss_kw / kw;
        let x_loss = rec.x * bf.i_mag * bf.i_mag;
        edges.push(Edge {
            from,
            to,
            p_recv: bf.p - loss_pu,
            q_recv: bf.q - x_loss,
            i_sq: bf.i_mag * bf.i_mag,
            r: rec.r,
            x: rec.x,
            z_sq: rec.r * rec.r + rec.x * rec.x,
            i_mag: bf.i_mag,
            i_max: rec.i_max,
            i_min: rec.i_min,
        });
    }

    let mut p_balance = T::zero();
    let mut q_balance = T::zero();
    for k in 0..n {
        let bus = &case.buses()[k];
        let mut p = T::zero();
        let mut q = T::zero();
        for e in &edges {
            if e.to == k {
                p = p + e.p_recv;
                q = q + e.q_recv;
            }
            if e.from == k {
                p = p - (e.p_recv + e.r * e.i_sq);
                q = q - (e.q_recv + e.x * e.i_sq);
            }
        }
        let (ps, qs) = if k == case.slack_index() {
            (sol.p_slack, sol.q_slack)
        } else {
            (T::zero(), T::zero())
        };
        p_balance = p_balance.max((p + ps - bus.p_demand).abs());
        q_balance = q_balance.max((q + qs - bus.q_demand).abs());
    }

    let mut voltage_drop = T::zero();
    let mut apparent_power = T::zero();
    let mut current_bounds = T::zero();
    for e in &edges {
        let vi_sq = sol.v[e.from].norm_sqr();
        let vj_sq = sol.v[e.to].norm_sqr();
        let drop =
            vi_sq - (e.r * e.p_recv + e.x * e.q_recv) * cast::<T>(2.0) - e.z_sq * e.i_sq - vj_sq;
        voltage_drop = voltage_drop.max(drop.abs());
        let sq = e.i_sq * vj_sq - (e.p_recv * e.p_recv + e.q_recv * e.q_recv);
        apparent_power = apparent_power.max(sq.abs());
        if let Some(imax) = e.i_max {
            current_bounds = current_bounds.max(e.i_mag - imax);
        }
        if let Some(imin) = e.i_min {
            current_bounds = current_bounds.max(imin - e.i_mag);
        }
    }
    current_bounds = current_bounds.max(T::zero());

    let mut voltage_bounds = T::zero();
    let (v_min, v_max) = case.v_limits();
    for v in &sol.v {
        let mag = v.norm();
        if let Some(lo) = v_min {
            voltage_bounds = voltage_bounds.max(lo - mag);
        }
        if let Some(hi) = v_max {
            voltage_bounds = voltage_bounds.max(mag - hi);
        }
    }
    voltage_bounds = voltage_bounds.max(T::zero());

    EpdsValidation {
        p_balance,
        q_balance,
        voltage_drop,
        apparent_power,
        current_bounds,
        voltage_bounds,
    }
}
