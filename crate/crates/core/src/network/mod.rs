//! Network case model shared by the distribution and transmission solvers.
//!
//! A [`NetworkCase`] is an immutable, validated, per-unit description of a
//! power network. Construction normalizes bus order so the slack bus sits at
//! internal index 0 while external ids are preserved for reporting. All
//! quantities are stored per unit on the case bases.

mod parse;

pub use parse::{parse_case, CaseFormat};

use std::collections::HashMap;

use thiserror::Error;

use crate::scalar::{cast, Real};

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("malformed case file: {0}")]
    Malformed(String),
    #[error("duplicate bus id {0}")]
    DuplicateBusId(u32),
    #[error("multiple slack buses")]
    MultipleSlack,
    #[error("no slack bus defined")]
    MissingSlack,
    #[error("branch {from}-{to} references unknown bus {unknown}")]
    UnknownBus { from: u32, to: u32, unknown: u32 },
    #[error("non-positive base ({0})")]
    NonPositiveBase(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("disconnected graph: bus {bus} unreachable from the slack")]
    Disconnected { bus: u32 },
    #[error("active branches do not form a radial network")]
    NotRadial,
    #[error("conflicting fields: {0}")]
    ConflictingFields(String),
}

/// Bus role in the power-flow formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    /// Reference bus with fixed voltage magnitude and angle.
    Slack,
    /// Generator bus: fixed active injection and voltage magnitude.
    Pv,
    /// Load bus: fixed active and reactive injections.
    Pq,
}

#[derive(Debug, Clone)]
pub struct BusRecord<T> {
    pub id: u32,
    pub kind: BusKind,
    /// Active demand, per unit.
    pub p_demand: T,
    /// Reactive demand, per unit. Negative values model net capacitive
    /// compensation folded into the load.
    pub q_demand: T,
    /// Scheduled active generation, per unit; `None` when unknown.
    pub p_gen: Option<T>,
    /// Scheduled reactive generation, per unit; `None` when unknown.
    pub q_gen: Option<T>,
    /// Voltage magnitude set point for slack and PV buses, per unit.
    pub v_set: Option<T>,
    /// Voltage angle for the slack bus, radians.
    pub theta_set: Option<T>,
    /// Bus shunt susceptance, per unit.
    pub shunt_b: T,
}

impl<T: Real> BusRecord<T> {
    /// Net specified active injection (generation minus demand).
    pub fn p_injection(&self) -> T {
        self.p_gen.unwrap_or_else(T::zero) - self.p_demand
    }

    /// Net specified reactive injection (generation minus demand).
    pub fn q_injection(&self) -> T {
        self.q_gen.unwrap_or_else(T::zero) - self.q_demand
    }
}

#[derive(Debug, Clone)]
pub struct BranchRecord<T> {
    pub from_bus: u32,
    pub to_bus: u32,
    /// Series resistance, per unit.
    pub r: T,
    /// Series reactance, per unit.
    pub x: T,
    /// Half line-charging susceptance placed at each terminal, per unit.
    pub b_shunt_half: T,
    /// Activation flag; inactive branches carry no current.
    pub status: bool,
    /// Optional current magnitude limits, per unit.
    pub i_max: Option<T>,
    pub i_min: Option<T>,
}

#[derive(Debug, Clone)]
pub struct NetworkCase<T> {
    s_base_mva: T,
    v_base_kv: T,
    buses: Vec<BusRecord<T>>,
    branches: Vec<BranchRecord<T>>,
    v_min: Option<T>,
    v_max: Option<T>,
    index_of_id: HashMap<u32, usize>,
}

impl<T: Real> NetworkCase<T> {
    /// Validates the records and builds the internal bus order (slack first,
    /// remaining buses in input order).
    // NaN inputs must fail the sign tests, hence the negated comparisons.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(
        s_base_mva: T,
        v_base_kv: T,
        mut buses: Vec<BusRecord<T>>,
        branches: Vec<BranchRecord<T>>,
        v_min: Option<T>,
        v_max: Option<T>,
    ) -> Result<Self, CaseError> {
        if !(s_base_mva > T::zero()) || !s_base_mva.is_finite() {
            return Err(CaseError::NonPositiveBase(format!(
                "s_base_mva = {s_base_mva}"
            )));
        }
        if !(v_base_kv > T::zero()) || !v_base_kv.is_finite() {
            return Err(CaseError::NonPositiveBase(format!(
                "v_base_kv = {v_base_kv}"
            )));
        }
        let slack_count = buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack_count == 0 {
            return Err(CaseError::MissingSlack);
        }
        if slack_count > 1 {
            return Err(CaseError::MultipleSlack);
        }
        let slack_pos = buses.iter().position(|b| b.kind == BusKind::Slack).unwrap();
        let slack = buses.remove(slack_pos);
        buses.insert(0, slack);

        let mut index_of_id = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index_of_id.insert(bus.id, i).is_some() {
                return Err(CaseError::DuplicateBusId(bus.id));
            }
            for (name, v) in [
                ("p_demand", bus.p_demand),
                ("q_demand", bus.q_demand),
                ("shunt_b", bus.shunt_b),
            ] {
                if !v.is_finite() {
                    return Err(CaseError::InvalidValue(format!(
                        "bus {}: non-finite {name}",
                        bus.id
                    )));
                }
            }
            if let Some(v) = bus.v_set {
                if !(v > T::zero()) || !v.is_finite() {
                    return Err(CaseError::InvalidValue(format!(
                        "bus {}: v_set must be positive",
                        bus.id
                    )));
                }
            }
            match bus.kind {
                BusKind::Pq => {
                    if bus.v_set.is_some() {
                        return Err(CaseError::InvalidValue(format!(
                            "bus {}: PQ bus carries v_set",
                            bus.id
                        )));
                    }
                }
                BusKind::Slack | BusKind::Pv => {
                    if bus.v_set.is_none() {
                        return Err(CaseError::InvalidValue(format!(
                            "bus {}: missing v_set",
                            bus.id
                        )));
                    }
                }
            }
        }
        for br in &branches {
            if br.from_bus == br.to_bus {
                return Err(CaseError::InvalidValue(format!(
                    "branch {}-{}: endpoints coincide",
                    br.from_bus, br.to_bus
                )));
            }
            for (end, id) in [("from", br.from_bus), ("to", br.to_bus)] {
                if !index_of_id.contains_key(&id) {
                    let _ = end;
                    return Err(CaseError::UnknownBus {
                        from: br.from_bus,
                        to: br.to_bus,
                        unknown: id,
                    });
                }
            }
            if !(br.r >= T::zero()) {
                return Err(CaseError::InvalidValue(format!(
                    "branch {}-{}: negative resistance",
                    br.from_bus, br.to_bus
                )));
            }
            if br.r == T::zero() && br.x == T::zero() {
                return Err(CaseError::InvalidValue(format!(
                    "branch {}-{}: zero impedance",
                    br.from_bus, br.to_bus
                )));
            }
            if !br.r.is_finite() || !br.x.is_finite() || !br.b_shunt_half.is_finite() {
                return Err(CaseError::InvalidValue(format!(
                    "branch {}-{}: non-finite impedance",
                    br.from_bus, br.to_bus
                )));
            }
        }
        Ok(Self {
            s_base_mva,
            v_base_kv,
            buses,
            branches,
            v_min,
            v_max,
            index_of_id,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[BusRecord<T>] {
        &self.buses
    }

    pub fn branches(&self) -> &[BranchRecord<T>] {
        &self.branches
    }

    pub fn s_base_mva(&self) -> T {
        self.s_base_mva
    }

    pub fn v_base_kv(&self) -> T {
        self.v_base_kv
    }

    pub fn v_limits(&self) -> (Option<T>, Option<T>) {
        (self.v_min, self.v_max)
    }

    /// Internal index of the slack bus (always 0 after normalization).
    pub fn slack_index(&self) -> usize {
        0
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index_of_id.get(&id).copied()
    }

    /// Internal endpoint indices of branch `k`.
    pub fn branch_endpoints(&self, k: usize) -> (usize, usize) {
        let br = &self.branches[k];
        (self.index_of_id[&br.from_bus], self.index_of_id[&br.to_bus])
    }

    /// Slack voltage phasor set point.
    pub fn slack_voltage(&self) -> num_complex::Complex<T> {
        let slack = &self.buses[0];
        let v = slack.v_set.unwrap_or_else(T::one);
        let theta = slack.theta_set.unwrap_or_else(T::zero);
        num_complex::Complex::from_polar(v, theta)
    }

    /// Returns a copy with the branch statuses replaced.
    pub(crate) fn with_statuses(&self, statuses: &[bool]) -> Self {
        let mut out = self.clone();
        for (br, &s) in out.branches.iter_mut().zip(statuses) {
            br.status = s;
        }
        out
    }

    pub(crate) fn with_branch_order(&self, order: Vec<BranchRecord<T>>) -> Self {
        let mut out = self.clone();
        out.branches = order;
        out
    }
}

/// Reorders an undirected branch list into the sweep order rooted at `slack`:
/// endpoint pairs are swapped where needed so every branch is listed sender
/// first, and the list order guarantees each sender is already reachable
/// through earlier branches. Idempotent on ordered input.
pub fn reorder_branches(branches: &[(u32, u32)], slack: u32) -> Result<Vec<(u32, u32)>, CaseError> {
    let mut remaining: Vec<(u32, u32)> = branches.to_vec();
    let mut out = Vec::with_capacity(branches.len());
    let mut reachable = std::collections::HashSet::new();
    reachable.insert(slack);
    while !remaining.is_empty() {
        let mut progressed = false;
        let mut next_round = Vec::with_capacity(remaining.len());
        for &(a, b) in &remaining {
            if reachable.contains(&a) {
                reachable.insert(b);
                out.push((a, b));
                progressed = true;
            } else if reachable.contains(&b) {
                reachable.insert(a);
                out.push((b, a));
                progressed = true;
            } else {
                next_round.push((a, b));
            }
        }
        if !progressed {
            let bus = next_round[0].0;
            return Err(CaseError::Disconnected { bus });
        }
        remaining = next_round;
    }
    Ok(out)
}

/// True iff the active branches form a spanning tree rooted at the slack.
pub fn check_radial<T: Real>(case: &NetworkCase<T>) -> bool {
    let n = case.n_buses();
    let active: Vec<(u32, u32)> = case
        .branches()
        .iter()
        .filter(|b| b.status)
        .map(|b| (b.from_bus, b.to_bus))
        .collect();
    if active.len() != n - 1 {
        return false;
    }
    let slack_id = case.buses()[0].id;
    reorder_branches(&active, slack_id).is_ok()
}

/// Ohm-to-per-unit conversion base for the given case bases.
pub fn z_base<T: Real>(s_base_mva: T, v_base_kv: T) -> T {
    v_base_kv * v_base_kv / s_base_mva
}

/// Converts a power given in kW (or kVAr) to per unit.
pub fn kw_to_pu<T: Real>(kw: T, s_base_mva: T) -> T {
    kw / (s_base_mva * cast::<T>(1000.0))
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn branch(from: u32, to: u32) -> BranchRecord<f64> {
        BranchRecord {
            from_bus: from,
            to_bus: to,
            r: 0.01,
            x: 0.01,
            b_shunt_half: 0.0,
            status: true,
            i_max: None,
            i_min: None,
        }
    }

    #[test]
    fn slack_is_moved_to_front() {
        let case = NetworkCase::new(
            100.0,
            23.0,
            vec![bus(7, BusKind::Pq), bus(3, BusKind::Slack)],
            vec![branch(3, 7)],
            None,
            None,
        )
        .unwrap();
        assert_eq!(case.buses()[0].id, 3);
        assert_eq!(case.index_of(7), Some(1));
        assert_eq!(case.branch_endpoints(0), (0, 1));
    }

    #[test]
    fn two_slacks_rejected() {
        let err = NetworkCase::new(
            100.0,
            23.0,
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Slack)],
            vec![branch(1, 2)],
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, CaseError::MultipleSlack));
    }

    #[test]
    fn zero_impedance_branch_rejected() {
        let mut br = branch(1, 2);
        br.r = 0.0;
        br.x = 0.0;
        let err = NetworkCase::new(
            100.0,
            23.0,
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![br],
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, CaseError::InvalidValue(_)));
    }

    #[test]
    fn reorder_swaps_and_orders() {
        let out = reorder_branches(&[(2, 1), (3, 2)], 1).unwrap();
        assert_eq!(out, vec![(1, 2), (2, 3)]);
    }

    #[test]
    fn reorder_is_identity_on_ordered_input() {
        let input = vec![(1, 2), (2, 3)];
        assert_eq!(reorder_branches(&input, 1).unwrap(), input);
    }

    #[test]
    fn reorder_reports_disconnection() {
        let err = reorder_branches(&[(4, 5), (1, 2)], 1).unwrap_err();
        assert!(matches!(err, CaseError::Disconnected { .. }));
    }

    #[test]
    fn radial_check_on_tree_and_cycle() {
        let buses = vec![
            bus(1, BusKind::Slack),
            bus(2, BusKind::Pq),
            bus(3, BusKind::Pq),
        ];
        let case = NetworkCase::new(
            100.0,
            23.0,
            buses.clone(),
            vec![branch(1, 2), branch(2, 3)],
            None,
            None,
        )
        .unwrap();
        assert!(check_radial(&case));
        let case2 = NetworkCase::new(
            100.0,
            23.0,
            buses,
            vec![branch(1, 2), branch(2, 3), branch(1, 3)],
            None,
            None,
        )
        .unwrap();
        assert!(!check_radial(&case2));
    }

    #[test]
    fn single_bus_case_is_radial() {
        let case = NetworkCase::new(
            100.0,
            23.0,
            vec![bus(1, BusKind::Slack)],
            vec![],
            None,
            None,
        )
        .unwrap();
        assert!(check_radial(&case));
    }
}
