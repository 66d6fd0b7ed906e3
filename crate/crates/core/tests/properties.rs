//! Property-based invariants: per-unit round trips, branch reordering,
//! manifold retraction, penalty positivity, mismatch symmetries.

mod common;

use common::load;
use num_complex::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pflow_core::epds::{apply_switch_vector, bfs_sweep_solve, penalty_terms};
use pflow_core::epts::{build_ybus, calc_pq, dc_solve, EptsIndex};
use pflow_core::manifold::{ComplexCircleManifold, Manifold};
use pflow_core::network::reorder_branches;

proptest! {
    #[test]
    fn per_unit_round_trip(
        s_base in 1.0f64..1000.0,
        v_base in 0.1f64..500.0,
        r_ohm in 1e-6f64..100.0,
        p_kw in 0.0f64..1e6,
    ) {
        let z_base = pflow_core::network::z_base(s_base, v_base);
        let r_pu = r_ohm / z_base;
        prop_assert!((r_pu * z_base - r_ohm).abs() <= 1e-12 * r_ohm);
        let p_pu = pflow_core::network::kw_to_pu(p_kw, s_base);
        prop_assert!((p_pu * s_base * 1000.0 - p_kw).abs() <= 1e-12 * p_kw.max(1.0));
    }

    #[test]
    fn penalty_zero_iff_feasible(
        g in prop::collection::vec(-2.0f64..2.0, 0..6),
        h in prop::collection::vec(-2.0f64..2.0, 0..6),
        p in 1u32..4,
    ) {
        let value = penalty_terms(&g, &h, p);
        let feasible = g.iter().all(|&v| v <= 0.0) && h.iter().all(|&v| v == 0.0);
        if feasible {
            prop_assert_eq!(value, 0.0);
        } else {
            prop_assert!(value > 0.0);
        }
    }

    #[test]
    fn ccm_projected_retraction_stays_on_manifold(
        angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 1..8),
        seeds in prop::collection::vec(-1.0f64..1.0, 2..18),
    ) {
        let n = angles.len();
        let m = ComplexCircleManifold::new(n);
        let x: Vec<Complex<f64>> = angles.iter().map(|&a| Complex::from_polar(1.0, a)).collect();
        let raw: Vec<Complex<f64>> = (0..n)
            .map(|k| {
                let re = seeds[k % seeds.len()];
                let im = seeds[(k + 1) % seeds.len()];
                Complex::new(re, im)
            })
            .collect();
        let tangent = m.project_tangent(&x, &raw);
        let y = m.retract(&x, &tangent);
        for z in y {
            prop_assert!((z.norm() - 1.0).abs() < 1e-10);
        }
    }
}

/// Builds a random radial tree on `n` buses with shuffled branch order and
/// random endpoint orientation.
fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> Vec<(u32, u32)> {
    let mut edges: Vec<(u32, u32)> = (2..=n as u32)
        .map(|bus| {
            let parent = rng.gen_range(1..bus);
            if rng.gen_bool(0.5) {
                (parent, bus)
            } else {
                (bus, parent)
            }
        })
        .collect();
    // Fisher-Yates shuffle of the listing order.
    for i in (1..edges.len()).rev() {
        let j = rng.gen_range(0..=i);
        edges.swap(i, j);
    }
    edges
}

fn undirected_multiset(edges: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let mut set: Vec<(u32, u32)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    set.sort_unstable();
    set
}

#[test]
fn reorder_is_idempotent_on_1000_random_radial_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..1000 {
        let n = rng.gen_range(2..40);
        let edges = random_tree(&mut rng, n);
        let once = reorder_branches(&edges, 1).unwrap();
        let twice = reorder_branches(&once, 1).unwrap();
        assert_eq!(once, twice, "trial {trial}: reorder not idempotent");
        assert_eq!(
            undirected_multiset(&edges),
            undirected_multiset(&once),
            "trial {trial}: edge multiset changed"
        );
        // ordering property: every sender already reachable
        let mut reachable = std::collections::HashSet::from([1u32]);
        for (a, b) in &once {
            assert!(
                reachable.contains(a),
                "trial {trial}: sender {a} not reachable yet"
            );
            reachable.insert(*b);
        }
    }
}

#[test]
fn angle_shift_invariance_of_mismatches() {
    for name in ["epts_3bus_1.json", "epts_3bus_2.json", "epts_4bus.json"] {
        let case = load(name);
        let y = build_ybus(&case).unwrap();
        let idx = EptsIndex::new(&case);
        let (v, theta) = idx.flat_profile(&case);
        let mut v2 = v.clone();
        // perturb magnitudes a little so the state is generic
        for (i, vi) in v2.iter_mut().enumerate() {
            *vi += 0.01 * ((i + 1) as f64 * 0.37).sin();
        }
        let (p1, q1) = calc_pq(&v2, &theta, &y);
        let shifted: Vec<f64> = theta.iter().map(|t| t + 0.123456789).collect();
        let (p2, q2) = calc_pq(&v2, &shifted, &y);
        for k in 0..case.n_buses() {
            assert!(
                (p1[k] - p2[k]).abs() < 1e-12,
                "{name}: P{k} shifted by {}",
                p1[k] - p2[k]
            );
            assert!((q1[k] - q2[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn dc_solve_is_exactly_linear_in_injections() {
    let case = load("epts_4bus.json");
    let base = dc_solve(&case).unwrap();
    // Scale every injection by c through scaled demand/generation fields.
    let c = 0.37;
    let text = std::fs::read_to_string(common::case_dir().join("epts_4bus.json")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    for bus in doc["buses"].as_array_mut().unwrap() {
        for key in ["pd_mw", "qd_mvar", "pg_mw", "qg_mvar"] {
            if let Some(v) = bus.get_mut(key) {
                let scaled = v.as_f64().unwrap() * c;
                *v = serde_json::json!(scaled);
            }
        }
    }
    let scaled_case =
        pflow_core::parse_case::<f64>(&doc.to_string(), pflow_core::CaseFormat::Json).unwrap();
    let scaled = dc_solve(&scaled_case).unwrap();
    for k in 0..case.n_buses() {
        assert!(
            (scaled.theta[k] - c * base.theta[k]).abs() < 1e-12,
            "bus {k}: {} vs {}",
            scaled.theta[k],
            c * base.theta[k]
        );
    }
}

#[test]
fn all_ones_switch_vector_is_a_no_op() {
    let case = load("epds_33bus.json");
    let y = vec![true; case.branches().len()];
    let switched = apply_switch_vector(&case, &y).unwrap();
    let a = bfs_sweep_solve(&case, 1e-13, 300).unwrap();
    let b = bfs_sweep_solve(&switched, 1e-13, 300).unwrap();
    assert!((a.total_loss_kw - b.total_loss_kw).abs() < 1e-12 * a.total_loss_kw.max(1.0));
    for (id, &va) in a.bus_id.iter().zip(&a.v) {
        let i = b.bus_id.iter().position(|x| x == id).unwrap();
        assert!((va - b.v[i]).norm() < 1e-12);
    }
}

#[test]
fn switch_vector_errors_on_bridge_removal() {
    let case = load("epds_33bus.json");
    let mut y = vec![true; case.branches().len()];
    y[0] = false; // the substation feeder is a bridge
    let err = apply_switch_vector(&case, &y).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("disconnected") || msg.contains("radial"),
        "got: {msg}"
    );
}

#[test]
fn tie_swap_reconfiguration_still_sweeps() {
    // Deactivate the 14-bus branch 13-14 and close the 5-14 tie: the
    // switched case is still a spanning tree and the sweep converges.
    let case = load("epds_14bus.json");
    let pos_13_14 = case
        .branches()
        .iter()
        .position(|b| b.from_bus == 13 && b.to_bus == 14)
        .unwrap();
    let pos_tie = case
        .branches()
        .iter()
        .position(|b| b.from_bus == 5 && b.to_bus == 14)
        .unwrap();
    let mut y = vec![true; case.branches().len()];
    y[pos_13_14] = false;
    y[pos_tie] = true;
    // drop the other open ties
    for (i, br) in case.branches().iter().enumerate() {
        if !br.status && i != pos_tie {
            y[i] = false;
        }
    }
    let reconfigured = apply_switch_vector(&case, &y).unwrap();
    assert!(pflow_core::network::check_radial(&reconfigured));
    let sol = bfs_sweep_solve(&reconfigured, 1e-12, 300).unwrap();
    assert!(sol.total_loss_kw.is_finite());
    assert!(sol.v_min > 0.9);
}

#[test]
fn solvers_work_in_f32_too() {
    // The whole stack is generic over the scalar; f32 reaches f32-grade
    // accuracy on a small feeder.
    let text = std::fs::read_to_string(common::case_dir().join("epds_14bus.json")).unwrap();
    let case = pflow_core::parse_case::<f32>(&text, pflow_core::CaseFormat::Json).unwrap();
    let sol = bfs_sweep_solve(&case, 1e-6f32, 200).unwrap();
    assert!((sol.total_loss_kw - 511.44).abs() < 0.5, "loss {}", sol.total_loss_kw);
    let cfg = pflow_core::SolverConfig::<f32> { grad_tol: 1e-5, ..Default::default() };
    let (sd, report) = pflow_core::epds::solve_epds(&case, &cfg).unwrap();
    assert!(report.converged());
    assert!((sd.v_min - sol.v_min).abs() < 1e-3);
}

#[test]
fn concurrent_solves_share_one_case() {
    let case = std::sync::Arc::new(load("epds_33bus.json"));
    let mut handles = Vec::new();
    for _ in 0..4 {
        let case = case.clone();
        handles.push(std::thread::spawn(move || {
            bfs_sweep_solve(&case, 1e-12, 300).unwrap().total_loss_kw
        }));
    }
    let losses: Vec<f64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    for w in losses.windows(2) {
        assert_eq!(w[0].to_bits(), w[1].to_bits());
    }
}

#[test]
fn loss_accounting_is_consistent_with_branch_currents() {
    // Total losses equal sum r |I|^2 * s_base exactly (same formula), and
    // also match the slack injection minus served demand.
    let case = load("epds_33bus.json");
    let sol = bfs_sweep_solve(&case, 1e-13, 300).unwrap();
    let recomputed: f64 = sol.branches.iter().map(|b| b.loss_kw).sum();
    assert!((recomputed - sol.total_loss_kw).abs() < 1e-9 * sol.total_loss_kw);
    let served: f64 = case.buses().iter().map(|b| b.p_demand).sum();
    let balance_kw = (sol.p_slack - served) * case.s_base_mva() * 1000.0;
    assert!(
        (balance_kw - sol.total_loss_kw).abs() < 1e-6 * sol.total_loss_kw.max(1.0),
        "balance {balance_kw} vs losses {}",
        sol.total_loss_kw
    );
}
