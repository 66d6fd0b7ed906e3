//! CSV formatting helpers. All floats go through fixed-precision formats so
//! identical runs produce byte-identical files; PFLOW_ZERO_TIME=1 zeroes the
//! wall-clock columns for fully reproducible output.

use pflow_core::epts::DcSolution;
use pflow_core::manifold::SolveReport;

pub fn zero_time(t: f64) -> f64 {
    if std::env::var("PFLOW_ZERO_TIME").is_ok_and(|v| v == "1") {
        0.0
    } else {
        t
    }
}

pub fn elapsed(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

pub fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "-".into(),
    }
}

pub fn fmt_opt_exp(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6e}"),
        None => "-".into(),
    }
}

/// Convergence table for the classical solvers: the residual column holds
/// the power mismatch and the gradient column stays empty.
pub fn convergence_csv(trace: &[(f64, f64)]) -> String {
    let mut out = String::from("iteration,cost,grad_norm,elapsed_s\n");
    for (i, (err, t)) in trace.iter().enumerate() {
        out.push_str(&format!("{},{:.12e},,{:.6}\n", i, err, zero_time(*t)));
    }
    out
}

/// Convergence table for the manifold solvers.
pub fn manifold_convergence_csv(report: &SolveReport<Vec<f64>, f64>) -> String {
    let mut out = String::from("iteration,cost,grad_norm,elapsed_s\n");
    for (i, rec) in report.history.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.6}\n",
            i,
            rec.cost,
            rec.grad_norm,
            zero_time(rec.elapsed_s)
        ));
    }
    out
}

/// DC results have no voltage magnitudes: the solution document carries the
/// angle/injection bus table, the branch flow table, and the slack summary.
pub fn dc_solution_csv(dc: &DcSolution<f64>) -> String {
    let mut out = String::from("id,theta_rad,p_pu\n");
    for i in 0..dc.bus_id.len() {
        out.push_str(&format!(
            "{},{:.9},{:.9}\n",
            dc.bus_id[i], dc.theta[i], dc.p_bus[i]
        ));
    }
    out.push('\n');
    out.push_str("from,to,p_pu\n");
    for (f, t, p) in &dc.flows {
        out.push_str(&format!("{},{},{:.9}\n", f, t, p));
    }
    out.push('\n');
    let slack_p = dc.p_bus[0];
    out.push_str("p_slack_pu\n");
    out.push_str(&format!("{slack_p:.9}\n"));
    out
}
