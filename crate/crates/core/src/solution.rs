//! Physical power-flow answer shared by the distribution and transmission
//! solvers, with its CSV serialization.

use num_complex::Complex;

use crate::scalar::{cast, Real};

/// Per-branch quantities. `p`/`q` are the sending-end flows (power entering
/// the branch at `from`), `i_mag` is the series current magnitude and
/// `loss_kw` the series resistive loss.
#[derive(Debug, Clone)]
pub struct BranchFlow<T> {
    pub from: u32,
    pub to: u32,
    pub p: T,
    pub q: T,
    pub i_mag: T,
    pub loss_kw: T,
}

/// Solved operating point of a network.
#[derive(Debug, Clone)]
pub struct FlowSolution<T> {
    pub s_base_mva: T,
    /// External bus ids in internal order (slack first).
    pub bus_id: Vec<u32>,
    /// Bus voltage phasors, per unit.
    pub v: Vec<Complex<T>>,
    /// Net active injection per bus, per unit.
    pub bus_p: Vec<T>,
    /// Net reactive injection per bus, per unit.
    pub bus_q: Vec<T>,
    pub branches: Vec<BranchFlow<T>>,
    /// Substation (slack) net injection, per unit.
    pub p_slack: T,
    pub q_slack: T,
    pub total_loss_kw: T,
    /// Smallest voltage magnitude over all buses, per unit.
    pub v_min: T,
}

impl<T: Real> FlowSolution<T> {
    pub fn v_mag(&self, i: usize) -> T {
        self.v[i].norm()
    }

    pub fn v_angle(&self, i: usize) -> T {
        self.v[i].arg()
    }

    /// Smallest voltage magnitude and the external id of the bus attaining it.
    pub fn v_min_bus(&self) -> (T, u32) {
        let mut best = (self.v[0].norm(), self.bus_id[0]);
        for (i, v) in self.v.iter().enumerate() {
            if v.norm() < best.0 {
                best = (v.norm(), self.bus_id[i]);
            }
        }
        best
    }

    /// Serializes the solution as one CSV document: a bus table, a branch
    /// table and a scalar summary line, separated by blank lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("id,v_pu,theta_rad\n");
        for i in 0..self.v.len() {
            out.push_str(&format!(
                "{},{:.9},{:.9}\n",
                self.bus_id[i],
                fmt(self.v_mag(i)),
                fmt(self.v_angle(i))
            ));
        }
        out.push('\n');
        out.push_str("from,to,p_pu,q_pu,i_pu,loss_kw\n");
        for b in &self.branches {
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9},{:.6}\n",
                b.from,
                b.to,
                fmt(b.p),
                fmt(b.q),
                fmt(b.i_mag),
                fmt(b.loss_kw)
            ));
        }
        out.push('\n');
        out.push_str("total_loss_kw,v_min_pu\n");
        out.push_str(&format!(
            "{:.6},{:.9}\n",
            fmt(self.total_loss_kw),
            fmt(self.v_min)
        ));
        out
    }
}

/// Formats through f64 so output does not depend on the scalar type's
/// Display quirks. `-0.0` is normalized to `0.0` for byte-stable files.
fn fmt<T: Real>(v: T) -> f64 {
    let x = v.to_f64().unwrap_or(f64::NAN);
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

/// Losses implied by a voltage/current pair on a series impedance, in kW.
pub fn series_loss_kw<T: Real>(r_pu: T, i_mag: T, s_base_mva: T) -> T {
    r_pu * i_mag * i_mag * s_base_mva * cast::<T>(1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_three_sections() {
        let sol = FlowSolution::<f64> {
            s_base_mva: 100.0,
            bus_id: vec![1, 2],
            v: vec![Complex::new(1.0, 0.0), Complex::new(0.98, -0.01)],
            bus_p: vec![0.1, -0.1],
            bus_q: vec![0.05, -0.05],
            branches: vec![BranchFlow {
                from: 1,
                to: 2,
                p: 0.1,
                q: 0.05,
                i_mag: 0.1,
                loss_kw: 1.0,
            }],
            p_slack: 0.1,
            q_slack: 0.05,
            total_loss_kw: 1.0,
            v_min: 0.98,
        };
        let csv = sol.to_csv();
        let sections: Vec<&str> = csv.trim().split("\n\n").collect();
        assert_eq!(sections.len(), 3);
        assert!(sections[0].starts_with("id,v_pu,theta_rad"));
        assert!(sections[1].starts_with("from,to,p_pu,q_pu,i_pu,loss_kw"));
        assert!(sections[2].starts_with("total_loss_kw,v_min_pu"));
    }

    #[test]
    fn v_min_bus_finds_the_minimum() {
        let sol = FlowSolution::<f64> {
            s_base_mva: 100.0,
            bus_id: vec![1, 5, 9],
            v: vec![
                Complex::new(1.0, 0.0),
                Complex::new(0.91, 0.0),
                Complex::new(0.95, 0.0),
            ],
            bus_p: vec![0.0; 3],
            bus_q: vec![0.0; 3],
            branches: vec![],
            p_slack: 0.0,
            q_slack: 0.0,
            total_loss_kw: 0.0,
            v_min: 0.91,
        };
        assert_eq!(sol.v_min_bus(), (0.91, 5));
    }
}
