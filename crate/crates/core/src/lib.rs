//! Power-flow solvers for distribution and transmission systems.
//!
//! Distribution cases are solved two independent ways: a backward-forward
//! sweep fixed point, and gradient-based minimization of a least-squares
//! cost whose residual is one sweep's voltage update. Transmission cases get
//! the classical ladder (Newton-Raphson, decoupled, fast-decoupled, DC, DC
//! with losses) next to a trust-region least-squares solve over the full
//! mismatch system in `R^{2n}`. The optimization layer is a small
//! Riemannian engine generic over the manifold, used here with the
//! Euclidean space and the complex circle.
//!
//! Everything numeric is generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the `*64` aliases below pin the common choice.

pub mod epds;
pub mod epts;
pub mod linalg;
pub mod manifold;
pub mod network;
pub mod scalar;
pub mod solution;

pub use manifold::{SolveReport, SolverConfig, Termination};
pub use network::{parse_case, CaseFormat, NetworkCase};
pub use scalar::Real;
pub use solution::FlowSolution;

/// Case description in `f64`.
pub type NetworkCase64 = network::NetworkCase<f64>;
/// Physical solution in `f64`.
pub type FlowSolution64 = solution::FlowSolution<f64>;
/// Solver configuration in `f64`.
pub type SolverConfig64 = manifold::SolverConfig<f64>;
/// Case description in `f32`.
pub type NetworkCase32 = network::NetworkCase<f32>;
