//! Minimal Riemannian-optimization engine: manifold interface, first- and
//! second-order solvers, and derivative-accuracy diagnostics.
//!
//! Points and tangent vectors are plain vectors (real for the Euclidean
//! manifold, complex unit-modulus entries for the complex circle). The
//! solvers only touch them through this trait, so adding a manifold means
//! implementing the handful of operations below.

mod check;
mod solver;

pub use check::{check_gradient, check_hessian, default_check_steps, DerivativeCheck};
pub use solver::{
    rgd_solve, rtr_solve, IterationRecord, SolveReport, SolverConfig, SolverError, Termination,
};

use num_complex::Complex;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::scalar::{cast, Real};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifoldError {
    #[error("zero entry at index {0}: retraction direction undefined")]
    ZeroEntry(usize),
}

/// Geometric interface required by the solvers.
pub trait Manifold<T: Real> {
    type Point: Clone + std::fmt::Debug;
    type Tangent: Clone + std::fmt::Debug;

    /// Intrinsic dimension.
    fn dim(&self) -> usize;

    /// Orthogonal projection of an ambient vector onto the tangent space at `x`.
    fn project_tangent(&self, x: &Self::Point, v: &Self::Tangent) -> Self::Tangent;

    /// Maps a tangent vector back onto the manifold, first-order consistent
    /// with the exponential map.
    fn retract(&self, x: &Self::Point, v: &Self::Tangent) -> Self::Point;

    /// Riemannian inner product on the tangent space at `x`.
    fn inner(&self, x: &Self::Point, u: &Self::Tangent, v: &Self::Tangent) -> T;

    fn zero_tangent(&self, x: &Self::Point) -> Self::Tangent;

    /// `a * u + b * v` in the tangent space.
    fn lincomb(&self, a: T, u: &Self::Tangent, b: T, v: &Self::Tangent) -> Self::Tangent;

    /// Unit-norm random tangent vector at `x`.
    fn rand_tangent(&self, x: &Self::Point, rng: &mut dyn RngCore) -> Self::Tangent;

    fn norm(&self, x: &Self::Point, v: &Self::Tangent) -> T {
        self.inner(x, v, v).sqrt()
    }

    fn scale(&self, v: &Self::Tangent, a: T) -> Self::Tangent {
        self.lincomb(a, v, T::zero(), v)
    }
}

/// Flat space `R^n`: projection is the identity and retraction is addition.
#[derive(Debug, Clone, Copy)]
pub struct EuclideanManifold {
    n: usize,
}

impl EuclideanManifold {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl<T: Real> Manifold<T> for EuclideanManifold {
    type Point = Vec<T>;
    type Tangent = Vec<T>;

    fn dim(&self) -> usize {
        self.n
    }

    fn project_tangent(&self, _x: &Vec<T>, v: &Vec<T>) -> Vec<T> {
        v.clone()
    }

    fn retract(&self, x: &Vec<T>, v: &Vec<T>) -> Vec<T> {
        x.iter().zip(v).map(|(&a, &b)| a + b).collect()
    }

    fn inner(&self, _x: &Vec<T>, u: &Vec<T>, v: &Vec<T>) -> T {
        u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    fn zero_tangent(&self, _x: &Vec<T>) -> Vec<T> {
        vec![T::zero(); self.n]
    }

    fn lincomb(&self, a: T, u: &Vec<T>, b: T, v: &Vec<T>) -> Vec<T> {
        u.iter().zip(v).map(|(&ui, &vi)| a * ui + b * vi).collect()
    }

    fn rand_tangent(&self, x: &Vec<T>, rng: &mut dyn RngCore) -> Vec<T> {
        let raw: Vec<T> = (0..self.n)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                cast::<T>(g)
            })
            .collect();
        normalize(self, x, raw)
    }
}

/// Product of unit circles in the complex plane: every entry keeps modulus 1.
#[derive(Debug, Clone, Copy)]
pub struct ComplexCircleManifold {
    n: usize,
}

impl ComplexCircleManifold {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl<T: Real> Manifold<T> for ComplexCircleManifold {
    type Point = Vec<Complex<T>>;
    type Tangent = Vec<Complex<T>>;

    fn dim(&self) -> usize {
        self.n
    }

    fn project_tangent(&self, x: &Vec<Complex<T>>, v: &Vec<Complex<T>>) -> Vec<Complex<T>> {
        // Remove the radial component entry by entry.
        x.iter()
            .zip(v)
            .map(|(&xk, &vk)| vk - xk * (xk.conj() * vk).re)
            .collect()
    }

    fn retract(&self, x: &Vec<Complex<T>>, v: &Vec<Complex<T>>) -> Vec<Complex<T>> {
        x.iter()
            .zip(v)
            .map(|(&xk, &vk)| {
                let moved = xk + vk;
                let m = moved.norm();
                if m > T::zero() {
                    moved / m
                } else {
                    xk
                }
            })
            .collect()
    }

    fn inner(&self, _x: &Vec<Complex<T>>, u: &Vec<Complex<T>>, v: &Vec<Complex<T>>) -> T {
        u.iter()
            .zip(v)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a.conj() * b).re)
    }

    fn zero_tangent(&self, _x: &Vec<Complex<T>>) -> Vec<Complex<T>> {
        vec![Complex::new(T::zero(), T::zero()); self.n]
    }

    fn lincomb(&self, a: T, u: &Vec<Complex<T>>, b: T, v: &Vec<Complex<T>>) -> Vec<Complex<T>> {
        u.iter().zip(v).map(|(&ui, &vi)| ui * a + vi * b).collect()
    }

    fn rand_tangent(&self, x: &Vec<Complex<T>>, rng: &mut dyn RngCore) -> Vec<Complex<T>> {
        let raw: Vec<Complex<T>> = (0..self.n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex::new(cast::<T>(re), cast::<T>(im))
            })
            .collect();
        let projected = self.project_tangent(x, &raw);
        normalize(self, x, projected)
    }
}

fn normalize<T: Real, M: Manifold<T>>(m: &M, x: &M::Point, v: M::Tangent) -> M::Tangent {
    let n = m.norm(x, &v);
    if n > T::zero() {
        m.scale(&v, T::one() / n)
    } else {
        v
    }
}

/// Entry-wise projection onto the complex circle: `z_k / |z_k|`.
///
/// This is the retraction used to pull iterates back to unit modulus; a zero
/// entry has no defined direction and is reported as an error.
pub fn retract_ccm<T: Real>(z: &[Complex<T>]) -> Result<Vec<Complex<T>>, ManifoldError> {
    z.iter()
        .enumerate()
        .map(|(k, &zk)| {
            let m = zk.norm();
            if m == T::zero() {
                Err(ManifoldError::ZeroEntry(k))
            } else {
                Ok(zk / m)
            }
        })
        .collect()
}
