//! The learned signed-distance field: an MLP with SoftPlus activations, one
//! skip connection and sphere-like geometric initialization.
//!
//! Only first-order derivatives are ever needed. The regression targets built
//! from the field's normals are constants by the time they reach the loss, so
//! no derivative of the loss passes through [`MlpParams::input_gradients`].
//! That is what lets the training pass be a plain reverse sweep over
//! activations instead of differentiating through the gradient computation.

mod adam;
mod checkpoint;
pub(crate) mod kernels;
mod network;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use network::{Activation, Gradients, InitMode, MlpConfig, MlpParams};

use crate::error::Result;
use crate::geometry::Point3;

/// Gradient norms below this fall back to [`fallback_direction`].
pub const GRADIENT_NORM_FLOOR: f64 = 1e-12;

/// Beyond this `|βx|` the correction terms are below half an ulp and are
/// skipped: `e^{-40} < 2^{-54}`, so `ln(1 + e) = e` and `1 + e = 1` exactly.
const SATURATION: f64 = 40.0;

/// `(1/β)·ln(1 + e^{βx})`, evaluated without overflow.
#[inline]
pub fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    if z >= SATURATION {
        x
    } else if z > 0.0 {
        x + (-z).exp().ln_1p() / beta
    } else if z > -SATURATION {
        z.exp().ln_1p() / beta
    } else {
        z.exp() / beta
    }
}

/// Derivative of [`softplus`]: the logistic function of `βx`.
#[inline]
pub fn softplus_derivative(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    if z >= SATURATION {
        1.0
    } else if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else if z > -SATURATION {
        let e = z.exp();
        e / (1.0 + e)
    } else {
        z.exp()
    }
}

/// Unit direction used when a gradient vanishes: `+z` in 3D, `+y` in 2D.
pub fn fallback_direction(dim: usize) -> Point3 {
    if dim == 2 {
        Point3::y()
    } else {
        Point3::z()
    }
}

/// Normalized gradient with a flag marking the fallback case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitGradient {
    pub direction: Point3,
    pub degenerate: bool,
}

pub fn normalize_gradient(g: &Point3, dim: usize) -> UnitGradient {
    let n = g.norm();
    if n < GRADIENT_NORM_FLOOR || !n.is_finite() {
        UnitGradient {
            direction: fallback_direction(dim),
            degenerate: true,
        }
    } else {
        UnitGradient {
            direction: g / n,
            degenerate: false,
        }
    }
}

/// A differentiable scalar field over points. In 2D only `x, y` are read and
/// gradients have `z = 0`.
pub trait Field: Sync {
    fn dim(&self) -> usize;

    fn values(&self, points: &[Point3]) -> Result<Vec<f64>>;

    fn gradients(&self, points: &[Point3]) -> Result<Vec<Point3>>;

    fn unit_gradients(&self, points: &[Point3]) -> Result<Vec<UnitGradient>> {
        let dim = self.dim();
        Ok(self
            .gradients(points)?
            .iter()
            .map(|g| normalize_gradient(g, dim))
            .collect())
    }
}
