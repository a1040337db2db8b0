//! Smooth per-round losses `f_t` used by the forecasters and experiments.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::geometry::Vector;

/// The differentiable part `f_t` of a round loss `f_t + r`.
pub trait SmoothLoss: Send + Sync {
    /// Dimension of the parameter the loss accepts.
    fn dim(&self) -> usize;
    fn value(&self, theta: &Vector) -> f64;
    fn gradient(&self, theta: &Vector) -> Vector;
}

/// `0.5 * ||theta - target||^2`
#[derive(Clone, Debug)]
pub struct QuadraticLoss {
    pub target: Vector,
}

impl QuadraticLoss {
    pub fn new(target: Vector) -> Self {
        Self { target }
    }
}

impl SmoothLoss for QuadraticLoss {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn value(&self, theta: &Vector) -> f64 {
        0.5 * (theta - &self.target).norm_squared()
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        theta - &self.target
    }
}

/// Poisson negative log-likelihood in natural parameters:
/// `<1, exp(theta)> - <x, theta>`.
#[derive(Clone, Debug)]
pub struct PoissonLoss {
    pub counts: Vector,
}

impl PoissonLoss {
    pub fn new(counts: Vector) -> Self {
        Self { counts }
    }
}

impl SmoothLoss for PoissonLoss {
    fn dim(&self) -> usize {
        self.counts.len()
    }

    fn value(&self, theta: &Vector) -> f64 {
        theta
            .iter()
            .zip(self.counts.iter())
            .map(|(t, x)| t.exp() - x * t)
            .sum()
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        theta.zip_map(&self.counts, |t, x| t.exp() - x)
    }
}

/// Squared error of a linear observation model with missing entries:
/// `|| P (C theta + offset - x) ||^2` where `P` keeps the observed entries.
#[derive(Clone, Debug)]
pub struct MaskedLinearLoss {
    pub emission: Arc<DMatrix<f64>>,
    pub offset: Arc<Vector>,
    pub observation: Vector,
    /// `true` where the entry was observed.
    pub observed: Vec<bool>,
}

impl MaskedLinearLoss {
    fn masked_residual(&self, theta: &Vector) -> Vector {
        let mut r = &*self.emission * theta + &*self.offset - &self.observation;
        for (ri, seen) in r.iter_mut().zip(&self.observed) {
            if !seen {
                *ri = 0.0;
            }
        }
        r
    }
}

impl SmoothLoss for MaskedLinearLoss {
    fn dim(&self) -> usize {
        self.emission.ncols()
    }

    fn value(&self, theta: &Vector) -> f64 {
        self.masked_residual(theta).norm_squared()
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        self.emission.tr_mul(&self.masked_residual(theta)) * 2.0
    }
}

/// `scale * || x - A theta ||^2`.
#[derive(Clone, Debug)]
pub struct LeastSquaresLoss {
    pub sensing: Arc<DMatrix<f64>>,
    pub observation: Vector,
    pub scale: f64,
}

impl SmoothLoss for LeastSquaresLoss {
    fn dim(&self) -> usize {
        self.sensing.ncols()
    }

    fn value(&self, theta: &Vector) -> f64 {
        self.scale * (&self.observation - &*self.sensing * theta).norm_squared()
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        let r = &*self.sensing * theta - &self.observation;
        self.sensing.tr_mul(&r) * (2.0 * self.scale)
    }
}
