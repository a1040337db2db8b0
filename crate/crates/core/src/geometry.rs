//! Mirror maps, Bregman divergences and the composite proximal step.
//!
//! Every forecaster update in this crate reduces to one call of
//! [`MirrorGeometry::composite_prox`]: minimize
//! `eta * <g, theta> + eta * r(theta) + D(theta || anchor)` over a box.
//! Two mirror maps are supported, the squared Euclidean norm (with either no
//! regularizer or an L1 penalty) and the Poisson log-partition function
//! `Z(theta) = sum_k exp(theta_k)` (unregularized).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::loss::SmoothLoss;

/// Dense parameter / observation vector.
pub type Vector = DVector<f64>;

/// Smallest admissible Poisson rate. Rates are clamped here before taking logs.
pub const POISSON_RATE_FLOOR: f64 = 1e-6;

/// Tolerance for exact algebraic identities (Bregman identity, law of cosines).
pub const IDENTITY_TOL: f64 = 1e-8;

/// Step used by [`subgradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Tolerance for finite-difference gradient agreement.
pub const FD_TOL: f64 = 1e-4;

/// Returns an input error unless every entry is finite.
pub fn ensure_finite(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::input(format!("{what} contains a non-finite entry")))
    }
}

/// Axis-aligned box `prod_k [lo_k, hi_k]`. Infinite bounds are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    lo: Vector,
    hi: Vector,
}

impl BoxDomain {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("box bounds must share a nonzero dimension"));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l.is_nan() || h.is_nan() || l > h) {
            return Err(Error::config("box bounds must satisfy lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    /// The same interval `[lo, hi]` on every coordinate.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(Vector::from_element(dim, lo), Vector::from_element(dim, hi))
    }

    /// All of `R^dim`.
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lo: Vector::from_element(dim, f64::NEG_INFINITY),
            hi: Vector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &Vector {
        &self.lo
    }

    pub fn hi(&self) -> &Vector {
        &self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(self.hi.iter()).all(|x| x.is_finite())
    }

    pub fn contains(&self, v: &Vector) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(x, (l, h))| x.is_finite() && *l <= *x && *x <= *h)
    }

    /// Coordinate-wise projection. Panics only on dimension mismatch in debug builds.
    pub fn clip(&self, v: &Vector) -> Vector {
        debug_assert_eq!(v.len(), self.dim());
        Vector::from_iterator(
            v.len(),
            v.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .map(|(x, (l, h))| x.clamp(*l, *h)),
        )
    }

    pub fn check(&self, v: &Vector, what: &str) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::input(format!(
                "{what} has dimension {}, expected {}",
                v.len(),
                self.dim()
            )));
        }
        if !self.contains(v) {
            return Err(Error::input(format!("{what} lies outside the domain box")));
        }
        Ok(())
    }

    /// Finite sampling box: the domain itself where bounded, `[-1, 1]` on
    /// unbounded coordinates.
    pub fn sampling_bounds(&self) -> (Vector, Vector) {
        let lo = self.lo.map(|l| if l.is_finite() { l } else { -1.0 });
        let hi = self.hi.map(|h| if h.is_finite() { h } else { 1.0 });
        (lo, hi)
    }
}

/// The strictly convex function inducing the Bregman divergence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MirrorMap {
    /// `psi(theta) = 0.5 * ||theta||^2`
    SquaredEuclidean,
    /// `psi(theta) = sum_k exp(theta_k)`, the Poisson log-partition function.
    PoissonLogPartition,
}

/// Regularizer `r` in the composite loss `f_t + r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    None,
    L1(f64),
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::None => Ok(()),
            Regularizer::L1(tau) if tau >= 0.0 && tau.is_finite() => Ok(()),
            Regularizer::L1(tau) => Err(Error::config(format!("L1 weight must be >= 0, got {tau}"))),
        }
    }

    pub fn value(&self, theta: &Vector) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::L1(tau) => tau * theta.iter().map(|x| x.abs()).sum::<f64>(),
        }
    }

    /// Minimal-norm subgradient: `tau * sign(theta)` with `sign(0) = 0`.
    pub fn subgradient(&self, theta: &Vector) -> Vector {
        match *self {
            Regularizer::None => Vector::zeros(theta.len()),
            Regularizer::L1(tau) => theta.map(|x| {
                if x > 0.0 {
                    tau
                } else if x < 0.0 {
                    -tau
                } else {
                    0.0
                }
            }),
        }
    }
}

/// Linearized objective of one composite mirror step.
#[derive(Clone, Debug)]
pub struct CompositeObjective {
    /// Subgradient of the smooth part at the anchor.
    pub grad: Vector,
    pub regularizer: Regularizer,
    pub eta: f64,
}

impl CompositeObjective {
    pub fn new(grad: Vector, regularizer: Regularizer, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::config(format!("step size must be > 0, got {eta}")));
        }
        regularizer.validate()?;
        ensure_finite(&grad, "gradient")?;
        Ok(Self {
            grad,
            regularizer,
            eta,
        })
    }
}

fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// A mirror map restricted to a box domain.
#[derive(Clone, Debug, PartialEq)]
pub struct MirrorGeometry {
    map: MirrorMap,
    domain: BoxDomain,
}

impl MirrorGeometry {
    pub fn new(map: MirrorMap, domain: BoxDomain) -> Result<Self> {
        if map == MirrorMap::PoissonLogPartition && domain.lo().iter().any(|l| !l.is_finite()) {
            return Err(Error::config(
                "the Poisson mirror map needs a finite lower bound to be strongly convex",
            ));
        }
        Ok(Self { map, domain })
    }

    pub fn euclidean(domain: BoxDomain) -> Self {
        Self {
            map: MirrorMap::SquaredEuclidean,
            domain,
        }
    }

    pub fn map(&self) -> MirrorMap {
        self.map
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Strong-convexity constant with respect to the l2 norm on the domain.
    pub fn sigma(&self) -> f64 {
        match self.map {
            MirrorMap::SquaredEuclidean => 1.0,
            MirrorMap::PoissonLogPartition => self
                .domain
                .lo()
                .iter()
                .fold(f64::INFINITY, |m, l| m.min(l.exp())),
        }
    }

    pub fn psi(&self, theta: &Vector) -> f64 {
        match self.map {
            MirrorMap::SquaredEuclidean => 0.5 * theta.norm_squared(),
            MirrorMap::PoissonLogPartition => theta.iter().map(|x| x.exp()).sum(),
        }
    }

    pub fn grad_psi(&self, theta: &Vector) -> Vector {
        match self.map {
            MirrorMap::SquaredEuclidean => theta.clone(),
            MirrorMap::PoissonLogPartition => theta.map(f64::exp),
        }
    }

    /// Inverse of [`grad_psi`](Self::grad_psi) followed by projection onto the box.
    /// Poisson rates below [`POISSON_RATE_FLOOR`] are clamped first.
    pub fn grad_psi_inverse(&self, dual: &Vector) -> Vector {
        let primal = match self.map {
            MirrorMap::SquaredEuclidean => dual.clone(),
            MirrorMap::PoissonLogPartition => dual.map(|m| m.max(POISSON_RATE_FLOOR).ln()),
        };
        self.domain.clip(&primal)
    }

    /// `D(a || b) = psi(a) - psi(b) - <grad psi(b), a - b>`.
    pub fn bregman(&self, a: &Vector, b: &Vector) -> Result<f64> {
        self.domain.check(a, "first Bregman argument")?;
        self.domain.check(b, "second Bregman argument")?;
        Ok(self.bregman_unchecked(a, b))
    }

    pub(crate) fn bregman_unchecked(&self, a: &Vector, b: &Vector) -> f64 {
        match self.map {
            // Same value as the generic formula, but without cancellation.
            MirrorMap::SquaredEuclidean => 0.5 * (a - b).norm_squared(),
            MirrorMap::PoissonLogPartition => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| {
                    let ey = y.exp();
                    x.exp() - ey - ey * (x - y)
                })
                .sum::<f64>()
                .max(0.0),
        }
    }

    /// `D(a||b) - D(c||b) - D(a||c) - <grad psi(b) - grad psi(c), c - a>`,
    /// which vanishes identically. Exposed for testing the divergence.
    pub fn law_of_cosines_residual(&self, a: &Vector, b: &Vector, c: &Vector) -> Result<f64> {
        self.domain.check(c, "third argument")?;
        let dab = self.bregman(a, b)?;
        let dcb = self.bregman(c, b)?;
        let dac = self.bregman(a, c)?;
        let cross = (self.grad_psi(b) - self.grad_psi(c)).dot(&(c - a));
        Ok(dab - dcb - dac - cross)
    }

    /// Exact minimizer of `eta <g, theta> + eta r(theta) + D(theta || anchor)` over the box.
    pub fn composite_prox(&self, anchor: &Vector, obj: &CompositeObjective) -> Result<Vector> {
        // the minimizer is well defined for any finite anchor, feasible or not
        if anchor.len() != self.dim() || obj.grad.len() != anchor.len() {
            return Err(Error::input("gradient, anchor and domain dimensions differ"));
        }
        ensure_finite(anchor, "prox anchor")?;
        match (self.map, obj.regularizer) {
            (MirrorMap::SquaredEuclidean, Regularizer::None) => {
                Ok(self.domain.clip(&(anchor - obj.grad.scale(obj.eta))))
            }
            (MirrorMap::SquaredEuclidean, Regularizer::L1(tau)) => {
                // separable: soft-threshold then clip is the constrained minimizer
                let kappa = obj.eta * tau;
                let shrunk = Vector::from_iterator(
                    anchor.len(),
                    anchor
                        .iter()
                        .zip(obj.grad.iter())
                        .map(|(a, g)| soft_threshold(a - obj.eta * g, kappa)),
                );
                Ok(self.domain.clip(&shrunk))
            }
            (MirrorMap::PoissonLogPartition, Regularizer::None) => {
                let mu = self.grad_psi(anchor);
                let dual = &mu - obj.grad.scale(obj.eta);
                Ok(self.grad_psi_inverse(&dual))
            }
            (MirrorMap::PoissonLogPartition, Regularizer::L1(_)) => Err(Error::config(
                "L1 regularization is only supported with the squared-Euclidean mirror map",
            )),
        }
    }

    /// Value of the prox objective, used by tests and diagnostics.
    pub fn prox_objective(&self, anchor: &Vector, obj: &CompositeObjective, theta: &Vector) -> f64 {
        obj.eta * obj.grad.dot(theta)
            + obj.eta * obj.regularizer.value(theta)
            + self.bregman_unchecked(theta, anchor)
    }

    /// Largest dual norm of `grad psi` over the given points (the constant `M`).
    pub fn max_mirror_gradient<'a>(&self, points: impl IntoIterator<Item = &'a Vector>) -> f64 {
        points
            .into_iter()
            .map(|p| self.grad_psi(p).norm())
            .fold(0.0, f64::max)
    }

    /// Largest divergence over the given point pairs (a sampled `D_max`).
    pub fn max_divergence<'a>(&self, points: &[&'a Vector]) -> f64 {
        let mut best = 0.0f64;
        for a in points {
            for b in points {
                best = best.max(self.bregman_unchecked(a, b));
            }
        }
        best
    }
}

/// Largest relative deviation between the reported gradient of `loss` at
/// `point` and central finite differences with step [`FD_STEP`].
pub fn subgradient_check(loss: &dyn SmoothLoss, point: &Vector) -> f64 {
    let grad = loss.gradient(point);
    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for k in 0..point.len() {
        let orig = probe[k];
        probe[k] = orig + FD_STEP;
        let up = loss.value(&probe);
        probe[k] = orig - FD_STEP;
        let down = loss.value(&probe);
        probe[k] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let scale = fd.abs().max(grad[k].abs()).max(1.0);
        worst = worst.max((fd - grad[k]).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{PoissonLoss, QuadraticLoss};
    use crate::rng::substream;
    use rand::Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn euclid(d: usize) -> MirrorGeometry {
        MirrorGeometry::euclidean(BoxDomain::unbounded(d))
    }

    fn poisson(d: usize) -> MirrorGeometry {
        MirrorGeometry::new(
            MirrorMap::PoissonLogPartition,
            BoxDomain::uniform(d, -3.0, 3.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn euclidean_bregman_examples() {
        let g = euclid(2);
        assert_eq!(g.bregman(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(g.bregman(&v(&[3.0, 0.0]), &v(&[0.0, 4.0])).unwrap(), 12.5);
    }

    #[test]
    fn poisson_bregman_matches_definition() {
        let g = poisson(1);
        let a = v(&[0.0]);
        let b = v(&[2f64.ln()]);
        // psi(a) - psi(b) - psi'(b)(a - b) = 1 - 2 + 2 ln 2
        let oracle = 1.0 - 2.0 - 2.0 * (0.0 - 2f64.ln());
        assert!((g.bregman(&a, &b).unwrap() - oracle).abs() < 1e-14);
        assert!((oracle - 0.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn bregman_rejects_points_outside_domain() {
        let g = poisson(1);
        assert!(matches!(g.bregman(&v(&[5.0]), &v(&[0.0])), Err(Error::Input(_))));
        assert!(matches!(g.bregman(&v(&[0.0, 0.0]), &v(&[0.0])), Err(Error::Input(_))));
    }

    #[test]
    fn poisson_geometry_needs_finite_lower_bound() {
        let r = MirrorGeometry::new(MirrorMap::PoissonLogPartition, BoxDomain::unbounded(2));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn law_of_cosines_examples() {
        let g = euclid(2);
        let p = v(&[0.3, -0.7]);
        assert_eq!(g.law_of_cosines_residual(&p, &p, &p).unwrap(), 0.0);
        let r = g
            .law_of_cosines_residual(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &v(&[0.0, 1.0]))
            .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn law_of_cosines_random_poisson_triples() {
        let g = MirrorGeometry::new(MirrorMap::PoissonLogPartition, BoxDomain::uniform(3, -1.0, 1.0).unwrap())
            .unwrap();
        let mut rng = substream(11, "cosines");
        for _ in 0..200 {
            let mut draw = || Vector::from_fn(3, |_, _| rng.random_range(-1.0..=1.0));
            let (a, b, c) = (draw(), draw(), draw());
            let dab = g.bregman(&a, &b).unwrap();
            let r = g.law_of_cosines_residual(&a, &b, &c).unwrap();
            assert!(r.abs() <= IDENTITY_TOL * (1.0 + dab.abs()), "residual {r}");
        }
    }

    #[test]
    fn prox_plain_gradient_step() {
        let g = euclid(2);
        let obj = CompositeObjective::new(v(&[1.0, 1.0]), Regularizer::None, 0.5).unwrap();
        assert_eq!(g.composite_prox(&v(&[0.0, 0.0]), &obj).unwrap(), v(&[-0.5, -0.5]));
    }

    #[test]
    fn prox_soft_threshold_scalar() {
        let g = euclid(1);
        // eta * tau = 0.3 with eta = 1
        let obj = CompositeObjective::new(v(&[0.0]), Regularizer::L1(0.3), 1.0).unwrap();
        let out = g.composite_prox(&v(&[1.0]), &obj).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-15);
        assert_eq!(g.composite_prox(&v(&[0.2]), &obj).unwrap()[0], 0.0);
    }

    #[test]
    fn prox_l1_box_matches_grid_search() {
        let g = MirrorGeometry::euclidean(BoxDomain::uniform(2, 0.0, 1.0).unwrap());
        let anchor = v(&[0.9, -0.05]);
        let obj = CompositeObjective::new(v(&[0.2, 0.1]), Regularizer::L1(0.1), 1.0).unwrap();
        let out = g.composite_prox(&anchor, &obj).unwrap();
        for k in 0..2 {
            // 1-D objective per coordinate, grid spacing 1e-4
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..=10_000 {
                let th = i as f64 * 1e-4;
                let val = obj.grad[k] * th + 0.1 * th.abs() + 0.5 * (th - anchor[k]).powi(2);
                if val < best.0 {
                    best = (val, th);
                }
            }
            assert!((out[k] - best.1).abs() < 1e-3, "coord {k}: {} vs {}", out[k], best.1);
        }
    }

    #[test]
    fn prox_rejects_poisson_with_l1() {
        let g = poisson(2);
        let obj = CompositeObjective::new(v(&[0.0, 0.0]), Regularizer::L1(0.1), 1.0).unwrap();
        assert!(matches!(g.composite_prox(&v(&[0.0, 0.0]), &obj), Err(Error::Config(_))));
    }

    #[test]
    fn prox_poisson_is_dual_blend() {
        let g = poisson(2);
        let anchor = v(&[0.0, 1.0]);
        let x = v(&[2.0, 0.0]);
        let eta = 0.25;
        let grad = g.grad_psi(&anchor) - &x;
        let obj = CompositeObjective::new(grad, Regularizer::None, eta).unwrap();
        let out = g.composite_prox(&anchor, &obj).unwrap();
        let mu = g.grad_psi(&anchor);
        for k in 0..2 {
            let blend = (1.0 - eta) * mu[k] + eta * x[k];
            assert!((out[k] - blend.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_validation() {
        assert!(CompositeObjective::new(v(&[0.0]), Regularizer::None, 0.0).is_err());
        assert!(CompositeObjective::new(v(&[0.0]), Regularizer::L1(-1.0), 1.0).is_err());
        assert!(CompositeObjective::new(v(&[f64::NAN]), Regularizer::None, 1.0).is_err());
    }

    #[test]
    fn finite_difference_examples() {
        let x = v(&[0.4, -1.0]);
        let q = QuadraticLoss::new(x.clone());
        assert!(subgradient_check(&q, &x) < 1e-10);
        let p = PoissonLoss::new(v(&[1.0]));
        assert_eq!(p.gradient(&v(&[0.0]))[0], 0.0);
        assert!(subgradient_check(&p, &v(&[0.0])) < FD_TOL);
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let r = Regularizer::L1(2.0);
        assert_eq!(r.subgradient(&v(&[0.0, 1.0, -3.0])), v(&[0.0, 2.0, -2.0]));
    }

    #[test]
    fn sigma_values() {
        assert_eq!(euclid(3).sigma(), 1.0);
        assert!((poisson(3).sigma() - (-3f64).exp()).abs() < 1e-15);
    }
}
