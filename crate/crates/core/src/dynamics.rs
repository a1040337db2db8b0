//! Dynamical models `Phi_t`, contractivity diagnostics, comparator variation
//! and the regret ledger.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::expfam::{additive_apply, AdditiveDynamics, ExponentialFamily};
use crate::geometry::{BoxDomain, MirrorGeometry, Vector};
use crate::rng::StreamRng;

/// Largest number of dynamic-programming states [`switched_variation`] accepts.
pub const SWITCHED_VARIATION_BUDGET: u128 = 10_000_000;

/// Translation of a row-major `rows x cols` frame by `(d_row, d_col)` pixels.
///
/// Content at `(r, c)` moves to `(r + d_row, c + d_col)`. Fractional
/// displacements use bilinear weights; pixels shifted in from outside the
/// frame are zero, pixels shifted out are dropped. The map is linear with
/// nonnegative weights summing to at most one, so its spectral norm is <= 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelShift {
    pub rows: usize,
    pub cols: usize,
    pub d_row: f64,
    pub d_col: f64,
}

impl PixelShift {
    pub fn new(rows: usize, cols: usize, d_row: f64, d_col: f64) -> Self {
        Self { rows, cols, d_row, d_col }
    }

    /// One-pixel move at `angle` radians, counter-clockwise from "right",
    /// with "up" meaning decreasing row index.
    pub fn at_angle(rows: usize, cols: usize, angle: f64) -> Self {
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
        Self::new(rows, cols, snap(-angle.sin()), snap(angle.cos()))
    }

    pub fn up(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, -1.0, 0.0)
    }

    pub fn right(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, 0.0, 1.0)
    }

    pub fn apply(&self, frame: &Vector) -> Vector {
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        // out(r, c) = in(r - d_row, c - d_col), bilinear in each axis
        let (r0, fr) = split(-self.d_row);
        let (c0, fc) = split(-self.d_col);
        let taps = [
            (r0, c0, (1.0 - fr) * (1.0 - fc)),
            (r0 + 1, c0, fr * (1.0 - fc)),
            (r0, c0 + 1, (1.0 - fr) * fc),
            (r0 + 1, c0 + 1, fr * fc),
        ];
        let mut out = Vector::zeros(frame.len());
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0;
                for &(dr, dc, w) in &taps {
                    if w == 0.0 {
                        continue;
                    }
                    let (sr, sc) = (r + dr, c + dc);
                    if sr >= 0 && sr < rows && sc >= 0 && sc < cols {
                        acc += w * frame[(sr * cols + sc) as usize];
                    }
                }
                out[(r * cols + c) as usize] = acc;
            }
        }
        out
    }
}

fn split(offset: f64) -> (isize, f64) {
    let base = offset.floor();
    (base as isize, offset - base)
}

/// A time-indexed map `Phi_t` on parameter space.
#[derive(Clone, Debug, PartialEq)]
pub enum DynamicsModel {
    Identity,
    Linear(DMatrix<f64>),
    PixelShift(PixelShift),
    /// `grad Z*(A grad Z(theta) + B_t alpha + c)` with a fixed parameter.
    Additive {
        family: ExponentialFamily,
        dynamics: AdditiveDynamics,
        alpha: Vector,
    },
}

impl DynamicsModel {
    /// The self-exciting rate model `mu' = tau mu + W x_t + (1 - tau) base`
    /// acting on log-rates.
    pub fn self_exciting(family: ExponentialFamily, tau: f64, w: &DMatrix<f64>, base: &Vector) -> Result<Self> {
        let dynamics = AdditiveDynamics::self_exciting(tau, base)?;
        if w.nrows() != base.len() || w.ncols() != base.len() {
            return Err(Error::config("excitation matrix must be d x d"));
        }
        Ok(DynamicsModel::Additive {
            family,
            dynamics,
            alpha: Vector::from_column_slice(w.as_slice()),
        })
    }

    /// Whether `apply` at time `t` reads `history[t - 1]`.
    pub fn is_data_dependent(&self) -> bool {
        matches!(self, DynamicsModel::Additive { dynamics, .. } if dynamics.is_data_dependent())
    }

    /// `Phi_t(theta)`, clipped to `domain`. `history` holds `x_1..x_t`; only
    /// data-dependent models read it. `t` is 1-based.
    pub fn apply(&self, t: usize, theta: &Vector, history: &[Vector], domain: &BoxDomain) -> Result<Vector> {
        if theta.len() != domain.dim() {
            return Err(Error::input(format!(
                "dynamics input has dimension {}, domain has {}",
                theta.len(),
                domain.dim()
            )));
        }
        let raw = match self {
            DynamicsModel::Identity => theta.clone(),
            DynamicsModel::Linear(a) => {
                if a.ncols() != theta.len() || a.nrows() != theta.len() {
                    return Err(Error::input("linear dynamics matrix does not match the state"));
                }
                a * theta
            }
            DynamicsModel::PixelShift(s) => {
                if s.rows * s.cols != theta.len() {
                    return Err(Error::input("frame shape does not match the state"));
                }
                s.apply(theta)
            }
            DynamicsModel::Additive { family, dynamics, alpha } => {
                let x = if dynamics.is_data_dependent() {
                    if t == 0 || history.len() < t {
                        return Err(Error::input(format!(
                            "data-dependent dynamics at t={t} needs {t} observations, got {}",
                            history.len()
                        )));
                    }
                    history[t - 1].clone()
                } else {
                    Vector::zeros(0)
                };
                additive_apply(family, dynamics, theta, alpha, &x)?.0
            }
        };
        Ok(domain.clip(&raw))
    }

    /// `D(Phi a || Phi b) - D(a || b)` for one pair.
    pub fn distortion_at(
        &self,
        geom: &MirrorGeometry,
        t: usize,
        history: &[Vector],
        a: &Vector,
        b: &Vector,
    ) -> Result<f64> {
        let pa = self.apply(t, a, history, geom.domain())?;
        let pb = self.apply(t, b, history, geom.domain())?;
        Ok(geom.bregman(&pa, &pb)? - geom.bregman(a, b)?)
    }

    /// Largest sampled distortion over `samples` random pairs drawn uniformly
    /// from the domain (unbounded coordinates are sampled in `[-1, 1]`).
    /// Contractive models report a value <= 0 up to rounding.
    pub fn distortion_diagnostic(
        &self,
        geom: &MirrorGeometry,
        t: usize,
        history: &[Vector],
        samples: usize,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        if samples == 0 {
            return Err(Error::input("at least one sample is required"));
        }
        let (lo, hi) = geom.domain().sampling_bounds();
        let draw = |rng: &mut StreamRng| {
            Vector::from_fn(lo.len(), |k, _| if lo[k] < hi[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] })
        };
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let a = draw(rng);
            let b = draw(rng);
            worst = worst.max(self.distortion_at(geom, t, history, &a, &b)?);
        }
        Ok(worst)
    }
}

/// Norm used for variation terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VariationNorm {
    #[default]
    L2,
    L1,
}

impl VariationNorm {
    pub fn of(&self, v: &Vector) -> f64 {
        match self {
            VariationNorm::L2 => v.norm(),
            VariationNorm::L1 => v.lp_norm(1),
        }
    }
}

/// A comparator sequence `theta_1..theta_T`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparatorSequence {
    pub thetas: Vec<Vector>,
}

impl ComparatorSequence {
    pub fn new(thetas: Vec<Vector>) -> Self {
        Self { thetas }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// 1-based access.
    pub fn get(&self, t: usize) -> Option<&Vector> {
        t.checked_sub(1).and_then(|i| self.thetas.get(i))
    }

    pub fn check_domain(&self, domain: &BoxDomain) -> Result<()> {
        for (i, th) in self.thetas.iter().enumerate() {
            domain.check(th, &format!("comparator element {}", i + 1))?;
        }
        Ok(())
    }
}

fn deviations(
    model: &DynamicsModel,
    comparator: &ComparatorSequence,
    history: &[Vector],
    domain: &BoxDomain,
    norm: VariationNorm,
) -> Result<Vec<f64>> {
    comparator
        .thetas
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let pred = model.apply(i + 1, &w[0], history, domain)?;
            Ok(norm.of(&(&w[1] - pred)))
        })
        .collect()
}

/// `sum_{t=1}^{T-1} || theta_{t+1} - Phi_t(theta_t) ||`.
pub fn variation(
    model: &DynamicsModel,
    comparator: &ComparatorSequence,
    history: &[Vector],
    domain: &BoxDomain,
    norm: VariationNorm,
) -> Result<f64> {
    Ok(deviations(model, comparator, history, domain, norm)?.iter().sum())
}

/// Smallest total deviation of the comparator from a piecewise choice of
/// models with at most `m` switches, computed exactly by dynamic programming
/// over (round, switches used, current model).
pub fn switched_variation(
    models: &[DynamicsModel],
    comparator: &ComparatorSequence,
    history: &[Vector],
    domain: &BoxDomain,
    m: usize,
    norm: VariationNorm,
) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::input("at least one model is required"));
    }
    let steps = comparator.len().saturating_sub(1);
    let states = (steps as u128) * (models.len() as u128) * (m as u128 + 1);
    if states > SWITCHED_VARIATION_BUDGET {
        return Err(Error::Resource {
            what: "switched variation".into(),
            required: states,
            budget: SWITCHED_VARIATION_BUDGET,
        });
    }
    if steps == 0 {
        return Ok(0.0);
    }
    let costs: Vec<Vec<f64>> = models
        .iter()
        .map(|model| deviations(model, comparator, history, domain, norm))
        .collect::<Result<_>>()?;
    let n = models.len();
    // best[s][i]: cheapest prefix ending in model i having used s switches
    let mut best = vec![vec![f64::INFINITY; n]; m + 1];
    for i in 0..n {
        best[0][i] = costs[i][0];
    }
    for step in 1..steps {
        let mut next = vec![vec![f64::INFINITY; n]; m + 1];
        for s in 0..=m {
            let switch_in = if s > 0 {
                best[s - 1].iter().cloned().fold(f64::INFINITY, f64::min)
            } else {
                f64::INFINITY
            };
            for i in 0..n {
                next[s][i] = costs[i][step] + best[s][i].min(switch_in);
            }
        }
        best = next;
    }
    Ok(best.iter().flatten().cloned().fold(f64::INFINITY, f64::min))
}

/// One row of a [`RegretLedger`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerRow {
    pub t: usize,
    pub forecaster_loss: f64,
    pub comparator_loss: f64,
}

/// Cumulative losses of a forecaster and a comparator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegretLedger {
    pub cumulative_forecaster_loss: f64,
    pub cumulative_comparator_loss: f64,
    pub rows: Vec<LedgerRow>,
}

impl RegretLedger {
    pub fn record_round(&mut self, t: usize, forecaster_loss: f64, comparator_loss: f64) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if t <= last.t {
                return Err(Error::input(format!("round {t} recorded after round {}", last.t)));
            }
        }
        self.cumulative_forecaster_loss += forecaster_loss;
        self.cumulative_comparator_loss += comparator_loss;
        self.rows.push(LedgerRow {
            t,
            forecaster_loss,
            comparator_loss,
        });
        Ok(())
    }

    pub fn regret(&self) -> f64 {
        self.cumulative_forecaster_loss - self.cumulative_comparator_loss
    }

    /// Regret after each recorded round.
    pub fn regret_series(&self) -> Vec<f64> {
        let (mut f, mut c) = (0.0, 0.0);
        self.rows
            .iter()
            .map(|r| {
                f += r.forecaster_loss;
                c += r.comparator_loss;
                f - c
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MirrorGeometry;
    use crate::rng::substream;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn apply_examples() {
        let dom = BoxDomain::unbounded(2);
        let th = v(&[2.0, 4.0]);
        assert_eq!(DynamicsModel::Identity.apply(1, &th, &[], &dom).unwrap(), th);
        let lin = DynamicsModel::Linear(DMatrix::identity(2, 2) * 0.5);
        assert_eq!(lin.apply(1, &th, &[], &dom).unwrap(), v(&[1.0, 2.0]));
        assert!(matches!(lin.apply(1, &v(&[1.0]), &[], &dom), Err(Error::Input(_))));
    }

    #[test]
    fn pixel_shift_up_on_three_by_three() {
        let mut frame = Vector::zeros(9);
        frame[2 * 3 + 1] = 1.0;
        let out = DynamicsModel::PixelShift(PixelShift::up(3, 3))
            .apply(1, &frame, &[], &BoxDomain::unbounded(9))
            .unwrap();
        let mut expected = Vector::zeros(9);
        expected[3 + 1] = 1.0;
        assert_eq!(out, expected);
        // shifting the top row up discards it, vacated bottom row is zero
        let ones = Vector::from_element(9, 1.0);
        let out = PixelShift::up(3, 3).apply(&ones);
        assert_eq!(out.as_slice(), &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn angle_constructor_snaps_axis_directions() {
        let r = PixelShift::at_angle(4, 4, 0.0);
        assert_eq!((r.d_row, r.d_col), (0.0, 1.0));
        let u = PixelShift::at_angle(4, 4, std::f64::consts::FRAC_PI_2);
        assert_eq!((u.d_row, u.d_col), (-1.0, 0.0));
    }

    #[test]
    fn distortion_examples() {
        let geom = MirrorGeometry::euclidean(BoxDomain::unbounded(1));
        let mut rng = substream(1, "distortion");
        assert_eq!(
            DynamicsModel::Identity.distortion_diagnostic(&geom, 1, &[], 100, &mut rng).unwrap(),
            0.0
        );
        let doubling = DynamicsModel::Linear(DMatrix::from_element(1, 1, 2.0));
        let d = doubling.distortion_at(&geom, 1, &[], &v(&[1.0]), &v(&[0.0])).unwrap();
        assert_eq!(d, 1.5);
        assert!(doubling.distortion_diagnostic(&geom, 1, &[], 10, &mut rng).unwrap() > 0.0);
    }

    #[test]
    fn variation_examples() {
        let dom = BoxDomain::unbounded(2);
        let alt = ComparatorSequence::new(vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 0.0]), v(&[1.0, 0.0])]);
        let id = DynamicsModel::Identity;
        assert_eq!(variation(&id, &alt, &[], &dom, VariationNorm::L2).unwrap(), 3.0);
        let constant = ComparatorSequence::new(vec![v(&[0.4, 0.1]); 5]);
        assert_eq!(variation(&id, &constant, &[], &dom, VariationNorm::L2).unwrap(), 0.0);
        let lin = DynamicsModel::Linear(DMatrix::identity(2, 2) * 0.5);
        let mut path = vec![v(&[4.0, -8.0])];
        for t in 1..6 {
            let next = lin.apply(t, &path[t - 1], &[], &dom).unwrap();
            path.push(next);
        }
        let seq = ComparatorSequence::new(path);
        assert_eq!(variation(&lin, &seq, &[], &dom, VariationNorm::L1).unwrap(), 0.0);
    }

    fn brute_force_one_switch(models: &[DynamicsModel], seq: &ComparatorSequence, dom: &BoxDomain) -> f64 {
        let costs: Vec<Vec<f64>> = models
            .iter()
            .map(|m| {
                seq.thetas
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| (&w[1] - m.apply(i + 1, &w[0], &[], dom).unwrap()).norm())
                    .collect()
            })
            .collect();
        let steps = costs[0].len();
        let mut best = f64::INFINITY;
        // switch point s: segment [0, s) uses i1, [s, steps) uses i2 (s = steps means no switch)
        for s in 1..=steps {
            for i1 in 0..models.len() {
                for i2 in 0..models.len() {
                    let total: f64 = (0..steps).map(|k| if k < s { costs[i1][k] } else { costs[i2][k] }).sum();
                    best = best.min(total);
                }
            }
        }
        best
    }

    #[test]
    fn switched_variation_matches_enumeration() {
        use rand::Rng;
        let dom = BoxDomain::unbounded(2);
        let mut rng = substream(21, "switched");
        for _ in 0..10 {
            let models: Vec<DynamicsModel> = (0..2)
                .map(|_| DynamicsModel::Linear(DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))))
                .collect();
            let seq = ComparatorSequence::new((0..8).map(|_| Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect());
            let dp = switched_variation(&models, &seq, &[], &dom, 1, VariationNorm::L2).unwrap();
            let brute = brute_force_one_switch(&models, &seq, &dom);
            assert!((dp - brute).abs() < 1e-12, "{dp} vs {brute}");
            let single = variation(&models[0], &seq, &[], &dom, VariationNorm::L2).unwrap();
            let m0 = switched_variation(&models[..1], &seq, &[], &dom, 0, VariationNorm::L2).unwrap();
            assert!((single - m0).abs() < 1e-12);
        }
    }

    #[test]
    fn switched_variation_zero_on_matching_segmentation() {
        let dom = BoxDomain::unbounded(1);
        let models = vec![
            DynamicsModel::Linear(DMatrix::from_element(1, 1, 0.5)),
            DynamicsModel::Linear(DMatrix::from_element(1, 1, -1.0)),
        ];
        let mut path = vec![v(&[8.0])];
        for t in 1..10 {
            let model = if t < 5 { &models[0] } else { &models[1] };
            let next = model.apply(t, &path[t - 1], &[], &dom).unwrap();
            path.push(next);
        }
        let seq = ComparatorSequence::new(path);
        assert_eq!(switched_variation(&models, &seq, &[], &dom, 1, VariationNorm::L2).unwrap(), 0.0);
        assert!(switched_variation(&models, &seq, &[], &dom, 0, VariationNorm::L2).unwrap() > 0.0);
    }

    #[test]
    fn switched_variation_budget() {
        let dom = BoxDomain::unbounded(1);
        let seq = ComparatorSequence::new(vec![v(&[0.0]); 20_001]);
        let models = vec![DynamicsModel::Identity; 100];
        let err = switched_variation(&models, &seq, &[], &dom, 5, VariationNorm::L2).unwrap_err();
        assert!(matches!(err, Error::Resource { required: 12_000_000, .. }));
    }

    #[test]
    fn ledger_examples() {
        let mut l = RegretLedger::default();
        l.record_round(1, 1.0, 0.0).unwrap();
        l.record_round(2, 1.0, 0.0).unwrap();
        assert_eq!(l.regret(), 2.0);
        assert!(l.record_round(2, 0.0, 0.0).is_err());
        let mut eq = RegretLedger::default();
        for t in 1..10 {
            eq.record_round(t, 0.3, 0.3).unwrap();
        }
        assert_eq!(eq.regret(), 0.0);
    }

    #[test]
    fn ledger_matches_resummed_trace() {
        use rand::Rng;
        let mut rng = substream(8, "ledger");
        let mut l = RegretLedger::default();
        let rows: Vec<(f64, f64)> = (0..100).map(|_| (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0))).collect();
        for (i, (f, c)) in rows.iter().enumerate() {
            l.record_round(i + 1, *f, *c).unwrap();
        }
        let mut f_sum = 0.0;
        let mut c_sum = 0.0;
        for (f, c) in &rows {
            f_sum += f;
            c_sum += c;
        }
        assert_eq!(l.regret(), f_sum - c_sum);
        assert_eq!(*l.regret_series().last().unwrap(), l.regret());
    }

    #[test]
    fn data_dependent_model_needs_history() {
        let fam = ExponentialFamily::poisson(2, 5.0).unwrap();
        let model = DynamicsModel::self_exciting(fam.clone(), 0.5, &DMatrix::zeros(2, 2), &v(&[0.1, 0.1])).unwrap();
        assert!(model.is_data_dependent());
        let dom = fam.primal_domain().clone();
        assert!(model.apply(2, &v(&[0.0, 0.0]), &[v(&[1.0, 0.0])], &dom).is_err());
        assert!(model.apply(1, &v(&[0.0, 0.0]), &[v(&[1.0, 0.0])], &dom).is_ok());
    }
}
