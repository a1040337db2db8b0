//! Mirror descent, composite mirror descent, and dynamic mirror descent.
//!
//! A dynamic mirror descent round is a composite mirror step from the
//! current prediction followed by the dynamical model:
//!
//! ```text
//! theta~_{t+1} = argmin_theta  eta_t <grad f_t(theta^_t), theta> + eta_t r(theta) + D(theta || theta^_t)
//! theta^_{t+1} = Phi_t(theta~_{t+1})
//! ```
//!
//! With `Phi_t` the identity this is exactly the composite step, and the two
//! produce bitwise-identical iterates.

use std::sync::Arc;

use crate::dynamics::{variation, ComparatorSequence, DynamicsModel, RegretLedger, VariationNorm};
use crate::error::{Error, Result};
use crate::geometry::{CompositeObjective, MirrorGeometry, MirrorMap, Regularizer, Vector};
use crate::loss::SmoothLoss;

/// `eta_t = eta_0 / sqrt(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub eta0: f64,
}

impl StepSchedule {
    pub fn new(eta0: f64) -> Result<Self> {
        if !(eta0 >= 0.0 && eta0.is_finite()) {
            return Err(Error::config(format!("eta_0 must be finite and >= 0, got {eta0}")));
        }
        Ok(Self { eta0 })
    }

    pub fn at(&self, t: usize) -> f64 {
        self.eta0 / (t as f64).sqrt()
    }
}

/// The information revealed in round `t`.
#[derive(Clone)]
pub struct LossRound {
    /// Raw observation `x_t`; data-dependent dynamics read it.
    pub observation: Vector,
    /// Smooth part `f_t` of the round loss.
    pub loss: Arc<dyn SmoothLoss>,
}

impl LossRound {
    pub fn new(observation: Vector, loss: Arc<dyn SmoothLoss>) -> Self {
        Self { observation, loss }
    }
}

/// What one step produced.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// `l_t(theta^_t)`, evaluated before the update.
    pub loss: f64,
    /// The mirror-step output before the dynamics were applied.
    pub theta_tilde: Vector,
}

/// One online learner.
#[derive(Clone, Debug)]
pub struct ForecasterState {
    pub theta_hat: Vector,
    /// Index of the next round, starting at 1.
    pub t: usize,
    pub schedule: StepSchedule,
    pub geometry: MirrorGeometry,
    pub dynamics: DynamicsModel,
    pub regularizer: Regularizer,
    history: Vec<Vector>,
}

impl ForecasterState {
    pub fn new(
        geometry: MirrorGeometry,
        dynamics: DynamicsModel,
        regularizer: Regularizer,
        schedule: StepSchedule,
        theta0: Vector,
    ) -> Result<Self> {
        geometry.domain().check(&theta0, "initial prediction")?;
        regularizer.validate()?;
        if schedule.eta0 <= 0.0 {
            return Err(Error::config("forecaster step size eta_0 must be > 0"));
        }
        if geometry.map() == MirrorMap::PoissonLogPartition && regularizer != Regularizer::None {
            return Err(Error::config(
                "L1 regularization is only supported with the squared-Euclidean mirror map",
            ));
        }
        Ok(Self {
            theta_hat: theta0,
            t: 1,
            schedule,
            geometry,
            dynamics,
            regularizer,
            history: Vec::new(),
        })
    }

    /// `l_t(theta) = f_t(theta) + r(theta)`.
    pub fn round_loss(&self, round: &LossRound, theta: &Vector) -> f64 {
        round.loss.value(theta) + self.regularizer.value(theta)
    }

    fn check_round(&self, round: &LossRound) -> Result<(f64, Vector)> {
        if round.loss.dim() != self.theta_hat.len() {
            return Err(Error::input(format!(
                "round loss has dimension {}, state has {}",
                round.loss.dim(),
                self.theta_hat.len()
            )));
        }
        let loss = self.round_loss(round, &self.theta_hat);
        if !loss.is_finite() {
            return Err(Error::Internal(format!("non-finite loss at round {}", self.t)));
        }
        Ok((loss, round.loss.gradient(&self.theta_hat)))
    }

    fn finish(&mut self, round: &LossRound, theta_tilde: &Vector, use_dynamics: bool) -> Result<()> {
        let next = if use_dynamics {
            if self.dynamics.is_data_dependent() {
                self.history.push(round.observation.clone());
            }
            self.dynamics
                .apply(self.t, theta_tilde, &self.history, self.geometry.domain())?
        } else {
            theta_tilde.clone()
        };
        self.theta_hat = next;
        self.t += 1;
        Ok(())
    }

    /// One dynamic mirror descent round.
    pub fn dmd_step(&mut self, round: &LossRound) -> Result<StepOutcome> {
        let (loss, grad) = self.check_round(round)?;
        let obj = CompositeObjective::new(grad, self.regularizer, self.schedule.at(self.t))?;
        let theta_tilde = self.geometry.composite_prox(&self.theta_hat, &obj)?;
        self.finish(round, &theta_tilde, true)?;
        Ok(StepOutcome { loss, theta_tilde })
    }

    /// Composite mirror descent: the same step without dynamics.
    pub fn comid_step(&mut self, round: &LossRound) -> Result<StepOutcome> {
        let (loss, grad) = self.check_round(round)?;
        let obj = CompositeObjective::new(grad, self.regularizer, self.schedule.at(self.t))?;
        let theta_tilde = self.geometry.composite_prox(&self.theta_hat, &obj)?;
        self.finish(round, &theta_tilde, false)?;
        Ok(StepOutcome { loss, theta_tilde })
    }

    /// Plain mirror descent: linearizes the whole loss, regularizer included,
    /// using the minimal-norm subgradient of `r`.
    pub fn md_step(&mut self, round: &LossRound) -> Result<StepOutcome> {
        let (loss, grad) = self.check_round(round)?;
        let full = grad + self.regularizer.subgradient(&self.theta_hat);
        let obj = CompositeObjective::new(full, Regularizer::None, self.schedule.at(self.t))?;
        let theta_tilde = self.geometry.composite_prox(&self.theta_hat, &obj)?;
        self.finish(round, &theta_tilde, false)?;
        Ok(StepOutcome { loss, theta_tilde })
    }

    /// Observations seen so far (kept only for data-dependent dynamics).
    pub fn history(&self) -> &[Vector] {
        &self.history
    }
}

/// Which update rule a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    Dmd,
    Comid,
    Md,
}

impl UpdateRule {
    pub fn step(self, state: &mut ForecasterState, round: &LossRound) -> Result<StepOutcome> {
        match self {
            UpdateRule::Dmd => state.dmd_step(round),
            UpdateRule::Comid => state.comid_step(round),
            UpdateRule::Md => state.md_step(round),
        }
    }
}

/// Per-round record of a single forecaster.
#[derive(Clone, Debug, Default)]
pub struct ForecasterTrace {
    pub losses: Vec<f64>,
    /// `(t, theta^_t)` every `stride` rounds.
    pub predictions: Vec<(usize, Vector)>,
    pub ledger: Option<RegretLedger>,
    /// Variation of the comparator with respect to the forecaster's dynamics.
    pub variation: Option<f64>,
    pub complete: bool,
    pub error: Option<String>,
}

/// Runs `rule` over `rounds`. Predictions are kept every `stride` rounds
/// (`None` keeps none). A failing step stops the run and flags the trace
/// incomplete.
pub fn run_forecaster(
    mut state: ForecasterState,
    rule: UpdateRule,
    rounds: impl IntoIterator<Item = LossRound>,
    comparator: Option<&ComparatorSequence>,
    stride: Option<usize>,
) -> ForecasterTrace {
    let mut trace = ForecasterTrace {
        ledger: comparator.map(|_| RegretLedger::default()),
        complete: true,
        ..Default::default()
    };
    let mut observations = Vec::new();
    for round in rounds {
        let t = state.t;
        if let Some(s) = stride.filter(|s| *s > 0) {
            if (t - 1) % s == 0 {
                trace.predictions.push((t, state.theta_hat.clone()));
            }
        }
        let comparator_loss = comparator
            .and_then(|c| c.get(t))
            .map(|theta| state.round_loss(&round, theta));
        match rule.step(&mut state, &round) {
            Ok(out) => {
                trace.losses.push(out.loss);
                if let (Some(ledger), Some(cl)) = (trace.ledger.as_mut(), comparator_loss) {
                    ledger.record_round(t, out.loss, cl).expect("rounds are strictly increasing");
                }
            }
            Err(e) => {
                trace.complete = false;
                trace.error = Some(format!("round {t}: {e}"));
                break;
            }
        }
        if comparator.is_some() {
            observations.push(round.observation);
        }
    }
    if let Some(c) = comparator.filter(|c| c.len() >= 2) {
        let model = match rule {
            UpdateRule::Dmd => state.dynamics.clone(),
            _ => DynamicsModel::Identity,
        };
        trace.variation = variation(&model, c, &observations, state.geometry.domain(), VariationNorm::L2).ok();
    }
    trace
}

/// Quantities entering the per-round tracking inequality
///
/// ```text
/// l_t(theta^_t) - l_t(theta_t) <= (D(theta_t||theta^_t) - D(theta_{t+1}||theta^_{t+1})) / eta_t
///     + Delta / eta_t + (2M / eta_t) ||theta_{t+1} - Phi_t(theta_t)|| + eta_t G^2 / (2 sigma)
/// ```
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingRound {
    pub t: usize,
    pub eta: f64,
    pub forecaster_loss: f64,
    pub comparator_loss: f64,
    pub divergence_now: f64,
    pub divergence_next: f64,
    pub deviation: f64,
    /// `||grad f_t(theta^_t) + grad r(theta^_t)||`
    pub gradient_norm: f64,
    /// `max(||grad psi(theta_{t+1})||, ||grad psi(theta^_{t+1})||)`
    pub mirror_norm: f64,
}

/// Constants of the tracking inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingConstants {
    pub g: f64,
    pub m: f64,
    pub sigma: f64,
    pub delta_phi: f64,
}

/// Right-hand side minus left-hand side of the per-round inequality.
pub fn lemma2_residual(round: &TrackingRound, c: &TrackingConstants) -> f64 {
    let lhs = round.forecaster_loss - round.comparator_loss;
    let rhs = (round.divergence_now - round.divergence_next) / round.eta
        + c.delta_phi / round.eta
        + 2.0 * c.m / round.eta * round.deviation
        + round.eta / (2.0 * c.sigma) * c.g * c.g;
    rhs - lhs
}

/// Result of [`tracking_audit`].
#[derive(Clone, Debug)]
pub struct TrackingAudit {
    pub rounds: Vec<TrackingRound>,
    pub constants: TrackingConstants,
    pub residuals: Vec<f64>,
    pub regret: f64,
}

impl TrackingAudit {
    pub fn min_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Runs dynamic mirror descent against `comparator` (length `T + 1` for `T`
/// rounds, or `T` and the last round is skipped), estimates `G` and `M` as
/// running maxima over the run, and evaluates the per-round inequality.
pub fn tracking_audit(
    mut state: ForecasterState,
    rounds: &[LossRound],
    comparator: &ComparatorSequence,
    delta_phi: f64,
) -> Result<TrackingAudit> {
    comparator.check_domain(state.geometry.domain())?;
    let sigma = state.geometry.sigma();
    let mut records = Vec::new();
    let mut history = Vec::new();
    let mut regret = 0.0;
    for round in rounds {
        let t = state.t;
        let Some(theta_t) = comparator.get(t) else { break };
        let theta_hat = state.theta_hat.clone();
        let comparator_loss = state.round_loss(round, theta_t);
        let gradient_norm = (round.loss.gradient(&theta_hat) + state.regularizer.subgradient(&theta_hat)).norm();
        let divergence_now = state.geometry.bregman(theta_t, &theta_hat)?;
        let eta = state.schedule.at(t);
        let dynamics = state.dynamics.clone();
        let out = state.dmd_step(round)?;
        regret += out.loss - comparator_loss;
        history.push(round.observation.clone());
        let Some(theta_next) = comparator.get(t + 1) else { break };
        let phi_theta = dynamics.apply(t, theta_t, &history, state.geometry.domain())?;
        let mirror_norm = state
            .geometry
            .max_mirror_gradient([theta_next, &state.theta_hat]);
        records.push(TrackingRound {
            t,
            eta,
            forecaster_loss: out.loss,
            comparator_loss,
            divergence_now,
            divergence_next: state.geometry.bregman(theta_next, &state.theta_hat)?,
            deviation: (theta_next - phi_theta).norm(),
            gradient_norm,
            mirror_norm,
        });
    }
    let constants = TrackingConstants {
        g: records.iter().map(|r| r.gradient_norm).fold(0.0, f64::max),
        m: records.iter().map(|r| r.mirror_norm).fold(0.0, f64::max),
        sigma,
        delta_phi,
    };
    let residuals = records.iter().map(|r| lemma2_residual(r, &constants)).collect();
    Ok(TrackingAudit {
        rounds: records,
        constants,
        residuals,
        regret,
    })
}

/// Explicit tracking-regret bound after `horizon` rounds:
/// `D_max / eta_{T+1} + (2M / eta_{T+1}) V + G^2 / (2 sigma) sum_t eta_t`.
/// The bound uses `eta_{T+1}` in both of the first two terms, the looser choice.
pub fn tracking_regret_bound(
    schedule: StepSchedule,
    horizon: usize,
    d_max: f64,
    m: f64,
    g: f64,
    sigma: f64,
    variation: f64,
) -> f64 {
    let eta_end = schedule.at(horizon + 1);
    let eta_sum: f64 = (1..=horizon).map(|t| schedule.at(t)).sum();
    d_max / eta_end + 2.0 * m / eta_end * variation + g * g / (2.0 * sigma) * eta_sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDomain;
    use crate::loss::QuadraticLoss;
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn quad_round(target: &[f64]) -> LossRound {
        let x = v(target);
        LossRound::new(x.clone(), Arc::new(QuadraticLoss::new(x)))
    }

    fn euclid_state(d: usize, dynamics: DynamicsModel, reg: Regularizer, eta0: f64) -> ForecasterState {
        ForecasterState::new(
            MirrorGeometry::euclidean(BoxDomain::unbounded(d)),
            dynamics,
            reg,
            StepSchedule::new(eta0).unwrap(),
            Vector::zeros(d),
        )
        .unwrap()
    }

    #[test]
    fn dmd_step_with_linear_dynamics() {
        // eta_1 = 0.5
        let mut s = euclid_state(1, DynamicsModel::Linear(DMatrix::from_element(1, 1, 0.5)), Regularizer::None, 0.5);
        let out = s.dmd_step(&quad_round(&[1.0])).unwrap();
        assert_eq!(out.loss, 0.5);
        assert_eq!(out.theta_tilde, v(&[0.5]));
        assert_eq!(s.theta_hat, v(&[0.25]));
        assert_eq!(s.t, 2);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = euclid_state(2, DynamicsModel::Identity, Regularizer::None, 1.0);
        s.dmd_step(&quad_round(&[0.0, 0.0])).unwrap();
        assert_eq!(s.theta_hat, v(&[0.0, 0.0]));
        let mut m = euclid_state(2, DynamicsModel::Identity, Regularizer::None, 1.0);
        m.md_step(&quad_round(&[0.0, 0.0])).unwrap();
        assert_eq!(m.theta_hat, v(&[0.0, 0.0]));
    }

    #[test]
    fn md_closed_form_step() {
        // gradient (2, 0) at the origin: target (-2, 0); eta_1 = 0.25
        let mut s = euclid_state(2, DynamicsModel::Identity, Regularizer::None, 0.25);
        s.md_step(&quad_round(&[-2.0, 0.0])).unwrap();
        assert_eq!(s.theta_hat, v(&[-0.5, 0.0]));
    }

    #[test]
    fn identity_dynamics_equals_composite_step_bitwise() {
        let mut a = euclid_state(3, DynamicsModel::Identity, Regularizer::L1(0.05), 0.7);
        let mut b = a.clone();
        for k in 0..20 {
            let target = [k as f64 * 0.1, -0.3, (k as f64).sin()];
            a.dmd_step(&quad_round(&target)).unwrap();
            b.comid_step(&quad_round(&target)).unwrap();
            assert_eq!(a.theta_hat, b.theta_hat);
        }
    }

    #[test]
    fn comid_matches_md_without_regularizer() {
        let mut a = euclid_state(2, DynamicsModel::Identity, Regularizer::None, 1.0);
        let mut b = a.clone();
        for k in 0..10 {
            let target = [k as f64, 1.0 - k as f64];
            a.comid_step(&quad_round(&target)).unwrap();
            b.md_step(&quad_round(&target)).unwrap();
            assert_eq!(a.theta_hat, b.theta_hat);
        }
    }

    #[test]
    fn large_l1_weight_gives_exact_zeros() {
        let mut s = euclid_state(3, DynamicsModel::Identity, Regularizer::L1(10.0), 1.0);
        s.theta_hat = v(&[0.5, -0.2, 0.9]);
        s.comid_step(&quad_round(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(s.theta_hat, Vector::zeros(3));
    }

    #[test]
    fn md_and_comid_differ_with_smooth_regularization_when_linearized() {
        // L1 at a point away from zero is locally smooth; md linearizes it,
        // comid keeps it exact. Compare each against a 1-D grid minimizer.
        let geom = MirrorGeometry::euclidean(BoxDomain::uniform(1, -2.0, 2.0).unwrap());
        let tau = 0.8;
        let anchor = 0.3;
        let g = -0.1;
        let eta = 1.0;
        let grid = |f: &dyn Fn(f64) -> f64| {
            (0..=40_000)
                .map(|i| -2.0 + i as f64 * 1e-4)
                .min_by(|x, y| f(*x).partial_cmp(&f(*y)).unwrap())
                .unwrap()
        };
        let comid_oracle = grid(&|th| eta * g * th + eta * tau * th.abs() + 0.5 * (th - anchor).powi(2));
        let md_oracle = grid(&|th| eta * (g + tau) * th + 0.5 * (th - anchor).powi(2));
        let mk = || {
            ForecasterState::new(
                geom.clone(),
                DynamicsModel::Identity,
                Regularizer::L1(tau),
                StepSchedule::new(eta).unwrap(),
                v(&[anchor]),
            )
            .unwrap()
        };
        // quadratic loss with gradient g at the anchor: target = anchor - g
        let round = quad_round(&[anchor - g]);
        let mut c = mk();
        c.comid_step(&round).unwrap();
        let mut m = mk();
        m.md_step(&round).unwrap();
        assert!((c.theta_hat[0] - comid_oracle).abs() < 1e-3);
        assert!((m.theta_hat[0] - md_oracle).abs() < 1e-3);
        assert!((c.theta_hat[0] - m.theta_hat[0]).abs() > 0.1);
    }

    #[test]
    fn empty_and_short_runs() {
        let s = euclid_state(1, DynamicsModel::Identity, Regularizer::None, 1.0);
        let trace = run_forecaster(s.clone(), UpdateRule::Dmd, Vec::new(), None, None);
        assert!(trace.losses.is_empty() && trace.complete);

        // eta_t = 1/sqrt(t), targets 1, 2, 3, start at 0
        let rounds: Vec<LossRound> = [1.0, 2.0, 3.0].iter().map(|x| quad_round(&[*x])).collect();
        let trace = run_forecaster(s, UpdateRule::Dmd, rounds, None, Some(1));
        let mut th = 0.0f64;
        let mut expected = Vec::new();
        for (i, x) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            expected.push(0.5 * (th - x).powi(2));
            th -= (th - x) / ((i + 1) as f64).sqrt();
        }
        assert_eq!(trace.losses, expected);
        assert_eq!(trace.predictions.len(), 3);
    }

    #[test]
    fn run_reports_incomplete_on_failure() {
        let s = euclid_state(2, DynamicsModel::Identity, Regularizer::None, 1.0);
        let rounds = vec![quad_round(&[1.0, 1.0]), quad_round(&[1.0, 1.0, 1.0])];
        let trace = run_forecaster(s, UpdateRule::Dmd, rounds, None, None);
        assert!(!trace.complete);
        assert_eq!(trace.losses.len(), 1);
    }

    #[test]
    fn audit_with_self_comparator_has_nonnegative_residuals() {
        let dynamics = DynamicsModel::Linear(DMatrix::from_element(2, 2, 0.3));
        let s = euclid_state(2, dynamics, Regularizer::None, 0.8);
        let rounds: Vec<LossRound> = (0..30).map(|k| quad_round(&[(k as f64).cos(), 0.5])).collect();
        // comparator = the forecaster's own predictions
        let mut probe = s.clone();
        let mut path = vec![probe.theta_hat.clone()];
        for r in &rounds {
            probe.dmd_step(r).unwrap();
            path.push(probe.theta_hat.clone());
        }
        let audit = tracking_audit(s, &rounds, &ComparatorSequence::new(path), 0.0).unwrap();
        assert_eq!(audit.rounds.len(), 30);
        assert!(audit.rounds.iter().all(|r| r.forecaster_loss == r.comparator_loss));
        assert!(audit.min_residual() >= 0.0);
    }
}
