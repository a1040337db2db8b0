//! Exponential families, additive dynamics in the mean parameters, and the
//! joint tracker of the natural parameter and the dynamics parameter.
//!
//! With `mu = grad Z(theta)` the additive model is
//! `Phi_t(theta, alpha) = grad Z*(A_t mu + B_t alpha + c_t)`. Because the
//! mirror step of an exponential-family loss is an affine blend in the mean
//! parameters, predictions made under two different `alpha` differ by the
//! sensitivity matrix `K_t` applied to `alpha - beta`. [`JointState`] uses
//! that to run a projected gradient method on `alpha` alongside the
//! forecaster at the cost of a single prediction per round.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dmd::StepSchedule;
use crate::dynamics::{ComparatorSequence, RegretLedger};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, MirrorGeometry, MirrorMap, Vector, POISSON_RATE_FLOOR};
use crate::loss::SmoothLoss;

/// Which family: the sufficient statistic is the identity in both cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    /// `Z(theta) = <1, exp(theta)>`, `mu = exp(theta)`.
    Poisson,
    /// Unit-variance Gaussian, `Z(theta) = ||theta||^2 / 2`, `mu = theta`.
    Gaussian,
}

/// An exponential family on a box of natural parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentialFamily {
    kind: FamilyKind,
    geometry: MirrorGeometry,
}

/// Default Poisson rate ceiling when none is given.
pub const DEFAULT_RATE_CEILING: f64 = 1e6;

/// Poisson family of dimension `d` with rates in `[POISSON_RATE_FLOOR, 1e6]`.
pub fn poisson_family(d: usize) -> Result<ExponentialFamily> {
    ExponentialFamily::poisson(d, DEFAULT_RATE_CEILING)
}

impl ExponentialFamily {
    pub fn poisson(d: usize, rate_ceiling: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("family dimension must be >= 1"));
        }
        if !(rate_ceiling > POISSON_RATE_FLOOR) {
            return Err(Error::config("rate ceiling must exceed the rate floor"));
        }
        let domain = BoxDomain::uniform(d, POISSON_RATE_FLOOR.ln(), rate_ceiling.ln())?;
        Ok(Self {
            kind: FamilyKind::Poisson,
            geometry: MirrorGeometry::new(MirrorMap::PoissonLogPartition, domain)?,
        })
    }

    pub fn gaussian(domain: BoxDomain) -> Self {
        Self {
            kind: FamilyKind::Gaussian,
            geometry: MirrorGeometry::euclidean(domain),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    /// Bregman geometry induced by the log-partition function.
    pub fn geometry(&self) -> &MirrorGeometry {
        &self.geometry
    }

    pub fn primal_domain(&self) -> &BoxDomain {
        self.geometry.domain()
    }

    pub fn sufficient_statistic(&self, x: &Vector) -> Vector {
        x.clone()
    }

    pub fn log_partition(&self, theta: &Vector) -> f64 {
        self.geometry.psi(theta)
    }

    /// `mu = grad Z(theta)`
    pub fn mean(&self, theta: &Vector) -> Vector {
        self.geometry.grad_psi(theta)
    }

    /// `theta = grad Z*(mu)`, clamped to the primal box.
    pub fn natural(&self, mu: &Vector) -> Vector {
        self.geometry.grad_psi_inverse(mu)
    }

    /// Whether `mu` lies inside the image of the primal box (no clamping needed).
    pub fn dual_interior(&self, mu: &Vector) -> bool {
        let dom = self.primal_domain();
        mu.iter().zip(dom.lo().iter().zip(dom.hi().iter())).all(|(m, (l, h))| match self.kind {
            FamilyKind::Poisson => *m >= l.exp() && *m <= h.exp(),
            FamilyKind::Gaussian => *m >= *l && *m <= *h,
        })
    }

    /// Negative log-likelihood `Z(theta) - <theta, phi(x)>`.
    pub fn loss(&self, theta: &Vector, x: &Vector) -> f64 {
        self.log_partition(theta) - theta.dot(&self.sufficient_statistic(x))
    }

    /// The same loss written in mean parameters.
    pub fn dual_loss(&self, mu: &Vector, x: &Vector) -> f64 {
        match self.kind {
            FamilyKind::Poisson => mu
                .iter()
                .zip(x.iter())
                .map(|(m, xk)| m - xk * m.max(POISSON_RATE_FLOOR).ln())
                .sum(),
            FamilyKind::Gaussian => 0.5 * mu.norm_squared() - mu.dot(x),
        }
    }

    pub fn dual_loss_gradient(&self, mu: &Vector, x: &Vector) -> Vector {
        match self.kind {
            FamilyKind::Poisson => mu.zip_map(x, |m, xk| 1.0 - xk / m.max(POISSON_RATE_FLOOR)),
            FamilyKind::Gaussian => mu - x,
        }
    }

    /// The round loss as a [`SmoothLoss`] for the generic forecasters.
    pub fn round_loss(&self, x: &Vector) -> Arc<dyn SmoothLoss> {
        Arc::new(FamilyLoss {
            family: self.clone(),
            stat: self.sufficient_statistic(x),
        })
    }

    /// Smallest eigenvalue of the Hessian of `Z` over the sampled points;
    /// compare against `2H` for the curvature hypothesis of the regret bound.
    pub fn min_curvature<'a>(&self, points: impl IntoIterator<Item = &'a Vector>) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Poisson => points
                .into_iter()
                .flat_map(|p| p.iter().map(|t| t.exp()).collect::<Vec<_>>())
                .fold(f64::INFINITY, f64::min),
        }
    }
}

struct FamilyLoss {
    family: ExponentialFamily,
    stat: Vector,
}

impl SmoothLoss for FamilyLoss {
    fn dim(&self) -> usize {
        self.stat.len()
    }

    fn value(&self, theta: &Vector) -> f64 {
        self.family.log_partition(theta) - theta.dot(&self.stat)
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        match self.family.kind {
            // same arithmetic as PoissonLoss, so forecasters agree bitwise
            FamilyKind::Poisson => theta.zip_map(&self.stat, |t, x| t.exp() - x),
            FamilyKind::Gaussian => theta - &self.stat,
        }
    }
}

/// How the dynamics parameter enters the mean update.
#[derive(Clone, Debug, PartialEq)]
pub enum InputMatrix {
    /// A fixed `d x n` matrix.
    Fixed(DMatrix<f64>),
    /// `B_t = x_t^T (kron) I_d`, so that `B_t vec(W) = W x_t` with `vec`
    /// stacking columns. The parameter dimension is `d^2`.
    ObservationKron,
}

/// `A_t mu + B_t alpha + c_t`, constant in `t` except for a data-driven `B_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveDynamics {
    pub a: DMatrix<f64>,
    pub b: InputMatrix,
    pub c: Vector,
}

impl AdditiveDynamics {
    pub fn new(a: DMatrix<f64>, b: InputMatrix, c: Vector) -> Result<Self> {
        let d = c.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::config("A must be d x d"));
        }
        if let InputMatrix::Fixed(b) = &b {
            if b.nrows() != d {
                return Err(Error::config("B must have d rows"));
            }
        }
        Ok(Self { a, b, c })
    }

    /// The self-exciting rate recursion `mu' = tau mu + W x + (1 - tau) base`
    /// with `alpha = vec(W)`.
    pub fn self_exciting(tau: f64, base: &Vector) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::config("memory tau must lie in [0, 1)"));
        }
        let d = base.len();
        Self::new(
            DMatrix::identity(d, d) * tau,
            InputMatrix::ObservationKron,
            base * (1.0 - tau),
        )
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn param_dim(&self) -> usize {
        match &self.b {
            InputMatrix::Fixed(b) => b.ncols(),
            InputMatrix::ObservationKron => self.dim() * self.dim(),
        }
    }

    pub fn is_data_dependent(&self) -> bool {
        matches!(self.b, InputMatrix::ObservationKron)
    }

    /// `B_t` as a dense matrix.
    pub fn b_matrix(&self, x: &Vector) -> DMatrix<f64> {
        match &self.b {
            InputMatrix::Fixed(b) => b.clone(),
            InputMatrix::ObservationKron => {
                let d = self.dim();
                let mut out = DMatrix::zeros(d, d * d);
                for j in 0..d {
                    for i in 0..d {
                        out[(i, j * d + i)] = x[j];
                    }
                }
                out
            }
        }
    }

    /// `B_t alpha` without forming `B_t`.
    pub fn b_times(&self, alpha: &Vector, x: &Vector) -> Vector {
        match &self.b {
            InputMatrix::Fixed(b) => b * alpha,
            InputMatrix::ObservationKron => {
                let d = self.dim();
                DMatrix::from_column_slice(d, d, alpha.as_slice()) * x
            }
        }
    }

    fn check(&self, fam: &ExponentialFamily, alpha: &Vector, x: &Vector) -> Result<()> {
        if fam.dim() != self.dim() {
            return Err(Error::input("dynamics and family dimensions differ"));
        }
        if alpha.len() != self.param_dim() {
            return Err(Error::input(format!(
                "dynamics parameter has dimension {}, expected {}",
                alpha.len(),
                self.param_dim()
            )));
        }
        if self.is_data_dependent() && x.len() != self.dim() {
            return Err(Error::input("observation dimension differs from the family"));
        }
        Ok(())
    }
}

/// `grad Z*(A grad Z(theta) + B_t alpha + c)`. The second value reports
/// whether the dual point had to be clamped.
pub fn additive_apply(
    fam: &ExponentialFamily,
    dynamics: &AdditiveDynamics,
    theta: &Vector,
    alpha: &Vector,
    x: &Vector,
) -> Result<(Vector, bool)> {
    dynamics.check(fam, alpha, x)?;
    if theta.len() != fam.dim() {
        return Err(Error::input("theta dimension differs from the family"));
    }
    let mu = fam.mean(theta);
    let next = &dynamics.a * mu + dynamics.b_times(alpha, x) + &dynamics.c;
    let clamped = !fam.dual_interior(&next);
    Ok((fam.natural(&next), clamped))
}

/// `K_{t+1} = (1 - eta_t) A_t K_t + B_t`
pub fn k_update(k: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    a * k * (1.0 - eta) + b
}

/// `mu_{alpha,t} = mu_{beta,t} + K_t (alpha - beta)`
pub fn sensitivity_transport(mu_beta: &Vector, k: &DMatrix<f64>, alpha: &Vector, beta: &Vector) -> Vector {
    mu_beta + k * (alpha - beta)
}

/// Signature of the sensitivity recursion, so diagnostics can run against a
/// substituted implementation.
pub type KUpdateFn = fn(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, f64) -> DMatrix<f64>;

/// State of the joint tracker.
#[derive(Clone, Debug)]
pub struct JointState {
    pub theta_hat: Vector,
    pub mu_hat: Vector,
    pub alpha_hat: Vector,
    pub k: DMatrix<f64>,
    /// Next round index, starting at 1.
    pub t: usize,
    pub eta: StepSchedule,
    pub rho: StepSchedule,
    pub param_box: BoxDomain,
}

/// Result of one joint round.
#[derive(Clone, Debug)]
pub struct JointOutcome {
    pub loss: f64,
    /// Some dual point left the family's box and was clamped; the transport
    /// identity is no longer exact after such a round.
    pub clamped: bool,
}

impl JointState {
    /// Starts at `alpha = 0` (projected onto the box) and `K = 0`.
    pub fn new(
        fam: &ExponentialFamily,
        dynamics: &AdditiveDynamics,
        theta0: Vector,
        param_box: BoxDomain,
        eta: StepSchedule,
        rho: StepSchedule,
    ) -> Result<Self> {
        fam.primal_domain().check(&theta0, "initial prediction")?;
        if dynamics.dim() != fam.dim() {
            return Err(Error::config("dynamics and family dimensions differ"));
        }
        let n = dynamics.param_dim();
        if param_box.dim() != n {
            return Err(Error::config("parameter box dimension differs from the dynamics"));
        }
        if eta.eta0 > 1.0 {
            return Err(Error::config("the mean-parameter blend needs eta_0 <= 1"));
        }
        let mu_hat = fam.mean(&theta0);
        Ok(Self {
            theta_hat: theta0,
            mu_hat,
            alpha_hat: param_box.clip(&Vector::zeros(n)),
            k: DMatrix::zeros(fam.dim(), n),
            t: 1,
            eta,
            rho,
            param_box,
        })
    }

    /// One round on observation `x`.
    pub fn step(&mut self, fam: &ExponentialFamily, dynamics: &AdditiveDynamics, x: &Vector) -> Result<JointOutcome> {
        self.step_with(fam, dynamics, x, k_update)
    }

    pub(crate) fn step_with(
        &mut self,
        fam: &ExponentialFamily,
        dynamics: &AdditiveDynamics,
        x: &Vector,
        k_rule: KUpdateFn,
    ) -> Result<JointOutcome> {
        if x.len() != fam.dim() {
            return Err(Error::input("observation dimension differs from the family"));
        }
        let eta = self.eta.at(self.t);
        let rho = self.rho.at(self.t);
        let loss = fam.loss(&self.theta_hat, x);

        // gradient of g_t(alpha) = l~_t(mu_hat + K (alpha - alpha_hat)) at alpha_hat
        let grad_alpha = self.k.tr_mul(&fam.dual_loss_gradient(&self.mu_hat, x));
        let alpha_next = self.param_box.clip(&(&self.alpha_hat - grad_alpha * rho));

        let mu_shift = sensitivity_transport(&self.mu_hat, &self.k, &alpha_next, &self.alpha_hat);
        let stat = fam.sufficient_statistic(x);
        let blended = &mu_shift - (&mu_shift - &stat).scale(eta);
        let mut clamped = !fam.dual_interior(&blended);
        let theta_tilde = fam.natural(&blended);
        let (theta_next, c2) = additive_apply(fam, dynamics, &theta_tilde, &alpha_next, x)?;
        clamped |= c2;

        self.k = k_rule(&self.k, &dynamics.a, &dynamics.b_matrix(x), eta);
        self.theta_hat = theta_next;
        self.mu_hat = fam.mean(&self.theta_hat);
        self.alpha_hat = alpha_next;
        self.t += 1;
        Ok(JointOutcome { loss, clamped })
    }
}

/// Per-round record of a joint run.
#[derive(Clone, Debug, Default)]
pub struct JointTrace {
    pub losses: Vec<f64>,
    /// `||alpha_hat - alpha*|| / ||alpha*||` per round, when the truth is known.
    pub alpha_errors: Vec<f64>,
    pub clamped_rounds: Vec<usize>,
    pub ledger: Option<RegretLedger>,
    pub final_alpha: Vector,
    pub complete: bool,
    pub error: Option<String>,
}

/// Runs the joint tracker over `observations`. The parameter error series is
/// recorded against `alpha_true` and regret against `comparator` when given.
pub fn run_joint(
    mut state: JointState,
    fam: &ExponentialFamily,
    dynamics: &AdditiveDynamics,
    observations: impl IntoIterator<Item = Vector>,
    alpha_true: Option<&Vector>,
    comparator: Option<&ComparatorSequence>,
) -> JointTrace {
    let mut trace = JointTrace {
        ledger: comparator.map(|_| RegretLedger::default()),
        final_alpha: state.alpha_hat.clone(),
        complete: true,
        ..Default::default()
    };
    let truth_norm = alpha_true.map(|a| a.norm().max(f64::MIN_POSITIVE));
    for x in observations {
        let t = state.t;
        let comparator_loss = comparator.and_then(|c| c.get(t)).map(|theta| fam.loss(theta, &x));
        match state.step(fam, dynamics, &x) {
            Ok(out) => {
                trace.losses.push(out.loss);
                if out.clamped {
                    trace.clamped_rounds.push(t);
                }
                if let (Some(truth), Some(norm)) = (alpha_true, truth_norm) {
                    trace.alpha_errors.push((&state.alpha_hat - truth).norm() / norm);
                }
                if let (Some(ledger), Some(cl)) = (trace.ledger.as_mut(), comparator_loss) {
                    // t is strictly increasing by construction
                    ledger.record_round(t, out.loss, cl).expect("monotone rounds");
                }
            }
            Err(e) => {
                trace.complete = false;
                trace.error = Some(format!("round {t}: {e}"));
                break;
            }
        }
    }
    trace.final_alpha = state.alpha_hat.clone();
    trace
}
