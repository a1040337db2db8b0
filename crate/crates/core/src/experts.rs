//! Fixed-share aggregation over forecasters that use different dynamics,
//! and covering grids for parametric dynamics families.

use crate::dmd::{ForecasterState, LossRound};
use crate::error::{Error, Result};
use crate::geometry::Vector;

/// Default cap on the number of grid experts.
pub const GRID_BUDGET: u128 = 1_000_000;

/// `N` dynamic mirror descent forecasters with fixed-share weights.
#[derive(Clone, Debug)]
pub struct ExpertPool {
    pub experts: Vec<ForecasterState>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    pub lambda: f64,
    pub eta_r: f64,
}

/// What one pooled round produced.
#[derive(Clone, Debug)]
pub struct PoolOutcome {
    /// Loss of the pooled prediction, before the update.
    pub loss: f64,
    pub expert_losses: Vec<f64>,
}

impl ExpertPool {
    pub fn new(experts: Vec<ForecasterState>, lambda: f64, eta_r: f64) -> Result<Self> {
        let n = experts.len();
        if n == 0 {
            return Err(Error::config("expert pool needs at least one expert"));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1), got {lambda}")));
        }
        if !(eta_r >= 0.0 && eta_r.is_finite()) {
            return Err(Error::config(format!("eta_r must be finite and >= 0, got {eta_r}")));
        }
        let d = experts[0].theta_hat.len();
        let geometry = &experts[0].geometry;
        if experts.iter().any(|e| e.theta_hat.len() != d || &e.geometry != geometry) {
            return Err(Error::config("all experts must share geometry and dimension"));
        }
        Ok(Self {
            experts,
            log_weights: vec![-(n as f64).ln(); n],
            weights: vec![1.0 / n as f64; n],
            lambda,
            eta_r,
        })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Weighted average of the expert predictions.
    pub fn prediction(&self) -> Vector {
        let mut out = Vector::zeros(self.experts[0].theta_hat.len());
        for (w, e) in self.weights.iter().zip(&self.experts) {
            out.axpy(*w, &e.theta_hat, 1.0);
        }
        out
    }

    /// Exponential reweighting followed by mixing with the uniform share.
    pub fn fixed_share_update(&mut self, losses: &[f64]) -> Result<()> {
        let n = self.len();
        if losses.len() != n {
            return Err(Error::input(format!("expected {n} expert losses, got {}", losses.len())));
        }
        if let Some(l) = losses.iter().find(|l| !l.is_finite()) {
            return Err(Error::input(format!("non-finite expert loss {l}")));
        }
        let scaled: Vec<f64> = self
            .log_weights
            .iter()
            .zip(losses)
            .map(|(lw, l)| lw - self.eta_r * l)
            .collect();
        let top = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(Error::Internal("all log weights are -inf".into()));
        }
        let shifted: Vec<f64> = scaled.iter().map(|s| (s - top).exp()).collect();
        let total: f64 = shifted.iter().sum();
        if self.lambda == 0.0 {
            let log_norm = top + total.ln();
            for (lw, s) in self.log_weights.iter_mut().zip(&scaled) {
                *lw = s - log_norm;
            }
            for (w, e) in self.weights.iter_mut().zip(&shifted) {
                *w = e / total;
            }
        } else {
            let share = self.lambda / n as f64;
            for ((w, lw), e) in self.weights.iter_mut().zip(self.log_weights.iter_mut()).zip(&shifted) {
                *w = share + (1.0 - self.lambda) * (e / total);
                *lw = w.ln();
            }
        }
        Ok(())
    }

    /// One pooled round: incur the pooled loss, advance every expert by a
    /// dynamic mirror descent step, then reweight from the expert losses.
    pub fn dfs_step(&mut self, round: &LossRound) -> Result<PoolOutcome> {
        let pooled = self.prediction();
        let loss = self.experts[0].round_loss(round, &pooled);
        if !loss.is_finite() {
            return Err(Error::Internal(format!("non-finite pooled loss at round {}", self.experts[0].t)));
        }
        let expert_losses = self.step_experts(round)?;
        self.fixed_share_update(&expert_losses)?;
        Ok(PoolOutcome { loss, expert_losses })
    }

    #[cfg(feature = "parallel")]
    fn step_experts(&mut self, round: &LossRound) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        self.experts
            .par_iter_mut()
            .map(|e| e.dmd_step(round).map(|o| o.loss))
            .collect()
    }

    #[cfg(not(feature = "parallel"))]
    fn step_experts(&mut self, round: &LossRound) -> Result<Vec<f64>> {
        self.experts.iter_mut().map(|e| e.dmd_step(round).map(|o| o.loss)).collect()
    }
}

/// `lambda = m / (T - 1)` and `eta_r = sqrt(8((m+1) ln N + m ln T + 1) / T)`.
pub fn dfs_hyperparameters(horizon: usize, n: usize, m: usize) -> Result<(f64, f64)> {
    if horizon < 2 || n < 1 || m + 2 > horizon {
        return Err(Error::config(format!(
            "need T >= 2, N >= 1 and 0 <= m <= T - 2 (T = {horizon}, N = {n}, m = {m})"
        )));
    }
    let (t, nf, mf) = (horizon as f64, n as f64, m as f64);
    let lambda = mf / (t - 1.0);
    let eta_r = (8.0 * ((mf + 1.0) * nf.ln() + mf * t.ln() + 1.0) / t).sqrt();
    Ok((lambda, eta_r))
}

/// Per-round record of a pooled run.
#[derive(Clone, Debug, Default)]
pub struct PoolTrace {
    pub losses: Vec<f64>,
    /// Per-expert losses, one row per round.
    pub expert_losses: Vec<Vec<f64>>,
    /// Weights after each round's update, one row per round.
    pub weights: Vec<Vec<f64>>,
    pub predictions: Vec<(usize, Vector)>,
    pub complete: bool,
    pub error: Option<String>,
}

impl PoolTrace {
    pub fn expert_cumulative(&self) -> Vec<f64> {
        let n = self.expert_losses.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for row in &self.expert_losses {
            for (c, l) in out.iter_mut().zip(row) {
                *c += l;
            }
        }
        out
    }
}

/// Runs [`ExpertPool::dfs_step`] over `rounds`, keeping pooled predictions
/// every `stride` rounds.
pub fn run_dfs(
    mut pool: ExpertPool,
    rounds: impl IntoIterator<Item = LossRound>,
    stride: Option<usize>,
) -> (PoolTrace, ExpertPool) {
    let mut trace = PoolTrace { complete: true, ..Default::default() };
    for (i, round) in rounds.into_iter().enumerate() {
        let t = i + 1;
        if let Some(s) = stride.filter(|s| *s > 0) {
            if i % s == 0 {
                trace.predictions.push((t, pool.prediction()));
            }
        }
        match pool.dfs_step(&round) {
            Ok(out) => {
                trace.losses.push(out.loss);
                trace.expert_losses.push(out.expert_losses);
                trace.weights.push(pool.weights().to_vec());
            }
            Err(e) => {
                trace.complete = false;
                trace.error = Some(format!("round {t}: {e}"));
                break;
            }
        }
    }
    (trace, pool)
}

/// A regular grid of `k^n` points covering `[lo, hi]^n` in `l1` radius `T^-gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoveringGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub gamma: f64,
    pub k: usize,
    /// Half-spacing between neighbouring points.
    pub delta: f64,
    pub points: Vec<Vector>,
}

impl CoveringGrid {
    /// Axis coordinates `lo + (2j + 1)(hi - lo) / (2k)`.
    pub fn axis(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        (0..self.k)
            .map(|j| self.lo + (2 * j + 1) as f64 * span / (2 * self.k) as f64)
            .collect()
    }

    /// Smallest `l1` distance from `alpha` to a grid point, and that point's index.
    pub fn nearest(&self, alpha: &Vector) -> (usize, f64) {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - alpha).lp_norm(1)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("grid is non-empty")
    }
}

/// Builds the covering grid with `k = ceil((hi - lo) n T^gamma / 2)` points per axis.
pub fn build_grid(lo: f64, hi: f64, n: usize, horizon: usize, gamma: f64, budget: u128) -> Result<CoveringGrid> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::config(format!("grid box needs finite A_min < A_max, got [{lo}, {hi}]")));
    }
    if n == 0 || horizon == 0 || !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config("grid needs n >= 1, T >= 1 and gamma > 0"));
    }
    let k_real = ((hi - lo) * n as f64 * (horizon as f64).powf(gamma) / 2.0).ceil();
    let k = k_real.max(1.0);
    let required = k.powi(n as i32);
    if !required.is_finite() || required > budget as f64 {
        return Err(Error::Resource {
            what: "covering grid experts".into(),
            required: if required.is_finite() { required as u128 } else { u128::MAX },
            budget,
        });
    }
    let k = k as usize;
    let mut grid = CoveringGrid {
        lo,
        hi,
        n,
        gamma,
        k,
        delta: (hi - lo) / (2 * k) as f64,
        points: Vec::with_capacity(required as usize),
    };
    let axis = grid.axis();
    let mut digits = vec![0usize; n];
    for _ in 0..required as usize {
        grid.points.push(Vector::from_iterator(n, digits.iter().map(|j| axis[*j])));
        for d in digits.iter_mut() {
            *d += 1;
            if *d < k {
                break;
            }
            *d = 0;
        }
    }
    Ok(grid)
}

/// Exponentially weighted averaging (`lambda = 0`, `eta_r = sqrt(2 ln N / T)`)
/// over one forecaster per grid point.
pub fn grid_dfs<F>(
    grid: &CoveringGrid,
    horizon: usize,
    factory: F,
    rounds: impl IntoIterator<Item = LossRound>,
    stride: Option<usize>,
) -> Result<(PoolTrace, ExpertPool)>
where
    F: Fn(&Vector) -> Result<ForecasterState>,
{
    let experts = grid.points.iter().map(&factory).collect::<Result<Vec<_>>>()?;
    let eta_r = (2.0 * (experts.len() as f64).ln() / horizon as f64).sqrt();
    let pool = ExpertPool::new(experts, 0.0, eta_r)?;
    Ok(run_dfs(pool, rounds, stride))
}
