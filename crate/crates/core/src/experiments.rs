//! The tracking experiments: texture anomalies, compressive video with
//! switching motion, a self-exciting network, and a rotating toy stream.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dmd::{run_forecaster, ForecasterState, ForecasterTrace, LossRound, StepSchedule, UpdateRule};
use crate::dynamics::{ComparatorSequence, DynamicsModel, PixelShift};
use crate::error::{Error, Result};
use crate::experts::{build_grid, dfs_hyperparameters, grid_dfs, run_dfs, ExpertPool, PoolTrace, GRID_BUDGET};
use crate::expfam::{run_joint, AdditiveDynamics, ExponentialFamily, JointState};
use crate::geometry::{BoxDomain, MirrorGeometry, Regularizer, Vector};
use crate::loss::{LeastSquaresLoss, MaskedLinearLoss, QuadraticLoss, SmoothLoss};
use crate::rng::substream;
use crate::simulators::{
    cs_stream, hawkes_stream, texture_stream, CSVideoWorld, HawkesConfig, HawkesWorld, TextureConfig, TextureWorld,
    VideoConfig,
};
use crate::trace::{interval_mean, mean, AlgorithmTrace, ExperimentBundle};

fn cumulative(forecaster: &[f64], comparator: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    forecaster
        .iter()
        .zip(comparator)
        .map(|(f, c)| {
            acc += f - c;
            acc
        })
        .collect()
}

fn from_forecaster(name: &str, trace: ForecasterTrace) -> AlgorithmTrace {
    AlgorithmTrace {
        name: name.to_string(),
        regret: trace.ledger.as_ref().map(|l| l.regret_series()),
        losses: trace.losses,
        predictions: trace.predictions,
        complete: trace.complete,
        error: trace.error,
        ..Default::default()
    }
}

fn bounded(d: usize, lo: f64, hi: f64) -> Result<MirrorGeometry> {
    Ok(MirrorGeometry::euclidean(BoxDomain::uniform(d, lo, hi)?))
}

/// Inclusive windows of the same length right before and after each
/// interval, clipped to `[1, horizon]` and excluding interval rounds.
pub fn flanking_rounds(intervals: &[[usize; 2]], horizon: usize) -> Vec<usize> {
    let inside = |t: usize| intervals.iter().any(|[s, e]| (*s..=*e).contains(&t));
    let mut out = Vec::new();
    for [s, e] in intervals {
        let len = e - s + 1;
        let before = s.saturating_sub(len).max(1)..*s;
        let after = (e + 1)..(e + len + 1).min(horizon + 1);
        out.extend(before.chain(after).filter(|t| !inside(*t)));
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn mean_at(losses: &[f64], rounds: impl IntoIterator<Item = usize>) -> f64 {
    let picked: Vec<f64> = rounds.into_iter().filter_map(|t| losses.get(t - 1).copied()).collect();
    mean(&picked)
}

/// Dynamic mirror descent with the normal transition matrix against plain
/// mirror descent, both on the masked observation loss of the normal
/// parameters.
pub fn experiment_a(cfg: &TextureConfig, seed: u64, stride: Option<usize>) -> Result<ExperimentBundle> {
    let world = TextureWorld::generate(cfg, seed)?;
    let frames: Vec<_> = texture_stream(&world, cfg.horizon, seed)?.collect();
    let emission = Arc::new(world.normal.c.clone());
    let offset = Arc::new(world.c0.clone());
    let rounds: Vec<LossRound> = frames
        .iter()
        .map(|f| {
            let loss: Arc<dyn SmoothLoss> = Arc::new(MaskedLinearLoss {
                emission: emission.clone(),
                offset: offset.clone(),
                observation: f.x.clone(),
                observed: f.observed.clone(),
            });
            LossRound::new(f.x.clone(), loss)
        })
        .collect();
    let comparator = ComparatorSequence::new(frames.iter().map(|f| f.theta.clone()).collect());
    let geometry = bounded(cfg.p, -cfg.bound, cfg.bound)?;
    let schedule = StepSchedule::new(cfg.eta0)?;
    let make = |dynamics| {
        ForecasterState::new(geometry.clone(), dynamics, Regularizer::None, schedule, Vector::zeros(cfg.p))
    };
    let dmd = run_forecaster(
        make(DynamicsModel::Linear(world.normal.a.clone()))?,
        UpdateRule::Dmd,
        rounds.clone(),
        Some(&comparator),
        stride,
    );
    let md = run_forecaster(make(DynamicsModel::Identity)?, UpdateRule::Md, rounds, Some(&comparator), stride);

    let horizon = cfg.horizon;
    let anomalous: Vec<usize> = (1..=horizon).filter(|t| world.in_anomaly(*t)).collect();
    let normal: Vec<usize> = (1..=horizon).filter(|t| !world.in_anomaly(*t)).collect();
    let flank = flanking_rounds(&cfg.anomalies, horizon);
    let mut summary = Vec::new();
    for (name, tr) in [("dmd", &dmd), ("md", &md)] {
        let inside = mean_at(&tr.losses, anomalous.iter().copied());
        let around = mean_at(&tr.losses, flank.iter().copied());
        summary.push((format!("{name}.anomaly_mean"), inside));
        summary.push((format!("{name}.flank_mean"), around));
        summary.push((format!("{name}.normal_mean"), mean_at(&tr.losses, normal.iter().copied())));
        summary.push((format!("{name}.anomaly_ratio"), inside / around));
    }
    let intervals = cfg
        .anomalies
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("anomaly{}", i + 1), *r))
        .collect();
    Ok(ExperimentBundle {
        experiment: "a".into(),
        seed,
        traces: vec![from_forecaster("dmd", dmd), from_forecaster("md", md)],
        intervals,
        summary,
    })
}

/// Name and dynamics of each candidate motion model: index 0 is "no motion",
/// index `i >= 1` moves one pixel at angle `2 pi (i - 1) / directions`.
pub fn motion_models(rows: usize, cols: usize, directions: usize) -> Vec<(String, DynamicsModel)> {
    let mut out = vec![("comid".to_string(), DynamicsModel::Identity)];
    for i in 0..directions {
        let angle = 2.0 * PI * i as f64 / directions as f64;
        out.push((
            format!("dmd_dir{i}"),
            DynamicsModel::PixelShift(PixelShift::at_angle(rows, cols, angle)),
        ));
    }
    out
}

/// `(lambda, eta_r)` for the video pool, honouring explicit overrides.
pub fn video_share_parameters(cfg: &VideoConfig) -> Result<(f64, f64)> {
    let (lambda, eta_r) = dfs_hyperparameters(cfg.horizon, cfg.directions + 1, cfg.switches)?;
    Ok((cfg.lambda.unwrap_or(lambda), cfg.eta_r.unwrap_or(eta_r)))
}

/// Fixed-share aggregation over the motion models on compressive
/// measurements of a scene that moves up and then right.
pub fn experiment_b(cfg: &VideoConfig, seed: u64, stride: Option<usize>) -> Result<ExperimentBundle> {
    if cfg.noise_var <= 0.0 {
        return Err(Error::config("video: the loss needs noise_var > 0"));
    }
    let world = CSVideoWorld::generate(cfg, seed)?;
    let d = world.dim();
    let frames: Vec<_> = cs_stream(&world, cfg.horizon, seed).collect();
    let scale = 1.0 / (2.0 * cfg.noise_var * d as f64);
    let regularizer = Regularizer::L1(cfg.tau_reg);
    let rounds: Vec<LossRound> = frames
        .iter()
        .map(|f| {
            let loss: Arc<dyn SmoothLoss> = Arc::new(LeastSquaresLoss {
                sensing: f.sensing.clone(),
                observation: f.x.clone(),
                scale,
            });
            LossRound::new(f.x.clone(), loss)
        })
        .collect();
    let comparator_losses: Vec<f64> = rounds
        .iter()
        .zip(&frames)
        .map(|(r, f)| r.loss.value(&f.theta) + regularizer.value(&f.theta))
        .collect();

    let geometry = bounded(d, 0.0, 1.0)?;
    let schedule = StepSchedule::new(cfg.eta0)?;
    let models = motion_models(cfg.rows, cfg.cols, cfg.directions);
    let experts = models
        .iter()
        .map(|(_, m)| ForecasterState::new(geometry.clone(), m.clone(), regularizer, schedule, Vector::zeros(d)))
        .collect::<Result<Vec<_>>>()?;
    let (lambda, eta_r) = video_share_parameters(cfg)?;
    let (pool, _) = run_dfs(ExpertPool::new(experts, lambda, eta_r)?, rounds, stride);

    let mut summary = vec![("lambda".to_string(), lambda), ("eta_r".to_string(), eta_r)];
    summary.extend(pool_summary(&pool, &comparator_losses, 1, cfg.switch_at));
    let mut traces = vec![pool_trace("dfs", &pool, &comparator_losses)];
    for (i, (name, _)) in models.iter().enumerate() {
        let losses: Vec<f64> = pool.expert_losses.iter().map(|row| row[i]).collect();
        let mut t = AlgorithmTrace::new(name.clone(), losses);
        t.regret = Some(cumulative(&t.losses, &comparator_losses));
        t.complete = pool.complete;
        traces.push(t);
    }
    Ok(ExperimentBundle {
        experiment: "b".into(),
        seed,
        traces,
        intervals: vec![
            ("before_switch".into(), [1, cfg.switch_at]),
            ("after_switch".into(), [cfg.switch_at + 1, cfg.horizon]),
        ],
        summary,
    })
}

fn pool_trace(name: &str, pool: &PoolTrace, comparator_losses: &[f64]) -> AlgorithmTrace {
    AlgorithmTrace {
        name: name.into(),
        losses: pool.losses.clone(),
        regret: Some(cumulative(&pool.losses, comparator_losses)),
        weights: Some(pool.weights.clone()),
        predictions: pool.predictions.clone(),
        complete: pool.complete,
        error: pool.error.clone(),
        ..Default::default()
    }
}

/// Rounds after `switch_at` until expert `target` first holds more than half
/// of the weight (NaN when it never does), and pool versus best expert.
fn pool_summary(pool: &PoolTrace, comparator_losses: &[f64], target: usize, switch_at: usize) -> Vec<(String, f64)> {
    let recovery = pool
        .weights
        .iter()
        .enumerate()
        .skip(switch_at)
        .find(|(_, w)| w[target] > 0.5)
        .map_or(f64::NAN, |(i, _)| (i + 1 - switch_at) as f64);
    let cumulative_pool: f64 = pool.losses.iter().sum();
    let experts = pool.expert_cumulative();
    let (best, best_loss) = experts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or((f64::NAN, f64::NAN), |(i, l)| (i as f64, *l));
    vec![
        ("recovery_rounds".into(), recovery),
        ("dfs.cumulative_loss".into(), cumulative_pool),
        ("best_expert".into(), best),
        ("best_expert.cumulative_loss".into(), best_loss),
        ("dfs_over_best".into(), cumulative_pool / best_loss),
        ("comparator.cumulative_loss".into(), comparator_losses.iter().sum()),
    ]
}

/// Known-network dynamic mirror descent, plain mirror descent and the joint
/// rate and network tracker on a self-exciting Poisson network.
pub fn experiment_c(cfg: &HawkesConfig, seed: u64, stride: Option<usize>) -> Result<ExperimentBundle> {
    let world = HawkesWorld::generate(cfg, seed)?;
    experiment_c_with(cfg, &world, seed, stride)
}

/// [`experiment_c`] on a given world.
pub fn experiment_c_with(
    cfg: &HawkesConfig,
    world: &HawkesWorld,
    seed: u64,
    stride: Option<usize>,
) -> Result<ExperimentBundle> {
    let d = world.dim();
    let frames: Vec<_> = hawkes_stream(world, cfg.horizon, seed).collect();
    let family = ExponentialFamily::poisson(d, cfg.rate_ceiling)?;
    let dynamics = AdditiveDynamics::self_exciting(cfg.tau, &world.base)?;
    let theta0 = family.natural(&world.base);
    let eta = StepSchedule::new(cfg.eta0)?;
    let rho = StepSchedule::new(cfg.rho0)?;
    let comparator = ComparatorSequence::new(frames.iter().map(|f| family.natural(&f.mu)).collect());
    let rounds: Vec<LossRound> = frames
        .iter()
        .map(|f| LossRound::new(f.x.clone(), family.round_loss(&f.x)))
        .collect();
    let geometry = family.geometry().clone();
    let known = DynamicsModel::Additive {
        family: family.clone(),
        dynamics: dynamics.clone(),
        alpha: world.alpha(),
    };
    let make = |m| ForecasterState::new(geometry.clone(), m, Regularizer::None, eta, theta0.clone());
    let dmd = run_forecaster(make(known)?, UpdateRule::Dmd, rounds.clone(), Some(&comparator), stride);
    let md = run_forecaster(make(DynamicsModel::Identity)?, UpdateRule::Md, rounds, Some(&comparator), stride);

    let param_box = BoxDomain::uniform(d * d, 0.0, cfg.w_max)?;
    let joint_state = JointState::new(&family, &dynamics, theta0.clone(), param_box, eta, rho)?;
    let truth = world.alpha();
    let joint = run_joint(
        joint_state,
        &family,
        &dynamics,
        frames.iter().map(|f| f.x.clone()),
        Some(&truth),
        Some(&comparator),
    );

    let horizon = frames.len();
    let tail = [horizon - horizon / 10 + 1, horizon];
    let mut summary = Vec::new();
    let (dmd_tail, md_tail, joint_tail) = (
        interval_mean(&dmd.losses, tail),
        interval_mean(&md.losses, tail),
        interval_mean(&joint.losses, tail),
    );
    summary.push(("dmd.trailing_mean".into(), dmd_tail));
    summary.push(("md.trailing_mean".into(), md_tail));
    summary.push(("alg3.trailing_mean".into(), joint_tail));
    summary.push(("alg3_vs_dmd".into(), (joint_tail - dmd_tail) / dmd_tail.abs()));
    let third = horizon / 3;
    for (i, name) in ["first", "second", "last"].iter().enumerate() {
        let range = [i * third + 1, if i == 2 { horizon } else { (i + 1) * third }];
        summary.push((format!("alpha_error.{name}_third"), interval_mean(&joint.alpha_errors, range)));
    }
    summary.push((
        "alpha_error.final".into(),
        joint.alpha_errors.last().copied().unwrap_or(f64::NAN),
    ));
    summary.push(("alg3.clamped_rounds".into(), joint.clamped_rounds.len() as f64));

    let alg3 = AlgorithmTrace {
        name: "alg3".into(),
        regret: joint.ledger.as_ref().map(|l| l.regret_series()),
        losses: joint.losses,
        alpha_error: Some(joint.alpha_errors),
        complete: joint.complete,
        error: joint.error,
        ..Default::default()
    };
    Ok(ExperimentBundle {
        experiment: "c".into(),
        seed,
        traces: vec![from_forecaster("dmd", dmd), from_forecaster("md", md), alg3],
        intervals: vec![("trailing".into(), tail)],
        summary,
    })
}

/// A noisy point rotating in the plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CustomConfig {
    pub horizon: usize,
    pub angle: f64,
    pub radius: f64,
    pub noise: f64,
    pub eta0: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub gamma: f64,
    pub grid_budget: u64,
}

impl Default for CustomConfig {
    fn default() -> Self {
        Self {
            horizon: 500,
            angle: 0.3,
            radius: 2.0,
            noise: 0.1,
            eta0: 1.0,
            grid_lo: 0.0,
            grid_hi: 1.0,
            gamma: 0.5,
            grid_budget: GRID_BUDGET as u64,
        }
    }
}

impl CustomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("custom: horizon must be >= 1"));
        }
        if !(self.radius > 0.0 && self.noise >= 0.0 && self.eta0 > 0.0) {
            return Err(Error::config("custom: need radius > 0, noise >= 0 and eta0 > 0"));
        }
        if !(self.grid_hi > self.grid_lo && self.gamma > 0.0) {
            return Err(Error::config("custom: need grid_lo < grid_hi and gamma > 0"));
        }
        Ok(())
    }
}

pub fn rotation(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Dynamic mirror descent with the true angle, mirror descent, and
/// exponential weighting over a covering grid of angles.
pub fn experiment_custom(cfg: &CustomConfig, seed: u64, stride: Option<usize>) -> Result<ExperimentBundle> {
    cfg.validate()?;
    let mut rng = substream(seed, "custom/stream");
    let truth = rotation(cfg.angle);
    let mut theta = Vector::from_vec(vec![cfg.radius, 0.0]);
    let mut thetas = Vec::with_capacity(cfg.horizon);
    let mut rounds = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let noise = Vector::from_fn(2, |_, _| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal));
        let x = &theta + noise * cfg.noise;
        rounds.push(LossRound::new(x.clone(), Arc::new(QuadraticLoss::new(x)) as Arc<dyn SmoothLoss>));
        thetas.push(theta.clone());
        theta = &truth * &theta;
    }
    let comparator_losses: Vec<f64> = rounds.iter().zip(&thetas).map(|(r, t)| r.loss.value(t)).collect();
    let comparator = ComparatorSequence::new(thetas);
    let bound = 2.0 * cfg.radius + 1.0;
    let geometry = bounded(2, -bound, bound)?;
    let schedule = StepSchedule::new(cfg.eta0)?;
    let make = |angle: f64| {
        ForecasterState::new(
            geometry.clone(),
            DynamicsModel::Linear(rotation(angle)),
            Regularizer::None,
            schedule,
            Vector::zeros(2),
        )
    };
    let dmd = run_forecaster(make(cfg.angle)?, UpdateRule::Dmd, rounds.clone(), Some(&comparator), stride);
    let md_state = ForecasterState::new(geometry.clone(), DynamicsModel::Identity, Regularizer::None, schedule, Vector::zeros(2))?;
    let md = run_forecaster(md_state, UpdateRule::Md, rounds.clone(), Some(&comparator), stride);
    let grid = build_grid(cfg.grid_lo, cfg.grid_hi, 1, cfg.horizon, cfg.gamma, cfg.grid_budget as u128)?;
    let (pool, _) = grid_dfs(&grid, cfg.horizon, |a: &Vector| make(a[0]), rounds, stride)?;
    let nearest = grid.nearest(&Vector::from_element(1, cfg.angle)).0;
    let final_weights = pool.weights.last().cloned().unwrap_or_default();
    let best = (0..final_weights.len())
        .max_by(|a, b| final_weights[*a].total_cmp(&final_weights[*b]))
        .map_or(f64::NAN, |i| grid.points[i][0]);
    let summary = vec![
        ("grid.k".into(), grid.k as f64),
        ("grid.nearest_angle".into(), grid.points[nearest][0]),
        ("grid.top_weight_angle".into(), best),
        ("dmd.cumulative_loss".into(), dmd.losses.iter().sum()),
        ("md.cumulative_loss".into(), md.losses.iter().sum()),
        ("grid_dfs.cumulative_loss".into(), pool.losses.iter().sum()),
    ];
    Ok(ExperimentBundle {
        experiment: "custom".into(),
        seed,
        traces: vec![
            from_forecaster("dmd", dmd),
            from_forecaster("md", md),
            pool_trace("grid_dfs", &pool, &comparator_losses),
        ],
        intervals: Vec::new(),
        summary,
    })
}
