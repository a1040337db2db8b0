//! Numerical invariant suites with machine-readable results.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::dmd::{tracking_audit, ForecasterState, LossRound, StepSchedule};
use crate::dynamics::{ComparatorSequence, DynamicsModel, PixelShift};
use crate::error::Result;
use crate::experts::{build_grid, ExpertPool, GRID_BUDGET};
use crate::expfam::{k_update, poisson_family, AdditiveDynamics, KUpdateFn};
use crate::geometry::{BoxDomain, MirrorGeometry, MirrorMap, Regularizer, Vector};
use crate::loss::{PoissonLoss, QuadraticLoss, SmoothLoss};
use crate::rng::{substream, StreamRng};
use crate::simulators::{random_orthogonal, spectral_norm};

pub const SUITES: [&str; 5] = ["geometry", "dynamics", "dmd", "expfam", "experts"];

/// Outcome of one invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{} {} worst={:e} tol={:e}",
            self.suite,
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.worst,
            self.tolerance
        )
    }
}

/// `worst <= tolerance`.
fn at_most(suite: &'static str, name: &'static str, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        suite,
        name,
        passed: worst <= tolerance,
        worst,
        tolerance,
    }
}

/// `worst >= tolerance`.
fn at_least(suite: &'static str, name: &'static str, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        suite,
        name,
        passed: worst >= tolerance,
        worst,
        tolerance,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Sensitivity recursion under test.
    pub k_rule: KUpdateFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 20240601, k_rule: k_update }
    }
}

/// Runs the named suites (all when `suites` is empty).
pub fn verify(suites: &[String], opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let selected = |s: &str| suites.is_empty() || suites.iter().any(|x| x == s);
    let mut out = Vec::new();
    if selected("geometry") {
        out.extend(geometry_suite(opts.seed)?);
    }
    if selected("dynamics") {
        out.extend(dynamics_suite(opts.seed)?);
    }
    if selected("dmd") {
        out.extend(dmd_suite(opts.seed)?);
    }
    if selected("expfam") {
        out.push(lemma1_transport(opts.seed, 20, 15, opts.k_rule)?);
    }
    if selected("experts") {
        out.extend(experts_suite(opts.seed)?);
    }
    Ok(out)
}

fn uniform_in(rng: &mut StreamRng, domain: &BoxDomain) -> Vector {
    let (lo, hi) = domain.sampling_bounds();
    Vector::from_fn(lo.len(), |k, _| rng.random_range(lo[k]..=hi[k]))
}

fn geometries(d: usize) -> Result<Vec<MirrorGeometry>> {
    Ok(vec![
        MirrorGeometry::euclidean(BoxDomain::uniform(d, -3.0, 3.0)?),
        MirrorGeometry::new(MirrorMap::PoissonLogPartition, BoxDomain::uniform(d, -4.0, 1.6)?)?,
    ])
}

fn geometry_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = substream(seed, "verify/geometry");
    let mut identity = 0.0f64;
    let mut lower = f64::INFINITY;
    let mut cosines = 0.0f64;
    for geom in geometries(4)? {
        let sigma = geom.sigma();
        for _ in 0..1000 {
            let a = uniform_in(&mut rng, geom.domain());
            let b = uniform_in(&mut rng, geom.domain());
            let c = uniform_in(&mut rng, geom.domain());
            identity = identity.max(geom.bregman(&a, &a)?.abs());
            let dab = geom.bregman(&a, &b)?;
            lower = lower.min(dab - 0.5 * sigma * (&a - &b).norm_squared());
            let res = geom.law_of_cosines_residual(&a, &b, &c)?;
            cosines = cosines.max(res.abs() / (1.0 + dab.abs()));
        }
    }
    let poisson = &geometries(4)?[1];
    let mut inversion = 0.0f64;
    for _ in 0..1000 {
        let theta = uniform_in(&mut rng, poisson.domain());
        let back = poisson.grad_psi_inverse(&poisson.grad_psi(&theta));
        inversion = inversion.max((back - theta).amax());
    }
    Ok(vec![
        at_most("geometry", "bregman_self", identity, 1e-10),
        at_least("geometry", "bregman_strong_convexity", lower, -1e-10),
        at_most("geometry", "law_of_cosines", cosines, 1e-8),
        at_most("geometry", "dual_inversion", inversion, 1e-9),
    ])
}

fn dynamics_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = substream(seed, "verify/dynamics");
    let geom = MirrorGeometry::euclidean(BoxDomain::uniform(36, 0.0, 1.0)?);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..8 {
        let model = DynamicsModel::PixelShift(PixelShift::at_angle(6, 6, i as f64 * std::f64::consts::FRAC_PI_4));
        worst = worst.max(model.distortion_diagnostic(&geom, 1, &[], 200, &mut rng)?);
    }
    let rot = DynamicsModel::Linear(random_orthogonal(&mut rng, 36) * 0.9);
    worst = worst.max(rot.distortion_diagnostic(&geom, 1, &[], 200, &mut rng)?);
    Ok(vec![at_most("dynamics", "contraction", worst, 1e-12)])
}

fn dmd_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = substream(seed, "verify/dmd");
    let mut mismatches = 0.0;
    for _ in 0..10 {
        let d = rng.random_range(1..6);
        let domain = BoxDomain::uniform(d, -2.0, 2.0)?;
        let reg = if rng.random_bool(0.5) {
            Regularizer::L1(rng.random_range(0.0..0.3))
        } else {
            Regularizer::None
        };
        let mut a = ForecasterState::new(
            MirrorGeometry::euclidean(domain.clone()),
            DynamicsModel::Identity,
            reg,
            StepSchedule::new(rng.random_range(0.1..2.0))?,
            uniform_in(&mut rng, &domain),
        )?;
        let mut b = a.clone();
        for _ in 0..50 {
            let round = quad_round(Vector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)));
            a.dmd_step(&round)?;
            b.comid_step(&round)?;
            if a.theta_hat != b.theta_hat {
                mismatches += 1.0;
            }
        }
    }
    let mut min_residual = f64::INFINITY;
    let mut outside = 0.0;
    for run in 0..20 {
        let audit = lemma2_run(&mut rng, run, 200)?;
        min_residual = min_residual.min(audit.0);
        outside += audit.1;
    }
    Ok(vec![
        at_most("dmd", "comid_equivalence", mismatches, 0.0),
        at_least("dmd", "tracking_inequality", min_residual, -1e-8),
        at_most("dmd", "domain", outside, 0.0),
    ])
}

fn quad_round(x: Vector) -> LossRound {
    LossRound::new(x.clone(), Arc::new(QuadraticLoss::new(x)))
}

/// Random contraction with spectral norm 0.9.
fn contraction(rng: &mut StreamRng, d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = spectral_norm(&m);
    m * (0.9 / s)
}

/// One randomized tracking-inequality run: losses alternate between
/// quadratic and Poisson, comparators cycle through static, dynamics
/// following and random walk. Returns the smallest residual and the
/// number of predictions that left the box.
fn lemma2_run(rng: &mut StreamRng, run: usize, horizon: usize) -> Result<(f64, f64)> {
    let d = 3;
    let domain = BoxDomain::uniform(d, -2.0, 2.0)?;
    let a = contraction(rng, d);
    let model = DynamicsModel::Linear(a);
    let state = ForecasterState::new(
        MirrorGeometry::euclidean(domain.clone()),
        model.clone(),
        Regularizer::None,
        StepSchedule::new(rng.random_range(0.2..1.5))?,
        uniform_in(rng, &domain),
    )?;
    let poisson = run % 2 == 1;
    let rounds: Vec<LossRound> = (0..horizon)
        .map(|_| {
            if poisson {
                let x = Vector::from_fn(d, |_, _| rng.random_range(0..4) as f64);
                LossRound::new(x.clone(), Arc::new(PoissonLoss::new(x)) as Arc<dyn SmoothLoss>)
            } else {
                quad_round(Vector::from_fn(d, |_, _| rng.random_range(-2.5..2.5)))
            }
        })
        .collect();
    let mut theta = uniform_in(rng, &domain);
    let mut path = Vec::with_capacity(horizon + 1);
    for t in 1..=horizon + 1 {
        path.push(theta.clone());
        theta = match run % 3 {
            0 => theta,
            1 => model.apply(t, &theta, &[], &domain)?,
            _ => domain.clip(&(theta + Vector::from_fn(d, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal)))),
        };
    }
    let mut probe = state.clone();
    let mut outside = 0.0;
    for r in &rounds {
        probe.dmd_step(r)?;
        if !domain.contains(&probe.theta_hat) {
            outside += 1.0;
        }
    }
    let audit = tracking_audit(state, &rounds, &ComparatorSequence::new(path), 0.0)?;
    Ok((audit.min_residual(), outside))
}

/// Runs dynamic mirror descent with fixed parameters `alpha` and `beta` on
/// one Poisson observation sequence and compares the mean predictions under
/// `alpha` with the `beta` run transported by the sensitivity matrix built
/// with `k_rule`. Returns the largest absolute discrepancy.
pub fn lemma1_transport(seed: u64, pairs: usize, horizon: usize, k_rule: KUpdateFn) -> Result<CheckResult> {
    let mut rng = substream(seed, "verify/lemma1");
    let d = 3;
    let fam = poisson_family(d)?;
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let tau = rng.random_range(0.2..0.8);
        let base = Vector::from_fn(d, |_, _| rng.random_range(0.2..1.0));
        let dynamics = AdditiveDynamics::self_exciting(tau, &base)?;
        let alpha = Vector::from_fn(d * d, |_, _| rng.random_range(0.0..0.1));
        let beta = Vector::from_fn(d * d, |_, _| rng.random_range(0.0..0.1));
        let xs: Vec<Vector> = (0..horizon)
            .map(|_| {
                Vector::from_fn(d, |i, _| {
                    Poisson::new(base[i]).expect("positive rate").sample(&mut rng)
                })
            })
            .collect();
        let eta = StepSchedule::new(rng.random_range(0.3..1.0))?;
        let theta0 = fam.natural(&base);
        let start = |p: &Vector| {
            ForecasterState::new(
                fam.geometry().clone(),
                DynamicsModel::Additive {
                    family: fam.clone(),
                    dynamics: dynamics.clone(),
                    alpha: p.clone(),
                },
                Regularizer::None,
                eta,
                theta0.clone(),
            )
        };
        let (mut sa, mut sb) = (start(&alpha)?, start(&beta)?);
        let mut k = DMatrix::zeros(d, d * d);
        for (i, x) in xs.iter().enumerate() {
            let t = i + 1;
            let round = LossRound::new(x.clone(), fam.round_loss(x));
            sa.dmd_step(&round)?;
            sb.dmd_step(&round)?;
            k = k_rule(&k, &dynamics.a, &dynamics.b_matrix(x), eta.at(t));
            let transported = fam.mean(&sb.theta_hat) + &k * (&alpha - &beta);
            worst = worst.max((fam.mean(&sa.theta_hat) - transported).amax());
        }
    }
    Ok(at_most("expfam", "sensitivity_transport", worst, 1e-9))
}

fn experts_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = substream(seed, "verify/experts");
    let expert = ForecasterState::new(
        MirrorGeometry::euclidean(BoxDomain::unbounded(1)),
        DynamicsModel::Identity,
        Regularizer::None,
        StepSchedule::new(1.0)?,
        Vector::zeros(1),
    )?;
    let n = 8;
    let lambda = 0.01;
    let mut pool = ExpertPool::new(vec![expert; n], lambda, 1.0)?;
    let mut drift = 0.0f64;
    let mut floor_gap = f64::INFINITY;
    for _ in 0..10_000 {
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1e6)).collect();
        pool.fixed_share_update(&losses)?;
        drift = drift.max((pool.weights().iter().sum::<f64>() - 1.0).abs());
        floor_gap = floor_gap.min(pool.weights().iter().fold(f64::INFINITY, |m, w| m.min(*w)) - lambda / n as f64);
    }
    let grid = build_grid(0.0, 1.0, 2, 25, 0.5, GRID_BUDGET)?;
    let radius = (0..1000)
        .map(|_| grid.nearest(&Vector::from_fn(2, |_, _| rng.random_range(0.0..=1.0))).1)
        .fold(0.0, f64::max);
    Ok(vec![
        at_most("experts", "simplex", drift, 1e-12),
        at_least("experts", "share_floor", floor_gap, 0.0),
        at_most("experts", "grid_covering", radius, 25f64.powf(-0.5) + 1e-12),
    ])
}
