use std::sync::Arc;

use dmd_core::dmd::{run_forecaster, ForecasterState, LossRound, StepSchedule, UpdateRule};
use dmd_core::dynamics::{DynamicsModel, PixelShift};
use dmd_core::experiments::{experiment_b, experiment_c_with, motion_models};
use dmd_core::experts::{run_dfs, ExpertPool};
use dmd_core::expfam::{AdditiveDynamics, ExponentialFamily};
use dmd_core::geometry::{BoxDomain, MirrorGeometry, Regularizer};
use dmd_core::loss::{LeastSquaresLoss, MaskedLinearLoss, SmoothLoss};
use dmd_core::simulators::*;
use dmd_core::Vector;
use nalgebra::DMatrix;

fn quiet_texture(horizon: usize) -> TextureConfig {
    TextureConfig {
        horizon,
        missing_rate: 0.0,
        anomalies: Vec::new(),
        state_noise: 0.0,
        obs_noise: 0.0,
        ..TextureConfig::default()
    }
}

#[test]
fn noiseless_texture_is_exact() {
    let cfg = TextureConfig { state_noise: 0.3, ..quiet_texture(40) };
    let world = TextureWorld::generate(&cfg, 5).unwrap();
    for f in texture_stream(&world, cfg.horizon, 5).unwrap() {
        let predicted = &world.c0 + &world.normal.c * &f.theta;
        assert!((predicted - &f.x).amax() < 1e-12);
        assert!(f.observed.iter().all(|o| *o));
        let loss = MaskedLinearLoss {
            emission: Arc::new(world.normal.c.clone()),
            offset: Arc::new(world.c0.clone()),
            observation: f.x.clone(),
            observed: f.observed.clone(),
        };
        assert!(loss.value(&f.theta) < 1e-20);
    }
}

#[test]
fn fully_masked_frames_carry_no_loss() {
    let cfg = TextureConfig { missing_rate: 1.0, anomalies: Vec::new(), ..TextureConfig::default() };
    let world = TextureWorld::generate(&cfg, 2).unwrap();
    let frames: Vec<_> = texture_stream(&world, 30, 2).unwrap().collect();
    for f in &frames {
        assert!(f.observed.iter().all(|o| !o));
        let loss = MaskedLinearLoss {
            emission: Arc::new(world.normal.c.clone()),
            offset: Arc::new(world.c0.clone()),
            observation: f.x.clone(),
            observed: f.observed.clone(),
        };
        assert_eq!(loss.value(&Vector::from_element(cfg.p, 3.0)), 0.0);
    }
}

#[test]
fn masked_fraction_concentrates() {
    let cfg = TextureConfig::default();
    let world = TextureWorld::generate(&cfg, 7).unwrap();
    let frames: Vec<_> = texture_stream(&world, cfg.horizon, 7).unwrap().collect();
    assert_eq!(frames.len(), 550);
    let masked: f64 = frames
        .iter()
        .map(|f| f.observed.iter().filter(|o| !**o).count() as f64 / cfg.q as f64)
        .sum::<f64>()
        / frames.len() as f64;
    assert!((0.45..=0.55).contains(&masked), "{masked}");
}

#[test]
fn anomalies_switch_parameters() {
    let cfg = TextureConfig { anomalies: vec![[5, 6]], ..quiet_texture(8) };
    let world = TextureWorld::generate(&cfg, 1).unwrap();
    let frames: Vec<_> = texture_stream(&world, 8, 1).unwrap().collect();
    for w in frames.windows(2) {
        let t = w[1].t;
        let a = if world.in_anomaly(t) { &world.alternate.a } else { &world.normal.a };
        assert!((a * &w[0].theta - &w[1].theta).amax() < 1e-12, "round {t}");
    }
    assert_ne!(world.normal.a, world.alternate.a);
    let bad = TextureConfig { anomalies: vec![[5, 60]], ..quiet_texture(8) };
    let world = TextureWorld::generate(&TextureConfig { horizon: 100, ..bad.clone() }, 1).unwrap();
    assert!(texture_stream(&world, 8, 1).is_err());
}

#[test]
fn texture_dmd_settles_where_md_cannot() {
    // noiseless, fully observed, norm-preserving dynamics: the scene keeps moving
    let cfg = TextureConfig { contraction: 1.0, ..quiet_texture(400) };
    let world = TextureWorld::generate(&cfg, 11).unwrap();
    let a = world.normal.a.clone();
    let mut theta = Vector::from_fn(cfg.p, |i, _| if i % 2 == 0 { 3.0 } else { -2.0 });
    let mut rounds = Vec::new();
    for _ in 0..cfg.horizon {
        let x = &world.c0 + &world.normal.c * &theta;
        let loss: Arc<dyn SmoothLoss> = Arc::new(MaskedLinearLoss {
            emission: Arc::new(world.normal.c.clone()),
            offset: Arc::new(world.c0.clone()),
            observation: x.clone(),
            observed: vec![true; cfg.q],
        });
        rounds.push(LossRound::new(x, loss));
        theta = &a * theta;
    }
    let make = |m| {
        ForecasterState::new(
            MirrorGeometry::euclidean(BoxDomain::uniform(cfg.p, -cfg.bound, cfg.bound).unwrap()),
            m,
            Regularizer::None,
            StepSchedule::new(cfg.eta0).unwrap(),
            Vector::zeros(cfg.p),
        )
        .unwrap()
    };
    let dmd = run_forecaster(make(DynamicsModel::Linear(a.clone())), UpdateRule::Dmd, rounds.clone(), None, None).losses;
    let md = run_forecaster(make(DynamicsModel::Identity), UpdateRule::Md, rounds, None, None).losses;
    let window = |l: &[f64], from: usize| l[from..from + 50].iter().sum::<f64>() / 50.0;
    let (early, late) = (window(&dmd, 0), window(&dmd, 350));
    assert!(late < 1e-6 * early, "dmd {early} -> {late}");
    let md_late = window(&md, 350);
    assert!(md_late > 1.0 && md_late > 1e6 * late, "md {md_late} vs dmd {late}");
}

#[test]
fn compressive_recovery_with_full_measurements() {
    let cfg = VideoConfig { rows: 6, cols: 6, measurements: 36, noise_var: 0.0, ..VideoConfig::default() };
    let world = CSVideoWorld::generate(&cfg, 3).unwrap();
    let f = cs_stream(&world, 1, 3).next().unwrap();
    let solved = f.sensing.clone_owned().lu().solve(&f.x).unwrap();
    assert!((solved - &f.theta).amax() < 1e-6);
    let loss = LeastSquaresLoss { sensing: f.sensing.clone(), observation: f.x.clone(), scale: 1.0 };
    assert!(loss.value(&f.theta) < 1e-20);
}

#[test]
fn video_frames_follow_the_schedule() {
    let cfg = VideoConfig { switch_at: 4, ..VideoConfig::default() };
    let world = CSVideoWorld::generate(&cfg, 9).unwrap();
    let frames: Vec<_> = cs_stream(&world, 8, 9).collect();
    for w in frames.windows(2) {
        let t = w[1].t;
        let shift = if t <= 4 { PixelShift::up(cfg.rows, cfg.cols) } else { PixelShift::right(cfg.rows, cfg.cols) };
        let moved = shift.apply(&w[0].theta);
        // interior pixels move exactly; the edge takes new content from the canvas
        for r in 1..cfg.rows - 1 {
            for c in 1..cfg.cols - 1 {
                let i = r * cfg.cols + c;
                assert!((moved[i] - w[1].theta[i]).abs() < 1e-12, "t={t} pixel ({r},{c})");
            }
        }
    }
}

#[test]
fn blob_leaving_the_frame_zero_fills() {
    let scene = Scene { blobs: vec![Blob { row: 2.0, col: 2.0, radius: 1.5, peak: 1.0 }], period: None };
    let world = CSVideoWorld {
        rows: 5,
        cols: 5,
        measurements: 3,
        noise_var: 0.0,
        schedule: vec![(1, 0.0)],
        scene,
    };
    let frames: Vec<_> = cs_stream(&world, 10, 1).collect();
    assert!(frames[0].theta.amax() > 0.9);
    assert_eq!(frames[9].theta.amax(), 0.0);
    let mut frame = frames[0].theta.clone();
    let right = PixelShift::right(5, 5);
    for _ in 0..5 {
        frame = right.apply(&frame);
    }
    assert_eq!(frame.amax(), 0.0);
}

#[test]
fn hawkes_fixed_points() {
    let base = Vector::from_vec(vec![0.4, 1.5]);
    let world = HawkesWorld::new(0.6, base.clone(), DMatrix::zeros(2, 2), 100.0).unwrap();
    for f in hawkes_stream(&world, 50, 4) {
        assert!((&f.mu - &base).amax() < 1e-15);
    }
    let world = HawkesWorld::new(0.0, base.clone(), DMatrix::zeros(2, 2), 100.0).unwrap();
    for f in hawkes_stream(&world, 20, 4).skip(1) {
        assert_eq!(f.mu, base);
    }
}

#[test]
fn hawkes_counts_match_rates() {
    let cfg = HawkesConfig::default();
    let world = HawkesWorld::generate(&cfg, 3).unwrap();
    let frames: Vec<_> = hawkes_stream(&world, cfg.horizon, 3).collect();
    let n = frames.len() as f64;
    for i in 0..world.dim() {
        let mean_x = frames.iter().map(|f| f.x[i]).sum::<f64>() / n;
        let mean_mu = frames.iter().map(|f| f.mu[i]).sum::<f64>() / n;
        let var = frames.iter().map(|f| (f.x[i] - mean_x).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean_x - mean_mu).abs() <= 3.0 * se, "node {i}: {mean_x} vs {mean_mu} (se {se})");
    }
}

#[test]
fn single_model_pool_is_that_model() {
    let cfg = VideoConfig { horizon: 40, switch_at: 20, ..VideoConfig::default() };
    let world = CSVideoWorld::generate(&cfg, 5).unwrap();
    let d = world.dim();
    let scale = 1.0 / (2.0 * cfg.noise_var * d as f64);
    let rounds: Vec<LossRound> = cs_stream(&world, cfg.horizon, 5)
        .map(|f| {
            let loss: Arc<dyn SmoothLoss> =
                Arc::new(LeastSquaresLoss { sensing: f.sensing.clone(), observation: f.x.clone(), scale });
            LossRound::new(f.x, loss)
        })
        .collect();
    let (_, model) = motion_models(cfg.rows, cfg.cols, 4).swap_remove(2);
    let expert = ForecasterState::new(
        MirrorGeometry::euclidean(BoxDomain::uniform(d, 0.0, 1.0).unwrap()),
        model,
        Regularizer::L1(cfg.tau_reg),
        StepSchedule::new(cfg.eta0).unwrap(),
        Vector::zeros(d),
    )
    .unwrap();
    let (pool, _) = run_dfs(ExpertPool::new(vec![expert.clone()], 0.0, 0.5).unwrap(), rounds.clone(), Some(1));
    let single = run_forecaster(expert, UpdateRule::Dmd, rounds, None, Some(1));
    assert_eq!(pool.losses, single.losses);
    assert_eq!(pool.predictions, single.predictions);
}

#[test]
fn frozen_parameters_reduce_to_fixed_dynamics() {
    let cfg = HawkesConfig { horizon: 300, rho0: 0.0, ..HawkesConfig::default() };
    let world = HawkesWorld::generate(&cfg, 8).unwrap();
    let bundle = experiment_c_with(&cfg, &world, 8, None).unwrap();
    let alg3 = &bundle.trace("alg3").unwrap().losses;

    let fam = ExponentialFamily::poisson(world.dim(), cfg.rate_ceiling).unwrap();
    let dynamics = AdditiveDynamics::self_exciting(cfg.tau, &world.base).unwrap();
    let zero = DynamicsModel::Additive { family: fam.clone(), dynamics, alpha: Vector::zeros(world.dim().pow(2)) };
    let state = ForecasterState::new(
        fam.geometry().clone(),
        zero,
        Regularizer::None,
        StepSchedule::new(cfg.eta0).unwrap(),
        fam.natural(&world.base),
    )
    .unwrap();
    let rounds: Vec<LossRound> = hawkes_stream(&world, cfg.horizon, 8)
        .map(|f| LossRound::new(f.x.clone(), fam.round_loss(&f.x)))
        .collect();
    let dmd = run_forecaster(state, UpdateRule::Dmd, rounds, None, None);
    assert_eq!(alg3.len(), dmd.losses.len());
    for (t, (a, b)) in alg3.iter().zip(&dmd.losses).enumerate() {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "round {}: {a} vs {b}", t + 1);
    }
    let err = bundle.trace("alg3").unwrap().alpha_error.as_ref().unwrap();
    assert!(err.iter().all(|e| (e - 1.0).abs() < 1e-15));
}

#[test]
fn video_experiment_recovers_after_switch() {
    let cfg = VideoConfig::default();
    let b = experiment_b(&cfg, 2, None).unwrap();
    assert!(b.is_complete());
    assert!(b.stat("recovery_rounds").unwrap() <= 60.0);
    assert!(b.stat("dfs_over_best").unwrap() <= 1.1);
    assert_eq!(b.traces.len(), 1 + cfg.directions + 1);
}
