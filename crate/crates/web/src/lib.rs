//! Browser bindings for the demo page in `www/`.
//!
//! Each export runs one small experiment and returns a flat `Float64Array`.
//! The plain functions in [`series`] do the work and are what the native
//! tests exercise; the `#[wasm_bindgen]` wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod series {
    use dmd_core::simulators::{HawkesConfig, TextureConfig, VideoConfig};
    use dmd_core::experiments::{experiment_a, experiment_b, experiment_c};
    use dmd_core::trace::ExperimentBundle;

    pub const MAX_HORIZON: usize = 5000;

    fn check_horizon(horizon: usize) -> Result<(), String> {
        if horizon < 2 || horizon > MAX_HORIZON {
            return Err(format!("horizon must lie in 2..={MAX_HORIZON}, got {horizon}"));
        }
        Ok(())
    }

    fn losses(bundle: &ExperimentBundle, names: &[&str]) -> Result<Vec<f64>, String> {
        let mut out = Vec::new();
        for name in names {
            let t = bundle.trace(name).ok_or_else(|| format!("no trace named {name}"))?;
            if !t.complete {
                return Err(format!("{name}: {}", t.error.as_deref().unwrap_or("incomplete")));
            }
            out.extend_from_slice(&t.losses);
        }
        Ok(out)
    }

    /// DMD losses followed by MD losses on the texture stream (2T values).
    pub fn texture_losses(seed: u64, horizon: usize, missing_rate: f64) -> Result<Vec<f64>, String> {
        check_horizon(horizon)?;
        let cfg = TextureConfig {
            horizon,
            missing_rate,
            anomalies: TextureConfig::default()
                .anomalies
                .into_iter()
                .filter(|iv| iv[1] <= horizon)
                .collect(),
            ..TextureConfig::default()
        };
        let bundle = experiment_a(&cfg, seed, None).map_err(|e| e.to_string())?;
        losses(&bundle, &["dmd", "md"])
    }

    /// Number of motion models in the video pool.
    pub fn video_models() -> usize {
        VideoConfig::default().directions + 1
    }

    /// Pool weights on the compressive video stream, one row of
    /// `video_models()` entries per round (row-major, T rows).
    pub fn video_weights(seed: u64, horizon: usize, switch_at: usize) -> Result<Vec<f64>, String> {
        check_horizon(horizon)?;
        let cfg = VideoConfig { horizon, switch_at, ..VideoConfig::default() };
        let bundle = experiment_b(&cfg, seed, None).map_err(|e| e.to_string())?;
        let dfs = bundle.trace("dfs").ok_or("no pool trace")?;
        let rows = dfs.weights.as_ref().ok_or("pool trace has no weights")?;
        Ok(rows.iter().flatten().copied().collect())
    }

    /// DMD with the true network, MD, and the joint learner on the
    /// self-exciting point process (3T values in that order).
    pub fn hawkes_losses(seed: u64, horizon: usize, rho0: f64) -> Result<Vec<f64>, String> {
        check_horizon(horizon)?;
        let cfg = HawkesConfig { horizon, rho0, ..HawkesConfig::default() };
        let bundle = experiment_c(&cfg, seed, None).map_err(|e| e.to_string())?;
        losses(&bundle, &["dmd", "md", "alg3"])
    }
}

fn js(r: Result<Vec<f64>, String>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = textureLosses)]
pub fn texture_losses(seed: u32, horizon: usize, missing_rate: f64) -> Result<Vec<f64>, JsError> {
    js(series::texture_losses(seed.into(), horizon, missing_rate))
}

#[wasm_bindgen(js_name = videoModels)]
pub fn video_models() -> usize {
    series::video_models()
}

#[wasm_bindgen(js_name = videoWeights)]
pub fn video_weights(seed: u32, horizon: usize, switch_at: usize) -> Result<Vec<f64>, JsError> {
    js(series::video_weights(seed.into(), horizon, switch_at))
}

#[wasm_bindgen(js_name = hawkesLosses)]
pub fn hawkes_losses(seed: u32, horizon: usize, rho0: f64) -> Result<Vec<f64>, JsError> {
    js(series::hawkes_losses(seed.into(), horizon, rho0))
}
