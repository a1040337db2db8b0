//! Seeded synthetic worlds: an autoregressive texture with missing pixels, a
//! moving scene under compressive Gaussian measurements, and a self-exciting
//! Poisson network.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vector, POISSON_RATE_FLOOR};
use crate::rng::{substream, StreamRng};

fn gaussian(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_vector(rng: &mut StreamRng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| gaussian(rng)))
}

fn gaussian_matrix(rng: &mut StreamRng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    // filled column by column so the draw order is fixed
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = std * gaussian(rng);
        }
    }
    m
}

/// Haar-distributed orthogonal matrix.
pub fn random_orthogonal(rng: &mut StreamRng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n, 1.0).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Shape and noise levels of the texture world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureConfig {
    pub p: usize,
    pub q: usize,
    pub horizon: usize,
    pub missing_rate: f64,
    /// Inclusive `[start, end]` rounds generated by the alternate parameters.
    pub anomalies: Vec<[usize; 2]>,
    /// Scale applied to the random orthogonal transition matrix.
    pub contraction: f64,
    /// Emission entries are `N(0, emission_gain / q)`.
    pub emission_gain: f64,
    pub state_noise: f64,
    pub obs_noise: f64,
    /// Parameters and observations are clipped to `[-bound, bound]`.
    pub bound: f64,
    pub eta0: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            p: 10,
            q: 100,
            horizon: 550,
            missing_rate: 0.5,
            anomalies: vec![[100, 120], [300, 320]],
            contraction: 0.98,
            emission_gain: 4.0,
            state_noise: 1.0,
            obs_noise: 0.5,
            bound: 500.0,
            eta0: 0.5,
        }
    }
}

impl TextureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::config("texture: p and q must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(Error::config("texture: missing_rate must lie in [0, 1]"));
        }
        if !(self.contraction >= 0.0 && self.contraction <= 1.0) {
            return Err(Error::config("texture: contraction must lie in [0, 1]"));
        }
        for (name, v) in [
            ("emission_gain", self.emission_gain),
            ("state_noise", self.state_noise),
            ("obs_noise", self.obs_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("texture: {name} must be finite and >= 0")));
            }
        }
        if !(self.bound > 0.0) {
            return Err(Error::config("texture: bound must be > 0"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::config("texture: eta0 must be > 0"));
        }
        check_intervals(&self.anomalies, self.horizon)
    }
}

fn check_intervals(intervals: &[[usize; 2]], horizon: usize) -> Result<()> {
    let mut sorted = intervals.to_vec();
    sorted.sort();
    for [s, e] in &sorted {
        if *s < 1 || s > e || *e > horizon {
            return Err(Error::config(format!(
                "anomaly interval [{s}, {e}] must satisfy 1 <= start <= end <= T = {horizon}"
            )));
        }
    }
    for w in sorted.windows(2) {
        if w[1][0] <= w[0][1] {
            return Err(Error::config(format!(
                "anomaly intervals [{}, {}] and [{}, {}] overlap",
                w[0][0], w[0][1], w[1][0], w[1][1]
            )));
        }
    }
    Ok(())
}

/// One autoregressive parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureParams {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub b: Vector,
    pub d: Vector,
}

/// `theta_t = A theta_{t-1} + B u_t`, `x_t = C0 + C theta_t + D v_t`, with an
/// alternate parameter set inside the anomaly intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureWorld {
    pub normal: TextureParams,
    pub alternate: TextureParams,
    pub c0: Vector,
    pub missing_rate: f64,
    pub anomalies: Vec<[usize; 2]>,
    pub bound: f64,
}

impl TextureWorld {
    /// Random orthogonal `A` scaled by the contraction, `A' = A^T`, and
    /// otherwise shared parameters.
    pub fn generate(cfg: &TextureConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(seed, "texture/world");
        let a = random_orthogonal(&mut rng, cfg.p) * cfg.contraction;
        let c = gaussian_matrix(&mut rng, cfg.q, cfg.p, (cfg.emission_gain / cfg.q as f64).sqrt());
        let c0 = Vector::from_iterator(cfg.q, (0..cfg.q).map(|_| rng.random_range(0.0..1.0)));
        let normal = TextureParams {
            a: a.clone(),
            c,
            b: Vector::from_element(cfg.p, cfg.state_noise),
            d: Vector::from_element(cfg.q, cfg.obs_noise),
        };
        let alternate = TextureParams {
            a: a.transpose(),
            ..normal.clone()
        };
        Ok(Self {
            normal,
            alternate,
            c0,
            missing_rate: cfg.missing_rate,
            anomalies: cfg.anomalies.clone(),
            bound: cfg.bound,
        })
    }

    pub fn p(&self) -> usize {
        self.normal.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.normal.c.nrows()
    }

    pub fn in_anomaly(&self, t: usize) -> bool {
        self.anomalies.iter().any(|[s, e]| (*s..=*e).contains(&t))
    }
}

/// Round `t` of a texture stream.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureFrame {
    pub t: usize,
    pub x: Vector,
    /// `true` where the pixel was observed.
    pub observed: Vec<bool>,
    pub theta: Vector,
}

pub struct TextureStream {
    world: TextureWorld,
    rng: StreamRng,
    theta: Vector,
    t: usize,
    horizon: usize,
}

/// Frames `1..=horizon`, deterministic in `seed`.
pub fn texture_stream(world: &TextureWorld, horizon: usize, seed: u64) -> Result<TextureStream> {
    check_intervals(&world.anomalies, horizon)?;
    let mut rng = substream(seed, "texture/stream");
    let p = world.p();
    let normal = &world.normal;
    // start from the stationary law of the normal dynamics when it exists
    let s = spectral_norm(&normal.a);
    let scale = if s < 1.0 { (1.0 - s * s).sqrt().recip() } else { 1.0 };
    let theta = gaussian_vector(&mut rng, p).component_mul(&normal.b) * scale;
    Ok(TextureStream {
        world: world.clone(),
        rng,
        theta: theta.map(|v| v.clamp(-world.bound, world.bound)),
        t: 0,
        horizon,
    })
}

impl Iterator for TextureStream {
    type Item = TextureFrame;

    fn next(&mut self) -> Option<TextureFrame> {
        if self.t >= self.horizon {
            return None;
        }
        self.t += 1;
        let w = &self.world;
        let params = if w.in_anomaly(self.t) { &w.alternate } else { &w.normal };
        let bound = w.bound;
        let u = gaussian_vector(&mut self.rng, w.p());
        self.theta = (&params.a * &self.theta + u.component_mul(&params.b)).map(|v| v.clamp(-bound, bound));
        let v = gaussian_vector(&mut self.rng, w.q());
        let x = (&w.c0 + &params.c * &self.theta + v.component_mul(&params.d)).map(|v| v.clamp(-bound, bound));
        let observed = (0..w.q()).map(|_| self.rng.random::<f64>() >= w.missing_rate).collect();
        Some(TextureFrame {
            t: self.t,
            x,
            observed,
            theta: self.theta.clone(),
        })
    }
}

/// A compactly supported bump `peak * cos^2(pi r / (2 radius))` for `r < radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
    pub peak: f64,
}

impl Blob {
    fn at(&self, dr: f64, dc: f64) -> f64 {
        let r = (dr * dr + dc * dc).sqrt();
        if r >= self.radius {
            0.0
        } else {
            self.peak * (std::f64::consts::FRAC_PI_2 * r / self.radius).cos().powi(2)
        }
    }
}

/// Intensity field sampled by the camera. With a period the field repeats on
/// a torus, otherwise it is zero away from the blobs.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub blobs: Vec<Blob>,
    pub period: Option<f64>,
}

impl Scene {
    pub fn intensity(&self, row: f64, col: f64) -> f64 {
        let wrap = |d: f64| match self.period {
            Some(p) => d - p * (d / p).round(),
            None => d,
        };
        let v: f64 = self.blobs.iter().map(|b| b.at(wrap(row - b.row), wrap(col - b.col))).sum();
        v.clamp(0.0, 1.0)
    }
}

/// Frame shape, measurement model and motion schedule of the video world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoConfig {
    pub rows: usize,
    pub cols: usize,
    pub measurements: usize,
    pub noise_var: f64,
    pub horizon: usize,
    /// Last round of upward motion; rightward motion follows.
    pub switch_at: usize,
    pub tau_reg: f64,
    pub eta0: f64,
    /// Number of direction models besides "no motion".
    pub directions: usize,
    /// Switch budget `m` for the automatic share rate.
    pub switches: usize,
    /// `None` resolves to `m / (T - 1)`.
    pub lambda: Option<f64>,
    /// `None` resolves to the fixed-share learning rate for `N`, `T`, `m`.
    pub eta_r: Option<f64>,
    pub canvas: f64,
    pub blobs: usize,
    pub blob_radius: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            measurements: 30,
            noise_var: 0.1,
            horizon: 400,
            switch_at: 220,
            tau_reg: 0.002,
            eta0: 1.0,
            directions: 9,
            switches: 1,
            lambda: None,
            eta_r: None,
            canvas: 32.0,
            blobs: 8,
            blob_radius: 3.0,
        }
    }
}

impl VideoConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.rows * self.cols;
        if d == 0 {
            return Err(Error::config("video: frame must have at least one pixel"));
        }
        if self.measurements == 0 || self.measurements > d {
            return Err(Error::config("video: measurements must lie in 1..=rows*cols"));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::config("video: noise_var must be finite and >= 0"));
        }
        if !(self.tau_reg >= 0.0 && self.tau_reg.is_finite()) {
            return Err(Error::config("video: tau_reg must be finite and >= 0"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::config("video: eta0 must be > 0"));
        }
        if self.directions == 0 {
            return Err(Error::config("video: need at least one direction model"));
        }
        if self.horizon < 2 || self.switches + 2 > self.horizon {
            return Err(Error::config("video: need T >= 2 and 0 <= switches <= T - 2"));
        }
        if let Some(l) = self.lambda {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::config("video: lambda must lie in [0, 1)"));
            }
        }
        if let Some(e) = self.eta_r {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::config("video: eta_r must be finite and >= 0"));
            }
        }
        if !(self.canvas > 0.0 && self.blob_radius > 0.0) {
            return Err(Error::config("video: canvas and blob_radius must be > 0"));
        }
        Ok(())
    }
}

/// `x_t = A_t theta_t + n_t` with a fresh Gaussian `A_t` per frame and a scene
/// translated by a scheduled one-pixel motion per round.
#[derive(Clone, Debug, PartialEq)]
pub struct CSVideoWorld {
    pub rows: usize,
    pub cols: usize,
    pub measurements: usize,
    pub noise_var: f64,
    /// `(first round, angle)` pairs sorted by round; the motion applied to
    /// produce frame `t` is the last entry with first round `<= t`.
    pub schedule: Vec<(usize, f64)>,
    pub scene: Scene,
}

impl CSVideoWorld {
    /// Scene of random bumps on a periodic canvas, moving up and then right.
    pub fn generate(cfg: &VideoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(seed, "video/scene");
        let blobs = (0..cfg.blobs)
            .map(|_| Blob {
                row: rng.random_range(0.0..cfg.canvas),
                col: rng.random_range(0.0..cfg.canvas),
                radius: cfg.blob_radius * rng.random_range(0.7..1.3),
                peak: rng.random_range(0.5..1.0),
            })
            .collect();
        Ok(Self {
            rows: cfg.rows,
            cols: cfg.cols,
            measurements: cfg.measurements,
            noise_var: cfg.noise_var,
            schedule: vec![(1, std::f64::consts::FRAC_PI_2), (cfg.switch_at + 1, 0.0)],
            scene: Scene {
                blobs,
                period: Some(cfg.canvas),
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// Angle of the motion that produces frame `t` from frame `t - 1`.
    pub fn motion_at(&self, t: usize) -> f64 {
        self.schedule
            .iter()
            .take_while(|(s, _)| *s <= t)
            .last()
            .map_or(0.0, |(_, a)| *a)
    }

    fn render(&self, offset: (f64, f64)) -> Vector {
        let mut out = Vector::zeros(self.dim());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[r * self.cols + c] = self.scene.intensity(r as f64 - offset.0, c as f64 - offset.1);
            }
        }
        out
    }
}

/// Round `t` of a compressive video stream.
#[derive(Clone, Debug)]
pub struct CsFrame {
    pub t: usize,
    pub sensing: Arc<DMatrix<f64>>,
    pub x: Vector,
    pub theta: Vector,
}

pub struct CsStream {
    world: CSVideoWorld,
    rng: StreamRng,
    offset: (f64, f64),
    t: usize,
    horizon: usize,
}

pub fn cs_stream(world: &CSVideoWorld, horizon: usize, seed: u64) -> CsStream {
    CsStream {
        world: world.clone(),
        rng: substream(seed, "video/stream"),
        offset: (0.0, 0.0),
        t: 0,
        horizon,
    }
}

impl Iterator for CsStream {
    type Item = CsFrame;

    fn next(&mut self) -> Option<CsFrame> {
        if self.t >= self.horizon {
            return None;
        }
        self.t += 1;
        if self.t > 1 {
            let angle = self.world.motion_at(self.t);
            let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
            self.offset.0 += snap(-angle.sin());
            self.offset.1 += snap(angle.cos());
        }
        let theta = self.world.render(self.offset);
        let (s, d) = (self.world.measurements, self.world.dim());
        let sensing = gaussian_matrix(&mut self.rng, s, d, 1.0);
        let noise = gaussian_vector(&mut self.rng, s) * self.world.noise_var.sqrt();
        let x = &sensing * &theta + noise;
        Some(CsFrame {
            t: self.t,
            sensing: Arc::new(sensing),
            x,
            theta,
        })
    }
}

/// Rate recursion and excitation structure of the network world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HawkesConfig {
    pub nodes: usize,
    pub block: usize,
    pub horizon: usize,
    pub tau: f64,
    pub base_rate: f64,
    pub spectral_norm: f64,
    pub rate_ceiling: f64,
    pub eta0: f64,
    pub rho0: f64,
    /// Upper end of the box `[0, w_max]` for each excitation weight.
    pub w_max: f64,
}

impl Default for HawkesConfig {
    fn default() -> Self {
        Self {
            nodes: 10,
            block: 10,
            horizon: 2000,
            tau: 0.5,
            base_rate: 0.1,
            spectral_norm: 0.25,
            rate_ceiling: 5.0,
            eta0: 0.9,
            rho0: 0.005,
            w_max: 5.0,
        }
    }
}

impl HawkesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.block == 0 {
            return Err(Error::config("hawkes: nodes and block must be >= 1"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("hawkes: tau must lie in (0, 1)"));
        }
        if !(self.base_rate > 0.0 && self.base_rate <= self.rate_ceiling) {
            return Err(Error::config("hawkes: base_rate must lie in (0, rate_ceiling]"));
        }
        if !(self.spectral_norm >= 0.0 && self.spectral_norm.is_finite()) {
            return Err(Error::config("hawkes: spectral_norm must be finite and >= 0"));
        }
        if !(self.eta0 > 0.0 && self.eta0 <= 1.0) {
            return Err(Error::config("hawkes: eta0 must lie in (0, 1]"));
        }
        if !(self.rho0 >= 0.0 && self.rho0.is_finite()) {
            return Err(Error::config("hawkes: rho0 must be finite and >= 0"));
        }
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return Err(Error::config("hawkes: w_max must be > 0"));
        }
        Ok(())
    }
}

/// `mu_{t+1} = tau mu_t + W x_t + (1 - tau) base`, `x_t ~ Poisson(mu_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HawkesWorld {
    pub tau: f64,
    pub base: Vector,
    pub w: DMatrix<f64>,
    pub mu1: Vector,
    pub rate_floor: f64,
    pub rate_ceiling: f64,
}

impl HawkesWorld {
    pub fn new(tau: f64, base: Vector, w: DMatrix<f64>, rate_ceiling: f64) -> Result<Self> {
        let d = base.len();
        if w.nrows() != d || w.ncols() != d {
            return Err(Error::config("excitation matrix must be d x d"));
        }
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("excitation weights must be finite and >= 0"));
        }
        let mu1 = base.map(|m| m.clamp(POISSON_RATE_FLOOR, rate_ceiling));
        Ok(Self {
            tau,
            base,
            w,
            mu1,
            rate_floor: POISSON_RATE_FLOOR,
            rate_ceiling,
        })
    }

    /// Block-diagonal `W` with blocks `u u^T`, `u ~ U[0.1, 1.1]^block`,
    /// rescaled to the configured spectral norm.
    pub fn generate(cfg: &HawkesConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(seed, "hawkes/network");
        let d = cfg.nodes;
        let mut w = DMatrix::zeros(d, d);
        let mut start = 0;
        while start < d {
            let len = cfg.block.min(d - start);
            let u = Vector::from_iterator(len, (0..len).map(|_| rng.random_range(0.1..1.1)));
            w.view_mut((start, start), (len, len)).copy_from(&(&u * u.transpose()));
            start += len;
        }
        let norm = spectral_norm(&w);
        if norm > 0.0 {
            w *= cfg.spectral_norm / norm;
        }
        Self::new(cfg.tau, Vector::from_element(d, cfg.base_rate), w, cfg.rate_ceiling)
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// `vec(W)`, columns stacked.
    pub fn alpha(&self) -> Vector {
        Vector::from_column_slice(self.w.as_slice())
    }
}

/// Round `t` of a network stream.
#[derive(Clone, Debug, PartialEq)]
pub struct HawkesFrame {
    pub t: usize,
    pub x: Vector,
    pub mu: Vector,
}

pub struct HawkesStream {
    world: HawkesWorld,
    rng: StreamRng,
    mu: Vector,
    t: usize,
    horizon: usize,
}

pub fn hawkes_stream(world: &HawkesWorld, horizon: usize, seed: u64) -> HawkesStream {
    HawkesStream {
        world: world.clone(),
        rng: substream(seed, "hawkes/stream"),
        mu: world.mu1.clone(),
        t: 0,
        horizon,
    }
}

impl Iterator for HawkesStream {
    type Item = HawkesFrame;

    fn next(&mut self) -> Option<HawkesFrame> {
        if self.t >= self.horizon {
            return None;
        }
        self.t += 1;
        let w = &self.world;
        let x = Vector::from_iterator(
            self.mu.len(),
            self.mu.iter().map(|m| {
                Poisson::new(*m)
                    .expect("rates are clamped to a positive floor")
                    .sample(&mut self.rng)
            }),
        );
        let mu = self.mu.clone();
        let next = &self.mu * w.tau + &w.w * &x + &w.base * (1.0 - w.tau);
        self.mu = next.map(|m| m.clamp(w.rate_floor, w.rate_ceiling));
        Some(HawkesFrame { t: self.t, x, mu })
    }
}
