//! Deterministic, seeded training engines.
//!
//! All randomness flows through a counter-based generator keyed by
//! `(seed, step, purpose)`, so the datapoint-choice stream and the
//! label-noise stream are independent, a trajectory is a pure function of
//! `(seed, build)`, and a run may be resumed chunk by chunk (via
//! `step_offset`) without perturbing a single draw.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{Dataset, Model};
use crate::regularizer::reg_gradient;
use serde::{Deserialize, Serialize};

/// Divergence guard: all experiments live at ‖θ‖ = O(1).
pub const DIVERGENCE_NORM: f64 = 1e6;

// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based random stream for one `(seed, step, purpose)` cell.
#[derive(Clone, Debug)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(seed: u64, step: u64, purpose: u64) -> Self {
        let key = mix(mix(mix(seed) ^ step) ^ purpose.wrapping_mul(0xA076_1D64_78BD_642F));
        StreamRng { key, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key ^ self.counter.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        self.counter += 1;
        out
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in 0..n without modulo bias worth caring about at these n.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal by Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Purposes keying the independent random streams of a run.
pub mod purpose {
    /// Which datapoint the SGD step visits.
    pub const INDEX: u64 = 1;
    /// The fresh label-noise draw.
    pub const NOISE: u64 = 2;
    /// Initialization draws.
    pub const INIT: u64 = 3;
    /// Builtin dataset generation.
    pub const DATASET: u64 = 4;
    /// Bootstrap resampling inside estimators.
    pub const BOOTSTRAP: u64 = 5;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Rademacher,
    Gaussian,
    Uniform,
}

/// Zero-mean label noise added fresh at every SGD step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub scale: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel { kind: NoiseKind::None, scale: 0.0 }
    }

    pub fn rademacher(scale: f64) -> Self {
        NoiseModel { kind: NoiseKind::Rademacher, scale }
    }

    pub fn gaussian(scale: f64) -> Self {
        NoiseModel { kind: NoiseKind::Gaussian, scale }
    }

    pub fn uniform(scale: f64) -> Self {
        NoiseModel { kind: NoiseKind::Uniform, scale }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidInput("noise scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Var[e]: scale² for rademacher/gaussian, scale²/3 for uniform, 0 for none.
    pub fn variance(&self) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Rademacher | NoiseKind::Gaussian => self.scale * self.scale,
            NoiseKind::Uniform => self.scale * self.scale / 3.0,
        }
    }

    pub fn draw(&self, rng: &mut StreamRng) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Rademacher => {
                if rng.next_u64() & 1 == 0 {
                    self.scale
                } else {
                    -self.scale
                }
            }
            NoiseKind::Gaussian => self.scale * rng.next_gaussian(),
            NoiseKind::Uniform => self.scale * (2.0 * rng.next_f64() - 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Learning rate, must satisfy 0 < eta < 1.
    pub eta: f64,
    pub steps: u64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Snapshot every this many steps (the step-0 and final snapshots are
    /// always recorded).
    pub snapshot_stride: u64,
    /// Global step index of the first step; lets a run be executed in
    /// chunks while drawing exactly the same random streams.
    #[serde(default)]
    pub step_offset: u64,
    /// Record the per-step noisy residual e_i alongside the snapshots.
    #[serde(default)]
    pub record_residuals: bool,
}

impl TrainConfig {
    pub fn new(eta: f64, steps: u64, noise: NoiseModel, seed: u64, snapshot_stride: u64) -> Self {
        TrainConfig {
            eta,
            steps,
            noise,
            seed,
            snapshot_stride,
            step_offset: 0,
            record_residuals: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "eta must be in (0, 1), got {}",
                self.eta
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidInput("snapshot_stride must be positive".into()));
        }
        if !(self.steps as f64 * self.eta).is_finite() {
            return Err(Error::InvalidInput("steps * eta must be finite".into()));
        }
        self.noise.validate()
    }
}

/// Time-indexed parameter snapshots from one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    /// (step index, θ after that many steps); first entry is step 0,
    /// indices strictly increasing.
    pub snapshots: Vec<(u64, Vector)>,
    /// Per-step noisy residuals when requested.
    pub residual_log: Option<Vec<f64>>,
    pub config: TrainConfig,
}

impl Trajectory {
    pub fn initial(&self) -> &[f64] {
        &self.snapshots[0].1
    }

    pub fn final_theta(&self) -> &[f64] {
        &self.snapshots.last().unwrap().1
    }

    pub fn final_step(&self) -> u64 {
        self.snapshots.last().unwrap().0
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Per-sample SGD on the squared loss with fresh label noise each step:
/// at every step one uniformly random datapoint `i` and one fresh draw `z`,
/// then `θ ← θ − 2η (f(x_i; θ) − (y_i + z)) ∇f(x_i; θ)`.
pub fn sgd_label_noise<M: Model>(
    model: &M,
    theta0: &[f64],
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if theta0.len() != model.param_count() {
        return Err(Error::InvalidInput("theta0 length mismatch".into()));
    }
    let n = data.len();
    let mut theta = theta0.to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut snapshots = vec![(0u64, theta.clone())];
    let mut residuals = if cfg.record_residuals {
        Some(Vec::with_capacity(cfg.steps as usize))
    } else {
        None
    };

    for t in 0..cfg.steps {
        let global_step = cfg.step_offset + t;
        let i = StreamRng::new(cfg.seed, global_step, purpose::INDEX).next_index(n);
        let z = cfg
            .noise
            .draw(&mut StreamRng::new(cfg.seed, global_step, purpose::NOISE));
        let (x, y) = data.point(i);
        let resid = model.forward(&theta, x)? - (y + z);
        model.gradient_into(&theta, x, &mut grad)?;
        let scale = -2.0 * cfg.eta * resid;
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th += scale * g;
        }
        if let Some(log) = residuals.as_mut() {
            log.push(resid);
        }
        if norm_sq(&theta) > DIVERGENCE_NORM * DIVERGENCE_NORM {
            return Err(Error::Diverged { step: t + 1, norm: norm_sq(&theta).sqrt() });
        }
        if (t + 1) % cfg.snapshot_stride == 0 && t + 1 < cfg.steps {
            snapshots.push((t + 1, theta.clone()));
        }
    }
    if cfg.steps > 0 {
        snapshots.push((cfg.steps, theta));
    }
    Ok(Trajectory { snapshots, residual_log: residuals, config: cfg.clone() })
}

/// Full-batch gradient descent on `Σ_i (f(x_i;θ) − y_i)² + λ · r_sum(θ)`.
///
/// With `λ = 0` this is ordinary full-batch GD. The matching default for
/// comparing against label-noise SGD is `λ = η · Var[e] / 4`.
pub fn gd_regularized<M: Model>(
    model: &M,
    theta0: &[f64],
    data: &Dataset,
    cfg: &TrainConfig,
    lambda: f64,
) -> Result<Trajectory> {
    cfg.validate()?;
    if theta0.len() != model.param_count() {
        return Err(Error::InvalidInput("theta0 length mismatch".into()));
    }
    let mut theta = theta0.to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    let mut snapshots = vec![(0u64, theta.clone())];

    for t in 0..cfg.steps {
        grad.iter_mut().for_each(|v| *v = 0.0);
        for (x, y) in data.iter() {
            let resid = model.forward(&theta, x)? - y;
            model.gradient_into(&theta, x, &mut g)?;
            for (gr, gi) in grad.iter_mut().zip(&g) {
                *gr += 2.0 * resid * gi;
            }
        }
        if lambda != 0.0 {
            let rg = reg_gradient(model, &theta, data)?;
            for (gr, ri) in grad.iter_mut().zip(&rg.grad) {
                *gr += lambda * ri;
            }
        }
        for (th, gr) in theta.iter_mut().zip(&grad) {
            *th -= cfg.eta * gr;
        }
        if norm_sq(&theta) > DIVERGENCE_NORM * DIVERGENCE_NORM {
            return Err(Error::Diverged { step: t + 1, norm: norm_sq(&theta).sqrt() });
        }
        if (t + 1) % cfg.snapshot_stride == 0 && t + 1 < cfg.steps {
            snapshots.push((t + 1, theta.clone()));
        }
    }
    if cfg.steps > 0 {
        snapshots.push((cfg.steps, theta));
    }
    Ok(Trajectory { snapshots, residual_log: None, config: cfg.clone() })
}

/// Replaces each `(x, y)` by the two copies `(x, y+δ)` and `(x, y−δ)`.
///
/// Plain SGD on the output visits a uniform point of the doubled set each
/// step, which is distributed exactly as visiting a uniform original point
/// and adding an independent ±δ to its label — i.e. Rademacher label-noise
/// SGD on the input data.
pub fn two_copy_transform(data: &Dataset, delta: f64) -> Result<Dataset> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput("delta must be positive".into()));
    }
    let mut points = Vec::with_capacity(2 * data.len());
    for (x, y) in data.iter() {
        points.push((x.to_vec(), y + delta));
        points.push((x.to_vec(), y - delta));
    }
    Dataset::new(points)
}

pub const PRETRAIN_DEFAULT_BUDGET: u64 = 400_000;

/// Noiseless full-batch GD with adaptive step halving until every residual
/// is within `tol`, producing the zero-error starting points the
/// stationarity analyses assume.
pub fn pretrain_to_zero_error<M: Model>(
    model: &M,
    theta0: &[f64],
    data: &Dataset,
    tol: f64,
) -> Result<Vector> {
    pretrain_with_budget(model, theta0, data, tol, PRETRAIN_DEFAULT_BUDGET)
}

pub fn pretrain_with_budget<M: Model>(
    model: &M,
    theta0: &[f64],
    data: &Dataset,
    tol: f64,
    budget: u64,
) -> Result<Vector> {
    let (theta, worst) = descend(model, theta0, data, tol, budget)?;
    if worst <= tol {
        Ok(theta)
    } else {
        Err(Error::NotConverged { budget, best: worst })
    }
}

/// Best-effort noiseless descent: runs the adaptive full-batch loop until
/// `tol` is reached or the budget runs out, returning the final parameters
/// and their max residual either way.
pub fn descend<M: Model>(
    model: &M,
    theta0: &[f64],
    data: &Dataset,
    tol: f64,
    budget: u64,
) -> Result<(Vector, f64)> {
    if theta0.len() != model.param_count() {
        return Err(Error::InvalidInput("theta0 length mismatch".into()));
    }
    let loss_and_max = |theta: &[f64]| -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut worst = 0.0_f64;
        for (x, y) in data.iter() {
            let r = model.forward(theta, x)? - y;
            loss += r * r;
            worst = worst.max(r.abs());
        }
        Ok((loss, worst))
    };

    let mut theta = theta0.to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    let mut step = 0.05;
    let (mut loss, mut worst) = loss_and_max(&theta)?;

    for _ in 0..budget {
        if worst <= tol {
            break;
        }
        grad.iter_mut().for_each(|v| *v = 0.0);
        for (x, y) in data.iter() {
            let resid = model.forward(&theta, x)? - y;
            model.gradient_into(&theta, x, &mut g)?;
            for (gr, gi) in grad.iter_mut().zip(&g) {
                *gr += 2.0 * resid * gi;
            }
        }
        let mut stalled = true;
        while step >= 1e-18 {
            let trial: Vector =
                theta.iter().zip(&grad).map(|(t, gr)| t - step * gr).collect();
            let (trial_loss, trial_worst) = loss_and_max(&trial)?;
            if trial_loss <= loss {
                theta = trial;
                loss = trial_loss;
                worst = trial_worst;
                step = (step * 1.25).min(1.0);
                stalled = false;
                break;
            }
            step *= 0.5;
        }
        if stalled {
            break;
        }
    }
    Ok((theta, worst))
}

/// Full-batch squared loss Σ (f − y)².
pub fn loss<M: Model>(model: &M, theta: &[f64], data: &Dataset) -> Result<f64> {
    let mut loss = 0.0;
    for (x, y) in data.iter() {
        let r = model.forward(theta, x)? - y;
        loss += r * r;
    }
    Ok(loss)
}

/// Largest |f(x_i; θ) − y_i| over the training set.
pub fn max_residual<M: Model>(model: &M, theta: &[f64], data: &Dataset) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (x, y) in data.iter() {
        worst = worst.max((model.forward(theta, x)? - y).abs());
    }
    Ok(worst)
}

/// Seeded random initialization, uniform in [−scale, scale] per coordinate.
pub fn random_init(param_count: usize, scale: f64, seed: u64) -> Vector {
    let mut rng = StreamRng::new(seed, 0, purpose::INIT);
    (0..param_count).map(|_| scale * (2.0 * rng.next_f64() - 1.0)).collect()
}
