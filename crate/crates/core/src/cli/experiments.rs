//! Builtin experiment registry and dataset generators.

use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, Dataset};
use crate::ou_stats::default_horizon;
use crate::trainer::{purpose, NoiseModel, StreamRng};
use serde::Serialize;
use std::path::PathBuf;

use super::config::{
    AnalysisToggles, DatasetSource, ExperimentConfig, PretrainSettings, StopRule, TrainSettings,
    SCHEMA_VERSION,
};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExperimentInfo {
    pub name: &'static str,
    pub description: &'static str,
}

pub fn list_experiments() -> Vec<ExperimentInfo> {
    vec![
        ExperimentInfo {
            name: "fig1d",
            description: "12-point 1-d dataset, width-100 relu net with skip unit; label-noise \
                          run to a regularizer plateau plus a noiseless control; convexity \
                          certificate and curve length",
        },
        ExperimentInfo {
            name: "curve_length",
            description: "same 12-point relu setup, emitting the loss and curve-length series \
                          against training step",
        },
        ExperimentInfo {
            name: "tanh_sparsity_1d",
            description: "6 points in 3 clusters, 20 tanh units, label noise; active-unit count \
                          at the polished endpoint",
        },
        ExperimentInfo {
            name: "tanh_sparsity_5d",
            description: "20 points i.i.d. from a 5-d Gaussian plus 10 hard-to-fit ±1 points; \
                          plain SGD; active-unit count",
        },
        ExperimentInfo {
            name: "hard_data",
            description: "two-copy transform pipeline: plain SGD on (x, y±δ) copies compared \
                          with Rademacher label-noise SGD on the originals",
        },
        ExperimentInfo {
            name: "ou_tanh",
            description: "width-5 tanh net on 4 points in 2-d, pretrained to zero error; \
                          time-averaged second moments vs the η·Var[e] stationary prediction",
        },
        ExperimentInfo {
            name: "drift_tanh",
            description: "same tanh toy; measured endpoint drift of every zero-γ direction vs \
                          the second-derivative prediction",
        },
        ExperimentInfo {
            name: "equivalence_tanh",
            description: "same tanh toy; mean noisy-SGD endpoint vs full-batch GD on the \
                          explicitly regularized loss",
        },
        ExperimentInfo {
            name: "single_point_logistic",
            description: "width-20 logistic net on one 3-d point; long noisy run, then the \
                          two-cluster characterization at the polished endpoint",
        },
        ExperimentInfo {
            name: "single_point_tanh",
            description: "width-20 tanh net on one 3-d point; long noisy run, then the \
                          sign-symmetric pair plus dead-unit characterization",
        },
    ]
}

/// Fixed 12-point piecewise-linear dataset used by the fig1d experiments:
/// three segments with a concave then a convex slope change, and collinear
/// triples inside each segment. The coordinates are synthetic stand-ins.
pub fn fig1d_points() -> (Vec<f64>, Vec<f64>) {
    // Segment A: slope 1 through (-3, 0); breakpoint at x = -1 (concave);
    // segment B: slope -0.5 to (1, 1); breakpoint at x = 1 (convex);
    // segment C: slope 0.8 to the right edge.
    let xs = vec![
        -3.0, -2.4, -1.8, -1.2, -0.6, 0.0, 0.6, 1.2, 1.8, 2.4, 2.8, 3.2,
    ];
    let f = |x: f64| -> f64 {
        if x <= -1.0 {
            x + 3.0
        } else if x <= 1.0 {
            2.0 - 0.5 * (x + 1.0)
        } else {
            1.0 + 0.8 * (x - 1.0)
        }
    };
    let ys = xs.iter().map(|&x| f(x)).collect();
    (xs, ys)
}

/// Four 2-d points with small labels: the stationarity/drift toy. Width 5
/// gives p = 20 parameters and a 16-dimensional zero-γ subspace.
pub fn tanh_toy_points() -> Vec<(Vec<f64>, f64)> {
    vec![
        (vec![0.8, -0.2], 0.12),
        (vec![-0.5, 0.6], -0.08),
        (vec![0.3, 0.9], 0.05),
        (vec![-0.9, -0.7], -0.1),
    ]
}

fn param_f64(params: &serde_json::Value, key: &str) -> Option<f64> {
    params.get(key).and_then(|v| v.as_f64())
}

fn param_u64(params: &serde_json::Value, key: &str) -> Option<u64> {
    params.get(key).and_then(|v| v.as_u64())
}

/// Materializes a builtin dataset. Generators with random content draw from
/// the dataset stream of `seed`.
pub fn builtin_dataset(name: &str, params: &serde_json::Value, seed: u64) -> Result<Dataset> {
    match name {
        "fig1d_12pt" => {
            let (xs, ys) = fig1d_points();
            Dataset::from_xy(&xs, &ys)
        }
        "tanh_clusters_6pt" => Dataset::from_xy(
            &[-2.1, -1.9, -0.1, 0.1, 1.9, 2.1],
            &[1.0, 1.0, -1.0, -1.0, 1.0, 1.0],
        ),
        "tanh_toy_2d_4pt" => Dataset::new(tanh_toy_points()),
        "single_point_3d" => {
            let y = param_f64(params, "y").unwrap_or(1.0);
            Dataset::new(vec![(vec![0.6, -0.8, 0.5], y)])
        }
        "gauss5d_hard" => {
            let n = param_u64(params, "n").unwrap_or(20) as usize;
            let n_hard = param_u64(params, "n_hard").unwrap_or(10) as usize;
            let mut rng = StreamRng::new(seed, 0, purpose::DATASET);
            let mut points = Vec::with_capacity(n + n_hard);
            for _ in 0..n {
                let x: Vec<f64> = (0..5).map(|_| rng.next_gaussian()).collect();
                let y = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
                points.push((x, y));
            }
            // Hard-to-fit cluster: nearly identical inputs, alternating ±1
            // labels, so no model fits them and the SGD updates stay noisy.
            let center: Vec<f64> = (0..5).map(|_| 0.3 * rng.next_gaussian()).collect();
            for k in 0..n_hard {
                let x: Vec<f64> = center.iter().map(|c| c + 0.05 * rng.next_gaussian()).collect();
                points.push((x, if k % 2 == 0 { 1.0 } else { -1.0 }));
            }
            Dataset::new(points)
        }
        other => Err(Error::InvalidInput(format!("unknown builtin dataset `{other}`"))),
    }
}

/// The ready-to-run configuration of a named builtin experiment.
pub fn builtin_config(name: &str, out_dir: PathBuf) -> Result<ExperimentConfig> {
    let eta = 1e-3;
    let cfg = match name {
        "fig1d" => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: name.into(),
            arch: Architecture::new(1, 100, Activation::Relu, true)?,
            dataset: DatasetSource::Builtin {
                name: "fig1d_12pt".into(),
                params: serde_json::Value::Null,
            },
            train: TrainSettings {
                eta: 2e-3,
                noise: NoiseModel::rademacher(0.5),
                seed: 1,
                snapshot_stride: 10_000,
                stop: StopRule::RegPlateau { window: 10_000, tol: 1e-5, max_steps: 3_000_000 },
                csv_stride: 1,
            },
            pretrain: None,
            analyses: AnalysisToggles { geometry: true, control: true, ..Default::default() },
            out_dir,
            n_seeds: 1,
            init_scale: 1.0,
            two_copy_delta: None,
        },
        "curve_length" => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: name.into(),
            arch: Architecture::new(1, 100, Activation::Relu, true)?,
            dataset: DatasetSource::Builtin {
                name: "fig1d_12pt".into(),
                params: serde_json::Value::Null,
            },
            train: TrainSettings {
                eta: 2e-3,
                noise: NoiseModel::rademacher(0.5),
                seed: 1,
                snapshot_stride: 5_000,
                stop: StopRule::FixedSteps { steps: 400_000 },
                csv_stride: 1,
            },
            pretrain: None,
            analyses: AnalysisToggles { geometry: true, control: true, ..Default::default() },
            out_dir,
            n_seeds: 1,
            init_scale: 1.0,
            two_copy_delta: None,
        },
        "tanh_sparsity_1d" => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: name.into(),
            arch: Architecture::new(1, 20, Activation::Tanh, false)?,
            dataset: DatasetSource::Builtin {
                name: "tanh_clusters_6pt".into(),
                params: serde_json::Value::Null,
            },
            train: TrainSettings {
                eta: 2e-3,
                noise: NoiseModel::rademacher(0.5),
                seed: 1,
                snapshot_stride: 10_000,
                stop: StopRule::FixedSteps { steps: 1_500_000 },
                csv_stride: 1,
            },
            pretrain: None,
            analyses: AnalysisToggles { sparsity: true, spectrum: true, ..Default::default() },
            out_dir,
            n_seeds: 1,
            init_scale: 0.8,
            two_copy_delta: None,
        },
        "tanh_sparsity_5d" => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: name.into(),
            arch: Architecture::new(5, 20, Activation::Tanh, false)?,
            dataset: DatasetSource::Builtin {
                name: "gauss5d_hard".into(),
                params: serde_json::json!({"n": 20, "n_hard": 10}),
            },
            train: TrainSettings {
                eta: 2e-3,
                noise: NoiseModel::none(),
                seed: 1,
                snapshot_stride: 10_000,
                stop: StopRule::FixedSteps { steps: 1_500_000 },
                csv_stride: 1,
            },
            pretrain: None,
            analyses: AnalysisToggles { sparsity: true, ..Default::default() },
            out_dir,
            n_seeds: 1,
            init_scale: 0.8,
            two_copy_delta: None,
        },
        "hard_data" => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: name.into(),
            arch: Architecture::new(1, 8, Activation::Tanh, false)?,
            dataset: DatasetSource::Builtin {
                name: "tanh_clusters_6pt".into(),
                params: serde_json::Value::Null,
            },
            train: TrainSettings {
                eta,
                noise: NoiseModel::rademacher(0.5),
                seed: 1,
                snapshot_stride: 5_000,
                stop: StopRule::FixedSteps { steps: 50_000 },
                csv_stride: 1,
            },
            pretrain: Some(PretrainSettings { tol: 1e-6 }),
            analyses: AnalysisToggles { hard_data: true, ..Default::default() },
            out_dir,
            n_seeds: 64,
            init_scale: 0.5,
            two_copy_delta: Some(0.5),
        },
        "ou_tanh" => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: name.into(),
            arch: Architecture::new(2, 5, Activation::Tanh, false)?,
            dataset: DatasetSource::Builtin {
                name: "tanh_toy_2d_4pt".into(),
                params: serde_json::Value::Null,
            },
            train: TrainSettings {
                eta,
                noise: NoiseModel::rademacher(1.0),
                seed: 1,
                snapshot_stride: 1,
                stop: StopRule::FixedSteps { steps: default_horizon(eta) },
                csv_stride: 1_000,
            },
            pretrain: Some(PretrainSettings { tol: 1e-6 }),
            analyses: AnalysisToggles { ou: true, spectrum: true, ..Default::default() },
            out_dir,
            n_seeds: 16,
            init_scale: 0.5,
            two_copy_delta: None,
        },
        "drift_tanh" => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: name.into(),
            arch: Architecture::new(2, 5, Activation::Tanh, false)?,
            dataset: DatasetSource::Builtin {
                name: "tanh_toy_2d_4pt".into(),
                params: serde_json::Value::Null,
            },
            train: TrainSettings {
                eta,
                noise: NoiseModel::rademacher(1.0),
                seed: 1,
                snapshot_stride: default_horizon(eta),
                stop: StopRule::FixedSteps { steps: default_horizon(eta) },
                csv_stride: 1,
            },
            pretrain: Some(PretrainSettings { tol: 1e-6 }),
            analyses: AnalysisToggles { drift: true, spectrum: true, ..Default::default() },
            out_dir,
            n_seeds: 64,
            init_scale: 0.5,
            two_copy_delta: None,
        },
        "equivalence_tanh" => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: name.into(),
            arch: Architecture::new(2, 5, Activation::Tanh, false)?,
            dataset: DatasetSource::Builtin {
                name: "tanh_toy_2d_4pt".into(),
                params: serde_json::Value::Null,
            },
            train: TrainSettings {
                eta,
                noise: NoiseModel::gaussian(1.0),
                seed: 1,
                snapshot_stride: eta.powf(-1.5).ceil() as u64,
                stop: StopRule::FixedSteps { steps: eta.powf(-1.5).ceil() as u64 },
                csv_stride: 1,
            },
            pretrain: Some(PretrainSettings { tol: 1e-6 }),
            analyses: AnalysisToggles { equivalence: true, lyapunov: true, ..Default::default() },
            out_dir,
            n_seeds: 256,
            init_scale: 0.5,
            two_copy_delta: None,
        },
        "single_point_logistic" | "single_point_tanh" => {
            let activation = if name == "single_point_logistic" {
                Activation::Logistic
            } else {
                Activation::Tanh
            };
            ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                experiment: name.into(),
                arch: Architecture::new(3, 20, activation, false)?,
                dataset: DatasetSource::Builtin {
                    name: "single_point_3d".into(),
                    params: serde_json::json!({"y": 1.0}),
                },
                train: TrainSettings {
                    eta,
                    noise: NoiseModel::rademacher(1.0),
                    seed: 1,
                    snapshot_stride: 100_000,
                    stop: StopRule::FixedSteps { steps: 1_000_000 },
                    csv_stride: 1,
                },
                pretrain: None,
                analyses: AnalysisToggles { single_point: true, ..Default::default() },
                out_dir,
                n_seeds: 1,
                init_scale: 0.4,
                two_copy_delta: None,
            }
        }
        other => return Err(Error::InvalidInput(format!("unknown experiment `{other}`"))),
    };
    Ok(cfg)
}
