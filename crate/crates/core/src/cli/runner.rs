//! Run orchestration: executes a configured experiment end to end and
//! serializes every report.
//!
//! A run writes, in order: `manifest.json` (before any analysis output),
//! `trajectory.csv` (step, θ₀..θ_{p−1}), `metrics.csv` (step, loss, r_sum,
//! and curve_length for 1-d ReLU models), `spectrum.json` when requested,
//! and `report.json`; the manifest is finalized last. CSV bodies are
//! deterministic: re-running the same manifest reproduces them byte for
//! byte.

use crate::error::Error;
use crate::linalg::Vector;
use crate::model::{Activation, Architecture, Dataset, Model};
use crate::ou_stats::{
    burn_in_steps, drift_check, equivalence_trajectory_check, lyapunov_equivalence, ou_moments,
    DriftEstimate, EquivalenceReport, LyapunovReport,
};
use crate::regularizer::reg;
use crate::relu_geometry::{
    chord_sum, convexity_certificate, curve_length, extract_kinks, CertTolerances,
    ConvexityCertificate,
};
use crate::single_point::{characterize, ClusterReport};
use crate::spectrum::{classify_repellence, spectrum, RepellenceVerdict, SpectrumReport, Tolerances};
use crate::trainer::{
    descend, loss, max_residual, pretrain_with_budget, random_init, sgd_label_noise, two_copy_transform,
    NoiseModel, TrainConfig,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::config::{ConfigError, ExperimentConfig, StopRule};

/// Failure modes of a run, mapped onto the process exit codes: schema
/// violations exit 2, numeric failures exit 3 (naming the analysis), and
/// I/O trouble exits 1.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Numeric { analysis: String, source: Error },
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Numeric { analysis, source } => {
                write!(f, "numeric failure in analysis `{analysis}`: {source}")
            }
            RunError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric { .. } => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

fn numeric(analysis: &str) -> impl Fn(Error) -> RunError + '_ {
    move |source| RunError::Numeric { analysis: analysis.to_string(), source }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub build: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: BTreeMap<String, PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub r_sum: f64,
    pub curve_length: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainingSummary {
    pub steps_run: u64,
    pub stopped_by: String,
    pub final_loss: f64,
    pub final_r_sum: f64,
    /// (step, manifold-projected r_sum) series driving a plateau stop.
    pub plateau_probe: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PretrainReport {
    pub tol: f64,
    pub max_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    /// Which point the spectrum was taken at.
    pub at: String,
    pub gammas: Vec<f64>,
    pub gamma_threshold: f64,
    pub zero_dim: usize,
    pub verdict: Option<RepellenceVerdict>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlGeometry {
    pub curve_length: f64,
    pub certificate_all_pass: bool,
    pub interior_kinks: usize,
    pub max_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GeometryReport {
    pub polished_max_residual: f64,
    pub line_tol: f64,
    pub certificate: ConvexityCertificate,
    pub curve_length: f64,
    pub chord_sum: f64,
    pub control: Option<ControlGeometry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OuDirAggregate {
    pub dir_j: usize,
    pub dir_k: usize,
    pub gamma_j: f64,
    pub gamma_k: f64,
    /// Mean over seeds of the per-seed time averages.
    pub mean_time_avg: f64,
    /// Standard error of that mean across seeds.
    pub std_err: f64,
    pub prediction: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OuAggregateReport {
    pub n_seeds: u32,
    pub horizon: u64,
    pub burn_in: u64,
    pub prediction_diagonal: f64,
    pub estimates: Vec<OuDirAggregate>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftReport {
    pub horizon: u64,
    pub n_seeds: u32,
    pub estimates: Vec<DriftEstimate>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HardDataReport {
    pub delta: f64,
    pub steps: u64,
    pub n_seeds: u32,
    /// Mean squared endpoint offset from θ*, label-noise pipeline.
    pub second_moment_noise: f64,
    /// Same for plain SGD on the two-copy data.
    pub second_moment_copies: f64,
    pub ratio: f64,
    /// Largest per-coordinate z-score between the two mean endpoints.
    pub max_mean_z: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SparsityReport {
    pub threshold: f64,
    pub total_units: usize,
    pub active_units: usize,
    pub abs_output_weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub pretrain: Option<PretrainReport>,
    pub training: TrainingSummary,
    pub spectrum: Option<SpectrumSummary>,
    pub geometry: Option<GeometryReport>,
    pub ou: Option<OuAggregateReport>,
    pub drift: Option<DriftReport>,
    pub equivalence: Option<EquivalenceReport>,
    pub lyapunov: Option<LyapunovReport>,
    pub single_point: Option<ClusterReport>,
    pub hard_data: Option<HardDataReport>,
    pub sparsity: Option<SparsityReport>,
}

/// 17 significant digits: round-trips every f64 exactly.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trajectory_csv(path: &Path, snapshots: &[(u64, Vector)]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let p = snapshots.first().map(|(_, t)| t.len()).unwrap_or(0);
    let header: Vec<String> =
        std::iter::once("step".to_string()).chain((0..p).map(|j| format!("theta{j}"))).collect();
    writeln!(f, "{}", header.join(","))?;
    for (step, theta) in snapshots {
        let mut row = Vec::with_capacity(p + 1);
        row.push(step.to_string());
        row.extend(theta.iter().map(|&v| fmt17(v)));
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> std::io::Result<Vec<(u64, Vector)>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let step: u64 = parts.next().unwrap().parse().map_err(bad_data)?;
        let theta: Vector = parts
            .map(|s| s.parse::<f64>().map_err(bad_data))
            .collect::<std::io::Result<_>>()?;
        rows.push((step, theta));
    }
    Ok(rows)
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], with_curve: bool) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    if with_curve {
        writeln!(f, "step,loss,r_sum,curve_length")?;
    } else {
        writeln!(f, "step,loss,r_sum")?;
    }
    for r in rows {
        if with_curve {
            writeln!(
                f,
                "{},{},{},{}",
                r.step,
                fmt17(r.loss),
                fmt17(r.r_sum),
                fmt17(r.curve_length.unwrap_or(f64::NAN))
            )?;
        } else {
            writeln!(f, "{},{},{}", r.step, fmt17(r.loss), fmt17(r.r_sum))?;
        }
    }
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> std::io::Result<Vec<(u64, Vec<f64>)>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let step: u64 = parts.next().unwrap().parse().map_err(bad_data)?;
        let vals: Vec<f64> = parts
            .map(|s| s.parse::<f64>().map_err(bad_data))
            .collect::<std::io::Result<_>>()?;
        rows.push((step, vals));
    }
    Ok(rows)
}

fn bad_data<E: std::fmt::Display>(e: E) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| bad_data(e.to_string()))?;
    writeln!(f)
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

struct PrimaryRun {
    snapshots: Vec<(u64, Vector)>,
    theta_end: Vector,
    steps_run: u64,
    stopped_by: String,
    plateau_probe: Vec<(u64, f64)>,
}

/// Polished probe of the regularizer: descend (noiselessly) to the nearby
/// zero-error point and evaluate r_sum there. Best effort: the raw point is
/// used when the descent stalls.
fn polished_r_sum(
    arch: &Architecture,
    theta: &[f64],
    data: &Dataset,
) -> Result<f64, Error> {
    let (polished, _) = descend(arch, theta, data, 1e-7, 30_000)?;
    Ok(reg(arch, &polished, data)?.r_sum)
}

fn run_primary(
    arch: &Architecture,
    theta_start: &[f64],
    data: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<PrimaryRun, Error> {
    let t = &cfg.train;
    match t.stop {
        StopRule::FixedSteps { steps } => {
            let tc = TrainConfig::new(t.eta, steps, t.noise, t.seed, t.snapshot_stride);
            let traj = sgd_label_noise(arch, theta_start, data, &tc)?;
            Ok(PrimaryRun {
                theta_end: traj.final_theta().to_vec(),
                snapshots: traj.snapshots,
                steps_run: steps,
                stopped_by: "fixed_steps".into(),
                plateau_probe: Vec::new(),
            })
        }
        StopRule::RegPlateau { window, tol, max_steps } => {
            let mut theta = theta_start.to_vec();
            let mut snapshots = vec![(0u64, theta.clone())];
            let mut probe = Vec::new();
            let mut prev = polished_r_sum(arch, &theta, data)?;
            probe.push((0, prev));
            let mut steps_run = 0u64;
            let mut stopped_by = "max_steps".to_string();
            while steps_run < max_steps {
                let chunk = window.min(max_steps - steps_run);
                let tc = TrainConfig {
                    step_offset: steps_run,
                    ..TrainConfig::new(t.eta, chunk, t.noise, t.seed, chunk)
                };
                let traj = sgd_label_noise(arch, &theta, data, &tc)?;
                theta = traj.final_theta().to_vec();
                steps_run += chunk;
                snapshots.push((steps_run, theta.clone()));
                let cur = polished_r_sum(arch, &theta, data)?;
                probe.push((steps_run, cur));
                if (cur - prev).abs() < tol {
                    stopped_by = "reg_plateau".into();
                    break;
                }
                prev = cur;
            }
            Ok(PrimaryRun {
                theta_end: theta,
                snapshots,
                steps_run,
                stopped_by,
                plateau_probe: probe,
            })
        }
    }
}

/// Executes a configured experiment, writing all outputs under
/// `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest, RunError> {
    cfg.validate().map_err(|e| RunError::Config(ConfigError(e.to_string())))?;
    let data = cfg
        .build_dataset()
        .map_err(|e| RunError::Config(ConfigError(e.to_string())))?;
    if data.input_dim() != cfg.arch.input_dim {
        return Err(RunError::Config(ConfigError(format!(
            "dataset dimension {} does not match arch input_dim {}",
            data.input_dim(),
            cfg.arch.input_dim
        ))));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;

    let arch = cfg.arch;
    let is_relu_1d = arch.activation == Activation::Relu && arch.input_dim == 1;
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|s| cfg.train.seed + s).collect();

    let mut outputs = BTreeMap::new();
    outputs.insert("manifest".to_string(), cfg.out_dir.join("manifest.json"));
    outputs.insert("trajectory".to_string(), cfg.out_dir.join("trajectory.csv"));
    outputs.insert("metrics".to_string(), cfg.out_dir.join("metrics.csv"));
    outputs.insert("report".to_string(), cfg.out_dir.join("report.json"));
    if cfg.analyses.spectrum {
        outputs.insert("spectrum".to_string(), cfg.out_dir.join("spectrum.json"));
    }

    // The manifest goes to disk before any analysis output.
    let mut manifest = RunManifest {
        config: cfg.clone(),
        seeds,
        build: format!("labnoise {}", env!("CARGO_PKG_VERSION")),
        started_unix: now_unix(),
        finished_unix: None,
        outputs,
    };
    write_json(&manifest.outputs["manifest"], &manifest)?;

    let theta_init = random_init(arch.param_count(), cfg.init_scale, cfg.train.seed);
    let mut pretrain_report = None;
    let theta_start = if let Some(p) = &cfg.pretrain {
        let theta = pretrain_with_budget(&arch, &theta_init, &data, p.tol, 400_000)
            .map_err(numeric("pretrain"))?;
        let worst = max_residual(&arch, &theta, &data).map_err(numeric("pretrain"))?;
        pretrain_report = Some(PretrainReport { tol: p.tol, max_residual: worst });
        theta
    } else {
        theta_init.clone()
    };

    let primary = run_primary(&arch, &theta_start, &data, cfg).map_err(numeric("training"))?;

    // Downsampled trajectory and metrics rows.
    let csv_every = cfg.train.snapshot_stride.saturating_mul(cfg.train.csv_stride).max(1);
    let last_step = primary.snapshots.last().map(|(s, _)| *s).unwrap_or(0);
    let kept: Vec<(u64, Vector)> = primary
        .snapshots
        .iter()
        .filter(|(s, _)| *s == 0 || *s == last_step || *s % csv_every == 0)
        .cloned()
        .collect();
    write_trajectory_csv(&manifest.outputs["trajectory"], &kept)?;

    let mut metrics = Vec::with_capacity(kept.len());
    for (step, theta) in &kept {
        let l = loss(&arch, theta, &data).map_err(numeric("metrics"))?;
        let r = reg(&arch, theta, &data).map_err(numeric("metrics"))?.r_sum;
        let c = if is_relu_1d {
            let lo = data.point(0).0[0];
            let hi = data.point(data.len() - 1).0[0];
            Some(curve_length(&arch, theta, lo, hi, 256).map_err(numeric("metrics"))?)
        } else {
            None
        };
        metrics.push(MetricsRow { step: *step, loss: l, r_sum: r, curve_length: c });
    }
    write_metrics_csv(&manifest.outputs["metrics"], &metrics, is_relu_1d)?;

    let final_loss = loss(&arch, &primary.theta_end, &data).map_err(numeric("metrics"))?;
    let final_r_sum = reg(&arch, &primary.theta_end, &data).map_err(numeric("metrics"))?.r_sum;
    let mut report = RunReport {
        experiment: cfg.experiment.clone(),
        pretrain: pretrain_report,
        training: TrainingSummary {
            steps_run: primary.steps_run,
            stopped_by: primary.stopped_by.clone(),
            final_loss,
            final_r_sum,
            plateau_probe: primary.plateau_probe.clone(),
        },
        spectrum: None,
        geometry: None,
        ou: None,
        drift: None,
        equivalence: None,
        lyapunov: None,
        single_point: None,
        hard_data: None,
        sparsity: None,
    };

    // Analyses that need a zero-error point use the pretrained start when
    // available, the polished endpoint otherwise.
    let (anchor, anchor_name): (Vector, &str) = if cfg.pretrain.is_some() {
        (theta_start.clone(), "pretrained_start")
    } else {
        let (polished, _) =
            descend(&arch, &primary.theta_end, &data, 1e-7, 400_000).map_err(numeric("polish"))?;
        (polished, "polished_end")
    };

    let spec_report: Option<SpectrumReport> = if cfg.analyses.spectrum
        || cfg.analyses.ou
        || cfg.analyses.drift
    {
        Some(
            spectrum(&arch, &anchor, &data, Tolerances::default().gamma_threshold_rel)
                .map_err(numeric("spectrum"))?,
        )
    } else {
        None
    };

    if cfg.analyses.spectrum {
        let spec = spec_report.as_ref().unwrap();
        let verdict = classify_repellence(&arch, &anchor, &data, &Tolerances::default()).ok();
        report.spectrum = Some(SpectrumSummary {
            at: anchor_name.to_string(),
            gammas: spec.gammas.clone(),
            gamma_threshold: spec.gamma_threshold,
            zero_dim: spec.zero_gamma.dim(),
            verdict: verdict.clone(),
        });
        #[derive(Serialize)]
        struct SpectrumFile<'a> {
            spectrum: &'a SpectrumReport,
            verdict: Option<RepellenceVerdict>,
        }
        write_json(&manifest.outputs["spectrum"], &SpectrumFile { spectrum: spec, verdict })?;
    }

    if cfg.analyses.ou {
        let spec = spec_report.as_ref().unwrap();
        let horizon = cfg.train.stop.max_steps();
        let mut sums: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let mut prediction = 0.0;
        for &seed in &manifest.seeds {
            let tc = TrainConfig::new(cfg.train.eta, horizon, cfg.train.noise, seed, 1);
            let traj = sgd_label_noise(&arch, &theta_start, &data, &tc).map_err(numeric("ou"))?;
            let est = ou_moments(&traj, spec).map_err(numeric("ou"))?;
            for e in est {
                prediction = cfg.train.eta * cfg.train.noise.variance();
                sums.entry((e.dir_j, e.dir_k)).or_default().push(e.time_avg);
            }
        }
        let estimates = sums
            .into_iter()
            .map(|((j, k), vals)| {
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / (vals.len().saturating_sub(1)).max(1) as f64;
                let pred = if j == k { prediction } else { 0.0 };
                OuDirAggregate {
                    dir_j: j,
                    dir_k: k,
                    gamma_j: spec.gammas[j],
                    gamma_k: spec.gammas[k],
                    mean_time_avg: m,
                    std_err: (var / vals.len() as f64).sqrt(),
                    prediction: pred,
                    ratio: (pred != 0.0).then(|| m / pred),
                }
            })
            .collect();
        report.ou = Some(OuAggregateReport {
            n_seeds: cfg.n_seeds,
            horizon,
            burn_in: burn_in_steps(cfg.train.eta, spec, horizon),
            prediction_diagonal: prediction,
            estimates,
        });
    }

    if cfg.analyses.drift {
        let spec = spec_report.as_ref().unwrap();
        let horizon = cfg.train.stop.max_steps();
        let estimates = drift_check(
            &arch,
            &theta_start,
            &data,
            cfg.train.eta,
            cfg.train.noise,
            Some(horizon),
            cfg.n_seeds as u64,
            cfg.train.seed,
            spec,
        )
        .map_err(numeric("drift"))?;
        report.drift = Some(DriftReport { horizon, n_seeds: cfg.n_seeds, estimates });
    }

    if cfg.analyses.equivalence {
        let horizon = cfg.train.stop.max_steps();
        let eps = cfg.train.noise.variance().sqrt();
        report.equivalence = Some(
            equivalence_trajectory_check(
                &arch,
                &theta_start,
                &data,
                cfg.train.eta,
                eps,
                horizon,
                cfg.n_seeds as u64,
                cfg.train.seed,
            )
            .map_err(numeric("equivalence"))?,
        );
    }

    if cfg.analyses.lyapunov {
        let eps = cfg.train.noise.variance().sqrt().max(1.0);
        report.lyapunov = Some(
            lyapunov_equivalence(&arch, &anchor, &data, cfg.train.eta, eps)
                .map_err(numeric("lyapunov"))?,
        );
    }

    if cfg.analyses.geometry {
        let (polished, worst) =
            descend(&arch, &primary.theta_end, &data, 1e-7, 400_000).map_err(numeric("geometry"))?;
        let ys: Vec<f64> = data.iter().map(|(_, y)| y).collect();
        let y_range = ys.iter().cloned().fold(f64::MIN, f64::max)
            - ys.iter().cloned().fold(f64::MAX, f64::min);
        let tol = CertTolerances {
            zero_error_tol: 1e-5,
            line_tol: 0.02 * y_range.max(1e-9),
            ..Default::default()
        };
        let certificate =
            convexity_certificate(&arch, &polished, &data, &tol).map_err(numeric("geometry"))?;
        let lo = data.point(0).0[0];
        let hi = data.point(data.len() - 1).0[0];
        let len = curve_length(&arch, &polished, lo, hi, 256).map_err(numeric("geometry"))?;
        let chords = chord_sum(&data).map_err(numeric("geometry"))?;

        let control = if cfg.analyses.control {
            // Noiseless descent from the same initialization.
            let (ctl, ctl_worst) =
                descend(&arch, &theta_init, &data, 1e-7, 400_000).map_err(numeric("geometry"))?;
            let ctl_cert = convexity_certificate(&arch, &ctl, &data, &tol)
                .map(|c| c.all_pass)
                .unwrap_or(false);
            let ctl_len = curve_length(&arch, &ctl, lo, hi, 256).map_err(numeric("geometry"))?;
            let kinks = extract_kinks(&arch, &ctl)
                .map_err(numeric("geometry"))?
                .kinks
                .iter()
                .filter(|k| k.location > lo && k.location < hi && k.jump > 1e-8)
                .count();
            Some(ControlGeometry {
                curve_length: ctl_len,
                certificate_all_pass: ctl_cert,
                interior_kinks: kinks,
                max_residual: ctl_worst,
            })
        } else {
            None
        };

        report.geometry = Some(GeometryReport {
            polished_max_residual: worst,
            line_tol: tol.line_tol,
            certificate,
            curve_length: len,
            chord_sum: chords,
            control,
        });
    }

    if cfg.analyses.single_point {
        if data.len() != 1 {
            return Err(RunError::Config(ConfigError(
                "single_point analysis needs a one-point dataset".into(),
            )));
        }
        let (polished, _) =
            descend(&arch, &primary.theta_end, &data, 1e-9, 400_000).map_err(numeric("single_point"))?;
        let x = data.point(0).0.to_vec();
        report.single_point =
            Some(characterize(&arch, &polished, &x, 0.05).map_err(numeric("single_point"))?);
    }

    if cfg.analyses.hard_data {
        let delta = cfg.two_copy_delta.ok_or_else(|| {
            RunError::Config(ConfigError("hard_data analysis needs two_copy_delta".into()))
        })?;
        let doubled = two_copy_transform(&data, delta).map_err(numeric("hard_data"))?;
        let steps = cfg.train.stop.max_steps();
        let p = arch.param_count();
        let (mut mean_a, mut mean_b) = (vec![0.0; p], vec![0.0; p]);
        let (mut m2a, mut m2b) = (vec![0.0; p], vec![0.0; p]);
        for &seed in &manifest.seeds {
            let ca = TrainConfig::new(cfg.train.eta, steps, NoiseModel::rademacher(delta), seed, steps);
            let ta = sgd_label_noise(&arch, &theta_start, &data, &ca).map_err(numeric("hard_data"))?;
            let cb = TrainConfig::new(
                cfg.train.eta,
                steps,
                NoiseModel::none(),
                seed ^ 0x9E37_79B9,
                steps,
            );
            let tb = sgd_label_noise(&arch, &theta_start, &doubled, &cb).map_err(numeric("hard_data"))?;
            for j in 0..p {
                let da = ta.final_theta()[j] - theta_start[j];
                let db = tb.final_theta()[j] - theta_start[j];
                mean_a[j] += da;
                m2a[j] += da * da;
                mean_b[j] += db;
                m2b[j] += db * db;
            }
        }
        let nf = manifest.seeds.len() as f64;
        let mut max_z = 0.0_f64;
        for j in 0..p {
            mean_a[j] /= nf;
            mean_b[j] /= nf;
            let va = (m2a[j] / nf - mean_a[j] * mean_a[j]).max(0.0);
            let vb = (m2b[j] / nf - mean_b[j] * mean_b[j]).max(0.0);
            let se = ((va + vb) / nf).sqrt().max(1e-300);
            max_z = max_z.max((mean_a[j] - mean_b[j]).abs() / se);
        }
        let t2a: f64 = m2a.iter().sum::<f64>() / nf;
        let t2b: f64 = m2b.iter().sum::<f64>() / nf;
        report.hard_data = Some(HardDataReport {
            delta,
            steps,
            n_seeds: cfg.n_seeds,
            second_moment_noise: t2a,
            second_moment_copies: t2b,
            ratio: t2a / t2b.max(1e-300),
            max_mean_z: max_z,
        });
    }

    if cfg.analyses.sparsity {
        let (polished, _) =
            descend(&arch, &primary.theta_end, &data, 1e-7, 200_000).map_err(numeric("sparsity"))?;
        let threshold = 0.02;
        let abs_c: Vec<f64> =
            (0..arch.hidden_width).map(|i| polished[arch.c_index(i)].abs()).collect();
        report.sparsity = Some(SparsityReport {
            threshold,
            total_units: arch.hidden_width,
            active_units: abs_c.iter().filter(|v| **v > threshold).count(),
            abs_output_weights: abs_c,
        });
    }

    write_json(&manifest.outputs["report"], &report)?;
    manifest.finished_unix = Some(now_unix());
    write_json(&manifest.outputs["manifest"], &manifest)?;
    Ok(manifest)
}
