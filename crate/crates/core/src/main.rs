use clap::Parser;
use labnoise::cli;
use std::path::PathBuf;
use std::process::ExitCode;

/// Label-noise SGD laboratory: seeded training runs plus the spectrum,
/// drift, geometry, and single-point analyses, all driven by a JSON config
/// or a named builtin experiment.
#[derive(Parser, Debug)]
#[command(name = "labnoise", version, about)]
struct Args {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "experiment")]
    config: Option<PathBuf>,

    /// Name of a builtin experiment (see --list).
    #[arg(long)]
    experiment: Option<String>,

    /// List the builtin experiments and exit.
    #[arg(long)]
    list: bool,

    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the number of seeds used by multi-seed analyses.
    #[arg(long)]
    seeds: Option<u32>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the snapshot stride.
    #[arg(long)]
    stride: Option<u64>,

    /// Config override as a dotted path, e.g. --override train.eta=0.002.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();

    if args.list {
        for e in cli::list_experiments() {
            println!("{:<24} {}", e.name, e.description);
        }
        return ExitCode::SUCCESS;
    }

    let base = match (&args.config, &args.experiment) {
        (Some(path), None) => match cli::load_config(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(2);
            }
        },
        (None, Some(name)) => {
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{name}")));
            match cli::builtin_config(name, out) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            }
        }
        _ => {
            eprintln!("exactly one of --config or --experiment is required (or --list)");
            return ExitCode::from(2);
        }
    };

    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(seed) = args.seed {
        overrides.push(("train.seed".into(), seed.to_string()));
    }
    if let Some(seeds) = args.seeds {
        overrides.push(("n_seeds".into(), seeds.to_string()));
    }
    if let Some(out) = &args.out {
        overrides.push(("out_dir".into(), format!("{:?}", out.display().to_string())));
    }
    if let Some(stride) = args.stride {
        overrides.push(("train.snapshot_stride".into(), stride.to_string()));
    }
    for ov in &args.overrides {
        match ov.split_once('=') {
            Some((k, v)) => overrides.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                eprintln!("config error: override `{ov}` is not KEY=VALUE");
                return ExitCode::from(2);
            }
        }
    }

    let cfg = match cli::apply_overrides(&base, &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };

    match cli::run(&cfg) {
        Ok(manifest) => {
            println!(
                "run `{}` complete; outputs under {}",
                cfg.experiment,
                cfg.out_dir.display()
            );
            for (k, v) in &manifest.outputs {
                println!("  {k:<12} {}", v.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
