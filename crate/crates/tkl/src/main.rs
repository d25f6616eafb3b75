//! `tkl` — deterministic tangent-kernel learning experiments.
//!
//! Each subcommand resolves an [`ExperimentConfig`] (subcommand default or
//! `--preset` or `--config` file, then command-line overrides), runs it, and
//! writes `report.json` plus kind-specific CSVs to `--out`.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 training divergence,
//! 3 failed built-in check when `--check` is passed. `TKL_THREADS` caps the
//! worker-thread count (results never depend on it).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tkl::experiment::{run, ExperimentConfig, ExperimentKind, InitMode, RecordMode};
use tkl::Error;

#[derive(Parser)]
#[command(
    name = "tkl",
    version,
    about = "Gradient-descent learning paths, tangent kernels, and the kernel-machine decomposition"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on a toy task (ball-sphere, halfspace, two-peak)
    Train(Common),
    /// Verify the kernel-machine decomposition (linreg-exact)
    Verify(Common),
    /// Residual decay across a learning-rate grid
    Sweep(Common),
    /// NTK vs Euclidean nearest neighbors along a random direction
    Neighbors(Common),
    /// Linear probe of the NTK feature space
    Probe(Common),
    /// PCA projection of feature vectors
    Pca(Common),
    /// Parity networks: hand-built verification or perturbed-init training
    Parity(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file (mutually exclusive with --preset)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Named paper-scale setting: paper-5.1 | paper-5.2 | paper-6.4 | linreg
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment kind override (within this subcommand's family)
    #[arg(long, value_name = "KIND")]
    kind: Option<String>,
    /// Output directory for report.json and CSVs
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Exit nonzero if the kind's built-in threshold fails
    #[arg(long)]
    check: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Input dimension
    #[arg(long)]
    p: Option<usize>,
    /// Hidden width / channel count
    #[arg(long)]
    r: Option<usize>,
    /// Training-set size
    #[arg(long)]
    n: Option<usize>,
    /// Learning rate
    #[arg(long)]
    eta: Option<f64>,
    /// Gradient steps K
    #[arg(long)]
    steps: Option<usize>,
    /// Perturbation scale (parity-train)
    #[arg(long)]
    sigma: Option<f64>,
    /// Training support size l (parity-train)
    #[arg(long)]
    l: Option<usize>,
    /// Held-out support size (parity-train)
    #[arg(long)]
    test_l: Option<usize>,
    /// Held-out sample count (parity-train)
    #[arg(long)]
    test_n: Option<usize>,
    /// Decomposition query count
    #[arg(long)]
    queries: Option<usize>,
    /// Initialization: perturbed | random (parity-train)
    #[arg(long)]
    init: Option<String>,
    /// Path recording: snapshots | streaming
    #[arg(long)]
    record: Option<String>,
    /// Snapshot stride for saved paths
    #[arg(long)]
    stride: Option<usize>,
    /// Persist the learning path as path.bin
    #[arg(long)]
    save_path: bool,
}

/// Experiment kinds each subcommand may run; the first is its default.
fn family(cmd: &Cmd) -> &'static [ExperimentKind] {
    match cmd {
        Cmd::Train(_) => &[
            ExperimentKind::BallSphere,
            ExperimentKind::Halfspace,
            ExperimentKind::TwoPeak,
        ],
        Cmd::Verify(_) => &[ExperimentKind::LinregExact],
        Cmd::Sweep(_) => &[ExperimentKind::DecompositionSweep],
        Cmd::Neighbors(_) => &[ExperimentKind::Neighbors],
        Cmd::Probe(_) => &[ExperimentKind::Probe],
        Cmd::Pca(_) => &[ExperimentKind::Pca],
        Cmd::Parity(_) => &[ExperimentKind::ParityVerify, ExperimentKind::ParityTrain],
    }
}

fn resolve(cmd: &Cmd) -> Result<(ExperimentConfig, PathBuf, bool), Error> {
    let args = match cmd {
        Cmd::Train(a)
        | Cmd::Verify(a)
        | Cmd::Sweep(a)
        | Cmd::Neighbors(a)
        | Cmd::Probe(a)
        | Cmd::Pca(a)
        | Cmd::Parity(a) => a,
    };
    let allowed = family(cmd);
    let mut config = if let Some(name) = &args.preset {
        ExperimentConfig::preset(name)?
    } else if let Some(file) = &args.config {
        ExperimentConfig::load(file)?
    } else if let Some(kind) = &args.kind {
        ExperimentConfig::for_kind(kind.parse()?)
    } else {
        ExperimentConfig::for_kind(allowed[0])
    };
    if let Some(kind) = &args.kind {
        let kind: ExperimentKind = kind.parse()?;
        if kind != config.kind {
            // switching kinds resets to that kind's baseline before overrides
            config = ExperimentConfig::for_kind(kind);
        }
    }
    if !allowed.contains(&config.kind) {
        return Err(Error::BadExperiment(format!(
            "kind `{}` does not belong to this subcommand (expected one of: {})",
            config.kind,
            allowed
                .iter()
                .map(|k| k.name())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.p {
        config.p = v;
    }
    if let Some(v) = args.r {
        config.r = v;
    }
    if let Some(v) = args.n {
        config.n = v;
    }
    if let Some(v) = args.eta {
        config.eta = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.sigma {
        config.sigma = v;
    }
    if let Some(v) = args.l {
        config.l = v;
    }
    if let Some(v) = args.test_l {
        config.test_l = v;
    }
    if let Some(v) = args.test_n {
        config.test_n = v;
    }
    if let Some(v) = args.queries {
        config.queries = v;
    }
    if let Some(v) = &args.init {
        config.init = v.parse::<InitMode>()?;
    }
    if let Some(v) = &args.record {
        config.record = v.parse::<RecordMode>()?;
    }
    if let Some(v) = args.stride {
        config.stride = v;
    }
    if args.save_path {
        config.save_path = true;
    }
    config.validate()?;
    Ok((config, args.out.clone(), args.check))
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("TKL_THREADS") {
        match threads.parse::<usize>() {
            Ok(t) if t >= 1 => {
                // ignore failure: a pool may already exist in tests
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
            _ => {
                eprintln!("error: TKL_THREADS must be a positive integer, got `{threads}`");
                return ExitCode::from(1);
            }
        }
    }
    // route usage errors to exit 1 (clap's default 2 would collide with the
    // divergence code); --help and --version still exit 0
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (config, out, check) = match resolve(&cli.cmd) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&config, &out) {
        Ok(summary) => {
            println!(
                "{}: report written to {}",
                config.kind,
                summary.out_dir.join("report.json").display()
            );
            if let Some(passed) = summary.check_passed {
                println!("check: {}", if passed { "pass" } else { "fail" });
                if check && !passed {
                    return ExitCode::from(3);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::Diverged { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
