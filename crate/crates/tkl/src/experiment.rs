//! Deterministic experiment runner: binds data generation, training, kernel
//! verification, and the analyses into named experiments that emit
//! `report.json` plus kind-specific CSVs into an output directory.
//!
//! Reports are byte-identical across runs of the same config and seed;
//! wall-clock timestamps go to a separate `run.log` so they never touch the
//! report.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    embedded_regressor, feature_matrix, linear_probe_train, neighbor_sweep, pca_project,
    NeighborReport, ProbeConfig, DEFAULT_LAMBDAS,
};
use crate::data::{
    build_parity_network, cumsum_mod2, enumerate_two_peak, gen_ball_sphere, gen_halfspace,
    gen_xl_dataset, perturb_params, DatasetMeta, LabeledDataset,
};
use crate::kernel::{
    decomposition_residual_sweep, domingos_rhs_batch, sweep_to_csv, StreamingAccumulator,
    SweepRow,
};
use crate::model::{forward, init_params, param_gradient, ModelSpec, ParamVector};
use crate::path_io::save_path;
use crate::train::{
    accuracy, aggregate_loss, train_full_batch, train_with_observer, LearningPath, LossKind,
    Schedule, Snapshot, TrainConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BallSphere,
    Halfspace,
    TwoPeak,
    ParityTrain,
    ParityVerify,
    LinregExact,
    DecompositionSweep,
    Neighbors,
    Probe,
    Pca,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::BallSphere,
        ExperimentKind::Halfspace,
        ExperimentKind::TwoPeak,
        ExperimentKind::ParityTrain,
        ExperimentKind::ParityVerify,
        ExperimentKind::LinregExact,
        ExperimentKind::DecompositionSweep,
        ExperimentKind::Neighbors,
        ExperimentKind::Probe,
        ExperimentKind::Pca,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::BallSphere => "ball-sphere",
            ExperimentKind::Halfspace => "halfspace",
            ExperimentKind::TwoPeak => "two-peak",
            ExperimentKind::ParityTrain => "parity-train",
            ExperimentKind::ParityVerify => "parity-verify",
            ExperimentKind::LinregExact => "linreg-exact",
            ExperimentKind::DecompositionSweep => "decomposition-sweep",
            ExperimentKind::Neighbors => "neighbors",
            ExperimentKind::Probe => "probe",
            ExperimentKind::Pca => "pca",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::BadExperiment(format!("unknown experiment kind `{s}`")))
    }
}

/// How the learning path reaches the decomposition verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordMode {
    /// Keep every snapshot in memory, then replay.
    #[default]
    Snapshots,
    /// Feed a [`StreamingAccumulator`] during training; memory stays
    /// independent of the step count.
    Streaming,
}

impl FromStr for RecordMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snapshots" => Ok(RecordMode::Snapshots),
            "streaming" => Ok(RecordMode::Streaming),
            _ => Err(Error::InvalidConfig(format!(
                "record mode must be `snapshots` or `streaming`, got `{s}`"
            ))),
        }
    }
}

/// Initialization for the parity training study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Hand-built optimal network plus `sigma`-scaled Gaussian noise.
    #[default]
    Perturbed,
    /// The usual seeded uniform initialization.
    Random,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturbed" => Ok(InitMode::Perturbed),
            "random" => Ok(InitMode::Random),
            _ => Err(Error::InvalidConfig(format!(
                "init must be `perturbed` or `random`, got `{s}`"
            ))),
        }
    }
}

fn d_p() -> usize {
    2
}
fn d_r() -> usize {
    10
}
fn d_n() -> usize {
    1024
}
fn d_eta() -> f64 {
    1e-2
}
fn d_steps() -> usize {
    2000
}
fn d_one() -> usize {
    1
}
fn d_sigma() -> f64 {
    0.05
}
fn d_l() -> usize {
    4
}
fn d_test_l() -> usize {
    8
}
fn d_test_n() -> usize {
    500
}
fn d_queries() -> usize {
    100
}
fn d_etas() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}
fn d_lambdas() -> Vec<f64> {
    DEFAULT_LAMBDAS.to_vec()
}

/// Flat experiment description; loadable from a TOML file, overridable from
/// the command line. Fields irrelevant to a kind are simply ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Input dimension (power of two for the conv kinds).
    #[serde(default = "d_p")]
    pub p: usize,
    /// Hidden width (MLP) or channel count (conv).
    #[serde(default = "d_r")]
    pub r: usize,
    /// Training-set size.
    #[serde(default = "d_n")]
    pub n: usize,
    /// Learning rate.
    #[serde(default = "d_eta")]
    pub eta: f64,
    /// Gradient steps `K`.
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Snapshot stride for saved paths.
    #[serde(default = "d_one")]
    pub stride: usize,
    #[serde(default)]
    pub record: RecordMode,
    /// Persist the learning path as `path.bin` (+ manifest).
    #[serde(default)]
    pub save_path: bool,
    /// Perturbation scale for `parity-train`.
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub init: InitMode,
    /// Support size of the training distribution X_l.
    #[serde(default = "d_l")]
    pub l: usize,
    /// Support size of the held-out distribution for cross-l evaluation.
    #[serde(default = "d_test_l")]
    pub test_l: usize,
    #[serde(default = "d_test_n")]
    pub test_n: usize,
    /// Query count for decomposition verification.
    #[serde(default = "d_queries")]
    pub queries: usize,
    /// Learning-rate grid for `decomposition-sweep`.
    #[serde(default = "d_etas")]
    pub etas: Vec<f64>,
    /// Scale grid for `neighbors`.
    #[serde(default = "d_lambdas")]
    pub lambdas: Vec<f64>,
}

impl ExperimentConfig {
    /// Baseline config for a kind, at a scale that finishes quickly; the
    /// paper-scale settings live in [`ExperimentConfig::preset`].
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut c = ExperimentConfig {
            kind,
            p: d_p(),
            r: d_r(),
            n: d_n(),
            eta: d_eta(),
            steps: d_steps(),
            seed: 0,
            stride: d_one(),
            record: RecordMode::default(),
            save_path: false,
            sigma: d_sigma(),
            init: InitMode::default(),
            l: d_l(),
            test_l: d_test_l(),
            test_n: d_test_n(),
            queries: d_queries(),
            etas: d_etas(),
            lambdas: d_lambdas(),
        };
        match kind {
            ExperimentKind::BallSphere | ExperimentKind::Halfspace => {}
            ExperimentKind::TwoPeak => {
                c.p = 64;
                c.eta = 1e-1;
                c.steps = 10_000;
            }
            ExperimentKind::ParityVerify => {
                c.p = 8;
                c.r = 2;
            }
            ExperimentKind::ParityTrain => {
                c.p = 16;
                c.r = 2;
                c.n = 500;
                c.eta = 2e-2;
                c.steps = 2000;
            }
            ExperimentKind::LinregExact => {
                c.p = 5;
                c.n = 50;
                c.steps = 1000;
            }
            ExperimentKind::DecompositionSweep => {
                c.steps = 500;
                c.queries = 50;
            }
            ExperimentKind::Neighbors | ExperimentKind::Probe | ExperimentKind::Pca => {}
        }
        c
    }

    /// Named paper-scale configurations.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = match name {
            "paper-5.1" => ExperimentConfig::for_kind(ExperimentKind::BallSphere),
            "paper-5.2" => ExperimentConfig::for_kind(ExperimentKind::Halfspace),
            "paper-6.4" => ExperimentConfig::for_kind(ExperimentKind::TwoPeak),
            "linreg" => ExperimentConfig::for_kind(ExperimentKind::LinregExact),
            _ => {
                return Err(Error::BadExperiment(format!(
                    "unknown preset `{name}` (expected paper-5.1, paper-5.2, paper-6.4, linreg)"
                )))
            }
        };
        match name {
            // N = 2^10, r = 10, eta = 1e-2, K = 1e4
            "paper-5.1" => c.steps = 10_000,
            // Same network and data scale, but the halfspace boundary sharpens
            // slowly under MSE: K = 1e4 leaves a couple of near-boundary points
            // misclassified on some seeds (~99.1%), while K = 4e4 reaches the
            // reported 99.8% level across seeds.
            "paper-5.2" => c.steps = 40_000,
            // p = 64, eta = 1e-1, K = 1e4 (already the kind baseline)
            "paper-6.4" => {}
            "linreg" => {}
            _ => unreachable!(),
        }
        Ok(c)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("p and n must be >= 1".into()));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be >= 1".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidConfig("sigma must be >= 0".into()));
        }
        match self.kind {
            ExperimentKind::DecompositionSweep if self.etas.is_empty() => {
                Err(Error::InvalidConfig("etas must be non-empty".into()))
            }
            ExperimentKind::Neighbors if self.lambdas.is_empty() => {
                Err(Error::InvalidConfig("lambdas must be non-empty".into()))
            }
            ExperimentKind::LinregExact if self.queries == 0 => {
                Err(Error::InvalidConfig("queries must be >= 1".into()))
            }
            ExperimentKind::Neighbors | ExperimentKind::Probe | ExperimentKind::Pca
                if self.steps == 0 =>
            {
                Err(Error::InvalidConfig(
                    "analysis kinds need steps >= 1 (the kernel is taken at K - 1)".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// `(lambda, jaccard)` summary row for the neighbor experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaOverlap {
    pub lambda: f64,
    pub jaccard: f64,
}

/// Flat summary written to `report.json`. Field order is fixed, so equal
/// runs serialize to identical bytes; unused fields are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_radius_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exhaustive_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mismatches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs_checked: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_l_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_l_baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_abs_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_monotone: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlaps: Option<Vec<LambdaOverlap>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ntk_probe_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_probe_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedded_identity_max_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca_variances: Option<Vec<f64>>,
    /// `pass` / `fail` against this kind's built-in threshold, when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<String>,
}

impl Report {
    fn new(config: &ExperimentConfig) -> Self {
        Report {
            kind: config.kind,
            config: config.clone(),
            initial_loss: None,
            final_loss: None,
            train_accuracy: None,
            boundary_radius_mean: None,
            boundary_points: None,
            seen_accuracy: None,
            unseen_accuracy: None,
            exhaustive_accuracy: None,
            exact_match: None,
            mismatches: None,
            inputs_checked: None,
            train_mse: None,
            cross_l_mse: None,
            cross_l_baseline: None,
            mean_residual: None,
            max_residual: None,
            mean_abs_residual: None,
            max_abs_residual: None,
            sweep: None,
            residual_monotone: None,
            overlaps: None,
            ntk_probe_accuracy: None,
            raw_probe_accuracy: None,
            embedded_identity_max_err: None,
            pca_variances: None,
            check: None,
        }
    }

    fn set_check(&mut self, pass: bool) {
        self.check = Some(if pass { "pass" } else { "fail" }.into());
    }
}

/// Result of one [`run`] call.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: Report,
    /// `Some(false)` iff this kind has a built-in threshold and it failed.
    pub check_passed: Option<bool>,
    pub out_dir: PathBuf,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn append_log(dir: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("run.log"))?;
    let ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    writeln!(f, "[{ms}] {line}")?;
    Ok(())
}

fn losses_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (k, l) in losses.iter().enumerate() {
        out.push_str(&format!("{k},{l:.16e}\n"));
    }
    out
}

fn train_config(c: &ExperimentConfig, meta: DatasetMeta) -> TrainConfig {
    TrainConfig {
        steps: c.steps,
        schedule: Schedule::Constant(c.eta),
        loss: LossKind::Mse,
        seed: c.seed,
        stride: c.stride,
        dataset: Some(meta),
    }
}

/// Trains while keeping only the final weights (plus the whole loss curve).
fn train_final_only(
    spec: &ModelSpec,
    w0: &ParamVector,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(ParamVector, Vec<f64>)> {
    let mut final_w = w0.clone();
    let losses = train_with_observer(spec, w0, dataset, cfg, |k, _, w| {
        if k == cfg.steps {
            final_w = w.clone();
        }
        Ok(())
    })?;
    Ok((final_w, losses))
}

/// Trains while keeping only `w(K-1)` and `w(K)`; enough for every analysis
/// that reads the kernel at the last step before convergence.
fn train_last_two(
    spec: &ModelSpec,
    w0: &ParamVector,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<LearningPath> {
    let mut snaps: Vec<Snapshot> = Vec::with_capacity(2);
    let losses = train_with_observer(spec, w0, dataset, cfg, |k, eta, w| {
        if k + 1 >= cfg.steps {
            snaps.push(Snapshot {
                k,
                eta,
                w: w.clone(),
            });
        }
        Ok(())
    })?;
    LearningPath::new(spec.clone(), snaps, losses, cfg.stride.max(1))
}

/// Mean radius of the network's zero level set, located by sign changes
/// between adjacent nodes of a `grid x grid` lattice over
/// `[-extent, extent]^2` (crossing positions linearly interpolated).
/// Returns the mean and the number of crossings found.
pub fn boundary_radius(
    spec: &ModelSpec,
    w: &ParamVector,
    grid: usize,
    extent: f64,
) -> Result<Option<(f64, usize)>> {
    if spec.input_dim() != 2 || spec.output_dim() != 1 {
        return Err(Error::InvalidSpec(
            "boundary radius needs a scalar model on 2-D inputs".into(),
        ));
    }
    if grid < 2 {
        return Err(Error::InvalidConfig("grid must be >= 2".into()));
    }
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (grid - 1) as f64;
    let mut values = vec![0.0; grid * grid];
    for i in 0..grid {
        for j in 0..grid {
            values[i * grid + j] = forward(spec, w, &[coord(i), coord(j)])?[0];
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut consider = |a: f64, b: f64, pa: [f64; 2], pb: [f64; 2]| {
        if (a < 0.0) != (b < 0.0) {
            let t = a / (a - b); // linear zero crossing between the nodes
            let x = pa[0] + t * (pb[0] - pa[0]);
            let y = pa[1] + t * (pb[1] - pa[1]);
            sum += (x * x + y * y).sqrt();
            count += 1;
        }
    };
    for i in 0..grid {
        for j in 0..grid {
            let a = values[i * grid + j];
            let pa = [coord(i), coord(j)];
            if i + 1 < grid {
                consider(a, values[(i + 1) * grid + j], pa, [coord(i + 1), coord(j)]);
            }
            if j + 1 < grid {
                consider(a, values[i * grid + j + 1], pa, [coord(i), coord(j + 1)]);
            }
        }
    }
    Ok(if count == 0 {
        None
    } else {
        Some((sum / count as f64, count))
    })
}

/// Uniform `[-1, 1]^p` points, the shared query/input generator for the
/// linear-regression experiment.
fn uniform_points(rng: &mut ChaCha8Rng, count: usize, p: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Uniform inputs labeled by a random linear teacher; the decomposition is
/// exact for the linear model regardless of the data, this just makes the
/// loss curve meaningful.
fn linreg_dataset(p: usize, n: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xs = uniform_points(&mut rng, n, p);
    let labels: Vec<f64> = xs
        .iter()
        .map(|x| x.iter().zip(&teacher).map(|(a, b)| a * b).sum())
        .collect();
    let inputs: Vec<f64> = xs.into_iter().flatten().collect();
    LabeledDataset::new(
        p,
        1,
        inputs,
        labels,
        DatasetMeta::Custom {
            name: "linreg-uniform".into(),
        },
    )
}

fn random_bits(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p)
        .map(|_| if rng.random_range(0..2u8) == 1 { 1.0 } else { 0.0 })
        .collect()
}

/// Runs one experiment, writing `report.json` and kind-specific artifacts
/// into `out_dir` (created if missing).
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    append_log(out_dir, &format!("start kind={} seed={}", config.kind, config.seed))?;
    let mut report = Report::new(config);
    match config.kind {
        ExperimentKind::BallSphere | ExperimentKind::Halfspace => {
            run_planar(config, out_dir, &mut report)?
        }
        ExperimentKind::TwoPeak => run_two_peak(config, out_dir, &mut report)?,
        ExperimentKind::ParityVerify => run_parity_verify(config, &mut report)?,
        ExperimentKind::ParityTrain => run_parity_train(config, out_dir, &mut report)?,
        ExperimentKind::LinregExact => run_linreg(config, out_dir, &mut report)?,
        ExperimentKind::DecompositionSweep => run_sweep(config, out_dir, &mut report)?,
        ExperimentKind::Neighbors => run_neighbors(config, out_dir, &mut report)?,
        ExperimentKind::Probe => run_probe(config, out_dir, &mut report)?,
        ExperimentKind::Pca => run_pca(config, out_dir, &mut report)?,
    }
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write_file(out_dir, "report.json", &format!("{json}\n"))?;
    append_log(out_dir, "end")?;
    let check_passed = report.check.as_deref().map(|c| c == "pass");
    Ok(RunSummary {
        report,
        check_passed,
        out_dir: out_dir.to_path_buf(),
    })
}

fn run_planar(config: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    if config.p != 2 {
        return Err(Error::InvalidConfig(format!(
            "{} is a 2-D experiment, got p = {}",
            config.kind, config.p
        )));
    }
    let dataset = match config.kind {
        ExperimentKind::BallSphere => gen_ball_sphere(config.n, config.seed)?,
        _ => gen_halfspace(config.n, config.seed)?,
    };
    dataset.save_csv(&out.join("dataset.csv"))?;
    let spec = ModelSpec::mlp(2, config.r);
    let w0 = init_params(&spec, config.seed)?;
    let cfg = train_config(config, dataset.meta.clone());
    let (final_w, losses) = if config.save_path {
        let path = train_full_batch(&spec, &w0, &dataset, &cfg)?;
        save_path(&path, Some(&cfg), &out.join("path.bin"))?;
        (path.final_params().clone(), path.losses.clone())
    } else {
        train_final_only(&spec, &w0, &dataset, &cfg)?
    };
    write_file(out, "losses.csv", &losses_csv(&losses))?;
    report.initial_loss = losses.first().copied();
    report.final_loss = losses.last().copied();
    let acc = accuracy(&spec, &final_w, &dataset)?;
    report.train_accuracy = Some(acc);
    if config.kind == ExperimentKind::BallSphere {
        if let Some((mean, count)) = boundary_radius(&spec, &final_w, 200, 1.25)? {
            report.boundary_radius_mean = Some(mean);
            report.boundary_points = Some(count);
        }
        report.set_check(acc == 1.0);
    } else {
        report.set_check(acc >= 0.995);
    }
    Ok(())
}

fn run_two_peak(config: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let full = enumerate_two_peak(config.p)?;
    if config.n >= full.len() {
        return Err(Error::InvalidConfig(format!(
            "two-peak training set must be a strict subset: n = {} of {}",
            config.n,
            full.len()
        )));
    }
    let (seen, unseen) = full.sample_split(config.n, config.seed)?;
    seen.save_csv(&out.join("dataset.csv"))?;
    let spec = ModelSpec::mlp(config.p, config.r);
    let w0 = init_params(&spec, config.seed)?;
    let cfg = train_config(config, seen.meta.clone());
    let (final_w, losses) = if config.save_path {
        let path = train_full_batch(&spec, &w0, &seen, &cfg)?;
        save_path(&path, Some(&cfg), &out.join("path.bin"))?;
        (path.final_params().clone(), path.losses.clone())
    } else {
        train_final_only(&spec, &w0, &seen, &cfg)?
    };
    write_file(out, "losses.csv", &losses_csv(&losses))?;
    report.initial_loss = losses.first().copied();
    report.final_loss = losses.last().copied();
    report.seen_accuracy = Some(accuracy(&spec, &final_w, &seen)?);
    report.unseen_accuracy = Some(accuracy(&spec, &final_w, &unseen)?);
    let exhaustive = accuracy(&spec, &final_w, &full)?;
    report.exhaustive_accuracy = Some(exhaustive);
    report.train_accuracy = report.seen_accuracy;
    report.set_check(exhaustive == 1.0);
    Ok(())
}

fn run_parity_verify(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let (spec, w) = build_parity_network(config.p, config.r)?;
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    // exhaustive up to 2^12 inputs, seeded sampling beyond
    if config.p <= 12 {
        for bits in 0..(1u64 << config.p) {
            let x: Vec<f64> = (0..config.p)
                .map(|j| ((bits >> j) & 1) as f64)
                .collect();
            if forward(&spec, &w, &x)? != cumsum_mod2(&x)? {
                mismatches += 1;
            }
            checked += 1;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..10_000 {
            let x = random_bits(&mut rng, config.p);
            if forward(&spec, &w, &x)? != cumsum_mod2(&x)? {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    report.exact_match = Some(mismatches == 0);
    report.mismatches = Some(mismatches);
    report.inputs_checked = Some(checked);
    report.set_check(mismatches == 0);
    Ok(())
}

/// Per-coordinate mean squared error, `(1/(N q)) sum_n ||yhat_n - y_n||^2`.
fn per_coord_mse(spec: &ModelSpec, w: &ParamVector, ds: &LabeledDataset) -> Result<f64> {
    Ok(aggregate_loss(spec, w, ds)? / spec.output_dim() as f64)
}

fn run_parity_train(config: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let (spec, w_star) = build_parity_network(config.p, config.r)?;
    let w0 = match config.init {
        InitMode::Perturbed => perturb_params(&w_star, config.sigma, config.seed)?,
        InitMode::Random => init_params(&spec, config.seed)?,
    };
    let train_set = gen_xl_dataset(config.p, config.l, config.n, config.seed)?;
    train_set.save_csv(&out.join("dataset.csv"))?;
    let cfg = train_config(config, train_set.meta.clone());
    let (final_w, losses) = if config.save_path {
        let path = train_full_batch(&spec, &w0, &train_set, &cfg)?;
        save_path(&path, Some(&cfg), &out.join("path.bin"))?;
        (path.final_params().clone(), path.losses.clone())
    } else {
        train_final_only(&spec, &w0, &train_set, &cfg)?
    };
    write_file(out, "losses.csv", &losses_csv(&losses))?;
    report.initial_loss = losses.first().copied();
    report.final_loss = losses.last().copied();
    let mse = per_coord_mse(&spec, &final_w, &train_set)?;
    report.train_mse = Some(mse);
    report.train_accuracy = Some(accuracy(&spec, &final_w, &train_set)?);
    // cross-l generalization: evaluate on a longer-support distribution and
    // compare against the all-zeros predictor
    let test_set = gen_xl_dataset(
        config.p,
        config.test_l,
        config.test_n,
        config.seed.wrapping_add(1),
    )?;
    report.cross_l_mse = Some(per_coord_mse(&spec, &final_w, &test_set)?);
    let q = test_set.output_dim() as f64;
    let zeros: f64 = (0..test_set.len())
        .map(|i| test_set.label(i).iter().map(|y| y * y).sum::<f64>())
        .sum::<f64>()
        / (test_set.len() as f64 * q);
    report.cross_l_baseline = Some(zeros);
    report.set_check(mse <= 1e-6);
    Ok(())
}

fn run_linreg(config: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let dataset = linreg_dataset(config.p, config.n, config.seed)?;
    dataset.save_csv(&out.join("dataset.csv"))?;
    let spec = ModelSpec::linear(config.p);
    let w0 = init_params(&spec, config.seed)?;
    let mut qrng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let queries = uniform_points(&mut qrng, config.queries, config.p);
    let mut cfg = train_config(config, dataset.meta.clone());
    cfg.stride = 1; // the replay needs every snapshot
    let reports = match config.record {
        RecordMode::Snapshots => {
            let path = train_full_batch(&spec, &w0, &dataset, &cfg)?;
            if config.save_path {
                save_path(&path, Some(&cfg), &out.join("path.bin"))?;
            }
            write_file(out, "losses.csv", &losses_csv(&path.losses))?;
            report.initial_loss = path.losses.first().copied();
            report.final_loss = path.losses.last().copied();
            domingos_rhs_batch(&path, &dataset, &queries)?
        }
        RecordMode::Streaming => {
            let mut acc = StreamingAccumulator::open(&spec, queries.clone())?;
            let losses = train_with_observer(&spec, &w0, &dataset, &cfg, |k, eta, w| {
                acc.update(k, eta, w, &dataset)
            })?;
            write_file(out, "losses.csv", &losses_csv(&losses))?;
            report.initial_loss = losses.first().copied();
            report.final_loss = losses.last().copied();
            acc.finalize()?
        }
    };
    let rel: Vec<f64> = reports.iter().map(|r| r.relative_residual).collect();
    let abs: Vec<f64> = reports.iter().map(|r| r.residual).collect();
    let count = rel.len().max(1) as f64;
    report.mean_residual = Some(rel.iter().sum::<f64>() / count);
    let max_rel = rel.iter().copied().fold(0.0_f64, f64::max);
    report.max_residual = Some(max_rel);
    report.mean_abs_residual = Some(abs.iter().sum::<f64>() / count);
    report.max_abs_residual = Some(abs.iter().copied().fold(0.0_f64, f64::max));
    report.set_check(max_rel <= 1e-9);
    Ok(())
}

fn run_sweep(config: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    if config.p != 2 {
        return Err(Error::InvalidConfig(format!(
            "decomposition-sweep runs on the 2-D ball-vs-sphere task, got p = {}",
            config.p
        )));
    }
    let dataset = gen_ball_sphere(config.n, config.seed)?;
    let spec = ModelSpec::mlp(2, config.r);
    let w0 = init_params(&spec, config.seed)?;
    let mut qrng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let queries: Vec<Vec<f64>> = (0..config.queries)
        .map(|_| {
            (0..2)
                .map(|_| qrng.random_range(-1.25..1.25))
                .collect()
        })
        .collect();
    let rows = decomposition_residual_sweep(&spec, &w0, &dataset, &config.etas, config.steps, &queries)?;
    write_file(out, "residuals.csv", &sweep_to_csv(&rows))?;
    // monotone along descending eta: the O(sum eta_k^2) remainder shrinks
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| b.eta.partial_cmp(&a.eta).expect("finite eta"));
    let monotone = sorted
        .windows(2)
        .all(|w| w[0].mean_residual > w[1].mean_residual);
    report.sweep = Some(rows);
    report.residual_monotone = Some(monotone);
    report.set_check(monotone);
    Ok(())
}

/// Shared setup for the analysis kinds: ball-vs-sphere data, MLP, a path
/// retaining `w(K-1)` and `w(K)`.
fn analysis_path(config: &ExperimentConfig) -> Result<(LabeledDataset, LearningPath)> {
    if config.p != 2 {
        return Err(Error::InvalidConfig(format!(
            "{} runs on the 2-D ball-vs-sphere task, got p = {}",
            config.kind, config.p
        )));
    }
    let dataset = gen_ball_sphere(config.n, config.seed)?;
    let spec = ModelSpec::mlp(2, config.r);
    let w0 = init_params(&spec, config.seed)?;
    let cfg = train_config(config, dataset.meta.clone());
    let path = train_last_two(&spec, &w0, &dataset, &cfg)?;
    Ok((dataset, path))
}

fn run_neighbors(config: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let (dataset, path) = analysis_path(config)?;
    // unit direction drawn from a seed-derived stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let u = {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        vec![theta.cos(), theta.sin()]
    };
    let nr: NeighborReport = neighbor_sweep(&path, &dataset, &u, &config.lambdas)?;
    write_file(out, "neighbors.csv", &nr.to_csv())?;
    report.train_accuracy = Some(accuracy(&path.spec, path.final_params(), &dataset)?);
    report.overlaps = Some(
        nr.entries
            .iter()
            .map(|e| LambdaOverlap {
                lambda: e.lambda,
                jaccard: e.jaccard,
            })
            .collect(),
    );
    Ok(())
}

fn run_probe(config: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let (dataset, path) = analysis_path(config)?;
    let spec = path.spec.clone();
    let final_w = path.final_params().clone();
    report.train_accuracy = Some(accuracy(&spec, &final_w, &dataset)?);
    let labels: Vec<f64> = (0..dataset.len()).map(|i| dataset.label(i)[0]).collect();
    // probe the NTK feature space at k = K - 1
    let feats = feature_matrix(&path, &dataset, config.steps - 1)?;
    let ntk_probe = linear_probe_train(&feats, &labels, &ProbeConfig::default())?;
    // control: probe the raw 2-D inputs
    let mut raw = crate::linalg::Mat::zeros(dataset.len(), 2);
    for i in 0..dataset.len() {
        raw.row_mut(i).copy_from_slice(dataset.input(i));
    }
    let raw_probe = linear_probe_train(&raw, &labels, &ProbeConfig::default())?;
    report.ntk_probe_accuracy = Some(ntk_probe.train_accuracy);
    report.raw_probe_accuracy = Some(raw_probe.train_accuracy);
    // embedded-regressor identity at the trained weights
    let a = embedded_regressor(&spec, &final_w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let x = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let phi = param_gradient(&spec, &final_w, &x)?;
        let lhs: f64 = phi.data.iter().zip(&a).map(|(p, q)| p * q).sum();
        let rhs = forward(&spec, &final_w, &x)?[0];
        worst = worst.max((lhs - rhs).abs());
    }
    report.embedded_identity_max_err = Some(worst);
    write_file(
        out,
        "probe.csv",
        &format!(
            "split,accuracy\nntk-features,{}\nraw-inputs,{}\n",
            ntk_probe.train_accuracy, raw_probe.train_accuracy
        ),
    )?;
    report.set_check(
        ntk_probe.train_accuracy == 1.0
            && raw_probe.train_accuracy < 1.0
            && worst <= 1e-10,
    );
    Ok(())
}

fn run_pca(config: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let (dataset, path) = analysis_path(config)?;
    report.train_accuracy = Some(accuracy(&path.spec, path.final_params(), &dataset)?);
    let feats = feature_matrix(&path, &dataset, config.steps - 1)?;
    let (coords, variances) = pca_project(&feats, 2)?;
    let mut csv = String::from("index,label,c1,c2\n");
    for i in 0..dataset.len() {
        csv.push_str(&format!(
            "{},{},{:.16e},{:.16e}\n",
            i,
            dataset.label(i)[0],
            coords.get(i, 0),
            coords.get(i, 1)
        ));
    }
    write_file(out, "pca.csv", &csv)?;
    report.pca_variances = Some(variances);
    Ok(())
}
