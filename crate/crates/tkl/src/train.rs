//! Full-batch gradient descent with learning-path recording.
//!
//! The update rule is exactly `w(k+1) = w(k) - eta_k * grad L(w(k))` with the
//! aggregate loss `L(w) = (1/N) sum_n ||N(x_n; w) - y_n||^2`. No momentum, no
//! mini-batches, no adaptive rates: the kernel-machine decomposition covers
//! plain gradient descent only, and the verifier in the kernel module reuses
//! the very same loss derivative implemented here.
//!
//! The per-step batch gradient is a parallel map-reduce over samples using
//! fixed-size chunks reduced in chunk order, so results are bit-identical for
//! any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetMeta, LabeledDataset};
use crate::model::{backward, forward_with_tape, ModelSpec, ParamVector};
use crate::{Error, Result};

/// Fixed reduction chunk: results never depend on how many threads ran.
const GRAD_CHUNK: usize = 64;

/// Divergence guard threshold on the aggregate loss.
const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `L(yhat, y) = ||yhat - y||^2`, the only kind the decomposition uses.
    Mse,
}

/// Learning-rate schedule; constant is the paper's setting everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant(f64),
    PerStep(Vec<f64>),
}

impl Schedule {
    pub fn rate_at(&self, k: usize) -> f64 {
        match self {
            Schedule::Constant(eta) => *eta,
            Schedule::PerStep(v) => v[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of gradient steps `K`.
    pub steps: usize,
    pub schedule: Schedule,
    pub loss: LossKind,
    pub seed: u64,
    /// Record every `stride`-th snapshot (0 and K are always kept).
    pub stride: usize,
    /// Provenance of the dataset this config is meant for, if known.
    pub dataset: Option<DatasetMeta>,
}

impl TrainConfig {
    pub fn constant(steps: usize, eta: f64, seed: u64) -> Self {
        TrainConfig {
            steps,
            schedule: Schedule::Constant(eta),
            loss: LossKind::Mse,
            seed,
            stride: 1,
            dataset: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidConfig("snapshot stride must be >= 1".into()));
        }
        match &self.schedule {
            Schedule::Constant(eta) => {
                if !(*eta > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "learning rate must be > 0, got {eta}"
                    )));
                }
            }
            Schedule::PerStep(v) => {
                if v.len() != self.steps {
                    return Err(Error::InvalidConfig(format!(
                        "per-step schedule has {} rates but K = {}",
                        v.len(),
                        self.steps
                    )));
                }
                if let Some(bad) = v.iter().find(|e| !(**e > 0.0)) {
                    return Err(Error::InvalidConfig(format!(
                        "learning rate must be > 0, got {bad}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One recorded point of the learning path: parameters before step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    /// Rate applied by step `k`; 0.0 on the final snapshot (no step follows).
    pub eta: f64,
    pub w: ParamVector,
}

/// The recorded trajectory `w(0), ..., w(K)` of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningPath {
    pub spec: ModelSpec,
    snapshots: Vec<Snapshot>,
    /// Aggregate loss at every step `k = 0..=K` (independent of stride).
    pub losses: Vec<f64>,
    stride: usize,
}

impl LearningPath {
    pub fn new(
        spec: ModelSpec,
        snapshots: Vec<Snapshot>,
        losses: Vec<f64>,
        stride: usize,
    ) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::EmptyPath);
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("path stride must be >= 1".into()));
        }
        let d = spec.param_count();
        let mut prev: Option<usize> = None;
        for s in &snapshots {
            if s.w.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: d,
                    got: s.w.len(),
                    context: "snapshot parameter length",
                });
            }
            if let Some(p) = prev {
                if s.k <= p {
                    return Err(Error::NonMonotonicUpdate { got: s.k, prev: p });
                }
            }
            prev = Some(s.k);
        }
        Ok(LearningPath {
            spec,
            snapshots,
            losses,
            stride,
        })
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots.len()
    }

    pub fn snapshot(&self, i: usize) -> &Snapshot {
        &self.snapshots[i]
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn initial(&self) -> &ParamVector {
        &self.snapshots[0].w
    }

    pub fn final_params(&self) -> &ParamVector {
        &self.snapshots[self.snapshots.len() - 1].w
    }

    /// Last step index `K`.
    pub fn final_step(&self) -> usize {
        self.snapshots[self.snapshots.len() - 1].k
    }

    /// Errors unless every step `k = 0..=K` was recorded (stride 1), which the
    /// decomposition verifier requires.
    pub fn require_unit_stride(&self) -> Result<()> {
        if self.stride != 1 || self.snapshots.len() != self.final_step() + 1 {
            return Err(Error::StrideNotOne(self.stride));
        }
        Ok(())
    }
}

/// `L(yhat, y) = ||yhat - y||^2`.
pub fn loss_value(yhat: &[f64], y: &[f64]) -> Result<f64> {
    if yhat.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: y.len(),
            got: yhat.len(),
            context: "loss operand dimensions",
        });
    }
    Ok(yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `dL/dyhat`, coordinate-wise `2 (yhat_m - y_m)`.
pub fn loss_prime(yhat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if yhat.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: y.len(),
            got: yhat.len(),
            context: "loss operand dimensions",
        });
    }
    Ok(yhat.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect())
}

/// Aggregate loss gradient and value:
/// `grad = (1/N) sum_n J_n^T L'(yhat_n, y_n)`, `loss = (1/N) sum_n L(yhat_n, y_n)`.
///
/// Samples are processed in fixed chunks of [`GRAD_CHUNK`] reduced in chunk
/// order, making the floating-point result independent of thread count.
pub fn batch_gradient(
    spec: &ModelSpec,
    w: &ParamVector,
    dataset: &LabeledDataset,
) -> Result<(Vec<f64>, f64)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.input_dim() != spec.input_dim() || dataset.output_dim() != spec.output_dim() {
        return Err(Error::DatasetMismatch(format!(
            "dataset is {}x{} but model wants {}x{}",
            dataset.input_dim(),
            dataset.output_dim(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    let n = dataset.len();
    let d = spec.param_count();
    let ranges: Vec<(usize, usize)> = (0..n)
        .step_by(GRAD_CHUNK)
        .map(|s| (s, (s + GRAD_CHUNK).min(n)))
        .collect();
    let partials: Vec<Result<(Vec<f64>, f64)>> = ranges
        .par_iter()
        .map(|&(start, end)| {
            let mut grad = vec![0.0; d];
            let mut loss = 0.0;
            let mut cot = vec![0.0; spec.output_dim()];
            for i in start..end {
                let tape = forward_with_tape(spec, w, dataset.input(i))?;
                let y = dataset.label(i);
                loss += loss_value(&tape.outputs, y)?;
                for (c, (a, b)) in cot.iter_mut().zip(tape.outputs.iter().zip(y)) {
                    *c = 2.0 * (a - b);
                }
                backward(spec, w, &tape, &cot, &mut grad)?;
            }
            Ok((grad, loss))
        })
        .collect();
    let mut grad = vec![0.0; d];
    let mut loss = 0.0;
    for partial in partials {
        let (g, l) = partial?;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
        loss += l;
    }
    let inv_n = 1.0 / n as f64;
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok((grad, loss * inv_n))
}

/// Aggregate loss `(1/N) sum_n ||N(x_n; w) - y_n||^2` alone.
pub fn aggregate_loss(spec: &ModelSpec, w: &ParamVector, dataset: &LabeledDataset) -> Result<f64> {
    batch_gradient(spec, w, dataset).map(|(_, l)| l)
}

/// One exact full-batch step `w - eta * grad L(w)`.
pub fn gd_step(
    spec: &ModelSpec,
    w: &ParamVector,
    dataset: &LabeledDataset,
    eta: f64,
) -> Result<ParamVector> {
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be > 0, got {eta}"
        )));
    }
    let (grad, _) = batch_gradient(spec, w, dataset)?;
    let mut next = w.clone();
    for (wi, gi) in next.data_mut().iter_mut().zip(&grad) {
        *wi -= eta * gi;
    }
    Ok(next)
}

/// Core loop: the observer sees `(k, eta_k, w(k))` for every `k = 0..=K`
/// (with `eta = 0` at `k = K`, where no step follows). Returns the per-step
/// aggregate losses, `K + 1` of them.
pub fn train_with_observer<F>(
    spec: &ModelSpec,
    w0: &ParamVector,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    mut observe: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, f64, &ParamVector) -> Result<()>,
{
    config.validate()?;
    let mut w = w0.clone();
    let mut losses = Vec::with_capacity(config.steps + 1);
    for k in 0..=config.steps {
        let (grad, loss) = batch_gradient(spec, &w, dataset)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step: k, loss });
        }
        losses.push(loss);
        if k < config.steps {
            let eta = config.schedule.rate_at(k);
            observe(k, eta, &w)?;
            for (wi, gi) in w.data_mut().iter_mut().zip(&grad) {
                *wi -= eta * gi;
            }
        } else {
            observe(k, 0.0, &w)?;
        }
    }
    Ok(losses)
}

/// Trains and records the learning path. Snapshots are kept at every
/// `stride`-th step; `k = 0` and `k = K` are always present, and the final
/// snapshot is `w(K)`.
pub fn train_full_batch(
    spec: &ModelSpec,
    w0: &ParamVector,
    dataset: &LabeledDataset,
    config: &TrainConfig,
) -> Result<LearningPath> {
    let mut snapshots = Vec::new();
    let stride = config.stride;
    let steps = config.steps;
    let losses = train_with_observer(spec, w0, dataset, config, |k, eta, w| {
        if k % stride == 0 || k == steps {
            snapshots.push(Snapshot {
                k,
                eta,
                w: w.clone(),
            });
        }
        Ok(())
    })?;
    LearningPath::new(spec.clone(), snapshots, losses, stride)
}

/// Thresholded classification accuracy. If any label coordinate is negative
/// the dataset uses the ±1 convention (`value >= 0` predicts +1); otherwise
/// labels are {0,1} and each coordinate thresholds at 0.5. A sample counts as
/// correct only if every coordinate matches.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let signed = (0..dataset.len()).any(|i| dataset.label(i).iter().any(|&v| v < 0.0));
    let correct: Result<u64> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let yhat = crate::model::forward(spec, w, dataset.input(i))?;
            let y = dataset.label(i);
            let ok = yhat.iter().zip(y).all(|(a, b)| {
                if signed {
                    (*a >= 0.0) == (*b >= 0.0)
                } else {
                    (*a >= 0.5) == (*b >= 0.5)
                }
            });
            Ok(ok as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b));
    Ok(correct? as f64 / dataset.len() as f64)
}
