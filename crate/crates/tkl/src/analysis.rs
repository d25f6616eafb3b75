//! Analyses on top of trained paths: NTK-vs-Euclidean neighbor comparison,
//! linear separability of the feature space, the embedded last-layer
//! regressor, and a PCA projection of feature vectors.
//!
//! The neighbor algorithm follows the paper's recipe: draw a unit direction
//! `u`, scale it by each lambda in a grid, rank all training points by the
//! normalized NTK similarity to `lambda u` (kernel taken at `k = K - 1`),
//! and compare the top-100 set against the Euclidean top-100.
//!
//! The SVM of the separability experiment is replaced by a deterministic
//! L2-regularized hinge-loss probe trained with full-batch subgradient
//! descent; a max-margin separator exists whenever the trained network is
//! 100% accurate, because its own last layer is one (see
//! [`embedded_regressor`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::kernel::normalized_ntk;
use crate::linalg::{top_eigenpairs_matvec, Mat};
use crate::model::{param_gradient, ModelSpec, ParamVector};
use crate::train::LearningPath;
use crate::{Error, Result};

/// Neighbor lists are cut at this size, as in the paper's figures.
pub const TOP_NEIGHBORS: usize = 100;

/// Default lambda grid; the paper says only "For different values of lambda".
pub const DEFAULT_LAMBDAS: [f64; 7] = [0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5];

/// Neighbor rankings for one lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub lambda: f64,
    /// Dataset indices by descending normalized-NTK similarity to `lambda u`,
    /// ties broken by ascending index; length `min(100, N)`.
    pub ntk_indices: Vec<usize>,
    /// Similarities aligned with `ntk_indices`.
    pub ntk_similarities: Vec<f64>,
    /// Dataset indices by ascending Euclidean distance to `lambda u`.
    pub euclidean_indices: Vec<usize>,
    /// Jaccard overlap of the two index sets.
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub direction: Vec<f64>,
    /// Path step the kernel was taken at (`K - 1`).
    pub snapshot_k: usize,
    pub entries: Vec<NeighborEntry>,
}

impl NeighborReport {
    /// CSV rows `lambda,rank,index,similarity` for the NTK rankings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,rank,index,similarity\n");
        for e in &self.entries {
            for (rank, (idx, sim)) in e.ntk_indices.iter().zip(&e.ntk_similarities).enumerate() {
                out.push_str(&format!("{},{},{},{:.16e}\n", e.lambda, rank + 1, idx, sim));
            }
        }
        out
    }
}

/// Indices of the `k` nearest dataset points to `query` in Euclidean
/// distance, ascending, ties broken by ascending index.
pub fn euclidean_topk(dataset: &LabeledDataset, query: &[f64], k: usize) -> Result<Vec<usize>> {
    if query.len() != dataset.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: dataset.input_dim(),
            got: query.len(),
            context: "query dimension",
        });
    }
    let mut order: Vec<(f64, usize)> = (0..dataset.len())
        .map(|i| {
            let d2: f64 = dataset
                .input(i)
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2, i)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    Ok(order.into_iter().take(k).map(|(_, i)| i).collect())
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::HashSet<usize> = a.iter().copied().collect();
    let sb: std::collections::HashSet<usize> = b.iter().copied().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// The snapshot holding `w(K - 1)`, where the paper evaluates the NTK.
fn penultimate<'a>(path: &'a LearningPath) -> Result<&'a ParamVector> {
    let want = path.final_step().checked_sub(1).ok_or(Error::MissingSnapshot(0))?;
    path.snapshots()
        .iter()
        .find(|s| s.k == want)
        .map(|s| &s.w)
        .ok_or(Error::MissingSnapshot(want))
}

/// The paper's neighbor-visualization algorithm over a lambda grid.
pub fn neighbor_sweep(
    path: &LearningPath,
    dataset: &LabeledDataset,
    u: &[f64],
    lambdas: &[f64],
) -> Result<NeighborReport> {
    let spec = &path.spec;
    if u.len() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: spec.input_dim(),
            got: u.len(),
            context: "direction dimension",
        });
    }
    let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "direction must be a unit vector, |u| = {norm}"
        )));
    }
    let w = penultimate(path)?;
    let top = TOP_NEIGHBORS.min(dataset.len());
    let mut entries = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let query: Vec<f64> = u.iter().map(|v| lambda * v).collect();
        let sims: Vec<f64> = (0..dataset.len())
            .into_par_iter()
            .map(|n| normalized_ntk(spec, w, &query, dataset.input(n)))
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.sort_by(|&i, &j| {
            sims[j]
                .partial_cmp(&sims[i])
                .expect("similarities are finite")
                .then(i.cmp(&j))
        });
        order.truncate(top);
        let ntk_similarities: Vec<f64> = order.iter().map(|&i| sims[i]).collect();
        let euclidean_indices = euclidean_topk(dataset, &query, top)?;
        let jac = jaccard(&order, &euclidean_indices);
        entries.push(NeighborEntry {
            lambda,
            ntk_indices: order,
            ntk_similarities,
            euclidean_indices,
            jaccard: jac,
        });
    }
    Ok(NeighborReport {
        direction: u.to_vec(),
        snapshot_k: path.final_step() - 1,
        entries,
    })
}

/// `N x d` matrix whose row `n` is the feature vector `phi(x_n)` at the
/// snapshot with step index `k`.
pub fn feature_matrix(path: &LearningPath, dataset: &LabeledDataset, k: usize) -> Result<Mat> {
    let snap = path
        .snapshots()
        .iter()
        .find(|s| s.k == k)
        .ok_or(Error::MissingSnapshot(k))?;
    let spec = &path.spec;
    let d = spec.param_count();
    let rows: Vec<Vec<f64>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| param_gradient(spec, &snap.w, dataset.input(i)).map(|f| f.data))
        .collect::<Result<_>>()?;
    let mut m = Mat::zeros(dataset.len(), d);
    for (i, row) in rows.into_iter().enumerate() {
        m.row_mut(i).copy_from_slice(&row);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub margin: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 5_000,
            learning_rate: 1e-2,
            l2: 1e-4,
            margin: 1.0,
        }
    }
}

/// Linear classifier `sign(<v, f> + c)` on feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_accuracy: f64,
    /// Final value of the regularized hinge objective.
    pub final_loss: f64,
    pub steps: usize,
}

impl LinearProbe {
    pub fn decision(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        if self.decision(features) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Deterministic hinge-loss probe: minimizes
/// `l2 * |v|^2 + (1/N) sum_i max(0, margin - y_i (<v, f_i> + c))`
/// by full-batch subgradient descent from zero init.
pub fn linear_probe_train(
    features: &Mat,
    labels: &[f64],
    config: &ProbeConfig,
) -> Result<LinearProbe> {
    let n = features.rows;
    if n == 0 || labels.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: labels.len(),
            context: "probe label count",
        });
    }
    if labels.iter().any(|y| y.abs() != 1.0) {
        return Err(Error::InvalidConfig(
            "probe labels must be +1 or -1".into(),
        ));
    }
    if labels.iter().all(|&y| y > 0.0) || labels.iter().all(|&y| y < 0.0) {
        return Err(Error::SingleClass);
    }
    let d = features.cols;
    let mut v = vec![0.0; d];
    let mut c = 0.0;
    let inv_n = 1.0 / n as f64;
    const CHUNK: usize = 64;
    let ranges: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(n)))
        .collect();
    let mut objective = 0.0;
    for _ in 0..config.steps {
        // chunk-ordered reduction keeps the result thread-count independent
        let partials: Vec<(Vec<f64>, f64, f64)> = ranges
            .par_iter()
            .map(|&(start, end)| {
                let mut gv = vec![0.0; d];
                let mut gc = 0.0;
                let mut hinge = 0.0;
                for i in start..end {
                    let f = features.row(i);
                    let y = labels[i];
                    let m = y * (v.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + c);
                    if m < config.margin {
                        hinge += config.margin - m;
                        for (g, fi) in gv.iter_mut().zip(f) {
                            *g -= y * fi;
                        }
                        gc -= y;
                    }
                }
                (gv, gc, hinge)
            })
            .collect();
        let mut gv = vec![0.0; d];
        let mut gc = 0.0;
        let mut hinge = 0.0;
        for (pgv, pgc, ph) in partials {
            for (a, b) in gv.iter_mut().zip(&pgv) {
                *a += b;
            }
            gc += pgc;
            hinge += ph;
        }
        let reg: f64 = v.iter().map(|x| x * x).sum();
        objective = config.l2 * reg + hinge * inv_n;
        for (vi, gi) in v.iter_mut().zip(&gv) {
            *vi -= config.learning_rate * (2.0 * config.l2 * *vi + gi * inv_n);
        }
        c -= config.learning_rate * gc * inv_n;
    }
    let mut correct = 0usize;
    for i in 0..n {
        let pred = v.iter().zip(features.row(i)).map(|(a, b)| a * b).sum::<f64>() + c;
        if (pred >= 0.0) == (labels[i] >= 0.0) {
            correct += 1;
        }
    }
    Ok(LinearProbe {
        weights: v,
        bias: c,
        train_accuracy: correct as f64 / n as f64,
        final_loss: objective,
        steps: config.steps,
    })
}

/// The regressor hidden in the feature space: `a` carries the model's own
/// last-layer weights placed at their gradient coordinates, so that
/// `<phi_m(x), a> = N_m(x; w)` exactly for every input and every output.
///
/// For the MLP these are `(W1, b1)` (and `grad_{b1} N = 1` makes the `b1`
/// coordinate of `a` equal `b1` itself); for the linear model `a = w`; for
/// the conv stack, the last block's combine weights and bias.
pub fn embedded_regressor(spec: &ModelSpec, w: &ParamVector) -> Result<Vec<f64>> {
    spec.validate()?;
    let layout = spec.layout();
    let mut a = vec![0.0; spec.param_count()];
    let last_names: Vec<String> = match spec {
        ModelSpec::Mlp { .. } => vec!["W1".into(), "b1".into()],
        ModelSpec::Linear { .. } => vec!["A".into()],
        ModelSpec::Conv1dParity { .. } => {
            let b = spec.conv_blocks() - 1;
            vec![format!("comb_w{b}"), format!("comb_b{b}")]
        }
    };
    for name in last_names {
        let seg = layout.segment(&name).expect("layout segment exists");
        a[seg.range()].copy_from_slice(&w.data()[seg.range()]);
    }
    Ok(a)
}

/// Projects centered feature rows onto the top principal directions.
/// Returns the `N x dims` coordinates and the per-component variances
/// (non-increasing). The covariance is never formed: power iteration works
/// through `X^T (X v)` matvecs.
pub fn pca_project(features: &Mat, dims: usize) -> Result<(Mat, Vec<f64>)> {
    let n = features.rows;
    let d = features.cols;
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    let dims = dims.min(d);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let inv_n = 1.0 / n as f64;
    // C v = (1/N) X_c^T (X_c v)
    let matvec = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..n {
            let row = features.row(i);
            let proj: f64 = row
                .iter()
                .zip(&mean)
                .zip(v)
                .map(|((x, m), vi)| (x - m) * vi)
                .sum();
            for ((o, x), m) in out.iter_mut().zip(row).zip(&mean) {
                *o += proj * (x - m);
            }
        }
        for o in out.iter_mut() {
            *o *= inv_n;
        }
    };
    let pairs = top_eigenpairs_matvec(d, dims, 500, matvec);
    let mut coords = Mat::zeros(n, dims);
    let mut variances = Vec::with_capacity(dims);
    for (e, (value, direction)) in pairs.iter().enumerate() {
        variances.push(*value);
        for i in 0..n {
            let proj: f64 = features
                .row(i)
                .iter()
                .zip(&mean)
                .zip(direction)
                .map(|((x, m), u)| (x - m) * u)
                .sum();
            coords.set(i, e, proj);
        }
    }
    Ok((coords, variances))
}
