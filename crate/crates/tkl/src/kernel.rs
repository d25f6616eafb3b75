//! Tangent kernel, path kernel, and the kernel-machine decomposition.
//!
//! The central identity verified here is the discrete decomposition of a
//! gradient-descent-trained model
//!
//! ```text
//! N(x; w(K)) = N(x; w(0))
//!            - (1/N) sum_n sum_{k<K} eta_k * L'(yhat_n(k), y_n) * K_NTK(x, x_n; k)
//!            + O(sum_k eta_k^2)
//! ```
//!
//! with `K_NTK(x, xt; k) = <grad_w N(x; w(k)), grad_w N(xt; w(k))>`, and its
//! multi-output analogue where the kernel is the Jacobian product
//! `J(x) J(xt)^T` and the loss derivative is a vector. The residual
//! `|lhs - rhs|` is the O(sum eta^2) remainder; all diagnostics in this
//! module revolve around measuring it.
//!
//! The loss derivative used on the right-hand side is the training module's
//! `loss_prime` — trainer and verifier share one implementation, which is
//! what makes the residual meaningful.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::linalg::{jacobi_eigen, Mat};
use crate::model::{
    backward, forward, forward_with_tape, param_gradient, param_jacobian, ModelSpec, ParamVector,
};
use crate::train::{accuracy, train_full_batch, LearningPath, TrainConfig};
use crate::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric kernel Gram matrix at one path snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    pub snapshot_index: usize,
    values: Vec<f64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Eigenvalues in ascending order (Jacobi; intended for small `n`).
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let m = Mat::from_data(self.n, self.n, self.values.clone())?;
        Ok(jacobi_eigen(&m)?.0)
    }

    /// (min, max) eigenvalue; the Mercer PSD property up to roundoff means
    /// `min >= -1e-8 * max`.
    pub fn eigen_range(&self) -> Result<(f64, f64)> {
        let vals = self.eigenvalues()?;
        Ok((vals[0], vals[vals.len() - 1]))
    }
}

/// One verified query of the decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub query: Vec<f64>,
    /// `N(x; w(K))`, length q.
    pub lhs: Vec<f64>,
    /// `N(x; w(0))`, the bias term `b(x)`, length q.
    pub bias: Vec<f64>,
    /// Per training sample `n`: `(1/N) sum_k eta_k K_NTK(x, x_n; k) L(k, n)`,
    /// each of length q.
    pub contributions: Vec<Vec<f64>>,
    /// `bias - sum_n contributions[n]`, summed in ascending `n` exactly as
    /// stored.
    pub rhs: Vec<f64>,
    /// `max_m |lhs_m - rhs_m|`.
    pub residual: f64,
    /// `residual / max(1, max_m |lhs_m|)`.
    pub relative_residual: f64,
    pub steps_used: usize,
}

impl DecompositionReport {
    fn from_parts(
        query: Vec<f64>,
        lhs: Vec<f64>,
        bias: Vec<f64>,
        contributions: Vec<Vec<f64>>,
        steps_used: usize,
    ) -> Self {
        let mut rhs = bias.clone();
        for c in &contributions {
            for (r, v) in rhs.iter_mut().zip(c) {
                *r -= v;
            }
        }
        let residual = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        let scale = lhs.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        DecompositionReport {
            query,
            lhs,
            bias,
            contributions,
            rhs,
            residual,
            relative_residual: residual / scale,
            steps_used,
        }
    }
}

/// `K_NTK(x, xt) = <grad_w N(x; w), grad_w N(xt; w)>` for scalar-output models.
pub fn tangent_kernel(spec: &ModelSpec, w: &ParamVector, x: &[f64], xt: &[f64]) -> Result<f64> {
    let gx = param_gradient(spec, w, x)?;
    let gt = param_gradient(spec, w, xt)?;
    Ok(dot(&gx.data, &gt.data))
}

/// Multi-output tangent kernel `J(x) J(xt)^T`, a q×q matrix.
pub fn tangent_kernel_matrix(
    spec: &ModelSpec,
    w: &ParamVector,
    x: &[f64],
    xt: &[f64],
) -> Result<Mat> {
    let jx = param_jacobian(spec, w, x)?;
    let jt = param_jacobian(spec, w, xt)?;
    let q = spec.output_dim();
    let mut out = Mat::zeros(q, q);
    for m in 0..q {
        for l in 0..q {
            out.set(m, l, dot(jx.row(m), jt.row(l)));
        }
    }
    Ok(out)
}

/// Cosine similarity `K(x,xt) / sqrt(K(x,x) K(xt,xt))`. Identical inputs give
/// exactly 1.0.
pub fn normalized_ntk(spec: &ModelSpec, w: &ParamVector, x: &[f64], xt: &[f64]) -> Result<f64> {
    let kxx = tangent_kernel(spec, w, x, x)?;
    if !(kxx > 0.0) {
        return Err(Error::ZeroSelfKernel);
    }
    if x == xt {
        return Ok(1.0);
    }
    let ktt = tangent_kernel(spec, w, xt, xt)?;
    if !(ktt > 0.0) {
        return Err(Error::ZeroSelfKernel);
    }
    Ok(tangent_kernel(spec, w, x, xt)? / (kxx * ktt).sqrt())
}

/// Gram matrix of the tangent kernel over all dataset inputs at one snapshot.
/// Entries `(i,j)` and `(j,i)` are the same stored value, so symmetry is
/// bit-exact by construction.
pub fn gram_matrix(
    spec: &ModelSpec,
    w: &ParamVector,
    dataset: &LabeledDataset,
    snapshot_index: usize,
) -> Result<GramMatrix> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len();
    let feats: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| param_gradient(spec, w, dataset.input(i)).map(|f| f.data))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    let upper: Vec<(usize, usize, f64)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let feats = &feats;
            (i..n).map(move |j| (i, j, dot(&feats[i], &feats[j])))
        })
        .collect();
    for (i, j, v) in upper {
        values[i * n + j] = v;
        values[j * n + i] = v;
    }
    Ok(GramMatrix {
        n,
        snapshot_index,
        values,
    })
}

/// Discrete path kernel `sum_k eta_k K_NTK(x, xt; k)` over the recorded path.
/// On a strided path each recorded snapshot stands for the steps up to the
/// next one, so its quadrature weight is `eta_k * span`. The final snapshot
/// (no step follows) contributes nothing.
pub fn discrete_path_kernel(path: &LearningPath, x: &[f64], xt: &[f64]) -> Result<f64> {
    let snaps = path.snapshots();
    let mut total = 0.0;
    for i in 0..snaps.len().saturating_sub(1) {
        let span = (snaps[i + 1].k - snaps[i].k) as f64;
        total += snaps[i].eta * span * tangent_kernel(&path.spec, &snaps[i].w, x, xt)?;
    }
    Ok(total)
}

fn check_dataset(spec: &ModelSpec, dataset: &LabeledDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.input_dim() != spec.input_dim() || dataset.output_dim() != spec.output_dim() {
        return Err(Error::DatasetMismatch(format!(
            "dataset is {}x{} but the path's model wants {}x{}",
            dataset.input_dim(),
            dataset.output_dim(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    Ok(())
}

fn check_queries(spec: &ModelSpec, queries: &[Vec<f64>]) -> Result<()> {
    for q in queries {
        if q.len() != spec.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: spec.input_dim(),
                got: q.len(),
                context: "query dimension",
            });
        }
    }
    Ok(())
}

/// Per-sample pullbacks `v_n = J(x_n)^T L'(yhat_n, y_n)` at one snapshot,
/// computed in parallel but collected in sample order.
fn sample_pullbacks(
    spec: &ModelSpec,
    w: &ParamVector,
    dataset: &LabeledDataset,
) -> Result<Vec<Vec<f64>>> {
    let d = spec.param_count();
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let tape = forward_with_tape(spec, w, dataset.input(i))?;
            let y = dataset.label(i);
            let cot: Vec<f64> = tape.outputs.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect();
            let mut v = vec![0.0; d];
            backward(spec, w, &tape, &cot, &mut v)?;
            Ok(v)
        })
        .collect()
}

/// Adds one snapshot's terms `(eta/N) * J(x_j) v_n` into each query's
/// per-sample contribution buffer (`contribs[j][n*q + m]`).
fn accumulate_step(
    spec: &ModelSpec,
    w: &ParamVector,
    eta: f64,
    dataset: &LabeledDataset,
    queries: &[Vec<f64>],
    contribs: &mut [Vec<f64>],
) -> Result<()> {
    let q = spec.output_dim();
    let n = dataset.len();
    let scale = eta / n as f64;
    let pullbacks = sample_pullbacks(spec, w, dataset)?;
    queries
        .par_iter()
        .zip(contribs.par_iter_mut())
        .try_for_each(|(query, contrib)| -> Result<()> {
            let jac = param_jacobian(spec, w, query)?;
            for (i, v) in pullbacks.iter().enumerate() {
                for m in 0..q {
                    contrib[i * q + m] += scale * dot(jac.row(m), v);
                }
            }
            Ok(())
        })
}

fn reports_from_buffers(
    spec: &ModelSpec,
    w0: &ParamVector,
    w_final: &ParamVector,
    steps_used: usize,
    queries: &[Vec<f64>],
    contribs: Vec<Vec<f64>>,
    n: usize,
) -> Result<Vec<DecompositionReport>> {
    let q = spec.output_dim();
    queries
        .iter()
        .zip(contribs)
        .map(|(query, flat)| {
            let bias = forward(spec, w0, query)?;
            let lhs = forward(spec, w_final, query)?;
            let contributions: Vec<Vec<f64>> =
                (0..n).map(|i| flat[i * q..(i + 1) * q].to_vec()).collect();
            Ok(DecompositionReport::from_parts(
                query.clone(),
                lhs,
                bias,
                contributions,
                steps_used,
            ))
        })
        .collect()
}

/// Eq. (8) / Theorem 3 right-hand side for a batch of queries, with full
/// per-sample contributions. Requires a stride-1 path.
pub fn domingos_rhs_batch(
    path: &LearningPath,
    dataset: &LabeledDataset,
    queries: &[Vec<f64>],
) -> Result<Vec<DecompositionReport>> {
    path.require_unit_stride()?;
    let spec = &path.spec;
    check_dataset(spec, dataset)?;
    check_queries(spec, queries)?;
    let q = spec.output_dim();
    let n = dataset.len();
    let mut contribs: Vec<Vec<f64>> = vec![vec![0.0; n * q]; queries.len()];
    let snaps = path.snapshots();
    for snap in &snaps[..snaps.len() - 1] {
        accumulate_step(spec, &snap.w, snap.eta, dataset, queries, &mut contribs)?;
    }
    reports_from_buffers(
        spec,
        path.initial(),
        path.final_params(),
        path.final_step(),
        queries,
        contribs,
        n,
    )
}

/// Scalar-output Eq. (8) verification at one query.
pub fn domingos_rhs(
    path: &LearningPath,
    dataset: &LabeledDataset,
    x: &[f64],
) -> Result<DecompositionReport> {
    if path.spec.output_dim() != 1 {
        return Err(Error::NotScalarOutput(path.spec.output_dim()));
    }
    Ok(domingos_rhs_batch(path, dataset, &[x.to_vec()])?.remove(0))
}

/// Theorem 3 (multi-output) verification at one query; for q = 1 it reduces
/// to [`domingos_rhs`].
pub fn domingos_rhs_multi(
    path: &LearningPath,
    dataset: &LabeledDataset,
    x: &[f64],
) -> Result<DecompositionReport> {
    Ok(domingos_rhs_batch(path, dataset, &[x.to_vec()])?.remove(0))
}

/// Residuals only, without per-sample contributions: the sum over samples is
/// folded per snapshot, cutting the cost from `O(K N Q d)` to
/// `O(K (N + Q) d)`. Returns `(absolute, relative)` residual per query.
pub fn decomposition_residuals(
    path: &LearningPath,
    dataset: &LabeledDataset,
    queries: &[Vec<f64>],
) -> Result<Vec<(f64, f64)>> {
    path.require_unit_stride()?;
    let spec = &path.spec;
    check_dataset(spec, dataset)?;
    check_queries(spec, queries)?;
    let q = spec.output_dim();
    let d = spec.param_count();
    let n = dataset.len();
    // per query, the running total sum_n contributions[n] (length q)
    let mut totals: Vec<Vec<f64>> = vec![vec![0.0; q]; queries.len()];
    let snaps = path.snapshots();
    for snap in &snaps[..snaps.len() - 1] {
        let pullbacks = sample_pullbacks(spec, &snap.w, dataset)?;
        let mut folded = vec![0.0; d];
        for v in &pullbacks {
            for (f, x) in folded.iter_mut().zip(v) {
                *f += x;
            }
        }
        let scale = snap.eta / n as f64;
        totals
            .par_iter_mut()
            .zip(queries.par_iter())
            .try_for_each(|(total, query)| -> Result<()> {
                let jac = param_jacobian(spec, &snap.w, query)?;
                for m in 0..q {
                    total[m] += scale * dot(jac.row(m), &folded);
                }
                Ok(())
            })?;
    }
    queries
        .iter()
        .zip(&totals)
        .map(|(query, total)| {
            let bias = forward(spec, path.initial(), query)?;
            let lhs = forward(spec, path.final_params(), query)?;
            let residual = (0..q)
                .map(|m| (lhs[m] - (bias[m] - total[m])).abs())
                .fold(0.0_f64, f64::max);
            let scale = lhs.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            Ok((residual, residual / scale))
        })
        .collect()
}

/// Online Eq. (8) accumulator: feed `(k, eta_k, w(k))` for every step of a
/// training run and get the same reports as [`domingos_rhs_batch`] without
/// ever storing the path. Memory is `O(queries * N * q + d)`, independent of
/// the step count.
///
/// Each update is held back until the next one arrives, so the last fed
/// snapshot — whatever its eta — only provides the left-hand side
/// `N(x; w(K))` and contributes no kernel term, exactly matching the
/// `sum_{k < K}` structure.
pub struct StreamingAccumulator {
    spec: ModelSpec,
    queries: Vec<Vec<f64>>,
    contribs: Vec<Vec<f64>>,
    bias: Option<Vec<Vec<f64>>>,
    pending: Option<(usize, f64, ParamVector)>,
    samples: Option<usize>,
}

impl StreamingAccumulator {
    pub fn open(spec: &ModelSpec, queries: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        check_queries(spec, &queries)?;
        Ok(StreamingAccumulator {
            spec: spec.clone(),
            contribs: Vec::new(),
            queries,
            bias: None,
            pending: None,
            samples: None,
        })
    }

    pub fn update(
        &mut self,
        k: usize,
        eta: f64,
        w: &ParamVector,
        dataset: &LabeledDataset,
    ) -> Result<()> {
        check_dataset(&self.spec, dataset)?;
        match self.samples {
            None => {
                self.samples = Some(dataset.len());
                let q = self.spec.output_dim();
                self.contribs = vec![vec![0.0; dataset.len() * q]; self.queries.len()];
                self.bias = Some(
                    self.queries
                        .iter()
                        .map(|x| forward(&self.spec, w, x))
                        .collect::<Result<_>>()?,
                );
            }
            Some(n) if n != dataset.len() => {
                return Err(Error::DatasetMismatch(format!(
                    "dataset size changed mid-stream: {} then {}",
                    n,
                    dataset.len()
                )));
            }
            Some(_) => {}
        }
        if let Some((pk, peta, pw)) = self.pending.take() {
            if k <= pk {
                return Err(Error::NonMonotonicUpdate { got: k, prev: pk });
            }
            accumulate_step(&self.spec, &pw, peta, dataset, &self.queries, &mut self.contribs)?;
        }
        self.pending = Some((k, eta, w.clone()));
        Ok(())
    }

    pub fn finalize(self) -> Result<Vec<DecompositionReport>> {
        let (final_k, _, final_w) = self.pending.ok_or(Error::EmptyPath)?;
        let n = self.samples.expect("samples set with pending");
        let bias = self.bias.expect("bias set with pending");
        let q = self.spec.output_dim();
        self.queries
            .iter()
            .zip(self.contribs)
            .zip(bias)
            .map(|((query, flat), b)| {
                let lhs = forward(&self.spec, &final_w, query)?;
                let contributions: Vec<Vec<f64>> =
                    (0..n).map(|i| flat[i * q..(i + 1) * q].to_vec()).collect();
                Ok(DecompositionReport::from_parts(
                    query.clone(),
                    lhs,
                    b,
                    contributions,
                    final_k,
                ))
            })
            .collect()
    }
}

/// One row of the residual-decay diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub steps: usize,
    /// Mean relative residual over the query grid.
    pub mean_residual: f64,
    pub max_residual: f64,
    pub train_accuracy: f64,
}

/// Trains once per eta (same start, same dataset, same K) and measures the
/// decomposition residual over the query grid — the `O(sum eta_k^2)`
/// remainder should shrink with eta.
pub fn decomposition_residual_sweep(
    spec: &ModelSpec,
    w0: &ParamVector,
    dataset: &LabeledDataset,
    etas: &[f64],
    steps: usize,
    queries: &[Vec<f64>],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let cfg = TrainConfig::constant(steps, eta, 0);
        let path = train_full_batch(spec, w0, dataset, &cfg)?;
        let residuals = decomposition_residuals(&path, dataset, queries)?;
        let nq = residuals.len().max(1) as f64;
        let mean = residuals.iter().map(|r| r.1).sum::<f64>() / nq;
        let max = residuals.iter().map(|r| r.1).fold(0.0_f64, f64::max);
        rows.push(SweepRow {
            eta,
            steps,
            mean_residual: mean,
            max_residual: max,
            train_accuracy: accuracy(spec, path.final_params(), dataset)?,
        });
    }
    Ok(rows)
}

/// CSV rendering with the fixed header `eta,K,mean_residual,max_residual,train_accuracy`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("eta,K,mean_residual,max_residual,train_accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e},{}\n",
            r.eta, r.steps, r.mean_residual, r.max_residual, r.train_accuracy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_ball_sphere, DatasetMeta};
    use crate::model::init_params;

    fn linreg_dataset(w_true: &[f64], xs: &[Vec<f64>]) -> LabeledDataset {
        let p = w_true.len();
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for x in xs {
            inputs.extend_from_slice(x);
            labels.push(x.iter().zip(w_true).map(|(a, b)| a * b).sum());
        }
        LabeledDataset::new(p, 1, inputs, labels, DatasetMeta::Custom { name: "lr".into() })
            .unwrap()
    }

    fn seeded_points(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn linear_kernel_is_the_input_dot_product() {
        let spec = ModelSpec::linear(2);
        let w = ParamVector::new(&spec, vec![0.3, -0.7]).unwrap();
        assert_eq!(tangent_kernel(&spec, &w, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(tangent_kernel(&spec, &w, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn mlp_kernel_matches_explicit_feature_dot() {
        let spec = ModelSpec::mlp(2, 6);
        let w = init_params(&spec, 4).unwrap();
        let x = [0.4, -0.8];
        let xt = [-0.2, 0.9];
        let k = tangent_kernel(&spec, &w, &x, &xt).unwrap();
        let fx = param_gradient(&spec, &w, &x).unwrap();
        let ft = param_gradient(&spec, &w, &xt).unwrap();
        assert_eq!(k, dot(&fx.data, &ft.data), "kernel is the feature dot product");
        assert!(tangent_kernel(&spec, &w, &x, &x).unwrap() >= 0.0);
    }

    #[test]
    fn kernel_symmetry_is_bit_exact() {
        let spec = ModelSpec::mlp(2, 8);
        let w = init_params(&spec, 1).unwrap();
        for pair in seeded_points(10, 2, 3).chunks(2) {
            let a = tangent_kernel(&spec, &w, &pair[0], &pair[1]).unwrap();
            let b = tangent_kernel(&spec, &w, &pair[1], &pair[0]).unwrap();
            assert!(a.to_bits() == b.to_bits(), "symmetry must be exact: {a} vs {b}");
        }
    }

    #[test]
    fn kernel_matrix_reduces_to_scalar_for_q1() {
        let spec = ModelSpec::mlp(2, 5);
        let w = init_params(&spec, 7).unwrap();
        let x = [0.3, 0.6];
        let xt = [-0.5, 0.1];
        let m = tangent_kernel_matrix(&spec, &w, &x, &xt).unwrap();
        assert_eq!(m.rows, 1);
        assert_eq!(m.get(0, 0), tangent_kernel(&spec, &w, &x, &xt).unwrap());
    }

    #[test]
    fn kernel_matrix_transpose_identity_and_brute_force() {
        let spec = ModelSpec::conv1d_parity(8, 2);
        let w = init_params(&spec, 3).unwrap();
        let x: Vec<f64> = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let xt: Vec<f64> = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let kxt = tangent_kernel_matrix(&spec, &w, &x, &xt).unwrap();
        let ktx = tangent_kernel_matrix(&spec, &w, &xt, &x).unwrap();
        let q = spec.output_dim();
        // brute force: sum over parameter coordinates of the Jacobian outer product
        let jx = param_jacobian(&spec, &w, &x).unwrap();
        let jt = param_jacobian(&spec, &w, &xt).unwrap();
        for m in 0..q {
            for l in 0..q {
                assert_eq!(kxt.get(m, l).to_bits(), ktx.get(l, m).to_bits(), "transpose");
                let brute: f64 = (0..spec.param_count())
                    .map(|j| jx.row(m)[j] * jt.row(l)[j])
                    .sum();
                assert_eq!(kxt.get(m, l), brute, "entry ({m},{l})");
            }
        }
    }

    #[test]
    fn normalized_kernel_basics() {
        let spec = ModelSpec::mlp(2, 6);
        let w = init_params(&spec, 2).unwrap();
        let x = [0.5, -0.25];
        assert_eq!(normalized_ntk(&spec, &w, &x, &x).unwrap(), 1.0, "diagonal exactly one");
        for pair in seeded_points(20, 2, 11).chunks(2) {
            let v = normalized_ntk(&spec, &w, &pair[0], &pair[1]).unwrap();
            assert!(v.abs() <= 1.0 + 1e-12, "Cauchy-Schwarz bound, got {v}");
        }
        // linear model: cosine of the inputs themselves
        let lin = ModelSpec::linear(2);
        let lw = ParamVector::new(&lin, vec![1.0, 1.0]).unwrap();
        let v = normalized_ntk(&lin, &lw, &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-15);
        assert!(matches!(
            normalized_ntk(&lin, &lw, &[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroSelfKernel)
        ));
    }

    #[test]
    fn gram_matrix_is_symmetric_and_nearly_psd() {
        let spec = ModelSpec::mlp(2, 8);
        let w = init_params(&spec, 5).unwrap();
        let ds = gen_ball_sphere(32, 1).unwrap();
        let gram = gram_matrix(&spec, &w, &ds, 0).unwrap();
        for i in 0..gram.n() {
            for j in 0..gram.n() {
                assert_eq!(gram.get(i, j).to_bits(), gram.get(j, i).to_bits());
            }
        }
        let (min, max) = gram.eigen_range().unwrap();
        assert!(max > 0.0);
        assert!(min >= -1e-8 * max, "PSD up to roundoff: min {min}, max {max}");
    }

    #[test]
    fn path_kernel_on_linear_model_sums_the_rates() {
        let spec = ModelSpec::linear(2);
        let w0 = ParamVector::new(&spec, vec![0.2, -0.1]).unwrap();
        let ds = linreg_dataset(&[1.0, -1.0], &seeded_points(8, 2, 0));
        let cfg = TrainConfig::constant(25, 1e-2, 0);
        let path = train_full_batch(&spec, &w0, &ds, &cfg).unwrap();
        let x = [0.7, 0.3];
        let xt = [-0.4, 0.9];
        let got = discrete_path_kernel(&path, &x, &xt).unwrap();
        let want = 25.0 * 1e-2 * dot(&x, &xt);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        assert!(discrete_path_kernel(&path, &x, &x).unwrap() >= 0.0);

        let zero_cfg = TrainConfig::constant(0, 1e-2, 0);
        let zero_path = train_full_batch(&spec, &w0, &ds, &zero_cfg).unwrap();
        assert_eq!(discrete_path_kernel(&zero_path, &x, &xt).unwrap(), 0.0);
    }

    #[test]
    fn zero_step_decomposition_is_exact() {
        let spec = ModelSpec::mlp(2, 4);
        let w0 = init_params(&spec, 0).unwrap();
        let ds = gen_ball_sphere(16, 0).unwrap();
        let path = train_full_batch(&spec, &w0, &ds, &TrainConfig::constant(0, 1e-2, 0)).unwrap();
        let report = domingos_rhs(&path, &ds, &[0.3, 0.4]).unwrap();
        assert_eq!(report.residual, 0.0);
        assert_eq!(report.lhs, report.bias);
        assert_eq!(report.steps_used, 0);
    }

    #[test]
    fn linear_regression_decomposition_is_numerically_exact() {
        let spec = ModelSpec::linear(3);
        let w0 = init_params(&spec, 1).unwrap();
        let ds = linreg_dataset(&[0.5, -1.0, 0.25], &seeded_points(20, 3, 2));
        let cfg = TrainConfig::constant(400, 1e-2, 0);
        let path = train_full_batch(&spec, &w0, &ds, &cfg).unwrap();
        for query in seeded_points(10, 3, 5) {
            let report = domingos_rhs(&path, &ds, &query).unwrap();
            assert!(
                report.relative_residual <= 1e-9,
                "linear models make Eq. (8) exact, residual {}",
                report.relative_residual
            );
            // stored invariant: rhs = bias - sum(contributions) as summed
            let mut rhs = report.bias.clone();
            for c in &report.contributions {
                rhs[0] -= c[0];
            }
            assert_eq!(rhs, report.rhs);
        }
    }

    #[test]
    fn multi_output_reduces_to_scalar_for_q1() {
        let spec = ModelSpec::mlp(2, 5);
        let w0 = init_params(&spec, 3).unwrap();
        let ds = gen_ball_sphere(32, 2).unwrap();
        let path = train_full_batch(&spec, &w0, &ds, &TrainConfig::constant(30, 1e-2, 0)).unwrap();
        let x = [0.25, -0.6];
        let scalar = domingos_rhs(&path, &ds, &x).unwrap();
        let multi = domingos_rhs_multi(&path, &ds, &x).unwrap();
        assert!((scalar.rhs[0] - multi.rhs[0]).abs() <= 1e-12);
        assert!((scalar.residual - multi.residual).abs() <= 1e-12);
    }

    #[test]
    fn multi_output_linear_model_is_exact_per_coordinate() {
        // y = A x: every output is an independent linear regressor
        let spec = ModelSpec::linear_multi(3, 2);
        let w0 = init_params(&spec, 2).unwrap();
        let xs = seeded_points(16, 3, 7);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let a_true = [[0.4, -0.3, 0.9], [-1.1, 0.2, 0.5]];
        for x in &xs {
            inputs.extend_from_slice(x);
            for row in &a_true {
                labels.push(dot(row, x));
            }
        }
        let ds = LabeledDataset::new(3, 2, inputs, labels, DatasetMeta::Custom { name: "m".into() })
            .unwrap();
        let path = train_full_batch(&spec, &w0, &ds, &TrainConfig::constant(300, 1e-2, 0)).unwrap();
        for query in seeded_points(6, 3, 9) {
            let report = domingos_rhs_multi(&path, &ds, &query).unwrap();
            assert!(
                report.relative_residual <= 1e-9,
                "residual {}",
                report.relative_residual
            );
        }
    }

    #[test]
    fn smaller_rate_shrinks_the_residual() {
        let spec = ModelSpec::mlp(2, 6);
        let w0 = init_params(&spec, 0).unwrap();
        let ds = gen_ball_sphere(128, 4).unwrap();
        let queries = seeded_points(20, 2, 1);
        let mean_residual = |eta: f64| -> f64 {
            let cfg = TrainConfig::constant(200, eta, 0);
            let path = train_full_batch(&spec, &w0, &ds, &cfg).unwrap();
            let rs = decomposition_residuals(&path, &ds, &queries).unwrap();
            rs.iter().map(|r| r.1).sum::<f64>() / rs.len() as f64
        };
        let coarse = mean_residual(1e-2);
        let fine = mean_residual(1e-3);
        assert!(
            fine < coarse,
            "residual must shrink with eta: {fine} !< {coarse}"
        );
    }

    #[test]
    fn lean_residuals_match_full_reports() {
        let spec = ModelSpec::mlp(2, 5);
        let w0 = init_params(&spec, 8).unwrap();
        let ds = gen_ball_sphere(32, 3).unwrap();
        let path = train_full_batch(&spec, &w0, &ds, &TrainConfig::constant(50, 1e-2, 0)).unwrap();
        let queries = seeded_points(5, 2, 2);
        let lean = decomposition_residuals(&path, &ds, &queries).unwrap();
        let full = domingos_rhs_batch(&path, &ds, &queries).unwrap();
        for (l, f) in lean.iter().zip(&full) {
            assert!(
                (l.0 - f.residual).abs() <= 1e-10,
                "lean {} vs full {}",
                l.0,
                f.residual
            );
        }
    }

    #[test]
    fn streaming_equals_stored_path_replay() {
        let spec = ModelSpec::mlp(2, 5);
        let w0 = init_params(&spec, 6).unwrap();
        let ds = gen_ball_sphere(64, 5).unwrap();
        let cfg = TrainConfig::constant(40, 1e-2, 0);
        let queries = seeded_points(4, 2, 3);

        let mut acc = StreamingAccumulator::open(&spec, queries.clone()).unwrap();
        crate::train::train_with_observer(&spec, &w0, &ds, &cfg, |k, eta, w| {
            acc.update(k, eta, w, &ds)
        })
        .unwrap();
        let streamed = acc.finalize().unwrap();

        let path = train_full_batch(&spec, &w0, &ds, &cfg).unwrap();
        let stored = domingos_rhs_batch(&path, &ds, &queries).unwrap();
        for (s, r) in streamed.iter().zip(&stored) {
            assert!((s.residual - r.residual).abs() <= 1e-10);
            assert!(
                s.rhs
                    .iter()
                    .zip(&r.rhs)
                    .all(|(a, b)| (a - b).abs() <= 1e-10),
                "streaming must match replay"
            );
        }
    }

    #[test]
    fn streaming_zero_updates_and_monotonicity() {
        let spec = ModelSpec::mlp(2, 3);
        let w0 = init_params(&spec, 1).unwrap();
        let ds = gen_ball_sphere(8, 0).unwrap();
        let queries = vec![vec![0.1, 0.2]];

        // a single update (K = 0): rhs must be the initial prediction
        let mut acc = StreamingAccumulator::open(&spec, queries.clone()).unwrap();
        acc.update(0, 0.0, &w0, &ds).unwrap();
        let reports = acc.finalize().unwrap();
        assert_eq!(reports[0].rhs, reports[0].bias);
        assert_eq!(reports[0].residual, 0.0);

        // never updated: no path at all
        let empty = StreamingAccumulator::open(&spec, queries.clone()).unwrap();
        assert!(matches!(empty.finalize(), Err(Error::EmptyPath)));

        // k must increase
        let mut acc = StreamingAccumulator::open(&spec, queries).unwrap();
        acc.update(3, 1e-2, &w0, &ds).unwrap();
        let err = acc.update(3, 1e-2, &w0, &ds);
        assert!(matches!(err, Err(Error::NonMonotonicUpdate { got: 3, prev: 3 })));
    }

    #[test]
    fn sweep_is_deterministic_with_a_linear_control() {
        let spec = ModelSpec::linear(2);
        let w0 = init_params(&spec, 0).unwrap();
        let ds = linreg_dataset(&[0.8, -0.6], &seeded_points(12, 2, 1));
        let queries = seeded_points(6, 2, 8);
        let rows = decomposition_residual_sweep(&spec, &w0, &ds, &[1e-2, 1e-2, 1e-3], 100, &queries)
            .unwrap();
        assert_eq!(rows[0], rows[1], "duplicate eta rows must be bit-identical");
        for row in &rows {
            assert!(
                row.mean_residual <= 1e-9,
                "linear control rows are exact, got {}",
                row.mean_residual
            );
        }
        let csv = sweep_to_csv(&rows);
        assert!(csv.starts_with("eta,K,mean_residual,max_residual,train_accuracy\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
