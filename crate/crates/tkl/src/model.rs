//! Model specs, flat parameter vectors, and exact forward/backward passes.
//!
//! Three model kinds are supported:
//!
//! - `mlp`: the 3-layer GELU network
//!   `W1 * gelu(W2 * gelu(W3 * x + b3) + b2) + b1` with scalar output and
//!   `d = r^2 + (p + 3) r + 1` parameters.
//! - `conv1d-parity`: `log2(p)` blocks of (kernel-2 conv to `r` channels,
//!   ReLU, kernel-1 conv back to 1 channel, downsample by two). Output `m`
//!   is the block stack applied to the left-zero-padded prefix of length
//!   `m + 1`; all prefixes share the same parameters.
//! - `linear`: `x -> A x` with no bias, the one-layer case where the tangent
//!   kernel is parameter-independent.
//!
//! Gradients are hand-derived reverse mode over the flat parameter vector.
//! There is no general autodiff graph: each kind has its own taped
//! forward/backward pair, which keeps every pass exact and allocation-light.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{gelu_prime, relu, std_normal_cdf};
use crate::{Error, Result};

/// Architecture description. The parameter layout is a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// 3-layer GELU MLP with scalar output.
    Mlp { input_dim: usize, hidden_width: usize },
    /// Parity conv stack; `output_dim <= input_dim` selects how many prefix
    /// outputs are exposed (default: all of them).
    Conv1dParity {
        input_dim: usize,
        channels: usize,
        output_dim: usize,
    },
    /// Bias-free linear map `A x` with `A` of shape `output_dim x input_dim`.
    Linear { input_dim: usize, output_dim: usize },
}

/// One named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// `Some(fan_in)` for weight segments, `None` for biases.
    pub fan_in: Option<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered segments partitioning `[0, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub segments: Vec<Segment>,
}

impl ParamLayout {
    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden_width: usize) -> Self {
        ModelSpec::Mlp {
            input_dim,
            hidden_width,
        }
    }

    /// Parity conv stack exposing all `p` prefix outputs.
    pub fn conv1d_parity(input_dim: usize, channels: usize) -> Self {
        ModelSpec::Conv1dParity {
            input_dim,
            channels,
            output_dim: input_dim,
        }
    }

    /// Parity conv stack exposing only the first `output_dim` prefix outputs.
    pub fn conv1d_parity_truncated(input_dim: usize, channels: usize, output_dim: usize) -> Self {
        ModelSpec::Conv1dParity {
            input_dim,
            channels,
            output_dim,
        }
    }

    pub fn linear(input_dim: usize) -> Self {
        ModelSpec::Linear {
            input_dim,
            output_dim: 1,
        }
    }

    pub fn linear_multi(input_dim: usize, output_dim: usize) -> Self {
        ModelSpec::Linear {
            input_dim,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::Mlp {
                input_dim,
                hidden_width,
            } => {
                if input_dim == 0 || hidden_width == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "mlp needs input_dim > 0 and hidden_width > 0, got p={input_dim}, r={hidden_width}"
                    )));
                }
            }
            ModelSpec::Conv1dParity {
                input_dim,
                channels,
                output_dim,
            } => {
                if !input_dim.is_power_of_two() || input_dim < 2 {
                    return Err(Error::InvalidSpec(format!(
                        "conv1d-parity needs input_dim a power of two >= 2, got {input_dim}"
                    )));
                }
                if channels == 0 {
                    return Err(Error::InvalidSpec("conv1d-parity needs channels >= 1".into()));
                }
                if output_dim == 0 || output_dim > input_dim {
                    return Err(Error::InvalidSpec(format!(
                        "conv1d-parity needs 1 <= output_dim <= input_dim, got q={output_dim}, p={input_dim}"
                    )));
                }
            }
            ModelSpec::Linear {
                input_dim,
                output_dim,
            } => {
                if input_dim == 0 || output_dim == 0 {
                    return Err(Error::InvalidSpec(
                        "linear needs input_dim > 0 and output_dim > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::Mlp { input_dim, .. }
            | ModelSpec::Conv1dParity { input_dim, .. }
            | ModelSpec::Linear { input_dim, .. } => input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            ModelSpec::Mlp { .. } => 1,
            ModelSpec::Conv1dParity { output_dim, .. } | ModelSpec::Linear { output_dim, .. } => {
                output_dim
            }
        }
    }

    /// Number of conv blocks, `log2(p)`; zero for non-conv kinds.
    pub fn conv_blocks(&self) -> usize {
        match *self {
            ModelSpec::Conv1dParity { input_dim, .. } => input_dim.trailing_zeros() as usize,
            _ => 0,
        }
    }

    /// (convolutions, relus, downsamplings) in the conv stack.
    pub fn conv_op_counts(&self) -> (usize, usize, usize) {
        let b = self.conv_blocks();
        (2 * b, b, b)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total_len()
    }

    pub fn layout(&self) -> ParamLayout {
        let mut segments = Vec::new();
        let mut off = 0;
        let mut push = |name: String, rows: usize, cols: usize, fan_in: Option<usize>| {
            segments.push(Segment {
                name,
                offset: off,
                rows,
                cols,
                fan_in,
            });
            off += rows * cols;
        };
        match *self {
            ModelSpec::Mlp {
                input_dim: p,
                hidden_width: r,
            } => {
                push("W1".into(), 1, r, Some(r));
                push("W2".into(), r, r, Some(r));
                push("W3".into(), r, p, Some(p));
                push("b1".into(), 1, 1, None);
                push("b2".into(), r, 1, None);
                push("b3".into(), r, 1, None);
            }
            ModelSpec::Conv1dParity { channels: r, .. } => {
                for b in 0..self.conv_blocks() {
                    push(format!("pair_w{b}"), r, 2, Some(2));
                    push(format!("pair_b{b}"), r, 1, None);
                    push(format!("comb_w{b}"), 1, r, Some(r));
                    push(format!("comb_b{b}"), 1, 1, None);
                }
            }
            ModelSpec::Linear {
                input_dim: p,
                output_dim: q,
            } => {
                push("A".into(), q, p, Some(p));
            }
        }
        ParamLayout { segments }
    }
}

/// Flat parameter vector `w` of length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: &ModelSpec, data: Vec<f64>) -> Result<Self> {
        let d = spec.param_count();
        if data.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: data.len(),
                context: "parameter vector length",
            });
        }
        Ok(ParamVector { data })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        ParamVector {
            data: vec![0.0; spec.param_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Slice of the named layout segment.
    pub fn segment<'a>(&'a self, layout: &ParamLayout, name: &str) -> Option<&'a [f64]> {
        layout.segment(name).map(|s| &self.data[s.range()])
    }
}

/// Parameter gradient of a scalar-output model at one input: `phi(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub data: Vec<f64>,
    /// Snapshot index when the vector was taken along a learning path.
    pub snapshot: Option<usize>,
}

/// Dense `q x d` Jacobian of `w -> N(x; w)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Jacobian {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Seeded init: weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]` per
/// segment, biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let layout = spec.layout();
    let mut data = vec![0.0; layout.total_len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for seg in &layout.segments {
        if let Some(fan_in) = seg.fan_in {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut data[seg.range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    Ok(ParamVector { data })
}

fn check_input(spec: &ModelSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: spec.input_dim(),
            got: x.len(),
            context: "input dimension",
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Taped forward/backward per model kind
// ---------------------------------------------------------------------------

struct MlpTape {
    x: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
}

/// Tape for one zero-padded prefix through the conv stack. Level `b` stores
/// its input vector and the `r * (L/2)` kernel-2 pre-activations.
struct PrefixTape {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

enum TapeDetail {
    Mlp(MlpTape),
    Conv(Vec<PrefixTape>),
    Linear(Vec<f64>),
}

/// Result of a forward pass with enough saved state to run reverse mode.
pub struct ForwardTape {
    pub outputs: Vec<f64>,
    detail: TapeDetail,
}

fn mlp_forward(p: usize, r: usize, w: &[f64], x: &[f64]) -> MlpTape {
    let w2 = &w[r..r + r * r];
    let w3 = &w[r + r * r..r + r * r + r * p];
    let b2 = &w[r + r * r + r * p + 1..r + r * r + r * p + 1 + r];
    let b3 = &w[r + r * r + r * p + 1 + r..];

    let mut z3 = vec![0.0; r];
    let mut a3 = vec![0.0; r];
    for i in 0..r {
        let mut s = b3[i];
        let row = &w3[i * p..(i + 1) * p];
        for j in 0..p {
            s += row[j] * x[j];
        }
        z3[i] = s;
        a3[i] = s * std_normal_cdf(s);
    }
    let mut z2 = vec![0.0; r];
    let mut a2 = vec![0.0; r];
    for i in 0..r {
        let mut s = b2[i];
        let row = &w2[i * r..(i + 1) * r];
        for j in 0..r {
            s += row[j] * a3[j];
        }
        z2[i] = s;
        a2[i] = s * std_normal_cdf(s);
    }
    MlpTape {
        x: x.to_vec(),
        z3,
        a3,
        z2,
        a2,
    }
}

fn mlp_output(r: usize, w: &[f64], tape: &MlpTape) -> f64 {
    let w1 = &w[..r];
    let b1 = w[r + r * r + r * tape.x.len()];
    let mut y = b1;
    for j in 0..r {
        y += w1[j] * tape.a2[j];
    }
    y
}

/// Accumulates `cot * dN/dw` into `grad` for the scalar MLP output.
fn mlp_backward(p: usize, r: usize, w: &[f64], tape: &MlpTape, cot: f64, grad: &mut [f64]) {
    let off_w1 = 0;
    let off_w2 = r;
    let off_w3 = r + r * r;
    let off_b1 = off_w3 + r * p;
    let off_b2 = off_b1 + 1;
    let off_b3 = off_b2 + r;

    grad[off_b1] += cot;
    for j in 0..r {
        grad[off_w1 + j] += cot * tape.a2[j];
    }
    // delta2 = cot * W1 .* gelu'(z2)
    let mut delta2 = vec![0.0; r];
    for j in 0..r {
        delta2[j] = cot * w[off_w1 + j] * gelu_prime(tape.z2[j]);
    }
    for i in 0..r {
        grad[off_b2 + i] += delta2[i];
        let row = &mut grad[off_w2 + i * r..off_w2 + (i + 1) * r];
        for j in 0..r {
            row[j] += delta2[i] * tape.a3[j];
        }
    }
    // delta3 = (W2^T delta2) .* gelu'(z3)
    let mut delta3 = vec![0.0; r];
    for j in 0..r {
        let mut s = 0.0;
        for i in 0..r {
            s += w[off_w2 + i * r + j] * delta2[i];
        }
        delta3[j] = s * gelu_prime(tape.z3[j]);
    }
    for i in 0..r {
        grad[off_b3 + i] += delta3[i];
        let row = &mut grad[off_w3 + i * p..off_w3 + (i + 1) * p];
        for j in 0..p {
            row[j] += delta3[i] * tape.x[j];
        }
    }
}

/// Left-zero-padded prefix `(0, ..., 0, x_1, ..., x_len)` of full length `p`.
fn padded_prefix(x: &[f64], len: usize) -> Vec<f64> {
    let p = x.len();
    let mut v = vec![0.0; p];
    v[p - len..].copy_from_slice(&x[..len]);
    v
}

/// Runs the conv block stack on one length-`p` vector, saving the tape.
/// Only positions that survive the downsampling are ever computed: block `b`
/// maps adjacent disjoint pairs `(u[2j], u[2j+1])` to one output each.
fn prefix_forward(blocks: usize, r: usize, w: &[f64], input: Vec<f64>) -> (f64, PrefixTape) {
    let block_len = 4 * r + 1;
    let mut inputs = Vec::with_capacity(blocks);
    let mut preacts = Vec::with_capacity(blocks);
    let mut u = input;
    for b in 0..blocks {
        let base = b * block_len;
        let pair_w = &w[base..base + 2 * r];
        let pair_b = &w[base + 2 * r..base + 3 * r];
        let comb_w = &w[base + 3 * r..base + 4 * r];
        let comb_b = w[base + 4 * r];

        let half = u.len() / 2;
        let mut s = vec![0.0; half * r];
        let mut next = vec![0.0; half];
        for j in 0..half {
            let (u0, u1) = (u[2 * j], u[2 * j + 1]);
            let mut v = comb_b;
            for c in 0..r {
                let pre = pair_w[2 * c] * u0 + pair_w[2 * c + 1] * u1 + pair_b[c];
                s[j * r + c] = pre;
                v += comb_w[c] * relu(pre);
            }
            next[j] = v;
        }
        inputs.push(u);
        preacts.push(s);
        u = next;
    }
    let out = u[0];
    (out, PrefixTape { inputs, preacts })
}

fn prefix_backward(blocks: usize, r: usize, w: &[f64], tape: &PrefixTape, cot: f64, grad: &mut [f64]) {
    let block_len = 4 * r + 1;
    let mut cot_next = vec![cot];
    for b in (0..blocks).rev() {
        let base = b * block_len;
        let u = &tape.inputs[b];
        let s = &tape.preacts[b];
        let half = u.len() / 2;
        let mut cot_u = vec![0.0; u.len()];
        for j in 0..half {
            let cv = cot_next[j];
            if cv == 0.0 {
                continue;
            }
            grad[base + 4 * r] += cv;
            let (u0, u1) = (u[2 * j], u[2 * j + 1]);
            for c in 0..r {
                let pre = s[j * r + c];
                if pre > 0.0 {
                    grad[base + 3 * r + c] += pre * cv;
                    let ch = w[base + 3 * r + c] * cv;
                    grad[base + 2 * c] += ch * u0;
                    grad[base + 2 * c + 1] += ch * u1;
                    grad[base + 2 * r + c] += ch;
                    cot_u[2 * j] += ch * w[base + 2 * c];
                    cot_u[2 * j + 1] += ch * w[base + 2 * c + 1];
                }
                // pre <= 0: relu output and derivative are both zero
            }
        }
        cot_next = cot_u;
    }
}

/// Forward pass saving the reverse-mode tape.
pub fn forward_with_tape(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Result<ForwardTape> {
    check_input(spec, x)?;
    if w.len() != spec.param_count() {
        return Err(Error::ShapeMismatch {
            expected: spec.param_count(),
            got: w.len(),
            context: "parameter vector length",
        });
    }
    match *spec {
        ModelSpec::Mlp {
            input_dim: p,
            hidden_width: r,
        } => {
            let tape = mlp_forward(p, r, w.data(), x);
            let y = mlp_output(r, w.data(), &tape);
            Ok(ForwardTape {
                outputs: vec![y],
                detail: TapeDetail::Mlp(tape),
            })
        }
        ModelSpec::Conv1dParity {
            channels: r,
            output_dim: q,
            ..
        } => {
            let blocks = spec.conv_blocks();
            let mut outputs = Vec::with_capacity(q);
            let mut tapes = Vec::with_capacity(q);
            for m in 0..q {
                let (y, tape) = prefix_forward(blocks, r, w.data(), padded_prefix(x, m + 1));
                outputs.push(y);
                tapes.push(tape);
            }
            Ok(ForwardTape {
                outputs,
                detail: TapeDetail::Conv(tapes),
            })
        }
        ModelSpec::Linear {
            input_dim: p,
            output_dim: q,
        } => {
            let mut outputs = vec![0.0; q];
            for m in 0..q {
                let row = &w.data()[m * p..(m + 1) * p];
                outputs[m] = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
            Ok(ForwardTape {
                outputs,
                detail: TapeDetail::Linear(x.to_vec()),
            })
        }
    }
}

/// Exact layer-by-layer evaluation; pure function of `(w, x)`.
pub fn forward(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    forward_with_tape(spec, w, x).map(|t| t.outputs)
}

/// Accumulates the vector-Jacobian product `J(x)^T cot` into `grad`.
pub fn backward(
    spec: &ModelSpec,
    w: &ParamVector,
    tape: &ForwardTape,
    cotangent: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    if cotangent.len() != spec.output_dim() {
        return Err(Error::ShapeMismatch {
            expected: spec.output_dim(),
            got: cotangent.len(),
            context: "cotangent length",
        });
    }
    if grad.len() != spec.param_count() {
        return Err(Error::ShapeMismatch {
            expected: spec.param_count(),
            got: grad.len(),
            context: "gradient buffer length",
        });
    }
    match (&tape.detail, spec) {
        (
            TapeDetail::Mlp(t),
            &ModelSpec::Mlp {
                input_dim: p,
                hidden_width: r,
            },
        ) => {
            mlp_backward(p, r, w.data(), t, cotangent[0], grad);
        }
        (TapeDetail::Conv(tapes), &ModelSpec::Conv1dParity { channels: r, .. }) => {
            let blocks = spec.conv_blocks();
            for (m, tape) in tapes.iter().enumerate() {
                if cotangent[m] != 0.0 {
                    prefix_backward(blocks, r, w.data(), tape, cotangent[m], grad);
                }
            }
        }
        (
            TapeDetail::Linear(x),
            &ModelSpec::Linear {
                input_dim: p,
                output_dim: q,
            },
        ) => {
            for m in 0..q {
                let c = cotangent[m];
                if c != 0.0 {
                    let row = &mut grad[m * p..(m + 1) * p];
                    for j in 0..p {
                        row[j] += c * x[j];
                    }
                }
            }
        }
        _ => {
            return Err(Error::InvalidSpec(
                "forward tape does not belong to this spec".into(),
            ))
        }
    }
    Ok(())
}

/// Exact reverse-mode gradient of `w -> N(x; w)` for scalar-output models,
/// flattened in layout order.
pub fn param_gradient(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Result<FeatureVector> {
    if spec.output_dim() != 1 {
        return Err(Error::NotScalarOutput(spec.output_dim()));
    }
    let tape = forward_with_tape(spec, w, x)?;
    let mut grad = vec![0.0; spec.param_count()];
    backward(spec, w, &tape, &[1.0], &mut grad)?;
    Ok(FeatureVector {
        data: grad,
        snapshot: None,
    })
}

/// Row `m` is the parameter gradient of the `m`-th output.
pub fn param_jacobian(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Result<Jacobian> {
    let tape = forward_with_tape(spec, w, x)?;
    let q = spec.output_dim();
    let d = spec.param_count();
    let mut data = vec![0.0; q * d];
    let mut cot = vec![0.0; q];
    for m in 0..q {
        cot[m] = 1.0;
        backward(spec, w, &tape, &cot, &mut data[m * d..(m + 1) * d])?;
        cot[m] = 0.0;
    }
    Ok(Jacobian {
        rows: q,
        cols: d,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(spec: &ModelSpec, w: &ParamVector, x: &[f64], out: usize, h: f64) -> Vec<f64> {
        let d = spec.param_count();
        let mut g = vec![0.0; d];
        let mut wp = w.clone();
        for j in 0..d {
            let orig = wp.data()[j];
            wp.data_mut()[j] = orig + h;
            let up = forward(spec, &wp, x).unwrap()[out];
            wp.data_mut()[j] = orig - h;
            let dn = forward(spec, &wp, x).unwrap()[out];
            wp.data_mut()[j] = orig;
            g[j] = (up - dn) / (2.0 * h);
        }
        g
    }

    fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
        let scale = want.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
        got.iter()
            .zip(want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max)
            / scale
    }

    #[test]
    fn mlp_param_count_formula() {
        for p in [1, 2, 5, 64] {
            for r in [1, 2, 10, 16] {
                let spec = ModelSpec::mlp(p, r);
                assert_eq!(spec.param_count(), r * r + (p + 3) * r + 1, "p={p} r={r}");
            }
        }
    }

    #[test]
    fn layout_partitions_exactly() {
        let specs = [
            ModelSpec::mlp(2, 10),
            ModelSpec::conv1d_parity(8, 2),
            ModelSpec::conv1d_parity_truncated(8, 3, 4),
            ModelSpec::linear_multi(5, 3),
        ];
        for spec in &specs {
            let layout = spec.layout();
            let mut expected_off = 0;
            for seg in &layout.segments {
                assert_eq!(seg.offset, expected_off, "{spec:?} segment {}", seg.name);
                expected_off += seg.len();
            }
            assert_eq!(expected_off, spec.param_count());
        }
    }

    #[test]
    fn conv_spec_shape() {
        let spec = ModelSpec::conv1d_parity(64, 2);
        assert_eq!(spec.conv_blocks(), 6);
        assert_eq!(spec.conv_op_counts(), (12, 6, 6));
        assert_eq!(spec.param_count(), 6 * (4 * 2 + 1));
        assert!(ModelSpec::conv1d_parity(12, 2).validate().is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = ModelSpec::mlp(2, 10);
        let w = init_params(&spec, 0).unwrap();
        assert_eq!(w.len(), 151);
        assert_eq!(w, init_params(&spec, 0).unwrap());
        assert_ne!(w, init_params(&spec, 1).unwrap());

        let layout = spec.layout();
        for name in ["b1", "b2", "b3"] {
            assert!(w.segment(&layout, name).unwrap().iter().all(|&v| v == 0.0));
        }
        // weights land inside the fan-in bound
        for seg in layout.segments.iter().filter(|s| s.fan_in.is_some()) {
            let bound = 1.0 / (seg.fan_in.unwrap() as f64).sqrt();
            for &v in &w.data()[seg.range()] {
                assert!(v.abs() <= bound);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = ModelSpec::mlp(3, 4);
        let w = ParamVector::zeros(&spec);
        assert_eq!(forward(&spec, &w, &[0.3, -1.0, 2.0]).unwrap(), vec![0.0]);

        let spec = ModelSpec::conv1d_parity(8, 2);
        let w = ParamVector::zeros(&spec);
        let y = forward(&spec, &w, &[1.0; 8]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_forward_is_dot_product() {
        let spec = ModelSpec::linear(2);
        let w = ParamVector::new(&spec, vec![1.0, 2.0]).unwrap();
        assert_eq!(forward(&spec, &w, &[3.0, 4.0]).unwrap(), vec![11.0]);
    }

    #[test]
    fn mlp_forward_golden_value() {
        // r=2 hand-set weights, evaluated independently in high precision.
        let spec = ModelSpec::mlp(2, 2);
        let w = ParamVector::new(
            &spec,
            vec![
                0.5, -0.4, // W1
                0.2, -0.3, 0.15, 0.25, // W2
                0.3, -0.2, 0.1, 0.4, // W3
                0.05, // b1
                0.1, 0.2, // b2
                0.05, -0.1, // b3
            ],
        )
        .unwrap();
        let y = forward(&spec, &w, &[1.0, 0.0]).unwrap()[0];
        assert!((y - 0.034995632706903534).abs() <= 1e-15, "y = {y}");
    }

    #[test]
    fn input_shape_mismatch_is_an_error() {
        let spec = ModelSpec::mlp(2, 3);
        let w = ParamVector::zeros(&spec);
        assert!(matches!(
            forward(&spec, &w, &[1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn linear_gradient_is_the_input() {
        let spec = ModelSpec::linear(3);
        let w = ParamVector::new(&spec, vec![0.5, -1.0, 2.0]).unwrap();
        let x = [1.5, 0.25, -0.75];
        assert_eq!(param_gradient(&spec, &w, &x).unwrap().data, x.to_vec());
    }

    #[test]
    fn mlp_final_bias_gradient_is_one() {
        let spec = ModelSpec::mlp(2, 5);
        let w = init_params(&spec, 7).unwrap();
        let g = param_gradient(&spec, &w, &[0.3, -0.8]).unwrap();
        let b1 = spec.layout().segment("b1").unwrap().offset;
        assert_eq!(g.data[b1], 1.0);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let spec = ModelSpec::mlp(2, 5);
        let w = init_params(&spec, 3).unwrap();
        let x = [0.7, -0.4];
        let g = param_gradient(&spec, &w, &x).unwrap();
        let fd = fd_gradient(&spec, &w, &x, 0, 1e-5);
        assert!(max_rel_err(&g.data, &fd) <= 1e-6);
    }

    #[test]
    fn param_gradient_requires_scalar_output() {
        let spec = ModelSpec::conv1d_parity(4, 2);
        let w = init_params(&spec, 0).unwrap();
        assert!(matches!(
            param_gradient(&spec, &w, &[0.0; 4]),
            Err(Error::NotScalarOutput(4))
        ));
    }

    #[test]
    fn jacobian_single_row_equals_gradient() {
        let spec = ModelSpec::mlp(3, 4);
        let w = init_params(&spec, 11).unwrap();
        let x = [0.2, -0.9, 1.1];
        let jac = param_jacobian(&spec, &w, &x).unwrap();
        assert_eq!(jac.rows, 1);
        assert_eq!(jac.row(0), &param_gradient(&spec, &w, &x).unwrap().data[..]);
    }

    #[test]
    fn conv_jacobian_matches_finite_differences() {
        let spec = ModelSpec::conv1d_parity(8, 2);
        // hand-picked weights with nonzero biases: zero-padded pairs then have
        // pre-activations well away from the ReLU kink, where central
        // differences are a valid oracle
        let w = ParamVector::new(
            &spec,
            vec![
                0.8, -0.5, 0.6, 0.9, 0.3, -0.2, 1.1, 0.7, 0.25, // block 0
                -0.7, 0.4, 0.5, -1.0, 0.15, 0.35, 0.9, -0.6, -0.1, // block 1
                0.45, 0.85, -0.35, 0.65, -0.25, 0.2, 0.75, 1.05, 0.3, // block 2
            ],
        )
        .unwrap();
        let x = [0.9, -0.3, 0.55, 1.2, -0.8, 0.4, 0.95, -1.1];
        let jac = param_jacobian(&spec, &w, &x).unwrap();
        for m in 0..spec.output_dim() {
            let fd = fd_gradient(&spec, &w, &x, m, 1e-5);
            assert!(max_rel_err(jac.row(m), &fd) <= 1e-6, "row {m}");
        }
    }

    #[test]
    fn conv_jacobian_zero_input_zero_weight_rows() {
        // zero input, zero biases: all pre-activations are 0, ReLU kills every
        // path through the weights, so only comb biases can carry gradient
        let spec = ModelSpec::conv1d_parity(8, 2);
        let mut w = init_params(&spec, 2).unwrap();
        let layout = spec.layout();
        for seg in layout.segments.iter().filter(|s| s.fan_in.is_none()) {
            for v in &mut w.data_mut()[seg.range()] {
                *v = 0.0;
            }
        }
        let jac = param_jacobian(&spec, &w, &[0.0; 8]).unwrap();
        for seg in layout.segments.iter().filter(|s| s.fan_in.is_some()) {
            for m in 0..spec.output_dim() {
                for j in seg.range() {
                    assert_eq!(jac.row(m)[j], 0.0, "segment {} row {m}", seg.name);
                }
            }
        }
    }

    #[test]
    fn truncated_conv_outputs_prefix_of_full() {
        let full = ModelSpec::conv1d_parity(8, 2);
        let cut = ModelSpec::conv1d_parity_truncated(8, 2, 4);
        let w = init_params(&full, 9).unwrap();
        let x = [0.3, 1.0, -0.2, 0.8, 0.1, -0.5, 0.9, 0.4];
        let yf = forward(&full, &w, &x).unwrap();
        let yc = forward(&cut, &ParamVector::new(&cut, w.data().to_vec()).unwrap(), &x).unwrap();
        assert_eq!(&yf[..4], &yc[..]);
    }

    #[test]
    fn forward_is_repeatable_bitwise() {
        let spec = ModelSpec::mlp(2, 8);
        let w = init_params(&spec, 42).unwrap();
        let x = [0.123456789, -0.987654321];
        let a = forward(&spec, &w, &x).unwrap();
        let b = forward(&spec, &w, &x).unwrap();
        assert_eq!(a, b);
    }
}
