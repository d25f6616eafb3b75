//! Dataset generators for the toy experiments, the prefix-parity oracle, and
//! the hand-constructed optimal parity network.
//!
//! Four families of data are produced here:
//!
//! - ball-vs-sphere: positives uniform on the unit circle, negatives uniform
//!   in the radius-0.5 disk, labels in {-1, +1};
//! - halfspace: points uniform on `[-1,1]^2` labeled by the sign of
//!   `<x, a>` for a seeded random unit direction `a`;
//! - `X_l` planar topology: binary vectors with exactly `l` ones, labeled by
//!   the prefix-parity map `y_j = sum_{k<=j} x_k mod 2`;
//! - two-peak: all binary vectors with exactly two ones, labeled by whether
//!   the central position lies in the closed interval between them.
//!
//! All generators are pure functions of their seed.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{ModelSpec, ParamVector};
use crate::{Error, Result};

/// Provenance of a dataset: which generator, with which seed and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetMeta {
    BallSphere { seed: u64 },
    Halfspace { seed: u64, a: [f64; 2] },
    XlTopology { seed: u64, p: usize, l: usize },
    TwoPeak { p: usize },
    Custom { name: String },
}

/// `N` labeled samples with `p` input and `q` label coordinates, stored
/// row-major in flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    n: usize,
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<f64>,
    labels: Vec<f64>,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        inputs: Vec<f64>,
        labels: Vec<f64>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if input_dim == 0 || inputs.is_empty() || inputs.len() % input_dim != 0 {
            return Err(Error::ShapeMismatch {
                expected: input_dim,
                got: inputs.len(),
                context: "dataset input buffer (must be a nonzero multiple of input_dim)",
            });
        }
        let n = inputs.len() / input_dim;
        if output_dim == 0 || labels.len() != n * output_dim {
            return Err(Error::ShapeMismatch {
                expected: n * output_dim,
                got: labels.len(),
                context: "dataset label buffer",
            });
        }
        Ok(LabeledDataset {
            n,
            input_dim,
            output_dim,
            inputs,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> &[f64] {
        &self.labels[i * self.output_dim..(i + 1) * self.output_dim]
    }

    /// New dataset holding the selected rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len() * self.output_dim);
        for &i in indices {
            if i >= self.n {
                return Err(Error::ShapeMismatch {
                    expected: self.n,
                    got: i,
                    context: "subset row index",
                });
            }
            inputs.extend_from_slice(self.input(i));
            labels.extend_from_slice(self.label(i));
        }
        LabeledDataset::new(self.input_dim, self.output_dim, inputs, labels, self.meta.clone())
    }

    /// Seeded uniform subset of `n` distinct rows (order randomized).
    pub fn sample_subset(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        if n > self.n {
            return Err(Error::PopulationExhausted {
                requested: n as u128,
                available: self.n as u128,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = sample_distinct(&mut rng, self.n, n);
        self.subset(&indices)
    }

    /// Seeded split into a uniform subset of `n` rows and its non-empty
    /// complement (complement keeps ascending order). Same seed and `n` draw
    /// the same subset as [`LabeledDataset::sample_subset`].
    pub fn sample_split(&self, n: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        if n >= self.n {
            return Err(Error::PopulationExhausted {
                requested: n as u128,
                available: self.n as u128,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = sample_distinct(&mut rng, self.n, n);
        let chosen: std::collections::HashSet<usize> = indices.iter().copied().collect();
        let rest: Vec<usize> = (0..self.n).filter(|i| !chosen.contains(i)).collect();
        Ok((self.subset(&indices)?, self.subset(&rest)?))
    }

    /// Same inputs, labels truncated to their first `q` coordinates.
    pub fn with_label_prefix(&self, q: usize) -> Result<LabeledDataset> {
        if q == 0 || q > self.output_dim {
            return Err(Error::InvalidConfig(format!(
                "label prefix must satisfy 1 <= q <= {}, got {q}",
                self.output_dim
            )));
        }
        let mut labels = Vec::with_capacity(self.n * q);
        for i in 0..self.n {
            labels.extend_from_slice(&self.label(i)[..q]);
        }
        LabeledDataset::new(
            self.input_dim,
            q,
            self.inputs.clone(),
            labels,
            self.meta.clone(),
        )
    }

    /// Writes `x_0,...,x_{p-1},y_0,...,y_{q-1}` rows plus a JSON metadata
    /// sidecar at `<path>.meta.json`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<String> = (0..self.input_dim)
            .map(|j| format!("x_{j}"))
            .chain((0..self.output_dim).map(|j| format!("y_{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n {
            let row: Vec<String> = self
                .input(i)
                .iter()
                .chain(self.label(i))
                .map(|v| format!("{v}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        let sidecar = sidecar_path(path);
        let meta_json = serde_json::to_string_pretty(&SidecarMeta {
            n: self.n,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            meta: self.meta.clone(),
        })?;
        std::fs::write(sidecar, meta_json + "\n")?;
        Ok(())
    }

    /// Reads a dataset written by [`save_csv`](Self::save_csv). The sidecar is
    /// optional; without it the metadata is `Custom`.
    pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig(format!("{}: empty CSV", path.display())))??;
        let cols: Vec<&str> = header.split(',').collect();
        let input_dim = cols.iter().take_while(|c| c.starts_with("x_")).count();
        let output_dim = cols.len() - input_dim;
        if input_dim == 0 || output_dim == 0 || !cols[input_dim..].iter().all(|c| c.starts_with("y_")) {
            return Err(Error::InvalidConfig(format!(
                "{}: header must be x_0..x_{{p-1}},y_0..y_{{q-1}}, got {header:?}",
                path.display()
            )));
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.parse::<f64>().map_err(|e| {
                        Error::InvalidConfig(format!("{}: bad float {s:?}: {e}", path.display()))
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != cols.len() {
                return Err(Error::ShapeMismatch {
                    expected: cols.len(),
                    got: vals.len(),
                    context: "CSV row width",
                });
            }
            inputs.extend_from_slice(&vals[..input_dim]);
            labels.extend_from_slice(&vals[input_dim..]);
        }
        let meta = match std::fs::read_to_string(sidecar_path(path)) {
            Ok(text) => serde_json::from_str::<SidecarMeta>(&text)?.meta,
            Err(_) => DatasetMeta::Custom {
                name: path.display().to_string(),
            },
        };
        LabeledDataset::new(input_dim, output_dim, inputs, labels, meta)
    }
}

#[derive(Serialize, Deserialize)]
struct SidecarMeta {
    n: usize,
    input_dim: usize,
    output_dim: usize,
    meta: DatasetMeta,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

/// First `k` entries of a seeded partial Fisher-Yates shuffle of `0..n`.
fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// `N/2` positives uniform on the unit circle, `N/2` negatives area-uniform
/// in the radius-0.5 disk; labels +1 / -1.
pub fn gen_ball_sphere(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "ball-vs-sphere needs an even positive sample count, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        inputs.push(theta.cos());
        inputs.push(theta.sin());
        labels.push(1.0);
    }
    for _ in 0..n / 2 {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        // radius = 0.5 sqrt(u) makes the density uniform in area
        let radius = 0.5 * rng.random_range(0.0..1.0_f64).sqrt();
        inputs.push(radius * theta.cos());
        inputs.push(radius * theta.sin());
        labels.push(-1.0);
    }
    LabeledDataset::new(2, 1, inputs, labels, DatasetMeta::BallSphere { seed })
}

/// Points uniform on `[-1,1]^2` labeled by `sign(<x, a>)` for a seeded random
/// unit direction `a` (the `>= 0 -> +1` convention).
pub fn gen_halfspace(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let a = [phi.cos(), phi.sin()];
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = rng.random_range(-1.0..1.0);
        let x1 = rng.random_range(-1.0..1.0);
        inputs.push(x0);
        inputs.push(x1);
        labels.push(if x0 * a[0] + x1 * a[1] >= 0.0 { 1.0 } else { -1.0 });
    }
    LabeledDataset::new(2, 1, inputs, labels, DatasetMeta::Halfspace { seed, a })
}

/// Prefix parity `y_j = sum_{k<=j} x_k mod 2` on an exactly-binary vector.
pub fn cumsum_mod2(x: &[f64]) -> Result<Vec<f64>> {
    let mut acc = 0u8;
    let mut out = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        let bit = if v == 0.0 {
            0
        } else if v == 1.0 {
            1
        } else {
            return Err(Error::NonBinaryInput { index: i, value: v });
        };
        acc ^= bit;
        out.push(acc as f64);
    }
    Ok(out)
}

/// Exact binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        match c.checked_mul((n as u128) - k as u128 + i) {
            Some(v) => c = v / i,
            None => return u128::MAX,
        }
    }
    c
}

/// `N` distinct samples of `X_l` (binary length-`p` vectors with exactly `l`
/// ones), labeled by [`cumsum_mod2`]. Sampling is without replacement via
/// seeded rejection on sorted support tuples.
pub fn gen_xl_dataset(p: usize, l: usize, n: usize, seed: u64) -> Result<LabeledDataset> {
    if l == 0 || l > p || l % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "X_l needs an even l with 0 < l <= p, got l={l}, p={p}"
        )));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let population = binomial(p, l);
    if (n as u128) > population {
        return Err(Error::PopulationExhausted {
            requested: n as u128,
            available: population,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<u16>> = HashSet::with_capacity(n);
    let mut inputs = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n * p);
    while seen.len() < n {
        let mut support: Vec<u16> = sample_distinct(&mut rng, p, l)
            .into_iter()
            .map(|i| i as u16)
            .collect();
        support.sort_unstable();
        if !seen.insert(support.clone()) {
            continue;
        }
        let mut x = vec![0.0; p];
        for &i in &support {
            x[i as usize] = 1.0;
        }
        labels.extend(cumsum_mod2(&x)?);
        inputs.extend(x);
    }
    LabeledDataset::new(p, p, inputs, labels, DatasetMeta::XlTopology { seed, p, l })
}

/// Positions (1-based) of the two ones in a two-peak input, `psi1 < psi2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPeakIndex {
    pub psi1: usize,
    pub psi2: usize,
}

impl TwoPeakIndex {
    pub fn new(psi1: usize, psi2: usize, p: usize) -> Result<Self> {
        if !(1 <= psi1 && psi1 < psi2 && psi2 <= p) {
            return Err(Error::InvalidConfig(format!(
                "two-peak index needs 1 <= psi1 < psi2 <= p, got ({psi1}, {psi2}), p={p}"
            )));
        }
        Ok(TwoPeakIndex { psi1, psi2 })
    }

    /// Binary vector with ones exactly at the two (1-based) positions.
    pub fn encode(&self, p: usize) -> Vec<f64> {
        let mut x = vec![0.0; p];
        x[self.psi1 - 1] = 1.0;
        x[self.psi2 - 1] = 1.0;
        x
    }

    /// 1 iff the central 1-based position `p/2` lies in `[psi1, psi2]`.
    pub fn label(&self, p: usize) -> f64 {
        let c = p / 2;
        if self.psi1 <= c && c <= self.psi2 {
            1.0
        } else {
            0.0
        }
    }

    /// Recovers the index pair from an encoded input vector.
    pub fn from_input(x: &[f64]) -> Result<Self> {
        let mut ones = Vec::new();
        for (i, &v) in x.iter().enumerate() {
            if v == 1.0 {
                ones.push(i + 1);
            } else if v != 0.0 {
                return Err(Error::NonBinaryInput { index: i, value: v });
            }
        }
        if ones.len() != 2 {
            return Err(Error::InvalidConfig(format!(
                "two-peak input must have exactly two ones, got {}",
                ones.len()
            )));
        }
        TwoPeakIndex::new(ones[0], ones[1], x.len())
    }
}

/// All `C(p,2)` two-peak inputs in lexicographic `(psi1, psi2)` order, labeled
/// by whether the central pixel falls between the peaks.
pub fn enumerate_two_peak(p: usize) -> Result<LabeledDataset> {
    if p < 2 || p % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "two-peak enumeration needs an even p >= 2, got {p}"
        )));
    }
    let n = p * (p - 1) / 2;
    let mut inputs = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for psi1 in 1..=p {
        for psi2 in psi1 + 1..=p {
            let idx = TwoPeakIndex { psi1, psi2 };
            inputs.extend(idx.encode(p));
            labels.push(idx.label(p));
        }
    }
    LabeledDataset::new(p, 1, inputs, labels, DatasetMeta::TwoPeak { p })
}

/// The manually-computed optimal parity network `w*`: in every block, kernel-2
/// channels `(1,-1)` and `(-1,1)` (remaining channels zero), combine weights
/// `(1,1,0,...)`, all biases zero. With the identity
/// `u + v mod 2 = relu(u-v) + relu(v-u)` on bits, the stack computes the
/// prefix-parity map exactly.
pub fn build_parity_network(p: usize, r: usize) -> Result<(ModelSpec, ParamVector)> {
    if r < 2 {
        return Err(Error::InvalidSpec(format!(
            "the optimal parity construction needs r >= 2, got {r}"
        )));
    }
    let spec = ModelSpec::conv1d_parity(p, r);
    spec.validate()?;
    let mut w = ParamVector::zeros(&spec);
    let layout = spec.layout();
    for b in 0..spec.conv_blocks() {
        let pw = layout.segment(&format!("pair_w{b}")).expect("layout has pair_w");
        w.data_mut()[pw.offset] = 1.0;
        w.data_mut()[pw.offset + 1] = -1.0;
        w.data_mut()[pw.offset + 2] = -1.0;
        w.data_mut()[pw.offset + 3] = 1.0;
        let cw = layout.segment(&format!("comb_w{b}")).expect("layout has comb_w");
        w.data_mut()[cw.offset] = 1.0;
        w.data_mut()[cw.offset + 1] = 1.0;
    }
    Ok((spec, w))
}

/// `w + sigma * N(0, I)`, coordinate-wise, seeded.
pub fn perturb_params(w: &ParamVector, sigma: f64, seed: u64) -> Result<ParamVector> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "perturbation scale must be >= 0, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = w.clone();
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;

    #[test]
    fn ball_sphere_classes_have_the_right_geometry() {
        let ds = gen_ball_sphere(1024, 0).unwrap();
        assert_eq!(ds.len(), 1024);
        let mut pos = 0;
        for i in 0..ds.len() {
            let x = ds.input(i);
            let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
            match ds.label(i)[0] {
                1.0 => {
                    pos += 1;
                    assert!((norm - 1.0).abs() <= 1e-12, "positive off the circle: {norm}");
                }
                -1.0 => assert!(norm <= 0.5, "negative outside the disk: {norm}"),
                other => panic!("unexpected label {other}"),
            }
        }
        assert_eq!(pos, 512, "classes must be balanced");
        assert!(gen_ball_sphere(1023, 0).is_err(), "odd N must be rejected");
        assert_eq!(ds, gen_ball_sphere(1024, 0).unwrap(), "seeded determinism");
    }

    #[test]
    fn halfspace_labels_follow_the_stored_direction() {
        let ds = gen_halfspace(1024, 3).unwrap();
        let a = match ds.meta {
            DatasetMeta::Halfspace { a, .. } => a,
            ref other => panic!("wrong metadata {other:?}"),
        };
        assert!((a[0] * a[0] + a[1] * a[1] - 1.0).abs() <= 1e-12, "a must be unit");
        for i in 0..ds.len() {
            let x = ds.input(i);
            let want = if x[0] * a[0] + x[1] * a[1] >= 0.0 { 1.0 } else { -1.0 };
            assert_eq!(ds.label(i)[0], want, "row {i}");
        }
    }

    #[test]
    fn cumsum_mod2_matches_hand_examples() {
        assert_eq!(cumsum_mod2(&[0.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(
            cumsum_mod2(&[1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec![1.0, 1.0, 1.0, 0.0]
        );
        assert_eq!(
            cumsum_mod2(&[0.0, 1.0, 1.0, 0.0]).unwrap(),
            vec![0.0, 1.0, 0.0, 0.0]
        );
        assert!(matches!(
            cumsum_mod2(&[0.0, 0.5]),
            Err(Error::NonBinaryInput { index: 1, .. })
        ));
    }

    #[test]
    fn binomial_small_and_large() {
        assert_eq!(binomial(6, 2), 15);
        assert_eq!(binomial(64, 2), 2016);
        assert_eq!(binomial(10, 0), 1);
        assert_eq!(binomial(5, 7), 0);
        // paper's p=128, l=10 population is of order 1e14
        let c = binomial(128, 10);
        assert!(c > 2 * 10u128.pow(14) && c < 3 * 10u128.pow(14), "got {c}");
    }

    #[test]
    fn xl_dataset_has_exact_support_sizes_and_parity_labels() {
        let ds = gen_xl_dataset(16, 4, 200, 1).unwrap();
        assert_eq!(ds.len(), 200);
        for i in 0..ds.len() {
            let x = ds.input(i);
            let ones: f64 = x.iter().sum();
            assert_eq!(ones, 4.0, "row {i} support size");
            assert_eq!(ds.label(i), &cumsum_mod2(x).unwrap()[..], "row {i} labels");
        }
    }

    #[test]
    fn xl_dataset_exhausts_small_populations_distinctly() {
        // C(6,2) = 15: asking for all of them must return each support once
        let ds = gen_xl_dataset(6, 2, 15, 9).unwrap();
        let mut supports: Vec<Vec<usize>> = (0..ds.len())
            .map(|i| {
                ds.input(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v == 1.0)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        supports.sort();
        supports.dedup();
        assert_eq!(supports.len(), 15, "all supports distinct and exhaustive");
        assert!(matches!(
            gen_xl_dataset(6, 2, 16, 9),
            Err(Error::PopulationExhausted {
                requested: 16,
                available: 15
            })
        ));
        assert!(gen_xl_dataset(6, 3, 4, 0).is_err(), "odd l rejected");
    }

    #[test]
    fn two_peak_enumeration_matches_brute_force() {
        let ds = enumerate_two_peak(64).unwrap();
        assert_eq!(ds.len(), 2016);
        let mut ones_count = 0;
        for i in 0..ds.len() {
            let x = ds.input(i);
            // independent label: scan for the 1-positions, test 32 in range
            let pos: Vec<usize> = x
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1.0)
                .map(|(j, _)| j + 1)
                .collect();
            assert_eq!(pos.len(), 2, "row {i} must have two peaks");
            let want = if pos[0] <= 32 && 32 <= pos[1] { 1.0 } else { 0.0 };
            assert_eq!(ds.label(i)[0], want, "row {i}");
            ones_count += (ds.label(i)[0] == 1.0) as usize;
        }
        // psi1 in 1..=32 and psi2 in 32..=64: 31*33 + 32 = 1055 positives
        assert_eq!(ones_count, 1055);
    }

    #[test]
    fn two_peak_hand_labels() {
        assert_eq!(TwoPeakIndex::new(10, 40, 64).unwrap().label(64), 1.0);
        assert_eq!(TwoPeakIndex::new(40, 50, 64).unwrap().label(64), 0.0);
        let x = TwoPeakIndex::new(10, 40, 64).unwrap().encode(64);
        assert_eq!(TwoPeakIndex::from_input(&x).unwrap().psi1, 10);
        assert!(TwoPeakIndex::new(5, 5, 64).is_err());
    }

    #[test]
    fn parity_network_solves_one_pair() {
        // p=2 is a single block: the pairwise identity itself
        let (spec, w) = build_parity_network(2, 2).unwrap();
        assert_eq!(forward(&spec, &w, &[1.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(forward(&spec, &w, &[1.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(forward(&spec, &w, &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn parity_network_is_exact_on_all_p8_inputs() {
        let (spec, w) = build_parity_network(8, 2).unwrap();
        for bits in 0u32..256 {
            let x: Vec<f64> = (0..8).map(|j| ((bits >> j) & 1) as f64).collect();
            let got = forward(&spec, &w, &x).unwrap();
            let want = cumsum_mod2(&x).unwrap();
            assert_eq!(got, want, "input {x:?}");
        }
    }

    #[test]
    fn parity_network_extra_channels_do_not_change_the_function() {
        let (spec, w) = build_parity_network(8, 5).unwrap();
        let x = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        assert_eq!(
            forward(&spec, &w, &x).unwrap(),
            cumsum_mod2(&x).unwrap(),
            "zero channels must be inert"
        );
    }

    #[test]
    fn parity_network_op_counts_for_p64() {
        let (spec, _) = build_parity_network(64, 2).unwrap();
        assert_eq!(spec.conv_op_counts(), (12, 6, 6));
        assert!(build_parity_network(64, 1).is_err(), "r < 2 rejected");
        assert!(build_parity_network(12, 2).is_err(), "non-power-of-two rejected");
    }

    #[test]
    fn perturbation_is_seeded_gaussian_noise() {
        let (_, w) = build_parity_network(8, 2).unwrap();
        assert_eq!(perturb_params(&w, 0.0, 5).unwrap(), w, "sigma = 0 is identity");
        assert_eq!(
            perturb_params(&w, 0.05, 5).unwrap(),
            perturb_params(&w, 0.05, 5).unwrap(),
            "seeded determinism"
        );
        assert_ne!(perturb_params(&w, 0.05, 5).unwrap(), w);

        // Monte-Carlo: coordinate std over 1e5 draws approximates sigma
        let spec = ModelSpec::linear_multi(100_000, 1);
        let zeros = ParamVector::zeros(&spec);
        let noisy = perturb_params(&zeros, 0.05, 11).unwrap();
        let n = noisy.len() as f64;
        let mean: f64 = noisy.data().iter().sum::<f64>() / n;
        let var: f64 = noisy.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std - 0.05).abs() / 0.05 <= 0.02,
            "empirical std {std} should be within 2% of 0.05"
        );
    }

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = gen_ball_sphere(64, 7).unwrap();
        ds.save_csv(&path).unwrap();
        let back = LabeledDataset::load_csv(&path).unwrap();
        assert_eq!(ds, back, "shortest round-trip floats must survive CSV");
    }

    #[test]
    fn subset_and_label_prefix() {
        let ds = gen_xl_dataset(8, 2, 20, 4).unwrap();
        let sub = ds.sample_subset(10, 0).unwrap();
        assert_eq!(sub.len(), 10);
        assert_eq!(sub, ds.sample_subset(10, 0).unwrap());

        let cut = ds.with_label_prefix(4).unwrap();
        assert_eq!(cut.output_dim(), 4);
        for i in 0..ds.len() {
            assert_eq!(cut.label(i), &ds.label(i)[..4]);
            assert_eq!(cut.input(i), ds.input(i));
        }
        assert!(ds.with_label_prefix(9).is_err());
    }
}
