//! Randomized invariants over the public API.

use proptest::prelude::*;

use tkl::data::{binomial, build_parity_network, cumsum_mod2, DatasetMeta, LabeledDataset};
use tkl::kernel::{normalized_ntk, tangent_kernel};
use tkl::model::{forward, init_params, ModelSpec, ParamVector};
use tkl::path_io::{load_path, save_path};
use tkl::train::{LearningPath, Snapshot};

fn bits(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0)], len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The hand-built network computes every prefix parity exactly, for any
    /// width and any input length.
    #[test]
    fn parity_network_is_exact(
        logp in 1usize..=5,
        r in 2usize..=4,
        seed in 0u64..1000,
    ) {
        let p = 1usize << logp;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        use rand::{Rng, SeedableRng};
        let x: Vec<f64> = (0..p).map(|_| if rng.random_range(0..2) == 1 { 1.0 } else { 0.0 }).collect();
        let (spec, w) = build_parity_network(p, r).unwrap();
        prop_assert_eq!(forward(&spec, &w, &x).unwrap(), cumsum_mod2(&x).unwrap());
    }

    /// Tangent kernels are symmetric down to the bit, and the normalized
    /// kernel obeys the Cauchy-Schwarz bound.
    #[test]
    fn kernel_symmetry_and_bound(
        seed in 0u64..500,
        r in 1usize..=6,
        x0 in -2.0f64..2.0, x1 in -2.0f64..2.0,
        y0 in -2.0f64..2.0, y1 in -2.0f64..2.0,
    ) {
        let spec = ModelSpec::mlp(2, r);
        let w = init_params(&spec, seed).unwrap();
        let x = [x0, x1];
        let y = [y0, y1];
        let kxy = tangent_kernel(&spec, &w, &x, &y).unwrap();
        let kyx = tangent_kernel(&spec, &w, &y, &x).unwrap();
        prop_assert_eq!(kxy.to_bits(), kyx.to_bits(), "symmetry must be bit-exact");
        let nk = normalized_ntk(&spec, &w, &x, &y).unwrap();
        prop_assert!(nk.abs() <= 1.0 + 1e-12, "normalized kernel {} out of bounds", nk);
    }

    /// Learning paths survive the binary format bit-for-bit.
    #[test]
    fn path_io_round_trip(
        seed in 0u64..1000,
        count in 1usize..6,
    ) {
        use rand::{Rng, SeedableRng};
        let spec = ModelSpec::mlp(2, 3);
        let d = spec.param_count();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut k = 0usize;
        let mut snapshots = Vec::new();
        for i in 0..count {
            let data: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            snapshots.push(Snapshot {
                k,
                eta: if i + 1 == count { 0.0 } else { rng.random_range(1e-4..1e-1) },
                w: ParamVector::new(&spec, data).unwrap(),
            });
            k += rng.random_range(1..4usize);
        }
        let final_step = snapshots.last().unwrap().k;
        let losses: Vec<f64> = (0..=final_step).map(|_| rng.random_range(0.0..10.0)).collect();
        let path = LearningPath::new(spec, snapshots, losses, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("p.bin");
        save_path(&path, None, &file).unwrap();
        let (loaded, _) = load_path(&file).unwrap();
        prop_assert_eq!(loaded.snapshot_count(), path.snapshot_count());
        for (a, b) in loaded.snapshots().iter().zip(path.snapshots()) {
            prop_assert_eq!(a.k, b.k);
            prop_assert_eq!(a.eta.to_bits(), b.eta.to_bits());
            let bits_a: Vec<u64> = a.w.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.w.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }

    /// Prefix parity is a running XOR.
    #[test]
    fn cumsum_mod2_is_running_xor(x in bits(16)) {
        let c = cumsum_mod2(&x).unwrap();
        let mut acc = 0u8;
        for (j, xi) in x.iter().enumerate() {
            acc ^= *xi as u8;
            prop_assert_eq!(c[j], acc as f64);
        }
    }

    /// Pascal's rule for the sample-space counter.
    #[test]
    fn binomial_pascal_rule(n in 1usize..40, k in 0usize..40) {
        prop_assume!(k <= n);
        if k > 0 {
            prop_assert_eq!(binomial(n, k), binomial(n - 1, k - 1) + binomial(n - 1, k));
        }
        prop_assert_eq!(binomial(n, k), binomial(n, n - k));
    }

    /// Dataset CSVs round-trip floats exactly.
    #[test]
    fn dataset_csv_round_trip(
        values in proptest::collection::vec(-1e6f64..1e6, 4..24),
    ) {
        prop_assume!(values.len() % 4 == 0);
        let n = values.len() / 4;
        let inputs: Vec<f64> = values[..3 * n].to_vec();
        let labels: Vec<f64> = values[3 * n..].to_vec();
        let ds = LabeledDataset::new(3, 1, inputs, labels, DatasetMeta::Custom { name: "prop".into() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("d.csv");
        ds.save_csv(&file).unwrap();
        let loaded = LabeledDataset::load_csv(&file).unwrap();
        prop_assert_eq!(loaded.len(), ds.len());
        for i in 0..ds.len() {
            let a: Vec<u64> = loaded.input(i).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = ds.input(i).iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(loaded.label(i)[0].to_bits(), ds.label(i)[0].to_bits());
        }
    }
}
