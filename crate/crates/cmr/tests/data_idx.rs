//! Dataset-facing integration checks: the canonical-file test (runs only
//! when real MNIST files are present) and batching properties at scale.

use cmr::data::{batches, dir_has_dataset, load_dir, synthetic, Dataset};
use proptest::prelude::*;

/// Directory searched for canonical files: `$CMR_MNIST_DIR`, then `./data`.
fn mnist_dir() -> std::path::PathBuf {
    std::env::var("CMR_MNIST_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| std::path::PathBuf::from("data"))
}

#[test]
fn canonical_mnist_loads_when_present() {
    let dir = mnist_dir();
    if !dir_has_dataset(&dir) || synthetic::is_synthetic_dir(&dir) {
        eprintln!(
            "canonical files not present under {} - skipping (set CMR_MNIST_DIR to enable)",
            dir.display()
        );
        return;
    }
    let (train, test): (Dataset<f64>, Dataset<f64>) = load_dir(&dir).unwrap();
    assert_eq!(train.len(), 60000);
    assert_eq!(test.len(), 10000);
    assert_eq!(train.features(), 784);
    // First label of the canonical training set.
    assert_eq!(train.labels[0], 5);
    let in_range = train.images.data().iter().all(|&v| (0.0..=1.0).contains(&v));
    assert!(in_range);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Every (seed, epoch) batching is a permutation: each index exactly once,
    /// all batch sizes full except possibly the last.
    #[test]
    fn prop_batches_partition_the_dataset(
        count in 1usize..300,
        batch_size in 1usize..64,
        seed in 0u64..1000,
        epoch in 0u64..4,
    ) {
        let images = cmr::linalg::Matrix::from_fn(count, 2, |i, _| i as f64);
        let labels = (0..count).map(|i| (i % 10) as u8).collect();
        let ds = Dataset { images, labels, split: cmr::data::Split::Train };
        let mut seen = vec![0usize; count];
        let mut batch_lens = Vec::new();
        for (imgs, lbls) in batches(&ds, batch_size, seed, epoch) {
            prop_assert_eq!(imgs.rows(), lbls.len());
            batch_lens.push(lbls.len());
            for r in 0..imgs.rows() {
                seen[imgs.get(r, 0) as usize] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for (i, &len) in batch_lens.iter().enumerate() {
            if i + 1 < batch_lens.len() {
                prop_assert_eq!(len, batch_size);
            } else {
                prop_assert!(len <= batch_size);
            }
        }
    }
}
