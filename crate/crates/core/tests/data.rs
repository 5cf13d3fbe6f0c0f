use proptest::prelude::*;
use spectral_damp::data::*;
use spectral_damp::linalg::dense_eigvalsh;
use spectral_damp::Error;

fn write_pair(dir: &std::path::Path, prefix: &str, pixels: &[u8], labels: &[u8], side: usize) {
    std::fs::write(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        encode_idx_images(side, side, pixels),
    )
    .unwrap();
    std::fs::write(
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
        encode_idx_labels(labels),
    )
    .unwrap();
}

#[test]
fn load_split_reads_files_from_disk() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("fashion");
    std::fs::create_dir(&dir).unwrap();
    let pixels: Vec<u8> = (0..5 * 9).map(|i| (i * 5) as u8).collect();
    write_pair(&dir, "t10k", &pixels, &[1, 2, 3, 4, 5], 3);
    let ds = load_split(DatasetKind::Fashion, root.path(), false).unwrap();
    assert_eq!(ds.name, "fashion-t10k");
    assert_eq!((ds.len(), ds.input_dim(), ds.classes()), (5, 9, 10));
    assert_eq!(ds.input(1)[0], 45.0 / 255.0);
    assert_eq!(ds.labels(), &[1, 2, 3, 4, 5]);

    let missing = load_split(DatasetKind::Fashion, root.path(), true).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }), "{missing}");
    assert!(load_split(DatasetKind::Synthetic, root.path(), true).is_err());
}

#[test]
fn swapped_magic_numbers_are_rejected() {
    let images = encode_idx_images(2, 2, &[0; 8]);
    let labels = encode_idx_labels(&[0, 1]);
    assert!(matches!(
        dataset_from_idx("x", &labels, &images),
        Err(Error::Idx(_))
    ));
    assert!(matches!(
        dataset_from_idx("x", &images, &encode_idx_labels(&[0])),
        Err(Error::Idx(_))
    ));
    assert!(parse_idx_images(&images[..10]).is_err());
}

#[test]
fn subsample_is_seeded_and_sorted() {
    let ds = synthetic_classification(200, 4, 3, 1).unwrap();
    let a = subsample(&ds, 50, 9).unwrap();
    assert_eq!(a, subsample(&ds, 50, 9).unwrap());
    assert_ne!(a, subsample(&ds, 50, 10).unwrap());
    assert_eq!(a.len(), 50);
    assert!(subsample(&ds, 201, 0).is_err());
}

#[test]
fn sampler_streams_are_reproducible() {
    let mut a = BatchSampler::new(100, 10, 3, false).unwrap();
    let mut b = BatchSampler::new(100, 10, 3, false).unwrap();
    for _ in 0..25 {
        assert_eq!(a.next_batch(), b.next_batch());
    }
    let mut r = BatchSampler::new(7, 5, 1, true).unwrap();
    for _ in 0..20 {
        let batch = r.next_batch();
        assert_eq!(batch.len(), 5);
        assert!(batch.iter().all(|&i| i < 7));
    }
    assert!(BatchSampler::new(5, 0, 0, false).is_err());
    assert!(BatchSampler::new(5, 6, 0, false).is_err());
}

#[test]
fn synthetic_quadratic_has_requested_spectrum() {
    let spectrum = [7.0, 3.0, 1.0, 0.5, 0.0];
    let (h, w0) = synthetic_quadratic(&spectrum, 4).unwrap();
    let eigs = dense_eigvalsh(&h).unwrap();
    let mut sorted = spectrum.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (x, y) in eigs.iter().zip(&sorted) {
        assert!((x - y).abs() < 1e-10);
    }
    assert_eq!(w0.len(), 5);
    assert!(synthetic_quadratic(&[1.0, -0.5], 0).is_err());
}

#[test]
fn synthetic_classification_uses_every_class() {
    let ds = synthetic_classification(300, 5, 4, 2).unwrap();
    assert_eq!(ds.classes(), 4);
    assert!(ds.class_counts().iter().all(|&c| c > 0));
}

proptest! {
    #[test]
    fn idx_round_trip(
        side in 1usize..6,
        labels in prop::collection::vec(0u8..10, 1..20),
        seed in any::<u64>(),
    ) {
        let n = labels.len();
        let pixels: Vec<u8> = (0..n * side * side)
            .map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8)
            .collect();
        let images = encode_idx_images(side, side, &pixels);
        let label_bytes = encode_idx_labels(&labels);
        let ds = dataset_from_idx("p", &images, &label_bytes).unwrap();
        prop_assert_eq!(ds.len(), n);
        prop_assert!((0..n).all(|i| ds.input(i).iter().all(|x| (0.0..=1.0).contains(x))));
        let (ib, lb) = ds.to_idx_bytes().unwrap();
        prop_assert_eq!(ib, images);
        prop_assert_eq!(lb, label_bytes);
    }

    #[test]
    fn epoch_without_replacement_is_a_permutation(n in 1usize..200, bs in 1usize..20, seed in any::<u64>()) {
        prop_assume!(bs <= n);
        let mut s = BatchSampler::new(n, bs, seed, false).unwrap();
        let mut seen: Vec<usize> = s.epoch().into_iter().flatten().collect();
        prop_assert_eq!(seen.len(), (n / bs) * bs);
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), (n / bs) * bs);
    }
}
