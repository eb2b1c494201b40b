use std::fs;
use std::path::{Path, PathBuf};
use widesparse::data::*;
use widesparse::stats::Moments;

fn images_file(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = IMAGES_MAGIC.to_be_bytes().to_vec();
    for v in [n, rows, cols] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn labels_file(labels: &[u8]) -> Vec<u8> {
    let mut b = LABELS_MAGIC.to_be_bytes().to_vec();
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

struct Split {
    n: u32,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

fn split(n: u32, offset: u8) -> Split {
    let dim = 4u32;
    Split {
        n,
        pixels: (0..n * dim).map(|i| ((i * 37 + offset as u32) % 256) as u8).collect(),
        labels: (0..n).map(|i| (i % 10) as u8).collect(),
    }
}

fn write_dir(dir: &Path, train: &Split, test: &Split) {
    fs::write(dir.join(TRAIN_IMAGES), images_file(train.n, 2, 2, &train.pixels)).unwrap();
    fs::write(dir.join(TRAIN_LABELS), labels_file(&train.labels)).unwrap();
    fs::write(dir.join(TEST_IMAGES), images_file(test.n, 2, 2, &test.pixels)).unwrap();
    fs::write(dir.join(TEST_LABELS), labels_file(&test.labels)).unwrap();
}

#[test]
fn loads_a_small_idx_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_dir(dir.path(), &split(30, 0), &split(10, 5));
    assert!(mnist_available(dir.path()));
    let (train, test) = load_mnist(dir.path(), Normalization::None).unwrap();
    assert_eq!((train.len(), test.len(), train.dim()), (30, 10, 4));
    assert_eq!(train.image(0), [0.0, 37.0 / 255.0, 74.0 / 255.0, 111.0 / 255.0]);
    assert_eq!(test.labels()[..3], [0, 1, 2]);
    assert!(train.images().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn test_split_reuses_training_statistics() {
    let dir = tempfile::tempdir().unwrap();
    write_dir(dir.path(), &split(50, 0), &split(20, 91));
    for kind in [Normalization::Scalar, Normalization::PerPixel] {
        let (train, test) = load_mnist(dir.path(), kind).unwrap();
        let stats = train.stats().unwrap().clone();
        assert_eq!(test.stats(), Some(&stats));
        let (_, raw_test) = load_mnist(dir.path(), Normalization::None).unwrap();
        let mut expected = raw_test.images().to_vec();
        stats.apply(&mut expected, 4);
        assert_eq!(test.images(), &expected[..]);
        let m: Moments = train.images().iter().copied().collect();
        assert!(m.mean().abs() < 1e-12);
        assert!((m.central_m2() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = (split(30, 0), split(10, 5));

    write_dir(dir.path(), &train, &test);
    fs::write(dir.path().join(TRAIN_LABELS), labels_file(&train.labels[..29])).unwrap();
    assert!(matches!(
        load_mnist(dir.path(), Normalization::None),
        Err(DataError::CountMismatch { images: 30, labels: 29 })
    ));

    write_dir(dir.path(), &train, &test);
    fs::write(dir.path().join(TEST_LABELS), images_file(10, 2, 2, &test.pixels)).unwrap();
    assert!(matches!(
        load_mnist(dir.path(), Normalization::None),
        Err(DataError::BadMagic { found: 0x803, expected: 0x801, .. })
    ));

    write_dir(dir.path(), &train, &test);
    let full = images_file(30, 2, 2, &train.pixels);
    fs::write(dir.path().join(TRAIN_IMAGES), &full[..full.len() - 3]).unwrap();
    assert!(matches!(
        load_mnist(dir.path(), Normalization::None),
        Err(DataError::TruncatedFile { .. })
    ));

    write_dir(dir.path(), &train, &test);
    fs::write(dir.path().join(TRAIN_IMAGES), [0u8, 0]).unwrap();
    assert!(matches!(
        load_mnist(dir.path(), Normalization::None),
        Err(DataError::TruncatedFile { needed: 4, have: 2, .. })
    ));

    write_dir(dir.path(), &train, &test);
    fs::remove_file(dir.path().join(TEST_IMAGES)).unwrap();
    assert!(!mnist_available(dir.path()));
    assert!(matches!(load_mnist(dir.path(), Normalization::None), Err(DataError::Io { .. })));
}

#[test]
fn subset_label_histogram_is_near_the_class_prior() {
    let n = 10_000usize;
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let d = Dataset::new((0..n).map(|i| i as f64).collect(), labels, 1, widesparse::data::Split::Train).unwrap();
    for seed in 0..5 {
        let s = d.subset(2048, seed).unwrap();
        assert_eq!(s.len(), 2048);
        let mut items: Vec<usize> = s.images().iter().map(|&v| v as usize).collect();
        items.dedup();
        assert_eq!(items.len(), 2048);
        let p = 0.1;
        let sd = (2048.0 * p * (1.0 - p) * (n - 2048) as f64 / (n - 1) as f64).sqrt();
        for h in s.class_histogram(10) {
            assert!((h as f64 - 2048.0 * p).abs() < 4.0 * sd, "count {h}");
        }
        for (&x, &y) in s.images().iter().zip(s.labels()) {
            assert_eq!(x as usize % 10, y);
        }
    }
}

fn real_mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

#[test]
fn real_mnist_when_present() {
    let dir = real_mnist_dir();
    if !mnist_available(&dir) {
        eprintln!("MNIST not found in {}, skipping", dir.display());
        return;
    }
    let (train, test) = load_mnist(&dir, Normalization::Scalar).unwrap();
    assert_eq!((train.len(), test.len(), train.dim()), (60_000, 10_000, 784));
    let m: Moments = train.images().iter().copied().collect();
    assert!(m.mean().abs() < 1e-9);
    assert!((m.central_m2().sqrt() - 1.0).abs() < 1e-9);
    assert!(train.labels().iter().all(|&y| y < 10));
}
