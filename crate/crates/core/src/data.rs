//! MNIST ingestion from IDX files, normalization and subsetting.

use crate::model::Mat;
use crate::rng::{rng_from_seed, sample_without_replacement};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Environment variable consulted for the MNIST directory.
pub const MNIST_DIR_ENV: &str = "WIDESPARSE_MNIST_DIR";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: String, found: u32, expected: u32 },
    #[error("{path}: truncated, need {needed} bytes, have {have}")]
    TruncatedFile { path: String, needed: usize, have: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("subset of {size} requested from {available} items")]
    SizeTooLarge { size: usize, available: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Mean and stdev per pixel position; positions constant over the
    /// training split map to 0.
    #[default]
    PerPixel,
    /// One mean and stdev over every training pixel.
    Scalar,
    /// Pixels scaled to [0, 1] only.
    None,
}

/// Statistics fitted on the training split and reused for the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub kind: Normalization,
    /// One value per pixel for `PerPixel`, a single value otherwise.
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
}

impl NormStats {
    /// Fits statistics on `[0, 1]`-scaled row-major images.
    pub fn fit(pixels: &[f64], dim: usize, kind: Normalization) -> Self {
        let n = pixels.len() / dim.max(1);
        match kind {
            Normalization::None => Self {
                kind,
                mean: vec![0.0],
                stdev: vec![1.0],
            },
            Normalization::Scalar => {
                let m: crate::stats::Moments = pixels.iter().copied().collect();
                Self {
                    kind,
                    mean: vec![m.mean()],
                    stdev: vec![m.central_m2().sqrt()],
                }
            }
            Normalization::PerPixel => {
                let mut mean = vec![0.0; dim];
                for row in pixels.chunks_exact(dim) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= n as f64;
                }
                let mut var = vec![0.0; dim];
                for row in pixels.chunks_exact(dim) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let stdev = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
                Self { kind, mean, stdev }
            }
        }
    }

    pub fn apply(&self, pixels: &mut [f64], dim: usize) {
        match self.kind {
            Normalization::None => {}
            Normalization::Scalar => {
                let (m, s) = (self.mean[0], self.stdev[0]);
                let inv = if s > 0.0 { 1.0 / s } else { 0.0 };
                for v in pixels.iter_mut() {
                    *v = (*v - m) * inv;
                }
            }
            Normalization::PerPixel => {
                for row in pixels.chunks_exact_mut(dim) {
                    for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.stdev) {
                        *v = if s > 0.0 { (*v - m) / s } else { 0.0 };
                    }
                }
            }
        }
    }
}

/// Row-major `len x dim` images with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    split: Split,
    stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(images: Vec<f64>, labels: Vec<usize>, dim: usize, split: Split) -> Result<Self, DataError> {
        if dim == 0 || images.len() != labels.len() * dim {
            return Err(DataError::CountMismatch {
                images: if dim == 0 { 0 } else { images.len() / dim },
                labels: labels.len(),
            });
        }
        Ok(Self {
            images,
            labels,
            dim,
            split,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    /// Feature-major batch of the given items.
    pub fn batch(&self, indices: &[usize]) -> (Mat, Vec<usize>) {
        let x = Mat::from_samples(self.dim, indices.iter().map(|&i| self.image(i)));
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// Uniform sample without replacement, kept in original order.
    pub fn subset(&self, size: usize, seed: u64) -> Result<Dataset, DataError> {
        if size > self.len() {
            return Err(DataError::SizeTooLarge {
                size,
                available: self.len(),
            });
        }
        let mut rng = rng_from_seed(seed);
        let mut idx = sample_without_replacement(&mut rng, self.len(), size);
        idx.sort_unstable();
        Ok(self.select(&idx))
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            split: self.split,
            stats: self.stats.clone(),
        }
    }

    pub fn class_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &y in &self.labels {
            if y < classes {
                h[y] += 1;
            }
        }
        h
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn need(path: &str, bytes: &[u8], needed: usize) -> Result<(), DataError> {
    if bytes.len() < needed {
        return Err(DataError::TruncatedFile {
            path: path.to_string(),
            needed,
            have: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(path: &str, bytes: &[u8], expected: u32) -> Result<(), DataError> {
    need(path, bytes, 4)?;
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_string(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(path: &str, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    check_magic(path, bytes, IMAGES_MAGIC)?;
    need(path, bytes, 16)?;
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let end = 16 + n * rows * cols;
    need(path, bytes, end)?;
    Ok((n, rows, cols, bytes[16..end].to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(path: &str, bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    check_magic(path, bytes, LABELS_MAGIC)?;
    need(path, bytes, 8)?;
    let n = be_u32(bytes, 4) as usize;
    need(path, bytes, 8 + n)?;
    Ok(bytes[8..8 + n].to_vec())
}

fn read(dir: &Path, name: &str) -> Result<(String, Vec<u8>), DataError> {
    let path = dir.join(name);
    let shown = path.display().to_string();
    let bytes = fs::read(&path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    Ok((shown, bytes))
}

fn load_split(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset, DataError> {
    let (ip, ib) = read(dir, images)?;
    let (lp, lb) = read(dir, labels)?;
    let (n, rows, cols, pixels) = parse_idx_images(&ip, &ib)?;
    let labels = parse_idx_labels(&lp, &lb)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let images = pixels.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Dataset::new(images, labels.into_iter().map(usize::from).collect(), rows * cols, split)
}

/// Loads both splits, scales pixels to [0, 1], fits `normalization` on the
/// training split and applies it to both.
pub fn load_mnist(dir: &Path, normalization: Normalization) -> Result<(Dataset, Dataset), DataError> {
    let mut train = load_split(dir, TRAIN_IMAGES, TRAIN_LABELS, Split::Train)?;
    let mut test = load_split(dir, TEST_IMAGES, TEST_LABELS, Split::Test)?;
    let stats = NormStats::fit(&train.images, train.dim, normalization);
    stats.apply(&mut train.images, train.dim);
    stats.apply(&mut test.images, test.dim);
    train.stats = Some(stats.clone());
    test.stats = Some(stats);
    Ok((train, test))
}

/// `$WIDESPARSE_MNIST_DIR` if set, else `data/mnist`.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// True when all four IDX files exist in `dir`.
pub fn mnist_available(dir: &Path) -> bool {
    [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
        .iter()
        .all(|f| dir.join(f).is_file())
}
