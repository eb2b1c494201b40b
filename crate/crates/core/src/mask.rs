//! Static random sparsity masks.
//!
//! A mask is drawn once from `(shape, keep_count, mode, seed)` and never
//! changes afterwards. Only that header needs to be stored: the bit pattern is
//! regenerated from it bit-identically.

use crate::rng::{rng_from_seed, sample_without_replacement};
use bitvec::vec::BitVec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("keep count {keep} outside 0..={size}")]
    KeepCountOutOfRange { keep: usize, size: usize },
    #[error("keep count {keep} is not a multiple of the fiber size {fiber}")]
    IndivisibleKeepCount { keep: usize, fiber: usize },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("invalid restricted axes {axes:?} for a rank-{rank} tensor")]
    InvalidAxes { axes: Vec<usize>, rank: usize },
    #[error("shape mismatch: tensor {tensor:?} vs mask {mask:?}")]
    ShapeMismatch {
        tensor: Vec<usize>,
        mask: Vec<usize>,
    },
    #[error("mask statistics need a 2-d mask, got shape {0:?}")]
    NotTwoDimensional(Vec<usize>),
}

/// How kept positions are drawn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Individual cells, uniformly over the whole tensor.
    AllDims,
    /// Whole fibers indexed by the listed axes; the mask is constant along
    /// every other axis. For a conv kernel `(out, in, kh, kw)` with axes
    /// `[0, 1]` this keeps or drops complete spatial kernels.
    AxisRestricted(Vec<usize>),
}

/// The stored form of a mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub shape: Vec<usize>,
    pub mode: MaskMode,
    pub seed: u64,
    pub keep_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMask {
    header: MaskHeader,
    keep: BitVec,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Draws a mask with exactly `keep_count` kept cells.
pub fn sample_mask(
    shape: &[usize],
    keep_count: usize,
    mode: MaskMode,
    seed: u64,
) -> Result<SparsityMask, MaskError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(MaskError::InvalidShape(shape.to_vec()));
    }
    let size: usize = shape.iter().product();
    if keep_count > size {
        return Err(MaskError::KeepCountOutOfRange {
            keep: keep_count,
            size,
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut keep = BitVec::repeat(false, size);

    match &mode {
        MaskMode::AllDims => {
            if keep_count == size {
                keep.fill(true);
            } else {
                for i in sample_without_replacement(&mut rng, size, keep_count) {
                    keep.set(i, true);
                }
            }
        }
        MaskMode::AxisRestricted(axes) => {
            let rank = shape.len();
            let mut sorted = axes.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if axes.is_empty() || sorted.len() != axes.len() || sorted.iter().any(|&a| a >= rank) {
                return Err(MaskError::InvalidAxes {
                    axes: axes.clone(),
                    rank,
                });
            }
            let fiber_count: usize = sorted.iter().map(|&a| shape[a]).product();
            let fiber_size = size / fiber_count;
            if keep_count % fiber_size != 0 {
                return Err(MaskError::IndivisibleKeepCount {
                    keep: keep_count,
                    fiber: fiber_size,
                });
            }
            let chosen = sample_without_replacement(&mut rng, fiber_count, keep_count / fiber_size);
            let mut fiber_kept = vec![false; fiber_count];
            for f in chosen {
                fiber_kept[f] = true;
            }
            let cell_strides = strides(shape);
            let fiber_dims: Vec<usize> = sorted.iter().map(|&a| shape[a]).collect();
            let fiber_strides = strides(&fiber_dims);
            for cell in 0..size {
                let mut fiber = 0;
                for (k, &a) in sorted.iter().enumerate() {
                    let idx = (cell / cell_strides[a]) % shape[a];
                    fiber += idx * fiber_strides[k];
                }
                if fiber_kept[fiber] {
                    keep.set(cell, true);
                }
            }
        }
    }

    Ok(SparsityMask {
        header: MaskHeader {
            shape: shape.to_vec(),
            mode,
            seed,
            keep_count,
        },
        keep,
    })
}

impl SparsityMask {
    /// Regenerates a mask from its stored header.
    pub fn from_header(header: &MaskHeader) -> Result<Self, MaskError> {
        sample_mask(&header.shape, header.keep_count, header.mode.clone(), header.seed)
    }

    /// All-true mask of the given shape.
    pub fn full(shape: &[usize]) -> Result<Self, MaskError> {
        let size = shape.iter().product();
        sample_mask(shape, size, MaskMode::AllDims, 0)
    }

    pub fn header(&self) -> &MaskHeader {
        &self.header
    }

    pub fn shape(&self) -> &[usize] {
        &self.header.shape
    }

    pub fn size(&self) -> usize {
        self.keep.len()
    }

    pub fn keep_count(&self) -> usize {
        self.header.keep_count
    }

    pub fn seed(&self) -> u64 {
        self.header.seed
    }

    pub fn mode(&self) -> &MaskMode {
        &self.header.mode
    }

    pub fn is_kept(&self, flat: usize) -> bool {
        self.keep[flat]
    }

    pub fn bits(&self) -> &BitVec {
        &self.keep
    }

    /// Flat indices of kept cells in ascending order.
    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep.iter_ones().collect()
    }

    pub fn connectivity(&self) -> f64 {
        self.header.keep_count as f64 / self.size() as f64
    }

    /// SHA-256 over the header and the bit pattern, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.header).expect("header serializes"));
        for i in self.keep.iter_ones() {
            h.update((i as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Element-wise product of a weight tensor with the mask.
pub fn apply_mask(weights: &[f64], shape: &[usize], mask: &SparsityMask) -> Result<Vec<f64>, MaskError> {
    let mut out = weights.to_vec();
    apply_mask_in_place(&mut out, shape, mask)?;
    Ok(out)
}

pub fn apply_mask_in_place(
    weights: &mut [f64],
    shape: &[usize],
    mask: &SparsityMask,
) -> Result<(), MaskError> {
    if shape != mask.shape() || weights.len() != mask.size() {
        return Err(MaskError::ShapeMismatch {
            tensor: shape.to_vec(),
            mask: mask.shape().to_vec(),
        });
    }
    for (w, keep) in weights.iter_mut().zip(mask.keep.iter()) {
        if !*keep {
            *w = 0.0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskStatistics {
    pub connectivity: f64,
    pub per_row_kept: Vec<usize>,
    pub per_col_kept: Vec<usize>,
}

pub fn mask_statistics(mask: &SparsityMask) -> Result<MaskStatistics, MaskError> {
    let shape = mask.shape();
    if shape.len() != 2 {
        return Err(MaskError::NotTwoDimensional(shape.to_vec()));
    }
    let (rows, cols) = (shape[0], shape[1]);
    let mut per_row_kept = vec![0; rows];
    let mut per_col_kept = vec![0; cols];
    for i in mask.keep.iter_ones() {
        per_row_kept[i / cols] += 1;
        per_col_kept[i % cols] += 1;
    }
    Ok(MaskStatistics {
        connectivity: mask.connectivity(),
        per_row_kept,
        per_col_kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_and_partial_masks() {
        let m = sample_mask(&[4, 3], 12, MaskMode::AllDims, 1).unwrap();
        assert!(m.bits().all());
        let m = sample_mask(&[4, 3], 5, MaskMode::AllDims, 9).unwrap();
        assert_eq!(m.bits().count_ones(), 5);
        assert_eq!(m, sample_mask(&[4, 3], 5, MaskMode::AllDims, 9).unwrap());
        let empty = sample_mask(&[4, 3], 0, MaskMode::AllDims, 9).unwrap();
        assert_eq!(empty.bits().count_ones(), 0);
    }

    #[test]
    fn different_seeds_differ() {
        let a = sample_mask(&[20, 20], 100, MaskMode::AllDims, 1).unwrap();
        let b = sample_mask(&[20, 20], 100, MaskMode::AllDims, 2).unwrap();
        assert_ne!(a.bits(), b.bits());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn axis_restricted_keeps_whole_kernels() {
        let shape = [4, 3, 2, 2];
        let m = sample_mask(&shape, 24, MaskMode::AxisRestricted(vec![0, 1]), 5).unwrap();
        assert_eq!(m.bits().count_ones(), 24);
        let mut full_fibers = 0;
        for fiber in 0..12 {
            let cells: Vec<bool> = (0..4).map(|k| m.is_kept(fiber * 4 + k)).collect();
            assert!(cells.iter().all(|&c| c) || cells.iter().all(|&c| !c));
            if cells[0] {
                full_fibers += 1;
            }
        }
        assert_eq!(full_fibers, 6);
    }

    #[test]
    fn axis_restricted_on_inner_axis() {
        // restrict to columns of a (3, 5) matrix: whole columns kept
        let m = sample_mask(&[3, 5], 6, MaskMode::AxisRestricted(vec![1]), 2).unwrap();
        let stats = mask_statistics(&m).unwrap();
        assert_eq!(stats.per_col_kept.iter().filter(|&&c| c == 3).count(), 2);
        assert!(stats.per_col_kept.iter().all(|&c| c == 0 || c == 3));
    }

    #[test]
    fn mask_errors() {
        assert_eq!(
            sample_mask(&[4, 3], 13, MaskMode::AllDims, 0).unwrap_err(),
            MaskError::KeepCountOutOfRange { keep: 13, size: 12 }
        );
        assert_eq!(
            sample_mask(&[4, 3, 2, 2], 10, MaskMode::AxisRestricted(vec![0, 1]), 0).unwrap_err(),
            MaskError::IndivisibleKeepCount { keep: 10, fiber: 4 }
        );
        assert!(matches!(
            sample_mask(&[4, 3], 3, MaskMode::AxisRestricted(vec![2]), 0),
            Err(MaskError::InvalidAxes { .. })
        ));
        assert!(matches!(
            sample_mask(&[4, 0], 0, MaskMode::AllDims, 0),
            Err(MaskError::InvalidShape(_))
        ));
    }

    #[test]
    fn apply_examples() {
        let w = [1.0, 2.0, 3.0, 4.0];
        let full = SparsityMask::full(&[2, 2]).unwrap();
        assert_eq!(apply_mask(&w, &[2, 2], &full).unwrap(), w);
        let none = sample_mask(&[2, 2], 0, MaskMode::AllDims, 0).unwrap();
        assert_eq!(apply_mask(&w, &[2, 2], &none).unwrap(), [0.0; 4]);

        let mut diag = none.clone();
        diag.keep.set(0, true);
        diag.keep.set(3, true);
        diag.header.keep_count = 2;
        let out = apply_mask(&w, &[2, 2], &diag).unwrap();
        assert_eq!(out, [1.0, 0.0, 0.0, 4.0]);
        assert_eq!(apply_mask(&out, &[2, 2], &diag).unwrap(), out);

        assert!(matches!(
            apply_mask(&w, &[4, 1], &diag),
            Err(MaskError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn statistics() {
        let full = SparsityMask::full(&[4, 3]).unwrap();
        let s = mask_statistics(&full).unwrap();
        assert_eq!(s.connectivity, 1.0);
        assert_eq!(s.per_row_kept, [3, 3, 3, 3]);
        assert_eq!(s.per_col_kept, [4, 4, 4]);
        let half = sample_mask(&[4, 3], 6, MaskMode::AllDims, 3).unwrap();
        assert_eq!(mask_statistics(&half).unwrap().connectivity, 0.5);
        let cube = SparsityMask::full(&[2, 2, 2]).unwrap();
        assert!(mask_statistics(&cube).is_err());
    }

    #[test]
    fn header_roundtrip_regenerates_bits() {
        let m = sample_mask(&[6, 7, 3], 21, MaskMode::AxisRestricted(vec![0, 1]), 77).unwrap();
        let json = serde_json::to_string(m.header()).unwrap();
        let header: MaskHeader = serde_json::from_str(&json).unwrap();
        assert_eq!(SparsityMask::from_header(&header).unwrap(), m);
    }
}
