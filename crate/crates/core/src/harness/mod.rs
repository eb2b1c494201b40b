//! Experiment orchestration: fixed-budget model families, seeded sweeps with
//! resumable on-disk records, kernel-distance sweeps and figure export.

mod family;
mod figure;
mod kernel_sweep;
mod svg;
mod sweep;

pub use family::{build_family, AllocationRule, Family, FamilyKind, FamilyMember, FamilySpec, InvalidCell};
pub use figure::{export_figure, FigureExport, FigureKind, FIGURES_DIR};
pub use kernel_sweep::{
    read_kernel_csv, run_kernel_sweep, KernelMeta, KernelRow, KernelSweepSpec, KERNEL_CSV, KERNEL_FAMILY_CSV, KERNEL_META_JSON,
};
pub use sweep::{
    cell_seeds, load_records, run_cell, run_sweep, train_cell, CellFailure, CellRecord, CellSeeds, LrPolicy, SweepOptions,
    SweepOutcome, SweepSpec, RUNS_DIR, SUBSET_LR_GRID, SUMMARY_CSV,
};

use crate::allocator::AllocError;
use crate::data::DataError;
use crate::kernel::KernelError;
use crate::model::ModelError;
use crate::train::TrainError;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("width {width} holds only {count} weights, below the budget {budget}")]
    WidthBelowBudget { width: usize, count: u64, budget: u64 },
    #[error("no results found in {0}")]
    MissingResults(String),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Applies `f` to every item on up to `threads` workers; results keep the
/// order of `items`.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break done;
                        }
                        done.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    slots.sort_by_key(|(i, _)| *i);
    slots.into_iter().map(|(_, r)| r).collect()
}
