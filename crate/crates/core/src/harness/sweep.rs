use super::family::{build_family, AllocationRule, FamilyKind, FamilyMember, FamilySpec, InvalidCell};
use super::{io_err, parallel_map, HarnessError};
use crate::data::{Dataset, Normalization};
use crate::model::{Activation, MlpArch, MlpModel, Parameterization, Variant};
use crate::rng::derive_seed;
use crate::train::{run_id, select_learning_rate, train, LrSelection, RunRecord, RunStatus, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

pub const RUNS_DIR: &str = "runs";
pub const SUMMARY_CSV: &str = "summary.csv";
const LR_DIR: &str = "lr";
const SWEEP_JSON: &str = "sweep.json";
const FAMILY_JSON: &str = "family.json";
const FAILURES_JSON: &str = "failures.json";

/// Where each cell's learning rate comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrPolicy {
    /// `train.learning_rate` for every cell.
    #[default]
    Fixed,
    /// Tuned per family member on the seeds of repeat 0 (lowest final
    /// training loss) and reused for the other repeats.
    Grid { values: Vec<f64> },
    /// Explicit rate per width.
    Table { rates: BTreeMap<usize, f64> },
}

fn one() -> usize {
    1
}

/// One JSON document describing a whole sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    #[serde(flatten)]
    pub family: FamilySpec,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Training protocol; `shuffle_seed` is replaced per cell and
    /// `learning_rate` is replaced unless `lr` is `fixed`.
    pub train: TrainConfig,
    #[serde(default)]
    pub lr: LrPolicy,
    #[serde(default)]
    pub normalization: Normalization,
}

/// Learning-rate grid of the 2048-sample presets.
pub const SUBSET_LR_GRID: [f64; 9] = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];

impl SweepSpec {
    pub const PRESETS: [&'static str; 4] = ["fig4-relu", "fig4-linear", "fig7", "fig7-linear-bottleneck"];

    /// Ready-made sweeps on MNIST.
    pub fn preset(name: &str) -> Option<SweepSpec> {
        let fig4 = |activation| SweepSpec {
            name: name.to_string(),
            family: FamilySpec {
                family: FamilyKind::Sparse,
                budget: 3970,
                widths: vec![5, 10, 20, 40, 80, 160, 320, 640],
                last_layer_connectivity: Some((1..=10).map(|k| k as f64 / 10.0).collect()),
                allocation: AllocationRule::Staggered,
                input_dim: 784,
                output_dim: 10,
                activation,
                parameterization: Parameterization::Standard,
                use_biases: true,
                rescale_sparse_init: false,
            },
            repeats: 1,
            master_seed: 0,
            train: TrainConfig::connectivity_scan(0),
            lr: LrPolicy::Fixed,
            normalization: Normalization::PerPixel,
        };
        let fig7 = |family| SweepSpec {
            name: name.to_string(),
            family: FamilySpec {
                family,
                budget: 6352,
                widths: vec![8, 16, 32, 64, 128, 256, 512, 1024],
                last_layer_connectivity: None,
                allocation: AllocationRule::Staggered,
                input_dim: 784,
                output_dim: 10,
                activation: Activation::Relu,
                parameterization: Parameterization::Ntk,
                use_biases: false,
                rescale_sparse_init: false,
            },
            repeats: 5,
            master_seed: 0,
            train: TrainConfig::subset_scan(SUBSET_LR_GRID[0], 0),
            lr: LrPolicy::Grid {
                values: SUBSET_LR_GRID.to_vec(),
            },
            normalization: Normalization::PerPixel,
        };
        match name {
            "fig4-relu" => Some(fig4(Activation::Relu)),
            "fig4-linear" => Some(fig4(Activation::Linear)),
            "fig7" => Some(fig7(FamilyKind::Sparse)),
            "fig7-linear-bottleneck" => Some(fig7(FamilyKind::LinearBottleneck)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.family.validate()?;
        if self.repeats == 0 {
            return Err(HarnessError::InvalidSpec("repeats must be at least 1".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(HarnessError::InvalidSpec("name must be a plain identifier".into()));
        }
        match &self.lr {
            LrPolicy::Grid { values } if values.is_empty() => {
                return Err(HarnessError::InvalidSpec("the learning-rate grid is empty".into()))
            }
            LrPolicy::Table { rates } => {
                if let Some(w) = self.family.widths.iter().find(|w| !rates.contains_key(w)) {
                    return Err(HarnessError::InvalidSpec(format!("no learning rate for width {w}")));
                }
            }
            _ => {}
        }
        TrainConfig {
            learning_rate: 1.0,
            ..self.train.clone()
        }
        .validate()?;
        Ok(())
    }
}

/// Seeds of one cell, all derived from the master seed and the cell
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub init: u64,
    pub mask: u64,
    pub shuffle: u64,
}

fn llc_code(llc: Option<f64>) -> u64 {
    llc.map_or(u64::MAX, |c| (c * 1000.0).round() as u64)
}

pub fn cell_seeds(master_seed: u64, width: usize, last_layer_connectivity: Option<f64>, repeat: usize) -> CellSeeds {
    let base = derive_seed(
        master_seed,
        &[width as u64, llc_code(last_layer_connectivity), repeat as u64],
    );
    CellSeeds {
        init: derive_seed(base, &[0]),
        mask: derive_seed(base, &[1]),
        shuffle: derive_seed(base, &[2]),
    }
}

/// A training run together with its position in the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub sweep: String,
    pub family: FamilyKind,
    pub width: usize,
    pub last_layer_connectivity: Option<f64>,
    pub repeat: usize,
    pub seeds: CellSeeds,
    pub residual: u64,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub width: usize,
    pub last_layer_connectivity: Option<f64>,
    pub repeat: usize,
    pub run_id: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    pub threads: usize,
    /// Print one line per finished cell to stderr.
    pub progress: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    /// Records of this sweep in family order, repeats innermost.
    pub records: Vec<CellRecord>,
    pub failures: Vec<CellFailure>,
    pub invalid: Vec<InvalidCell>,
    /// Cells found on disk and not retrained.
    pub resumed: usize,
}

impl SweepOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn cell_arch(member: &FamilyMember, seeds: &CellSeeds) -> MlpArch {
    let mut arch = member.arch.clone();
    if let Variant::Sparse(s) = &mut arch.variant {
        s.mask_seed = seeds.mask;
    }
    arch
}

fn cell_config(spec: &SweepSpec, seeds: &CellSeeds, lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        shuffle_seed: seeds.shuffle,
        ..spec.train.clone()
    }
}

/// Trains one cell from scratch; the result depends only on its arguments.
pub fn run_cell(
    spec: &SweepSpec,
    member: &FamilyMember,
    repeat: usize,
    learning_rate: f64,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<CellRecord, TrainError> {
    train_cell(spec, member, repeat, learning_rate, train_set, test_set).map(|(r, _)| r)
}

/// [`run_cell`] that also hands back the trained model.
pub fn train_cell(
    spec: &SweepSpec,
    member: &FamilyMember,
    repeat: usize,
    learning_rate: f64,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<(CellRecord, MlpModel), TrainError> {
    let seeds = cell_seeds(spec.master_seed, member.width, member.last_layer_connectivity, repeat);
    let arch = cell_arch(member, &seeds);
    let config = cell_config(spec, &seeds, learning_rate);
    let mut model = MlpModel::init(&arch, seeds.init)?;
    let record = train(&mut model, train_set, test_set, &config)?;
    let cell = CellRecord {
        sweep: spec.name.clone(),
        family: spec.family.family,
        width: member.width,
        last_layer_connectivity: member.last_layer_connectivity,
        repeat,
        seeds,
        residual: member.residual,
        record,
    };
    Ok((cell, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredLr {
    width: usize,
    last_layer_connectivity: Option<f64>,
    grid: Vec<f64>,
    best_lr: f64,
    /// `(rate, final training loss)`; `null` marks divergence.
    tried: Vec<(f64, Option<f64>)>,
}

fn lr_path(dir: &Path, member: &FamilyMember) -> PathBuf {
    let llc = member
        .last_layer_connectivity
        .map_or(String::new(), |c| format!("_llc{}", llc_code(Some(c))));
    dir.join(LR_DIR).join(format!("w{}{llc}.json", member.width))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn select_lr(
    spec: &SweepSpec,
    member: &FamilyMember,
    grid: &[f64],
    train_set: &Dataset,
    dir: &Path,
) -> Result<f64, HarnessError> {
    let path = lr_path(dir, member);
    if path.exists() {
        if let Ok(stored) = read_json::<StoredLr>(&path) {
            if stored.grid == grid {
                return Ok(stored.best_lr);
            }
        }
    }
    let seeds = cell_seeds(spec.master_seed, member.width, member.last_layer_connectivity, 0);
    let arch = cell_arch(member, &seeds);
    let config = cell_config(spec, &seeds, grid[0]);
    let LrSelection { best_lr, tried } = select_learning_rate(&arch, seeds.init, train_set, &config, grid)?;
    write_json(
        &path,
        &StoredLr {
            width: member.width,
            last_layer_connectivity: member.last_layer_connectivity,
            grid: grid.to_vec(),
            best_lr,
            tried: tried.iter().map(|&(lr, l)| (lr, l.is_finite().then_some(l))).collect(),
        },
    )?;
    Ok(best_lr)
}

/// Reads every cell record below `dir/runs`, sorted by sweep, width,
/// last-layer connectivity and repeat.
pub fn load_records(dir: &Path) -> Result<Vec<CellRecord>, HarnessError> {
    let runs = dir.join(RUNS_DIR);
    if !runs.is_dir() {
        return Ok(Vec::new());
    }
    let mut records = Vec::new();
    for entry in std::fs::read_dir(&runs).map_err(io_err(&runs))? {
        let path = entry.map_err(io_err(&runs))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            records.push(read_json::<CellRecord>(&path)?);
        }
    }
    records.sort_by(|a, b| {
        (&a.sweep, a.width, llc_code(a.last_layer_connectivity), a.repeat).cmp(&(
            &b.sweep,
            b.width,
            llc_code(b.last_layer_connectivity),
            b.repeat,
        ))
    });
    Ok(records)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v}"))
}

/// Aggregated per-run table, one row per record in the given order.
pub(crate) fn write_summary(path: &Path, records: &[CellRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| HarnessError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    w.write_record([
        "run_id",
        "width",
        "connectivity",
        "best_train_acc",
        "best_test_acc",
        "seed",
        "last_layer_connectivity",
        "repeat",
        "learning_rate",
        "param_count",
        "final_train_loss",
        "status",
    ])
    .map_err(fail)?;
    for c in records {
        let r = &c.record;
        let llc = r.arch.layer_connectivities().last().copied().unwrap_or(1.0);
        w.write_record([
            r.run_id.clone(),
            c.width.to_string(),
            format!("{}", r.connectivity),
            fmt_opt(r.best_train_acc),
            fmt_opt(r.best_test_acc),
            r.init_seed.to_string(),
            format!("{llc}"),
            c.repeat.to_string(),
            format!("{}", r.config.learning_rate),
            r.param_count.to_string(),
            format!("{}", r.final_train_loss),
            serde_json::to_value(r.status).expect("status serializes").as_str().unwrap_or("").to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}

enum CellResult {
    Done(CellRecord, bool),
    Failed(CellFailure, Option<CellRecord>),
}

/// Runs every `(member, repeat)` cell of the sweep, skipping cells whose
/// record already exists under `opts.out_dir`.
pub fn run_sweep(
    spec: &SweepSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    opts: &SweepOptions,
) -> Result<SweepOutcome, HarnessError> {
    spec.validate()?;
    let dir = &opts.out_dir;
    for d in [dir.clone(), dir.join(RUNS_DIR), dir.join(LR_DIR)] {
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    write_json(&dir.join(SWEEP_JSON), spec)?;
    let family = build_family(&spec.family)?;
    write_json(&dir.join(FAMILY_JSON), &family)?;

    let lr_results: Vec<Result<f64, HarnessError>> = match &spec.lr {
        LrPolicy::Fixed => family.members.iter().map(|_| Ok(spec.train.learning_rate)).collect(),
        LrPolicy::Table { rates } => family.members.iter().map(|m| Ok(rates[&m.width])).collect(),
        LrPolicy::Grid { values } => parallel_map(&family.members, opts.threads, |m| {
            let lr = select_lr(spec, m, values, train_set, dir);
            if opts.progress {
                match &lr {
                    Ok(v) => eprintln!("[{}] width {} learning rate {v}", spec.name, m.width),
                    Err(e) => eprintln!("[{}] width {} learning rate selection failed: {e}", spec.name, m.width),
                }
            }
            lr
        }),
    };

    let cells: Vec<(usize, usize)> = (0..family.members.len())
        .flat_map(|m| (0..spec.repeats).map(move |r| (m, r)))
        .collect();
    let done = AtomicUsize::new(0);
    let total = cells.len();
    let results = parallel_map(&cells, opts.threads, |&(mi, repeat)| {
        let member = &family.members[mi];
        let failure = |run_id: Option<String>, error: String| CellFailure {
            width: member.width,
            last_layer_connectivity: member.last_layer_connectivity,
            repeat,
            run_id,
            error,
        };
        let lr = match &lr_results[mi] {
            Ok(lr) => *lr,
            Err(e) => return CellResult::Failed(failure(None, format!("learning rate selection: {e}")), None),
        };
        let seeds = cell_seeds(spec.master_seed, member.width, member.last_layer_connectivity, repeat);
        let id = run_id(&cell_arch(member, &seeds), &cell_config(spec, &seeds, lr), seeds.init);
        let path = dir.join(RUNS_DIR).join(format!("{id}.json"));
        let result = match read_json::<CellRecord>(&path) {
            Ok(rec) if rec.record.status == RunStatus::Completed => CellResult::Done(rec, true),
            Ok(rec) => CellResult::Failed(failure(Some(id), "non-finite loss".into()), Some(rec)),
            Err(_) => match run_cell(spec, member, repeat, lr, train_set, test_set) {
                Ok(rec) => match write_json(&path, &rec) {
                    Ok(()) => CellResult::Done(rec, false),
                    Err(e) => CellResult::Failed(failure(Some(id), e.to_string()), None),
                },
                Err(TrainError::NonFiniteLoss { epoch, record }) => {
                    let rec = CellRecord {
                        sweep: spec.name.clone(),
                        family: spec.family.family,
                        width: member.width,
                        last_layer_connectivity: member.last_layer_connectivity,
                        repeat,
                        seeds,
                        residual: member.residual,
                        record: *record,
                    };
                    let _ = write_json(&path, &rec);
                    CellResult::Failed(failure(Some(id), format!("non-finite loss at epoch {epoch}")), Some(rec))
                }
                Err(e) => CellResult::Failed(failure(Some(id), e.to_string()), None),
            },
        };
        if opts.progress {
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            let llc = member.last_layer_connectivity.map_or(String::new(), |c| format!(" llc {c}"));
            match &result {
                CellResult::Done(rec, resumed) => eprintln!(
                    "[{}] {k}/{total} width {}{llc} repeat {repeat}: best test acc {} ({})",
                    spec.name,
                    member.width,
                    fmt_opt(rec.record.best_test_acc),
                    if *resumed {
                        "resumed".to_string()
                    } else {
                        format!("{:.1} s", rec.record.wall_clock_secs)
                    }
                ),
                CellResult::Failed(f, _) => {
                    eprintln!("[{}] {k}/{total} width {}{llc} repeat {repeat}: FAILED {}", spec.name, member.width, f.error)
                }
            }
        }
        result
    });

    let mut outcome = SweepOutcome {
        invalid: family.invalid.clone(),
        ..SweepOutcome::default()
    };
    for r in results {
        match r {
            CellResult::Done(rec, resumed) => {
                outcome.resumed += resumed as usize;
                outcome.records.push(rec);
            }
            CellResult::Failed(f, rec) => {
                outcome.failures.push(f);
                outcome.records.extend(rec);
            }
        }
    }
    write_summary(&dir.join(SUMMARY_CSV), &outcome.records)?;
    write_json(&dir.join(FAILURES_JSON), &outcome.failures)?;
    Ok(outcome)
}
