//! `widesparse` command-line driver.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use widesparse::allocator::{
    plan_from_layer_connectivities, proportional_allocate, staggered_allocate, AllocationPlan, LayerSizes,
};
use widesparse::data::{default_mnist_dir, load_mnist, mnist_available, Dataset, Normalization};
use widesparse::harness::{
    build_family, export_figure, run_kernel_sweep, run_sweep, train_cell, AllocationRule, FamilyKind, FamilySpec,
    FigureKind, KernelSweepSpec, LrPolicy, SweepOptions, SweepSpec,
};
use widesparse::model::{save_checkpoint, Activation, MlpArch, Parameterization};
use widesparse::train::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "widesparse", version, about = "Wide sparse networks at a fixed weight budget")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed; overrides the seed of a config or preset.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (allocate) or directory (everything else).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Worker threads; 1 runs everything serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distribute a weight budget over layers and print the plan as JSON.
    Allocate(AllocateArgs),
    /// Train a single network and save its record and checkpoint.
    Train(TrainArgs),
    /// Run a training sweep over a fixed-budget family.
    Scan(ScanArgs),
    /// Measure the kernel distance across widths.
    Kernel(KernelArgs),
    /// Write figure tables and SVG images from a results directory.
    Export(ExportArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Rule {
    Staggered,
    Proportional,
}

#[derive(Args, Debug)]
struct AllocateArgs {
    /// Layer sizes, as `count` or `name=count`, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "width", required_unless_present = "width")]
    sizes: Vec<String>,
    /// Build the sizes of a one-hidden-layer network of this width.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 784)]
    input_dim: usize,
    #[arg(long, default_value_t = 10)]
    output_dim: usize,
    /// Weights to freeze.
    #[arg(long, conflicts_with = "budget", required_unless_present = "budget")]
    freeze: Option<u64>,
    /// Weights to keep.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, value_enum, default_value_t = Rule::Staggered)]
    rule: Rule,
    /// Fix the connectivity of the last of two layers instead of using a rule.
    #[arg(long)]
    last_layer_connectivity: Option<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Act {
    Relu,
    Linear,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Param {
    Standard,
    Ntk,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Norm {
    PerPixel,
    Scalar,
    None,
}

impl From<Norm> for Normalization {
    fn from(n: Norm) -> Self {
        match n {
            Norm::PerPixel => Normalization::PerPixel,
            Norm::Scalar => Normalization::Scalar,
            Norm::None => Normalization::None,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    width: usize,
    /// Kept weights; defaults to the dense count of `width`.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    last_layer_connectivity: Option<f64>,
    #[arg(long, value_enum, default_value_t = Rule::Staggered)]
    rule: Rule,
    #[arg(long, value_enum, default_value_t = Act::Relu)]
    activation: Act,
    #[arg(long, value_enum, default_value_t = Param::Standard)]
    parameterization: Param,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    /// Train on a random subset of this many samples.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, value_enum, default_value_t = Norm::PerPixel)]
    normalization: Norm,
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Named sweep: fig4-relu, fig4-linear, fig7, fig7-linear-bottleneck.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Sweep config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict the sweep to these widths.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Replace the last-layer connectivity grid.
    #[arg(long, value_delimiter = ',')]
    last_layer_connectivity: Option<Vec<f64>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Print the resolved config and family without training.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct KernelArgs {
    /// Sweep config JSON; defaults to widths 16..1024 at np = 8.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    np: Option<f64>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    inits: Option<usize>,
    #[arg(long)]
    reference_width: Option<usize>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// accuracy_vs_width, accuracy_heatmap_2d, distance_vs_width or all.
    #[arg(long, default_value = "all")]
    kind: String,
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    match cli.command {
        Command::Allocate(a) => allocate(g, a),
        Command::Train(a) => train(g, a),
        Command::Scan(a) => scan(g, a),
        Command::Kernel(a) => kernel(g, a),
        Command::Export(a) => export(g, a),
    }
}

fn threads(g: &Global) -> usize {
    g.threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn out_dir(g: &Global, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from("results").join(default))
}

fn datasets(g: &Global, normalization: Normalization) -> Result<(Dataset, Dataset)> {
    let dir = g.data_dir.clone().unwrap_or_else(default_mnist_dir);
    if !mnist_available(&dir) {
        return Err(format!(
            "MNIST files not found in {} (pass --data-dir or set {})",
            dir.display(),
            widesparse::data::MNIST_DIR_ENV
        )
        .into());
    }
    Ok(load_mnist(&dir, normalization)?)
}

fn parse_sizes(items: &[String]) -> Result<LayerSizes> {
    let mut names = Vec::new();
    let mut counts = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let (name, count) = match item.split_once('=') {
            Some((n, c)) => (n.trim().to_string(), c),
            None => (format!("layer{}", i + 1), item.as_str()),
        };
        names.push(name);
        counts.push(count.trim().parse::<u64>().map_err(|e| format!("bad size {item:?}: {e}"))?);
    }
    Ok(LayerSizes::new(names, counts)?)
}

fn allocate(g: &Global, a: AllocateArgs) -> Result<bool> {
    let sizes = match a.width {
        Some(w) => {
            MlpArch::one_hidden(a.input_dim, w, a.output_dim, Activation::Relu, Parameterization::Standard, true)
                .weight_sizes()
        }
        None => parse_sizes(&a.sizes)?,
    };
    let total = sizes.total();
    let freeze = match (a.freeze, a.budget) {
        (Some(f), _) => f,
        (None, Some(b)) if b <= total => total - b,
        (None, Some(b)) => return Err(format!("budget {b} exceeds the {total} available weights").into()),
        (None, None) => unreachable!("clap requires one of --freeze and --budget"),
    };
    let plan: AllocationPlan = match a.last_layer_connectivity {
        Some(c) => plan_from_layer_connectivities(&sizes, total - freeze, c)?,
        None if freeze == 0 => AllocationPlan::dense(&sizes),
        None => match a.rule {
            Rule::Staggered => staggered_allocate(&sizes, freeze)?,
            Rule::Proportional => proportional_allocate(&sizes, freeze)?,
        },
    };
    let mut json = serde_json::to_string_pretty(&plan)?;
    json.push('\n');
    match &g.out {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(true)
}

fn family_spec(
    kind: FamilyKind,
    budget: u64,
    widths: Vec<usize>,
    llc: Option<Vec<f64>>,
    rule: Rule,
    activation: Act,
    parameterization: Param,
) -> FamilySpec {
    FamilySpec {
        family: kind,
        budget,
        widths,
        last_layer_connectivity: llc,
        allocation: match rule {
            Rule::Staggered => AllocationRule::Staggered,
            Rule::Proportional => AllocationRule::Proportional,
        },
        input_dim: 784,
        output_dim: 10,
        activation: match activation {
            Act::Relu => Activation::Relu,
            Act::Linear => Activation::Linear,
        },
        parameterization: match parameterization {
            Param::Standard => Parameterization::Standard,
            Param::Ntk => Parameterization::Ntk,
        },
        use_biases: true,
        rescale_sparse_init: false,
    }
}

fn train(g: &Global, a: TrainArgs) -> Result<bool> {
    let dense = MlpArch::one_hidden(784, a.width, 10, Activation::Relu, Parameterization::Standard, true);
    let budget = a.budget.unwrap_or(dense.weight_sizes().total());
    let spec = SweepSpec {
        name: "train".into(),
        family: family_spec(
            FamilyKind::Sparse,
            budget,
            vec![a.width],
            a.last_layer_connectivity.map(|c| vec![c]),
            a.rule,
            a.activation,
            a.parameterization,
        ),
        repeats: 1,
        master_seed: g.seed.unwrap_or(0),
        train: TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.lr,
            momentum: a.momentum,
            shuffle_seed: 0,
            subset_size: a.subset,
            eval_train: true,
            eval_test: true,
        },
        lr: LrPolicy::Fixed,
        normalization: a.normalization.into(),
    };
    spec.validate()?;
    let family = build_family(&spec.family)?;
    let Some(member) = family.members.first() else {
        return Err(format!("invalid combination: {}", family.invalid[0].reason).into());
    };
    let (train_set, test_set) = datasets(g, spec.normalization)?;
    let dir = out_dir(g, "train");
    std::fs::create_dir_all(&dir)?;
    eprintln!(
        "width {} with {} weights (connectivity {:.4})",
        member.width, member.param_count, member.connectivity
    );
    let (cell, model) = train_cell(&spec, member, 0, spec.train.learning_rate, &train_set, &test_set)?;
    let id = &cell.record.run_id;
    std::fs::write(dir.join(format!("{id}.json")), serde_json::to_string_pretty(&cell)? + "\n")?;
    save_checkpoint(&model, &dir.join(format!("{id}.bin")))?;
    println!(
        "{id}: best test acc {:.4}, best train acc {:.4}, {:.1} s",
        cell.record.best_test_acc.unwrap_or(f64::NAN),
        cell.record.best_train_acc.unwrap_or(f64::NAN),
        cell.record.wall_clock_secs
    );
    Ok(true)
}

fn read_config<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn scan(g: &Global, a: ScanArgs) -> Result<bool> {
    let mut spec: SweepSpec = match (&a.preset, &a.config) {
        (Some(p), _) => SweepSpec::preset(p).ok_or_else(|| {
            format!("unknown preset {p:?}; choose one of {}", SweepSpec::PRESETS.join(", "))
        })?,
        (None, Some(path)) => read_config(path)?,
        (None, None) => unreachable!("clap requires --preset or --config"),
    };
    if let Some(s) = g.seed {
        spec.master_seed = s;
    }
    if let Some(w) = a.widths {
        spec.family.widths = w;
    }
    if let Some(c) = a.last_layer_connectivity {
        spec.family.last_layer_connectivity = Some(c);
    }
    if let Some(r) = a.repeats {
        spec.repeats = r;
    }
    if let Some(e) = a.epochs {
        spec.train.epochs = e;
    }
    spec.validate()?;
    if a.dry_run {
        let family = build_family(&spec.family)?;
        println!("{}", serde_json::to_string_pretty(&spec)?);
        for m in &family.members {
            println!(
                "width {:>5}  llc {:>4}  connectivity {:.4}  weights {}  residual {}",
                m.width,
                m.last_layer_connectivity.map_or("-".into(), |c| c.to_string()),
                m.connectivity,
                m.param_count,
                m.residual
            );
        }
        for c in &family.invalid {
            println!("width {:>5}  llc {:>4}  skipped: {}", c.width, c.last_layer_connectivity, c.reason);
        }
        return Ok(true);
    }
    let (train_set, test_set) = datasets(g, spec.normalization)?;
    let opts = SweepOptions {
        out_dir: out_dir(g, &spec.name),
        threads: threads(g),
        progress: true,
    };
    let outcome = run_sweep(&spec, &train_set, &test_set, &opts)?;
    println!(
        "{} records ({} resumed), {} failed, {} invalid grid cells skipped; results in {}",
        outcome.records.len(),
        outcome.resumed,
        outcome.failures.len(),
        outcome.invalid.len(),
        opts.out_dir.display()
    );
    for f in &outcome.failures {
        eprintln!("failed: width {} repeat {}: {}", f.width, f.repeat, f.error);
    }
    Ok(outcome.all_succeeded())
}

fn kernel(g: &Global, a: KernelArgs) -> Result<bool> {
    let mut spec = match &a.config {
        Some(path) => read_config(path)?,
        None => KernelSweepSpec::fig7(),
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    if let Some(w) = a.widths {
        spec.widths = w;
    }
    if let Some(v) = a.np {
        spec.np = v;
    }
    if let Some(v) = a.pairs {
        spec.pairs = v;
    }
    if let Some(v) = a.inits {
        spec.inits = v;
    }
    if let Some(v) = a.reference_width {
        spec.reference_width = v;
    }
    spec.validate()?;
    let (_, test_set) = datasets(g, spec.normalization)?;
    let dir = out_dir(g, &spec.name);
    let (curve, family) = run_kernel_sweep(&spec, &test_set, threads(g), &dir)?;
    println!("{:>6} {:>8} {:>12} {:>12} {:>12} {:>12}", "width", "p", "D", "stderr", "Eq. 4", "Theorem 1");
    for r in curve.iter().chain(&family) {
        println!(
            "{:>6} {:>8.4} {:>12.4e} {:>12.2e} {:>12.4e} {:>12}",
            r.width,
            r.p,
            r.d_empirical,
            r.d_stderr,
            r.d_theory_eq4,
            r.d_theorem1_mc.map_or("-".into(), |v| format!("{v:.4e}"))
        );
    }
    println!("results in {}", dir.display());
    Ok(true)
}

fn export(g: &Global, a: ExportArgs) -> Result<bool> {
    let dir = g.out.clone().ok_or("export needs --out pointing at a results directory")?;
    let kinds: Vec<FigureKind> = if a.kind == "all" {
        FigureKind::ALL.to_vec()
    } else {
        vec![a.kind.parse()?]
    };
    let mut wrote = 0;
    for kind in &kinds {
        match export_figure(*kind, &dir) {
            Ok(fig) => {
                wrote += 1;
                println!("{}: {} rows", kind.name(), fig.rows.len());
            }
            Err(e) if kinds.len() > 1 => eprintln!("{}: skipped ({e})", kind.name()),
            Err(e) => return Err(e.into()),
        }
    }
    if wrote == 0 {
        return Err(format!("no figure could be built from {}", dir.display()).into());
    }
    Ok(true)
}
