use super::kernel_sweep::{read_kernel_csv, KernelMeta, KERNEL_CSV, KERNEL_FAMILY_CSV, KERNEL_META_JSON};
use super::svg::{Heatmap, LinePlot, Series, PALETTE};
use super::sweep::{load_records, write_atomic, CellRecord};
use super::{io_err, HarnessError};
use crate::stats::Moments;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

pub const FIGURES_DIR: &str = "figures";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    AccuracyVsWidth,
    AccuracyHeatmap2d,
    DistanceVsWidth,
}

impl FigureKind {
    pub const ALL: [FigureKind; 3] = [
        FigureKind::AccuracyVsWidth,
        FigureKind::AccuracyHeatmap2d,
        FigureKind::DistanceVsWidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigureKind::AccuracyVsWidth => "accuracy_vs_width",
            FigureKind::AccuracyHeatmap2d => "accuracy_heatmap_2d",
            FigureKind::DistanceVsWidth => "distance_vs_width",
        }
    }
}

impl FromStr for FigureKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::InvalidSpec(format!("unknown figure kind {s:?}")))
    }
}

/// A figure as a data table plus its rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureExport {
    pub kind: FigureKind,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub svg: Option<String>,
}

impl FigureExport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 table")
    }

    /// Writes `<dir>/<kind>.csv` and, when rendered, `<dir>/<kind>.svg`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_atomic(&dir.join(format!("{}.csv", self.kind.name())), self.to_csv().as_bytes())?;
        if let Some(svg) = &self.svg {
            write_atomic(&dir.join(format!("{}.svg", self.kind.name())), svg.as_bytes())?;
        }
        Ok(())
    }
}

fn missing(dir: &Path) -> HarnessError {
    HarnessError::MissingResults(dir.display().to_string())
}

fn g(v: f64) -> String {
    format!("{v}")
}

/// Accuracy statistics of one `(sweep, width, last-layer connectivity)` group.
struct Group {
    sweep: String,
    width: usize,
    connectivity: f64,
    llc: f64,
    test: Moments,
    train: Moments,
}

fn last_layer(rec: &CellRecord) -> f64 {
    let c = rec.record.arch.layer_connectivities().last().copied().unwrap_or(1.0);
    (c * 1000.0).round() / 1000.0
}

fn groups(records: &[CellRecord]) -> Vec<Group> {
    let mut map: BTreeMap<(String, usize, u64), Group> = BTreeMap::new();
    for rec in records {
        let Some(test) = rec.record.best_test_acc else { continue };
        let llc = last_layer(rec);
        let g = map
            .entry((rec.sweep.clone(), rec.width, (llc * 1000.0) as u64))
            .or_insert_with(|| Group {
                sweep: rec.sweep.clone(),
                width: rec.width,
                connectivity: rec.record.connectivity,
                llc,
                test: Moments::new(),
                train: Moments::new(),
            });
        g.test.push(test);
        if let Some(a) = rec.record.best_train_acc {
            g.train.push(a);
        }
    }
    map.into_values().collect()
}

fn accuracy_vs_width(dir: &Path, records: &[CellRecord]) -> Result<FigureExport, HarnessError> {
    let groups = groups(records);
    if groups.is_empty() {
        return Err(missing(dir));
    }
    let mut best: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for (i, gr) in groups.iter().enumerate() {
        let e = best.entry((gr.sweep.clone(), gr.width)).or_insert(i);
        if gr.test.mean() > groups[*e].test.mean() {
            *e = i;
        }
    }
    let header = [
        "sweep",
        "width",
        "connectivity",
        "last_layer_connectivity",
        "mean_best_test_acc",
        "stderr_best_test_acc",
        "mean_best_train_acc",
        "runs",
        "best_for_width",
    ];
    let rows = groups
        .iter()
        .enumerate()
        .map(|(i, gr)| {
            vec![
                gr.sweep.clone(),
                gr.width.to_string(),
                g(gr.connectivity),
                g(gr.llc),
                g(gr.test.mean()),
                g(gr.test.stderr()),
                if gr.train.count() > 0 { g(gr.train.mean()) } else { String::new() },
                gr.test.count().to_string(),
                (best[&(gr.sweep.clone(), gr.width)] == i).to_string(),
            ]
        })
        .collect();

    let mut series: BTreeMap<String, Series> = BTreeMap::new();
    let mut widths: Vec<f64> = Vec::new();
    for (&(ref sweep, width), &i) in &best {
        let k = series.len();
        let s = series.entry(sweep.clone()).or_insert_with(|| Series {
            name: sweep.clone(),
            points: Vec::new(),
            errors: Some(Vec::new()),
            color: PALETTE[k % PALETTE.len()].to_string(),
            dashed: false,
        });
        s.points.push((width as f64, 100.0 * groups[i].test.mean()));
        s.errors.as_mut().expect("set above").push(100.0 * groups[i].test.stderr());
        widths.push(width as f64);
    }
    widths.sort_by(f64::total_cmp);
    widths.dedup();
    let plot = LinePlot {
        title: "Test accuracy at a fixed weight budget".into(),
        x_label: "width".into(),
        y_label: "best test accuracy (%)".into(),
        log_x: true,
        x_ticks: widths,
        series: series.into_values().collect(),
        ..LinePlot::default()
    };
    Ok(FigureExport {
        kind: FigureKind::AccuracyVsWidth,
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
        svg: Some(plot.render()),
    })
}

fn accuracy_heatmap(dir: &Path, records: &[CellRecord]) -> Result<FigureExport, HarnessError> {
    let groups = groups(records);
    if groups.is_empty() {
        return Err(missing(dir));
    }
    if groups.iter().any(|gr| gr.sweep != groups[0].sweep) {
        return Err(HarnessError::InvalidSpec(
            "a heatmap needs the records of a single sweep".into(),
        ));
    }
    let mut widths: Vec<usize> = groups.iter().map(|gr| gr.width).collect();
    widths.sort_unstable();
    widths.dedup();
    let mut llcs: Vec<u64> = groups.iter().map(|gr| (gr.llc * 1000.0) as u64).collect();
    llcs.sort_unstable();
    llcs.dedup();
    let baseline_width = widths[0];
    let baseline = groups
        .iter()
        .filter(|gr| gr.width == baseline_width)
        .map(|gr| gr.test.mean())
        .fold(f64::NEG_INFINITY, f64::max);
    let max = groups.iter().map(|gr| gr.test.mean()).fold(f64::NEG_INFINITY, f64::max);
    let min = groups.iter().map(|gr| gr.test.mean()).fold(f64::INFINITY, f64::min);
    let tenth = |v: f64| (v * 1000.0).round() as i64;
    let is_max = |gr: &Group| tenth(gr.test.mean()) == tenth(max);

    let mut cells = vec![vec![None; widths.len()]; llcs.len()];
    let mut stars = Vec::new();
    let mut x_ticks = vec![String::new(); widths.len()];
    for gr in &groups {
        let c = widths.iter().position(|&w| w == gr.width).expect("width listed");
        let r = llcs.iter().position(|&l| l == (gr.llc * 1000.0) as u64).expect("llc listed");
        cells[r][c] = Some(gr.test.mean());
        x_ticks[c] = format!("{:.2} ({})", gr.connectivity, gr.width);
        if is_max(gr) {
            stars.push((r, c));
        }
    }
    let header = [
        "width",
        "connectivity",
        "last_layer_connectivity",
        "mean_best_test_acc",
        "runs",
        "baseline_acc",
        "is_max",
    ];
    let rows = groups
        .iter()
        .map(|gr| {
            vec![
                gr.width.to_string(),
                g(gr.connectivity),
                g(gr.llc),
                g(gr.test.mean()),
                gr.test.count().to_string(),
                g(baseline),
                is_max(gr).to_string(),
            ]
        })
        .collect();
    let map = Heatmap {
        title: format!("{}: test accuracy (%)", groups[0].sweep),
        x_label: "overall connectivity (width)".into(),
        y_label: "last-layer connectivity".into(),
        x_ticks,
        y_ticks: llcs.iter().map(|&l| format!("{:.2}", l as f64 / 1000.0)).collect(),
        cells,
        center: baseline,
        upper: max.max(baseline),
        lower: min.min(baseline),
        stars,
    };
    Ok(FigureExport {
        kind: FigureKind::AccuracyHeatmap2d,
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
        svg: Some(map.render()),
    })
}

fn distance_vs_width(dir: &Path, records: &[CellRecord]) -> Result<FigureExport, HarnessError> {
    let path = dir.join(KERNEL_CSV);
    if !path.exists() {
        return Err(missing(dir));
    }
    let curve = read_kernel_csv(&path)?;
    if curve.is_empty() {
        return Err(missing(dir));
    }
    let family_path = dir.join(KERNEL_FAMILY_CSV);
    let family = if family_path.exists() { read_kernel_csv(&family_path)? } else { Vec::new() };
    let meta_path = dir.join(KERNEL_META_JSON);
    let meta: Option<KernelMeta> = std::fs::read(&meta_path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    let mut test_error: BTreeMap<usize, Moments> = BTreeMap::new();
    for rec in records {
        if let Some(a) = rec.record.best_test_acc {
            test_error.entry(rec.width).or_default().push(1.0 - a);
        }
    }

    let mut widths: Vec<usize> = curve
        .iter()
        .map(|r| r.width)
        .chain(family.iter().map(|r| r.width))
        .chain(test_error.keys().copied())
        .collect();
    widths.sort_unstable();
    widths.dedup();
    let opt = |v: Option<f64>| v.map_or(String::new(), g);
    let header = [
        "width",
        "p",
        "D_empirical",
        "D_stderr",
        "D_theory_eq4",
        "D_theorem1_mc",
        "p_family",
        "D_family",
        "D_family_stderr",
        "test_error",
        "n_star",
    ];
    let rows = widths
        .iter()
        .map(|&w| {
            let c = curve.iter().find(|r| r.width == w);
            let f = family.iter().find(|r| r.width == w);
            vec![
                w.to_string(),
                opt(c.map(|r| r.p)),
                opt(c.map(|r| r.d_empirical)),
                opt(c.map(|r| r.d_stderr)),
                opt(c.map(|r| r.d_theory_eq4)),
                opt(c.and_then(|r| r.d_theorem1_mc)),
                opt(f.map(|r| r.p)),
                opt(f.map(|r| r.d_empirical)),
                opt(f.map(|r| r.d_stderr)),
                opt(test_error.get(&w).map(|m| m.mean())),
                opt(meta.map(|m| m.n_star)),
            ]
        })
        .collect();

    let pts = |f: &dyn Fn(&super::KernelRow) -> Option<f64>, rows: &[super::KernelRow]| -> Vec<(f64, f64)> {
        rows.iter().filter_map(|r| f(r).map(|v| (r.width as f64, v))).collect()
    };
    let mut series = vec![
        Series {
            name: "D empirical".into(),
            points: pts(&|r| Some(r.d_empirical), &curve),
            errors: Some(curve.iter().map(|r| r.d_stderr).collect()),
            color: PALETTE[0].into(),
            dashed: false,
        },
        Series {
            name: "approximation".into(),
            points: pts(&|r| Some(r.d_theory_eq4), &curve),
            errors: None,
            color: PALETTE[1].into(),
            dashed: true,
        },
    ];
    let t1 = pts(&|r| r.d_theorem1_mc, &curve);
    if !t1.is_empty() {
        series.push(Series {
            name: "Theorem 1 (MC)".into(),
            points: t1,
            errors: None,
            color: PALETTE[2].into(),
            dashed: true,
        });
    }
    if !family.is_empty() {
        series.push(Series {
            name: "D trained family".into(),
            points: pts(&|r| Some(r.d_empirical), &family),
            errors: Some(family.iter().map(|r| r.d_stderr).collect()),
            color: PALETTE[3].into(),
            dashed: false,
        });
    }
    let plot = LinePlot {
        title: "Kernel distance at initialization".into(),
        x_label: "width n".into(),
        y_label: "D".into(),
        log_x: true,
        log_y: true,
        x_ticks: widths.iter().map(|&w| w as f64).collect(),
        series,
        vlines: meta.map(|m| vec![(m.n_star, format!("n* = {:.0}", m.n_star))]).unwrap_or_default(),
        ..LinePlot::default()
    };
    Ok(FigureExport {
        kind: FigureKind::DistanceVsWidth,
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
        svg: Some(plot.render()),
    })
}

/// Builds the figure from the results in `results_dir` and writes its table
/// and image to `results_dir/figures`.
pub fn export_figure(kind: FigureKind, results_dir: &Path) -> Result<FigureExport, HarnessError> {
    if !results_dir.is_dir() {
        return Err(missing(results_dir));
    }
    let records = load_records(results_dir)?;
    let fig = match kind {
        FigureKind::AccuracyVsWidth => accuracy_vs_width(results_dir, &records)?,
        FigureKind::AccuracyHeatmap2d => accuracy_heatmap(results_dir, &records)?,
        FigureKind::DistanceVsWidth => distance_vs_width(results_dir, &records)?,
    };
    fig.write(&results_dir.join(FIGURES_DIR))?;
    Ok(fig)
}
