use super::family::{build_family, FamilySpec};
use super::sweep::write_atomic;
use super::{io_err, parallel_map, HarnessError};
use crate::data::{Dataset, Normalization};
use crate::kernel::{approx_distance, optimal_connectivity, DistanceExperiment};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const KERNEL_CSV: &str = "kernel.csv";
pub const KERNEL_FAMILY_CSV: &str = "kernel_family.csv";
pub const KERNEL_META_JSON: &str = "kernel_meta.json";

/// Input dimension and the predicted optimum of a kernel sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub d: usize,
    pub np: f64,
    pub p_star: f64,
    pub n_star: f64,
}

fn default_np() -> f64 {
    8.0
}
fn default_pairs() -> usize {
    10_000
}
fn default_inits() -> usize {
    10
}
fn default_reference() -> usize {
    10_000
}
fn default_t1_pairs() -> usize {
    100
}
fn default_t1_samples() -> u64 {
    2000
}

/// Kernel distance `D` across widths at a fixed product `n · p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSweepSpec {
    pub name: String,
    pub widths: Vec<usize>,
    #[serde(default = "default_np")]
    pub np: f64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_inits")]
    pub inits: usize,
    #[serde(default = "default_reference")]
    pub reference_width: usize,
    /// Pairs used for the mask-sampled Theorem 1 curve; 0 disables it.
    #[serde(default = "default_t1_pairs")]
    pub theorem1_pairs: usize,
    #[serde(default = "default_t1_samples")]
    pub theorem1_mask_samples: u64,
    #[serde(default)]
    pub seed: u64,
    /// Also measure `D` at the first-layer connectivity of each member of
    /// this family.
    #[serde(default)]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub normalization: Normalization,
}

impl KernelSweepSpec {
    /// Widths 16 to 1024 at `np = 8`, with the Fig-7 family alongside.
    pub fn fig7() -> Self {
        let mut family = super::SweepSpec::preset("fig7").expect("preset exists").family;
        family.widths.retain(|&w| w >= 16);
        Self {
            name: "fig7-kernel".into(),
            widths: vec![16, 32, 64, 128, 256, 512, 1024],
            np: default_np(),
            pairs: default_pairs(),
            inits: default_inits(),
            reference_width: default_reference(),
            theorem1_pairs: default_t1_pairs(),
            theorem1_mask_samples: default_t1_samples(),
            seed: 0,
            family: Some(family),
            normalization: Normalization::PerPixel,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("widths must be positive and non-empty");
        }
        if !(self.np.is_finite() && self.np > 0.0) {
            return bad("np must be positive");
        }
        if self.pairs == 0 || self.inits == 0 || self.reference_width == 0 {
            return bad("pairs, inits and reference_width must be positive");
        }
        if let Some(f) = &self.family {
            f.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub width: usize,
    pub p: f64,
    pub d_empirical: f64,
    pub d_stderr: f64,
    pub d_theory_eq4: f64,
    pub d_theorem1_mc: Option<f64>,
    pub samples: u64,
}

fn measure_row(
    exp: &DistanceExperiment,
    spec: &KernelSweepSpec,
    width: usize,
    p: f64,
    tag: u64,
) -> Result<KernelRow, HarnessError> {
    let p = p.min(1.0);
    let est = exp.measure(width, p, spec.inits, derive_seed(spec.seed, &[tag, width as u64, 0]))?;
    let t1 = if spec.theorem1_pairs > 0 && p < 1.0 {
        Some(
            exp.theorem1_average(
                width,
                p,
                spec.theorem1_pairs,
                spec.theorem1_mask_samples,
                derive_seed(spec.seed, &[tag, width as u64, 1]),
            )?
            .value,
        )
    } else {
        None
    };
    Ok(KernelRow {
        width,
        p,
        d_empirical: est.value,
        d_stderr: est.stderr,
        d_theory_eq4: approx_distance(p, width, exp.dim()),
        d_theorem1_mc: t1,
        samples: est.samples,
    })
}

fn write_rows(path: &Path, rows: &[KernelRow]) -> Result<(), HarnessError> {
    let mut out = String::from("width,p,D_empirical,D_stderr,D_theory_eq4,D_theorem1_mc,samples\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.width,
            r.p,
            r.d_empirical,
            r.d_stderr,
            r.d_theory_eq4,
            r.d_theorem1_mc.map_or(String::new(), |v| v.to_string()),
            r.samples
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a table written by [`run_kernel_sweep`].
pub fn read_kernel_csv(path: &Path) -> Result<Vec<KernelRow>, HarnessError> {
    let fail = |m: String| HarnessError::Format {
        path: path.display().to_string(),
        message: m,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| fail(format!("column {i}: {e}")))
        };
        rows.push(KernelRow {
            width: f(0)? as usize,
            p: f(1)?,
            d_empirical: f(2)?,
            d_stderr: f(3)?,
            d_theory_eq4: f(4)?,
            d_theorem1_mc: rec.get(5).filter(|s| !s.is_empty()).map(|_| f(5)).transpose()?,
            samples: f(6)? as u64,
        });
    }
    Ok(rows)
}

/// Measures `D` at every width with `p = np / n` (capped at 1) and, when a
/// family is given, at each member's first-layer connectivity. Writes
/// `kernel.csv` and `kernel_family.csv` into `out_dir`.
pub fn run_kernel_sweep(
    spec: &KernelSweepSpec,
    data: &Dataset,
    threads: usize,
    out_dir: &Path,
) -> Result<(Vec<KernelRow>, Vec<KernelRow>), HarnessError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut cfg = serde_json::to_vec_pretty(spec).expect("spec serializes");
    cfg.push(b'\n');
    write_atomic(&out_dir.join("kernel_sweep.json"), &cfg)?;

    let exp = DistanceExperiment::new(data, spec.pairs, spec.reference_width, spec.seed)?;
    let opt = optimal_connectivity(spec.np, exp.dim());
    let meta = KernelMeta {
        d: exp.dim(),
        np: spec.np,
        p_star: opt.p_star,
        n_star: opt.n_star,
    };
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    bytes.push(b'\n');
    write_atomic(&out_dir.join(KERNEL_META_JSON), &bytes)?;
    let mut widths = spec.widths.clone();
    widths.sort_unstable();
    let curve: Vec<KernelRow> = parallel_map(&widths, threads, |&n| {
        measure_row(&exp, spec, n, spec.np / n as f64, 2)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    write_rows(&out_dir.join(KERNEL_CSV), &curve)?;

    let mut family_rows = Vec::new();
    if let Some(f) = &spec.family {
        let members = build_family(f)?.members;
        let points: Vec<(usize, f64)> = members.iter().map(|m| (m.width, m.layer_connectivity[0])).collect();
        family_rows = parallel_map(&points, threads, |&(n, p)| measure_row(&exp, spec, n, p, 3))
            .into_iter()
            .collect::<Result<_, _>>()?;
        write_rows(&out_dir.join(KERNEL_FAMILY_CSV), &family_rows)?;
    }
    Ok((curve, family_rows))
}
