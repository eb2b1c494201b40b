//! Browser bindings for three small interactive views: a weight-allocation
//! plan, the kernel-distance curve at fixed `n·p`, and a mask preview.
//!
//! Every export has a plain-Rust twin returning `Result<String, String>` so the
//! logic is testable without a JavaScript host.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;
use widesparse::allocator::{proportional_allocate, staggered_allocate, AllocationPlan, LayerSizes};
use widesparse::kernel::{approx_distance, optimal_connectivity, theorem1_distance, MomentMethod, MAX_ENUM_DIM};
use widesparse::mask::{sample_mask, MaskMode};
use widesparse::rng::{derive_seed, rng_from_seed};

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

/// Plan JSON for layer sizes given as `"62720, 800"` keeping `budget` weights.
pub fn allocate_json(sizes: &str, budget: u64, rule: &str) -> Result<String, String> {
    let counts: Vec<u64> = parse_list(sizes)?;
    let sizes = LayerSizes::from_counts(&counts).map_err(|e| e.to_string())?;
    let total = sizes.total();
    if budget == 0 || budget > total {
        return Err(format!("budget must lie in 1..={total}"));
    }
    let freeze = total - budget;
    let plan = match (rule, freeze) {
        (_, 0) => AllocationPlan::dense(&sizes),
        ("staggered", f) => staggered_allocate(&sizes, f).map_err(|e| e.to_string())?,
        ("proportional", f) => proportional_allocate(&sizes, f).map_err(|e| e.to_string())?,
        (other, _) => return Err(format!("unknown rule {other:?}")),
    };
    serde_json::to_string(&plan).map_err(|e| e.to_string())
}

/// Approximate distance per width at fixed `n·p`, plus the predicted optimum.
pub fn distance_curve_json(d: usize, np: f64, widths: &str) -> Result<String, String> {
    if d == 0 || !(np > 0.0) {
        return Err("d and np must be positive".into());
    }
    let widths: Vec<usize> = parse_list(widths)?;
    let rows: Vec<Value> = widths
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = (np / n as f64).min(1.0);
            json!({ "width": n, "p": p, "distance": approx_distance(p, n, d) })
        })
        .collect();
    let opt = optimal_connectivity(np, d);
    Ok(json!({
        "rows": rows,
        "p_star": opt.p_star,
        "n_star": opt.n_star,
        "in_regime": opt.in_regime,
    })
    .to_string())
}

/// Exact Theorem 1 terms for one random input pair of small dimension.
pub fn theorem1_json(d: usize, n: usize, p: f64, seed: u64) -> Result<String, String> {
    if d == 0 || d > MAX_ENUM_DIM {
        return Err(format!("d must lie in 1..={MAX_ENUM_DIM}"));
    }
    let (x, y) = gaussian_pair(d, seed);
    let t = theorem1_distance(p, n, &x, &y, MomentMethod::ExactEnum).map_err(|e| e.to_string())?;
    Ok(json!({
        "x": x,
        "y": y,
        "k1": t.k1,
        "k1_tilde": t.k1_tilde.value,
        "k2_tilde": t.k2_tilde.value,
        "mean": t.mean,
        "variance": t.variance,
        "distance": t.distance,
        "eq4": approx_distance(p, n, d),
    })
    .to_string())
}

/// Two standard normal vectors of length `d`.
fn gaussian_pair(d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let mut draw = || -> Vec<f64> { (0..d).map(|_| rng.sample(StandardNormal)).collect() };
    let x = draw();
    (x, draw())
}

/// Keep/drop grid of a `rows x cols` mask as rows of `0`/`1` characters.
/// With `axis_rows`, `keep` counts whole rows instead of cells.
pub fn mask_preview_json(rows: usize, cols: usize, keep: usize, seed: u64, axis_rows: bool) -> Result<String, String> {
    if rows == 0 || cols == 0 || rows * cols > 1 << 16 {
        return Err("rows x cols must lie in 1..=65536".into());
    }
    let (mode, keep_count) = if axis_rows {
        (MaskMode::AxisRestricted(vec![0]), keep.min(rows) * cols)
    } else {
        (MaskMode::AllDims, keep.min(rows * cols))
    };
    let mask = sample_mask(&[rows, cols], keep_count, mode, seed).map_err(|e| e.to_string())?;
    let grid: Vec<String> = (0..rows)
        .map(|r| (0..cols).map(|c| if mask.is_kept(r * cols + c) { '1' } else { '0' }).collect())
        .collect();
    Ok(json!({
        "header": mask.header(),
        "kept": mask.keep_count(),
        "connectivity": mask.connectivity(),
        "grid": grid,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn allocate(sizes: &str, budget: u64, rule: &str) -> Result<String, JsError> {
    allocate_json(sizes, budget, rule).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn distance_curve(d: usize, np: f64, widths: &str) -> Result<String, JsError> {
    distance_curve_json(d, np, widths).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn theorem1(d: usize, n: usize, p: f64, seed: u64) -> Result<String, JsError> {
    theorem1_json(d, n, p, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mask_preview(rows: usize, cols: usize, keep: usize, seed: u64, axis_rows: bool) -> Result<String, JsError> {
    mask_preview_json(rows, cols, keep, seed, axis_rows).map_err(|e| JsError::new(&e))
}
