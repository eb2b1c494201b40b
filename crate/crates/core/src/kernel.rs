//! Gaussian-process kernels of wide ReLU networks under random sparsity.
//!
//! For a two-layer network `f(x) = (nd)^{-1/2} v^T relu(u x)` the GP kernel is
//! `Θ(x, y) = (1/(nd)) Σ_i relu(u_i·x) relu(u_i·y)`. Its infinite-width limit
//! is `K_1(x, y) / d`, with `K_l` the arc-cosine kernels. When each weight is
//! kept with probability `p` and drawn with variance `1/p`, the mean and
//! variance of `Θ` are governed by the mask-averaged kernels `K̃_{l,p}`.

use crate::data::Dataset;
use crate::model::{Mat, MlpArch, MlpModel, ModelError, Parameterization, SparseSpec, Variant};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::{run_blocks, Moments};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;

/// Largest input dimension accepted by exact mask enumeration.
pub const MAX_ENUM_DIM: usize = 20;

/// Inputs per chunk when computing hidden features of many pairs.
const PAIRS_PER_CHUNK: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("zero vector has no angle")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("exact enumeration needs d <= {max}, got {d}")]
    DimensionTooLargeForEnum { d: usize, max: usize },
    #[error("arc-cosine kernel order must be 1 or 2, got {0}")]
    UnsupportedOrder(u32),
    #[error("connectivity {0} outside (0, 1]")]
    InvalidConnectivity(f64),
    #[error("model is not a bias-free two-layer NTK network")]
    UnsupportedModel,
    #[error("requested {requested} pairs but only {available} exist")]
    InsufficientData { requested: usize, available: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    ClosedForm,
    ExactEnum,
    MonteCarloWeights,
    MonteCarloMasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub estimator: Estimator,
}

impl KernelEstimate {
    fn exact(value: f64, estimator: Estimator) -> Self {
        Self {
            value,
            stderr: 0.0,
            samples: 0,
            estimator,
        }
    }

    fn from_moments(m: &Moments, estimator: Estimator) -> Self {
        Self {
            value: m.mean(),
            stderr: m.stderr(),
            samples: m.count(),
            estimator,
        }
    }
}

/// Dimensions of a sparse two-layer NTK network; weights have variance `1/p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub d: usize,
    pub n: usize,
    pub p: f64,
}

impl KernelConfig {
    pub fn new(d: usize, n: usize, p: f64) -> Result<Self, KernelError> {
        check_p(p)?;
        Ok(Self { d, n, p })
    }

    pub fn sigma2(&self) -> f64 {
        1.0 / self.p
    }
}

fn check_p(p: f64) -> Result<(), KernelError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidConnectivity(p))
    }
}

pub fn j1(theta: f64) -> f64 {
    theta.sin() + (PI - theta) * theta.cos()
}

pub fn j2(theta: f64) -> f64 {
    let c = theta.cos();
    3.0 * theta.sin() * c + (PI - theta) * (1.0 + 2.0 * c * c)
}

/// `K_l` from squared norms and the inner product; zero if either norm is.
fn arccos_from_parts(l: u32, xx: f64, yy: f64, xy: f64) -> f64 {
    if xx <= 0.0 || yy <= 0.0 {
        return 0.0;
    }
    let nx = xx.sqrt();
    let ny = yy.sqrt();
    let theta = (xy / (nx * ny)).clamp(-1.0, 1.0).acos();
    match l {
        1 => nx * ny * j1(theta) / (2.0 * PI),
        _ => xx * yy * j2(theta) / (2.0 * PI),
    }
}

fn parts(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mut xx = 0.0;
    let mut yy = 0.0;
    let mut xy = 0.0;
    for (a, b) in x.iter().zip(y) {
        xx += a * a;
        yy += b * b;
        xy += a * b;
    }
    (xx, yy, xy)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

fn check_order(l: u32) -> Result<(), KernelError> {
    if l == 1 || l == 2 {
        Ok(())
    } else {
        Err(KernelError::UnsupportedOrder(l))
    }
}

/// Arc-cosine kernel `K_l(x, y) = (1/2π) |x|^l |y|^l J_l(θ)` for `l ∈ {1, 2}`.
pub fn arccos_kernel(l: u32, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    check_order(l)?;
    check_pair(x, y)?;
    let (xx, yy, xy) = parts(x, y);
    if xx == 0.0 || yy == 0.0 {
        return Err(KernelError::ZeroVector);
    }
    Ok(arccos_from_parts(l, xx, yy, xy))
}

/// `Θ(x, y)` of a bias-free two-layer NTK model.
pub fn empirical_gp_kernel(model: &MlpModel, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    check_gp_model(model)?;
    let d = model.input_dim();
    for v in [x, y] {
        if v.len() != d {
            return Err(KernelError::DimensionMismatch { expected: d, got: v.len() });
        }
    }
    let batch = Mat::from_samples(d, [x, y].into_iter());
    let a = model.layer_activations(0, &batch)?;
    let n = a.rows();
    let s: f64 = (0..n).map(|i| a.get(i, 0) * a.get(i, 1)).sum();
    Ok(s / n as f64)
}

fn check_gp_model(model: &MlpModel) -> Result<(), KernelError> {
    let arch = model.arch();
    let ok = arch.hidden_widths.len() == 1
        && !arch.use_biases
        && arch.parameterization == Parameterization::Ntk
        && model.layers().len() == 2;
    if ok {
        Ok(())
    } else {
        Err(KernelError::UnsupportedModel)
    }
}

/// How the mask average in `K̃_{l,p}` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    /// Sum over all `2^d` masks; `d <= 20`.
    ExactEnum,
    /// Average over independent Bernoulli(p) masks.
    MonteCarloMasks { samples: u64, seed: u64 },
}

/// `(K̃_1, K̃_2)` with their standard errors.
fn masked_moments(
    p: f64,
    x: &[f64],
    y: &[f64],
    method: MomentMethod,
) -> Result<(KernelEstimate, KernelEstimate), KernelError> {
    check_p(p)?;
    check_pair(x, y)?;
    let d = x.len();
    let s2 = 1.0 / p;
    match method {
        MomentMethod::ExactEnum => {
            if d > MAX_ENUM_DIM {
                return Err(KernelError::DimensionTooLargeForEnum { d, max: MAX_ENUM_DIM });
            }
            if p == 1.0 {
                let (xx, yy, xy) = parts(x, y);
                return Ok((
                    KernelEstimate::exact(arccos_from_parts(1, xx, yy, xy), Estimator::ExactEnum),
                    KernelEstimate::exact(arccos_from_parts(2, xx, yy, xy), Estimator::ExactEnum),
                ));
            }
            let (mut k1, mut k2) = (0.0, 0.0);
            for s in 0u32..(1u32 << d) {
                let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
                for k in 0..d {
                    if s >> k & 1 == 1 {
                        xx += x[k] * x[k];
                        yy += y[k] * y[k];
                        xy += x[k] * y[k];
                    }
                }
                let kept = s.count_ones() as i32;
                let w = p.powi(kept) * (1.0 - p).powi(d as i32 - kept);
                k1 += w * arccos_from_parts(1, xx, yy, xy);
                k2 += w * arccos_from_parts(2, xx, yy, xy);
            }
            Ok((
                KernelEstimate::exact(s2 * k1, Estimator::ExactEnum),
                KernelEstimate::exact(s2 * s2 * k2, Estimator::ExactEnum),
            ))
        }
        MomentMethod::MonteCarloMasks { samples, seed } => {
            let blocks = run_blocks(samples, seed, 1, |_, len, rng| {
                let (mut m1, mut m2) = (Moments::new(), Moments::new());
                for _ in 0..len {
                    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
                    for k in 0..d {
                        if rng.random::<f64>() < p {
                            xx += x[k] * x[k];
                            yy += y[k] * y[k];
                            xy += x[k] * y[k];
                        }
                    }
                    m1.push(s2 * arccos_from_parts(1, xx, yy, xy));
                    m2.push(s2 * s2 * arccos_from_parts(2, xx, yy, xy));
                }
                (m1, m2)
            });
            let (mut m1, mut m2) = (Moments::new(), Moments::new());
            for (a, b) in &blocks {
                m1.merge(a);
                m2.merge(b);
            }
            Ok((
                KernelEstimate::from_moments(&m1, Estimator::MonteCarloMasks),
                KernelEstimate::from_moments(&m2, Estimator::MonteCarloMasks),
            ))
        }
    }
}

/// `K̃_{l,p}(x, y) = σ^{2l} E_s[K_l(x_s, y_s)]` with `σ² = 1/p` and masks
/// `s ~ Bernoulli(p)^d`; `K_l` vanishes when a masked vector is zero.
pub fn sparse_kernel_moment(
    l: u32,
    p: f64,
    x: &[f64],
    y: &[f64],
    method: MomentMethod,
) -> Result<KernelEstimate, KernelError> {
    check_order(l)?;
    let (k1, k2) = masked_moments(p, x, y, method)?;
    Ok(if l == 1 { k1 } else { k2 })
}

/// Mean squared distance between `Θ` at width `n` and its dense limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1 {
    pub k1: f64,
    pub k1_tilde: KernelEstimate,
    pub k2_tilde: KernelEstimate,
    /// `E[Θ] = K̃_1 / d`.
    pub mean: f64,
    /// `Var[Θ] = (K̃_2 - K̃_1²) / (d² n)`.
    pub variance: f64,
    /// `(mean - K_1/d)² + variance`.
    pub distance: f64,
}

pub fn theorem1_distance(p: f64, n: usize, x: &[f64], y: &[f64], method: MomentMethod) -> Result<Theorem1, KernelError> {
    let (k1t, k2t) = masked_moments(p, x, y, method)?;
    let (xx, yy, xy) = parts(x, y);
    let k1 = arccos_from_parts(1, xx, yy, xy);
    let d = x.len() as f64;
    let mean = k1t.value / d;
    let variance = (k2t.value - k1t.value * k1t.value) / (d * d * n as f64);
    let bias = (k1t.value - k1) / d;
    Ok(Theorem1 {
        k1,
        k1_tilde: k1t,
        k2_tilde: k2t,
        mean,
        variance,
        distance: bias * bias + variance,
    })
}

/// Closed-form approximation
/// `(1/4d) [ (1/4)(1/sqrt(p) - 1)² + (d/n)(1 - 1/π²) ]`, intended for `dp ≫ 1`.
pub fn approx_distance(p: f64, n: usize, d: usize) -> f64 {
    let d = d as f64;
    let a = 1.0 / p.sqrt() - 1.0;
    (0.25 * a * a + d / n as f64 * (1.0 - 1.0 / (PI * PI))) / (4.0 * d)
}

/// Diagonal (`x = y`) approximation `(1/n)(5/4 + 3/(dp))`, for reporting.
pub fn diagonal_distance_approx(p: f64, n: usize, d: usize) -> f64 {
    (1.25 + 3.0 / (d as f64 * p)) / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalConnectivity {
    pub p_star: f64,
    pub n_star: f64,
    /// False when `p* > 1`, outside the range where the formula applies.
    pub in_regime: bool,
}

/// Minimizer of [`approx_distance`] at fixed `n·p`: `p* = sqrt(np / 4d)`.
pub fn optimal_connectivity(np_const: f64, d: usize) -> OptimalConnectivity {
    let p_star = (np_const / (4.0 * d as f64)).sqrt();
    OptimalConnectivity {
        p_star,
        n_star: np_const / p_star,
        in_regime: p_star <= 1.0,
    }
}

/// Draws `draws` independent networks with Bernoulli(p)-masked weights of
/// variance `1/p` and returns the moments of `Θ(x, y)`.
pub fn sample_gp_kernel(
    n: usize,
    p: f64,
    x: &[f64],
    y: &[f64],
    draws: u64,
    seed: u64,
    threads: usize,
) -> Result<Moments, KernelError> {
    check_p(p)?;
    check_pair(x, y)?;
    let d = x.len();
    let sigma = (1.0 / p).sqrt();
    let norm = 1.0 / (n * d) as f64;
    let blocks = run_blocks(draws, seed, threads, |_, len, rng| {
        let mut m = Moments::new();
        for _ in 0..len {
            let mut theta = 0.0;
            for _ in 0..n {
                let (mut ux, mut uy) = (0.0, 0.0);
                for k in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    if rng.random::<f64>() < p {
                        ux += sigma * z * x[k];
                        uy += sigma * z * y[k];
                    }
                }
                theta += ux.max(0.0) * uy.max(0.0);
            }
            m.push(theta * norm);
        }
        m
    });
    Ok(blocks.iter().fold(Moments::new(), |mut a, b| {
        a.merge(b);
        a
    }))
}

/// A two-layer bias-free NTK network of width `n` whose first layer keeps
/// `round(p · d · n)` weights (the output layer stays dense).
pub fn sparse_ntk_arch(d: usize, n: usize, p: f64, mask_seed: u64) -> Result<MlpArch, KernelError> {
    check_p(p)?;
    let dense = MlpArch::ntk_two_layer(d, n, 1);
    if p == 1.0 {
        return Ok(dense);
    }
    let keep = ((p * (d * n) as f64).round() as u64).clamp(1, (d * n) as u64);
    Ok(dense.with_variant(Variant::Sparse(SparseSpec {
        keep: vec![keep, n as u64],
        mask_seed,
        mode: crate::mask::MaskMode::AllDims,
    })))
}

/// Fixed input pairs with their reference kernel values from a wide dense
/// network, for measuring the distance `D` of sparse networks.
#[derive(Debug, Clone)]
pub struct DistanceExperiment {
    d: usize,
    /// Feature-major chunks; columns `2k` and `2k + 1` hold pair `k`.
    chunks: Vec<Mat>,
    pairs: Vec<(usize, usize)>,
    reference: Vec<f64>,
    reference_width: usize,
    reference_seed: u64,
}

/// Distinct unordered pairs `i < j` drawn uniformly from `0..n`.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>, KernelError> {
    let available = n.saturating_mul(n.saturating_sub(1)) / 2;
    if count > available {
        return Err(KernelError::InsufficientData {
            requested: count,
            available,
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..n as u64) as usize;
        let j = rng.random_range(0..n as u64) as usize;
        if i == j {
            continue;
        }
        let pair = (i.min(j), i.max(j));
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    Ok(out)
}

impl DistanceExperiment {
    /// Draws `n_pairs` distinct pairs from `data` and evaluates the dense
    /// reference network of width `reference_width` on them.
    pub fn new(data: &Dataset, n_pairs: usize, reference_width: usize, seed: u64) -> Result<Self, KernelError> {
        let pairs = sample_pairs(data.len(), n_pairs, derive_seed(seed, &[0]))?;
        let reference_seed = derive_seed(seed, &[1]);
        let reference = MlpModel::init(&MlpArch::ntk_two_layer(data.dim(), reference_width, 1), reference_seed)?;
        Self::with_reference(data, pairs, &reference, reference_seed)
    }

    /// Uses `reference` as the wide network.
    pub fn with_reference(
        data: &Dataset,
        pairs: Vec<(usize, usize)>,
        reference: &MlpModel,
        reference_seed: u64,
    ) -> Result<Self, KernelError> {
        check_gp_model(reference)?;
        if pairs.is_empty() {
            return Err(KernelError::InsufficientData {
                requested: 0,
                available: data.len(),
            });
        }
        let d = data.dim();
        let chunks = pairs
            .chunks(PAIRS_PER_CHUNK)
            .map(|c| {
                Mat::from_samples(
                    d,
                    c.iter()
                        .flat_map(|&(i, j)| [data.image(i), data.image(j)])
                        .collect::<Vec<_>>()
                        .into_iter(),
                )
            })
            .collect();
        let mut exp = Self {
            d,
            chunks,
            pairs,
            reference: Vec::new(),
            reference_width: reference.arch().hidden_widths[0],
            reference_seed,
        };
        exp.reference = exp.pair_kernels(reference)?;
        Ok(exp)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn reference_width(&self) -> usize {
        self.reference_width
    }

    pub fn reference_seed(&self) -> u64 {
        self.reference_seed
    }

    /// The two inputs of pair `k`.
    pub fn pair_inputs(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let chunk = &self.chunks[k / PAIRS_PER_CHUNK];
        let c = 2 * (k % PAIRS_PER_CHUNK);
        (chunk.col(c), chunk.col(c + 1))
    }

    /// `Θ` of `model` on every pair.
    pub fn pair_kernels(&self, model: &MlpModel) -> Result<Vec<f64>, KernelError> {
        check_gp_model(model)?;
        if model.input_dim() != self.d {
            return Err(KernelError::DimensionMismatch {
                expected: self.d,
                got: model.input_dim(),
            });
        }
        let mut out = Vec::with_capacity(self.pairs.len());
        for chunk in &self.chunks {
            let a = model.layer_activations(0, chunk)?;
            let n = a.rows();
            let mut acc = vec![0.0; a.cols() / 2];
            for i in 0..n {
                let row = a.row(i);
                for (k, v) in acc.iter_mut().enumerate() {
                    *v += row[2 * k] * row[2 * k + 1];
                }
            }
            out.extend(acc.into_iter().map(|v| v / n as f64));
        }
        Ok(out)
    }

    /// Mean of `(Θ - Θ_ref)²` over all pairs for one model.
    pub fn measure_model(&self, model: &MlpModel) -> Result<f64, KernelError> {
        let k = self.pair_kernels(model)?;
        let m: Moments = k.iter().zip(&self.reference).map(|(a, b)| (a - b) * (a - b)).collect();
        Ok(m.mean())
    }

    /// `D` averaged over `inits` independent sparse networks of width `n`
    /// and connectivity `p`. The standard error is taken across inits.
    pub fn measure(&self, n: usize, p: f64, inits: usize, seed: u64) -> Result<KernelEstimate, KernelError> {
        let mut per_init = Moments::new();
        for i in 0..inits {
            let s = derive_seed(seed, &[i as u64]);
            let arch = sparse_ntk_arch(self.d, n, p, derive_seed(s, &[1]))?;
            let model = MlpModel::init(&arch, derive_seed(s, &[0]))?;
            per_init.push(self.measure_model(&model)?);
        }
        Ok(KernelEstimate {
            value: per_init.mean(),
            stderr: per_init.stderr(),
            samples: (inits * self.pairs.len()) as u64,
            estimator: Estimator::MonteCarloWeights,
        })
    }

    /// [`theorem1_distance`] with mask sampling, averaged over the first
    /// `max_pairs` pairs.
    pub fn theorem1_average(
        &self,
        n: usize,
        p: f64,
        max_pairs: usize,
        mask_samples: u64,
        seed: u64,
    ) -> Result<KernelEstimate, KernelError> {
        let count = max_pairs.min(self.pairs.len());
        let mut m = Moments::new();
        for k in 0..count {
            let (x, y) = self.pair_inputs(k);
            let t = theorem1_distance(
                p,
                n,
                &x,
                &y,
                MomentMethod::MonteCarloMasks {
                    samples: mask_samples,
                    seed: derive_seed(seed, &[k as u64]),
                },
            )?;
            m.push(t.distance);
        }
        Ok(KernelEstimate {
            value: m.mean(),
            stderr: m.stderr(),
            samples: count as u64 * mask_samples,
            estimator: Estimator::MonteCarloMasks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_angles() {
        assert!((j1(0.0) - PI).abs() < 1e-12);
        assert!((j2(0.0) - 3.0 * PI).abs() < 1e-12);
        assert!((j1(PI / 2.0) - 1.0).abs() < 1e-12);
        assert!((j2(PI / 2.0) - PI / 2.0).abs() < 1e-12);
        assert!(j1(PI).abs() < 1e-12);
        assert!(j2(PI).abs() < 1e-12);
    }

    #[test]
    fn equal_and_orthogonal_inputs() {
        let x = [3.0, 4.0];
        assert!((arccos_kernel(1, &x, &x).unwrap() - 12.5).abs() < 1e-12);
        assert!((arccos_kernel(2, &x, &x).unwrap() - 1.5 * 625.0).abs() < 1e-9);
        let y = [-8.0, 6.0];
        assert!((arccos_kernel(1, &x, &y).unwrap() - 50.0 / (2.0 * PI)).abs() < 1e-12);
        assert!(arccos_kernel(1, &x, &[-3.0, -4.0]).unwrap().abs() < 1e-12);
        assert!(matches!(arccos_kernel(1, &x, &[0.0, 0.0]), Err(KernelError::ZeroVector)));
        assert!(matches!(arccos_kernel(3, &x, &x), Err(KernelError::UnsupportedOrder(3))));
    }

    #[test]
    fn colinear_inputs_do_not_produce_nan() {
        let x = [0.1, 0.2, 0.3];
        let y = [0.1 * 7.0, 0.2 * 7.0, 0.3 * 7.0];
        for l in [1, 2] {
            assert!(arccos_kernel(l, &x, &y).unwrap().is_finite());
        }
    }

    #[test]
    fn two_coordinate_hand_enumeration() {
        let x = [1.0, 0.0];
        let k = sparse_kernel_moment(1, 0.5, &x, &x, MomentMethod::ExactEnum).unwrap();
        assert!((k.value - 0.5).abs() < 1e-15);
        assert_eq!(k.stderr, 0.0);
    }

    #[test]
    fn full_connectivity_reduces_to_arccos() {
        let x = [0.3, -0.2, 0.9];
        let y = [1.0, 0.4, -0.1];
        for l in [1, 2] {
            let k = sparse_kernel_moment(l, 1.0, &x, &y, MomentMethod::ExactEnum).unwrap();
            assert_eq!(k.value, arccos_kernel(l, &x, &y).unwrap());
        }
        let t = theorem1_distance(1.0, 10, &x, &y, MomentMethod::ExactEnum).unwrap();
        let k1 = arccos_kernel(1, &x, &y).unwrap();
        let k2 = arccos_kernel(2, &x, &y).unwrap();
        assert!((t.distance - (k2 - k1 * k1) / (9.0 * 10.0)).abs() < 1e-15);
    }

    #[test]
    fn eq4_values() {
        assert!((approx_distance(1.0, 7, 50) - (1.0 - 1.0 / (PI * PI)) / 28.0).abs() < 1e-15);
        let v = approx_distance(0.0625, 128, 784);
        let want = (0.25 * 9.0 + 6.125 * (1.0 - 1.0 / (PI * PI))) / 3136.0;
        assert!((v - want).abs() < 1e-15);
        assert!((v - 2.47e-3).abs() < 0.01e-3);
    }

    #[test]
    fn optimal_connectivity_values() {
        let o = optimal_connectivity(4.0 * 784.0, 784);
        assert!((o.p_star - 1.0).abs() < 1e-15 && o.in_regime);
        let o = optimal_connectivity(8.0, 784);
        assert!((o.p_star - 0.0505).abs() < 5e-5);
        assert!((o.n_star - 158.4).abs() < 0.1);
        let o2 = optimal_connectivity(16.0, 784);
        assert!((o2.p_star / o.p_star - 2f64.sqrt()).abs() < 1e-12);
        assert!(!optimal_connectivity(8000.0, 784).in_regime);
    }

    #[test]
    fn pairs_are_distinct() {
        let p = sample_pairs(10, 45, 3).unwrap();
        let set: HashSet<_> = p.iter().collect();
        assert_eq!(set.len(), 45);
        assert!(p.iter().all(|(i, j)| i < j));
        assert!(matches!(sample_pairs(10, 46, 3), Err(KernelError::InsufficientData { .. })));
    }
}
