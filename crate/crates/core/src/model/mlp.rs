use super::arch::{Activation, LayerSpec, MlpArch, Parameterization, Variant};
use super::matrix::{axpy, dot, gemm, Mat, View};
use super::ModelError;
use crate::mask::{sample_mask, MaskHeader, SparsityMask};
use crate::rng::{derive_seed, rng_from_seed};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Masked layers below this connectivity run gather/scatter kernels over
/// their kept weights instead of dense GEMM.
const SPARSE_PATH_MAX_CONNECTIVITY: f64 = 0.25;

#[derive(Debug, Clone)]
struct KeptIndex {
    /// Offsets into `cols`/`flat` per output row.
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    flat: Vec<usize>,
}

impl KeptIndex {
    fn new(mask: &SparsityMask, in_dim: usize, out_dim: usize) -> Self {
        let flat = mask.kept_indices();
        let mut row_ptr = vec![0usize; out_dim + 1];
        for &f in &flat {
            row_ptr[f / in_dim + 1] += 1;
        }
        for j in 0..out_dim {
            row_ptr[j + 1] += row_ptr[j];
        }
        let cols = flat.iter().map(|&f| f % in_dim).collect();
        Self { row_ptr, cols, flat }
    }
}

/// One linear map `z = scale * W x + b` followed by its activation.
#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
    mask: Option<SparsityMask>,
    kept: Option<KeptIndex>,
    scale: f64,
}

impl Layer {
    fn new(
        spec: LayerSpec,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
        mask: Option<SparsityMask>,
        parameterization: Parameterization,
    ) -> Self {
        let kept = mask.as_ref().map(|m| KeptIndex::new(m, spec.in_dim, spec.out_dim));
        let scale = match parameterization {
            Parameterization::Standard => 1.0,
            Parameterization::Ntk => 1.0 / (spec.in_dim as f64).sqrt(),
        };
        Self {
            spec,
            weights,
            bias,
            mask,
            kept,
            scale,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// Row-major `out x in` weights; masked entries are exactly zero.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mutable weights, for perturbation tests. Writing to masked positions
    /// breaks the sparsity invariant.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    pub fn mask(&self) -> Option<&SparsityMask> {
        self.mask.as_ref()
    }

    /// Forward scaling factor applied to `W x`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Flat indices of trainable weights, or `None` for an unmasked layer.
    pub fn kept_flat(&self) -> Option<&[usize]> {
        self.kept.as_ref().map(|k| k.flat.as_slice())
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }

    fn sparse_path(&self) -> bool {
        self.mask.is_some() && self.spec.connectivity() < SPARSE_PATH_MAX_CONNECTIVITY
    }

    /// Pre-activations for a feature-major batch.
    fn preactivate(&self, x: &Mat) -> Mat {
        let (out_dim, in_dim) = (self.spec.out_dim, self.spec.in_dim);
        let b = x.cols();
        let mut z = Mat::zeros(out_dim, b);
        match (&self.kept, self.sparse_path()) {
            (Some(kept), true) => {
                for j in 0..out_dim {
                    let row = z.row_mut(j);
                    for t in kept.row_ptr[j]..kept.row_ptr[j + 1] {
                        let w = self.weights[kept.flat[t]];
                        axpy(self.scale * w, x.row(kept.cols[t]), row);
                    }
                }
            }
            _ => gemm(
                self.scale,
                View::new(&self.weights, out_dim, in_dim),
                View::new(x.data(), in_dim, b),
                0.0,
                z.data_mut(),
            ),
        }
        if let Some(bias) = &self.bias {
            for (j, &bj) in bias.iter().enumerate() {
                for v in z.row_mut(j) {
                    *v += bj;
                }
            }
        }
        z
    }

    fn activate(&self, z: &Mat) -> Mat {
        self.activate_owned(z.clone())
    }

    fn activate_owned(&self, mut a: Mat) -> Mat {
        let act = self.spec.activation;
        if act != Activation::Linear {
            for v in a.data_mut() {
                *v = act.apply(*v);
            }
        }
        a
    }

    /// Weight and bias gradients from `dz`, plus `dx` when requested.
    fn backward(&self, x: &Mat, dz: &Mat, need_dx: bool) -> (LayerGrad, Option<Mat>) {
        let (out_dim, in_dim) = (self.spec.out_dim, self.spec.in_dim);
        let b = x.cols();
        let weights = match (&self.kept, self.sparse_path()) {
            (Some(kept), true) => {
                let mut g = vec![0.0; kept.flat.len()];
                for j in 0..out_dim {
                    let dzj = dz.row(j);
                    for t in kept.row_ptr[j]..kept.row_ptr[j + 1] {
                        g[t] = self.scale * dot(dzj, x.row(kept.cols[t]));
                    }
                }
                g
            }
            (kept, _) => {
                let mut dense = vec![0.0; out_dim * in_dim];
                gemm(
                    self.scale,
                    View::new(dz.data(), out_dim, b),
                    View::new(x.data(), in_dim, b).t(),
                    0.0,
                    &mut dense,
                );
                match kept {
                    Some(kept) => kept.flat.iter().map(|&f| dense[f]).collect(),
                    None => dense,
                }
            }
        };
        let bias = self
            .bias
            .as_ref()
            .map(|_| (0..out_dim).map(|j| dz.row(j).iter().sum()).collect());

        let dx = need_dx.then(|| {
            let mut dx = Mat::zeros(in_dim, b);
            match (&self.kept, self.sparse_path()) {
                (Some(kept), true) => {
                    for j in 0..out_dim {
                        let dzj = dz.row(j);
                        for t in kept.row_ptr[j]..kept.row_ptr[j + 1] {
                            let w = self.weights[kept.flat[t]];
                            axpy(self.scale * w, dzj, dx.row_mut(kept.cols[t]));
                        }
                    }
                }
                _ => gemm(
                    self.scale,
                    View::new(&self.weights, out_dim, in_dim).t(),
                    View::new(dz.data(), out_dim, b),
                    0.0,
                    dx.data_mut(),
                ),
            }
            dx
        });
        (LayerGrad { weights, bias }, dx)
    }
}

/// Gradient (or update) for one layer. For masked layers `weights` holds one
/// entry per kept position, in the order of [`Layer::kept_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.kept_flat().map_or(l.weights.len(), <[usize]>::len)],
                    bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
        }
    }

    /// `self = decay * self + other`, the heavy-ball accumulation.
    pub fn accumulate(&mut self, decay: f64, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x = decay * *x + y;
            }
            if let (Some(ab), Some(bb)) = (a.bias.as_mut(), b.bias.as_ref()) {
                for (x, y) in ab.iter_mut().zip(bb) {
                    *x = decay * *x + y;
                }
            }
        }
    }

    /// Full `out x in` weight gradient of layer `l`, zeros at masked positions.
    pub fn dense_weights(&self, model: &MlpModel, l: usize) -> Vec<f64> {
        let layer = &model.layers[l];
        match layer.kept_flat() {
            None => self.layers[l].weights.clone(),
            Some(flat) => {
                let mut d = vec![0.0; layer.weights.len()];
                for (&f, &g) in flat.iter().zip(&self.layers[l].weights) {
                    d[f] = g;
                }
                d
            }
        }
    }
}

/// Intermediate values of one forward pass.
struct Trace {
    inputs: Vec<Mat>,
    preacts: Vec<Mat>,
    logits: Mat,
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    arch: MlpArch,
    seed: u64,
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Samples all weights from `seed`; masks come from the arch's mask seed.
    pub fn init(arch: &MlpArch, seed: u64) -> Result<Self, ModelError> {
        let specs = arch.layer_specs()?;
        let mut layers = Vec::with_capacity(specs.len());
        for (l, spec) in specs.into_iter().enumerate() {
            let mask = match (&arch.variant, spec.keep) {
                (Variant::Sparse(s), Some(keep)) => Some(sample_mask(
                    &[spec.out_dim, spec.in_dim],
                    keep,
                    s.mode.clone(),
                    derive_seed(s.mask_seed, &[l as u64]),
                )?),
                _ => None,
            };
            let p = spec.connectivity();
            let mut rng = rng_from_seed(derive_seed(seed, &[l as u64]));
            let mut weights = vec![0.0; spec.size()];
            let mut bias = spec.bias.then(|| vec![0.0; spec.out_dim]);
            match arch.parameterization {
                Parameterization::Standard => {
                    let mut bound = 1.0 / (spec.in_dim as f64).sqrt();
                    let bias_bound = bound;
                    if arch.rescale_sparse_init && mask.is_some() {
                        bound /= p.sqrt();
                    }
                    for w in &mut weights {
                        *w = rng.random_range(-bound..bound);
                    }
                    for b in bias.iter_mut().flatten() {
                        *b = rng.random_range(-bias_bound..bias_bound);
                    }
                }
                Parameterization::Ntk => {
                    let sd = 1.0 / p.sqrt();
                    for w in &mut weights {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *w = sd * z;
                    }
                    for b in bias.iter_mut().flatten() {
                        *b = StandardNormal.sample(&mut rng);
                    }
                }
            }
            if let Some(m) = &mask {
                crate::mask::apply_mask_in_place(&mut weights, &[spec.out_dim, spec.in_dim], m)?;
            }
            layers.push(Layer::new(spec, weights, bias, mask, arch.parameterization));
        }
        Ok(Self {
            arch: arch.clone(),
            seed,
            layers,
        })
    }

    /// Builds a model from explicit parameters. Weights are row-major
    /// `out x in` per layer of [`MlpArch::layer_specs`]; masks of a sparse arch
    /// are regenerated and applied.
    pub fn from_parameters(
        arch: &MlpArch,
        weights: Vec<Vec<f64>>,
        biases: Vec<Option<Vec<f64>>>,
    ) -> Result<Self, ModelError> {
        let mut model = Self::init(arch, 0)?;
        if weights.len() != model.layers.len() || biases.len() != model.layers.len() {
            return Err(ModelError::DimensionMismatch {
                expected: model.layers.len(),
                got: weights.len(),
            });
        }
        for (layer, (w, b)) in model.layers.iter_mut().zip(weights.into_iter().zip(biases)) {
            if w.len() != layer.weights.len() {
                return Err(ModelError::DimensionMismatch {
                    expected: layer.weights.len(),
                    got: w.len(),
                });
            }
            if b.as_ref().map(Vec::len) != layer.bias.as_ref().map(Vec::len) {
                return Err(ModelError::InvalidArch("bias layout does not match the arch".into()));
            }
            layer.weights = w;
            layer.bias = b;
            if let Some(m) = &layer.mask {
                crate::mask::apply_mask_in_place(
                    &mut layer.weights,
                    &[layer.spec.out_dim, layer.spec.in_dim],
                    m,
                )?;
            }
        }
        Ok(model)
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn mask_headers(&self) -> Vec<Option<MaskHeader>> {
        self.layers
            .iter()
            .map(|l| l.mask.as_ref().map(|m| m.header().clone()))
            .collect()
    }

    /// Hash over every layer's mask (or its absence).
    pub fn mask_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            match &l.mask {
                Some(m) => h.update(m.fingerprint().as_bytes()),
                None => h.update(b"dense"),
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, x: &Mat) -> Result<(), ModelError> {
        if x.rows() != self.arch.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.arch.input_dim,
                got: x.rows(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &Mat) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = layer.preactivate(&a);
            let next = layer.activate(&z);
            inputs.push(a);
            preacts.push(z);
            a = next;
        }
        Trace {
            inputs,
            preacts,
            logits: a,
        }
    }

    /// Logits (`output_dim x batch`) for a feature-major batch.
    pub fn forward_batch(&self, x: &Mat) -> Result<Mat, ModelError> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            a = layer.activate_owned(layer.preactivate(&a));
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_batch(&Mat::column(x))?.into_vec())
    }

    /// Post-activation output of layer `l` for a feature-major batch.
    pub fn layer_activations(&self, l: usize, x: &Mat) -> Result<Mat, ModelError> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers[..=l] {
            a = layer.activate_owned(layer.preactivate(&a));
        }
        Ok(a)
    }

    fn check_labels(&self, x: &Mat, labels: &[usize]) -> Result<(), ModelError> {
        self.check_input(x)?;
        if labels.len() != x.cols() {
            return Err(ModelError::DimensionMismatch {
                expected: x.cols(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.arch.output_dim) {
            return Err(ModelError::LabelOutOfRange {
                label: bad,
                classes: self.arch.output_dim,
            });
        }
        Ok(())
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, x: &Mat, labels: &[usize]) -> Result<f64, ModelError> {
        self.check_labels(x, labels)?;
        let logits = self.forward_batch(x)?;
        Ok(softmax_cross_entropy(&logits, labels, None))
    }

    /// Mean loss and the number of correctly classified samples.
    pub fn evaluate(&self, x: &Mat, labels: &[usize]) -> Result<(f64, usize), ModelError> {
        self.check_labels(x, labels)?;
        let logits = self.forward_batch(x)?;
        let loss = softmax_cross_entropy(&logits, labels, None);
        let correct = argmax_columns(&logits)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        Ok((loss, correct))
    }

    /// Mean cross-entropy and its exact gradient. Masked positions receive no
    /// gradient entry at all.
    pub fn loss_and_gradients(&self, x: &Mat, labels: &[usize]) -> Result<(f64, Gradients), ModelError> {
        self.check_labels(x, labels)?;
        let trace = self.trace(x);
        let mut dz = Mat::zeros(trace.logits.rows(), trace.logits.cols());
        let loss = softmax_cross_entropy(&trace.logits, labels, Some(&mut dz));

        let mut grads = vec![None; self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (g, dx) = layer.backward(&trace.inputs[l], &dz, l > 0);
            grads[l] = Some(g);
            if let Some(mut dx) = dx {
                let prev = &self.layers[l - 1];
                let act = prev.spec.activation;
                if act != Activation::Linear {
                    for (d, &z) in dx.data_mut().iter_mut().zip(trace.preacts[l - 1].data()) {
                        *d *= act.derivative(z);
                    }
                }
                dz = dx;
            }
        }
        Ok((
            loss,
            Gradients {
                layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            },
        ))
    }

    /// `params += alpha * delta`, touching only trainable positions.
    pub fn add_scaled(&mut self, delta: &Gradients, alpha: f64) {
        for (layer, d) in self.layers.iter_mut().zip(&delta.layers) {
            match &layer.kept {
                Some(kept) => {
                    for (&f, &g) in kept.flat.iter().zip(&d.weights) {
                        layer.weights[f] += alpha * g;
                    }
                }
                None => axpy(alpha, &d.weights, &mut layer.weights),
            }
            if let (Some(b), Some(db)) = (layer.bias.as_mut(), d.bias.as_ref()) {
                axpy(alpha, db, b);
            }
        }
    }

    /// All parameters flattened in layer order (weights then bias).
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub(crate) fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| l.weights.len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum();
        if flat.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + n]);
            at += n;
            if let Some(b) = &mut l.bias {
                let m = b.len();
                b.copy_from_slice(&flat[at..at + m]);
                at += m;
            }
        }
        Ok(())
    }
}

pub fn argmax_columns(logits: &Mat) -> Vec<usize> {
    (0..logits.cols())
        .map(|b| {
            let mut best = 0;
            for c in 1..logits.rows() {
                if logits.get(c, b) > logits.get(best, b) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy; fills `grad` with `(softmax - onehot) / batch`.
fn softmax_cross_entropy(logits: &Mat, labels: &[usize], mut grad: Option<&mut Mat>) -> f64 {
    let (classes, batch) = (logits.rows(), logits.cols());
    let inv_b = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut col = vec![0.0; classes];
    for b in 0..batch {
        for (c, v) in col.iter_mut().enumerate() {
            *v = logits.get(c, b);
        }
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = col.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - col[labels[b]];
        if let Some(g) = grad.as_deref_mut() {
            for (c, &v) in col.iter().enumerate() {
                let p = (v - lse).exp();
                let y = if c == labels[b] { 1.0 } else { 0.0 };
                g.set(c, b, (p - y) * inv_b);
            }
        }
    }
    total * inv_b
}

/// Fresh factors `W1: d_i x d_b` and `W2: d_b x d_o` of a linear bottleneck,
/// drawn with the standard uniform init (fan-in `d_i` and `d_b`). They are
/// trained directly rather than fitted to an existing matrix.
pub fn factorize_layer(d_i: usize, d_o: usize, d_b: usize, seed: u64) -> Result<(Mat, Mat), ModelError> {
    if d_b == 0 || d_b > d_i.min(d_o) {
        return Err(ModelError::RankTooLarge {
            layer: 0,
            rank: d_b,
            max: d_i.min(d_o),
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut draw = |rows: usize, cols: usize, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
        )
    };
    let w1 = draw(d_i, d_b, d_i);
    let w2 = draw(d_b, d_o, d_b);
    Ok((w1, w2))
}
