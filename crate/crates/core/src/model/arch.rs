use super::ModelError;
use crate::allocator::{AllocationPlan, LayerSizes};
use crate::mask::MaskMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative used in backprop; `H(0) = 0` for ReLU.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// How weights are drawn and scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases, no
    /// scaling in the forward pass (the usual framework default).
    Standard,
    /// `N(0, 1/p)` weights with `p` the layer connectivity, and an explicit
    /// `1/sqrt(fan_in)` factor on every pre-activation.
    Ntk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseSpec {
    /// Kept weights per weight matrix, input layer first.
    pub keep: Vec<u64>,
    pub mask_seed: u64,
    #[serde(default = "default_mode")]
    pub mode: MaskMode,
}

fn default_mode() -> MaskMode {
    MaskMode::AllDims
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dense,
    Sparse(SparseSpec),
    /// Every weight matrix `d_i x d_o` becomes a product of `d_i x r` and
    /// `r x d_o` with no nonlinearity in between; one rank per matrix.
    LinearBottleneck { ranks: Vec<usize> },
    /// Two hidden layers where the second is narrower than the first.
    NonlinearBottleneck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub use_biases: bool,
    pub parameterization: Parameterization,
    pub variant: Variant,
    /// Multiply the init scale of sparse layers by `1/sqrt(p)` under the
    /// standard parameterization. Off by default.
    #[serde(default)]
    pub rescale_sparse_init: bool,
}

/// One linear map in the resolved network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub bias: bool,
    /// Kept weight count when the layer is masked.
    pub keep: Option<usize>,
}

impl LayerSpec {
    pub fn size(&self) -> usize {
        self.in_dim * self.out_dim
    }

    pub fn kept(&self) -> usize {
        self.keep.unwrap_or(self.size())
    }

    pub fn connectivity(&self) -> f64 {
        self.kept() as f64 / self.size() as f64
    }
}

impl MlpArch {
    /// Dense one-hidden-layer network.
    pub fn one_hidden(
        input_dim: usize,
        width: usize,
        output_dim: usize,
        activation: Activation,
        parameterization: Parameterization,
        use_biases: bool,
    ) -> Self {
        Self {
            input_dim,
            hidden_widths: vec![width],
            output_dim,
            activation,
            use_biases,
            parameterization,
            variant: Variant::Dense,
            rescale_sparse_init: false,
        }
    }

    /// The 2-layer ReLU model without biases used in the kernel analysis.
    pub fn ntk_two_layer(input_dim: usize, width: usize, output_dim: usize) -> Self {
        Self::one_hidden(
            input_dim,
            width,
            output_dim,
            Activation::Relu,
            Parameterization::Ntk,
            false,
        )
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Turns a dense architecture into a sparse one following `plan`, whose
    /// layers must match [`MlpArch::weight_sizes`].
    pub fn sparsified(mut self, plan: &AllocationPlan, mask_seed: u64) -> Result<Self, ModelError> {
        let sizes = self.weight_sizes();
        let plan_sizes: Vec<u64> = plan.layers().iter().map(|l| l.size).collect();
        if plan_sizes != sizes.counts() {
            return Err(ModelError::InvalidArch(format!(
                "plan layer sizes {plan_sizes:?} do not match the architecture {:?}",
                sizes.counts()
            )));
        }
        self.variant = Variant::Sparse(SparseSpec {
            keep: plan.keep_counts(),
            mask_seed,
            mode: MaskMode::AllDims,
        });
        self.validate()?;
        Ok(self)
    }

    /// Widths of the unfactored chain `input, hidden..., output`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_widths.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_widths);
        d.push(self.output_dim);
        d
    }

    /// Weight counts of the unfactored weight matrices, named `fc1`, `fc2`, ...
    pub fn weight_sizes(&self) -> LayerSizes {
        let dims = self.dims();
        let counts: Vec<u64> = dims.windows(2).map(|w| (w[0] * w[1]) as u64).collect();
        let names = (1..=counts.len()).map(|i| format!("fc{i}")).collect();
        LayerSizes::new(names, counts).expect("validated dims are positive")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidArch(m));
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return bad("all dimensions must be at least 1".into());
        }
        if !(1..=2).contains(&self.hidden_widths.len()) {
            return bad(format!(
                "expected 1 or 2 hidden layers, got {}",
                self.hidden_widths.len()
            ));
        }
        let dims = self.dims();
        let matrices = dims.len() - 1;
        match &self.variant {
            Variant::Dense => {}
            Variant::Sparse(s) => {
                if s.keep.len() != matrices {
                    return bad(format!("{} keep counts for {matrices} matrices", s.keep.len()));
                }
                for (i, (&k, w)) in s.keep.iter().zip(dims.windows(2)).enumerate() {
                    if k > (w[0] * w[1]) as u64 {
                        return bad(format!("matrix {i} keeps {k} of {} weights", w[0] * w[1]));
                    }
                }
            }
            Variant::LinearBottleneck { ranks } => {
                if ranks.len() != matrices {
                    return bad(format!("{} ranks for {matrices} matrices", ranks.len()));
                }
                for (i, (&r, w)) in ranks.iter().zip(dims.windows(2)).enumerate() {
                    if r == 0 || r > w[0].min(w[1]) {
                        return Err(ModelError::RankTooLarge {
                            layer: i,
                            rank: r,
                            max: w[0].min(w[1]),
                        });
                    }
                }
            }
            Variant::NonlinearBottleneck => {
                if self.hidden_widths.len() != 2 {
                    return bad("a nonlinear bottleneck needs two hidden layers".into());
                }
            }
        }
        Ok(())
    }

    /// The sequence of linear maps actually executed.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>, ModelError> {
        self.validate()?;
        let dims = self.dims();
        let last = dims.len() - 2;
        let mut specs = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            let act = if i == last {
                Activation::Linear
            } else {
                self.activation
            };
            match &self.variant {
                Variant::LinearBottleneck { ranks } => {
                    specs.push(LayerSpec {
                        in_dim: w[0],
                        out_dim: ranks[i],
                        activation: Activation::Linear,
                        bias: false,
                        keep: None,
                    });
                    specs.push(LayerSpec {
                        in_dim: ranks[i],
                        out_dim: w[1],
                        activation: act,
                        bias: self.use_biases,
                        keep: None,
                    });
                }
                Variant::Sparse(s) => specs.push(LayerSpec {
                    in_dim: w[0],
                    out_dim: w[1],
                    activation: act,
                    bias: self.use_biases,
                    keep: Some(s.keep[i] as usize).filter(|&k| k < w[0] * w[1]),
                }),
                Variant::Dense | Variant::NonlinearBottleneck => specs.push(LayerSpec {
                    in_dim: w[0],
                    out_dim: w[1],
                    activation: act,
                    bias: self.use_biases,
                    keep: None,
                }),
            }
        }
        Ok(specs)
    }

    /// Trainable weight entries: kept mask positions for sparse layers and
    /// both factors for bottlenecks. Biases are not counted.
    pub fn param_count(&self) -> Result<u64, ModelError> {
        Ok(self.layer_specs()?.iter().map(|s| s.kept() as u64).sum())
    }

    /// Connectivity of each unfactored weight matrix.
    pub fn layer_connectivities(&self) -> Vec<f64> {
        let sizes = self.weight_sizes();
        match &self.variant {
            Variant::Sparse(s) => s
                .keep
                .iter()
                .zip(sizes.counts())
                .map(|(&k, &c)| k as f64 / c as f64)
                .collect(),
            _ => vec![1.0; sizes.len()],
        }
    }

    /// Kept weights over the weights of the dense network of the same width.
    pub fn overall_connectivity(&self) -> Result<f64, ModelError> {
        Ok(self.param_count()? as f64 / self.weight_sizes().total() as f64)
    }
}

/// Which dimension [`solve_width_for_budget`] is free to choose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeDim {
    /// All hidden widths together (dense and sparse families).
    Width,
    /// The shared rank of a linear-bottleneck network; each matrix uses
    /// `min(rank, d_i, d_o)`.
    BottleneckRank,
    /// The second (narrow) hidden width of a nonlinear bottleneck.
    NonlinearBottleneck,
}

impl FreeDim {
    pub fn of(arch: &MlpArch) -> Self {
        match arch.variant {
            Variant::LinearBottleneck { .. } => FreeDim::BottleneckRank,
            Variant::NonlinearBottleneck => FreeDim::NonlinearBottleneck,
            Variant::Dense | Variant::Sparse(_) => FreeDim::Width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthSolution {
    pub value: usize,
    pub count: u64,
    /// `budget - count`; zero when the budget is hit exactly.
    pub residual: u64,
}

/// Architecture obtained by setting the free dimension of `template`.
pub fn with_free_dim(template: &MlpArch, free: FreeDim, value: usize) -> MlpArch {
    let mut arch = template.clone();
    match free {
        FreeDim::Width => {
            for w in &mut arch.hidden_widths {
                *w = value;
            }
            arch.variant = Variant::Dense;
        }
        FreeDim::BottleneckRank => {
            let dims = arch.dims();
            let ranks = dims.windows(2).map(|w| value.min(w[0]).min(w[1])).collect();
            arch.variant = Variant::LinearBottleneck { ranks };
        }
        FreeDim::NonlinearBottleneck => {
            arch.hidden_widths[1] = value;
            arch.variant = Variant::NonlinearBottleneck;
        }
    }
    arch
}

/// Largest value of the template's free dimension whose dense weight count
/// does not exceed `budget`.
pub fn solve_width_for_budget(template: &MlpArch, budget: u64) -> Result<WidthSolution, ModelError> {
    let free = FreeDim::of(template);
    if free == FreeDim::NonlinearBottleneck && template.hidden_widths.len() != 2 {
        return Err(ModelError::InvalidArch(
            "a nonlinear bottleneck needs two hidden layers".into(),
        ));
    }
    let count = |v: usize| -> u64 {
        with_free_dim(template, free, v)
            .param_count()
            .expect("free-dimension arch is valid")
    };
    let upper = match free {
        FreeDim::BottleneckRank => {
            let dims = template.dims();
            dims.windows(2).map(|w| w[0].min(w[1])).max().unwrap_or(1)
        }
        _ => usize::MAX / 4,
    };
    let smallest = count(1);
    if smallest > budget {
        return Err(ModelError::BudgetTooSmall {
            budget,
            minimum: smallest,
        });
    }
    // exponential then binary search on the monotone count
    let mut lo = 1usize;
    let mut hi = 2usize.min(upper);
    while hi < upper && count(hi) <= budget {
        lo = hi;
        hi = (hi * 2).min(upper);
    }
    if count(hi) <= budget {
        lo = hi;
    } else {
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if count(mid) <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let c = count(lo);
    Ok(WidthSolution {
        value: lo,
        count: c,
        residual: budget - c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mnist(width: usize) -> MlpArch {
        MlpArch::one_hidden(784, width, 10, Activation::Relu, Parameterization::Standard, true)
    }

    #[test]
    fn dense_counts() {
        assert_eq!(mnist(5).param_count().unwrap(), 3970);
        assert_eq!(mnist(8).param_count().unwrap(), 6352);
    }

    #[test]
    fn bottleneck_count() {
        let arch = MlpArch::one_hidden(784, 64, 10, Activation::Relu, Parameterization::Standard, false)
            .with_variant(Variant::LinearBottleneck { ranks: vec![16, 10] });
        let specs = arch.layer_specs().unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[0].size() + specs[1].size(), 784 * 16 + 16 * 64);
        assert_eq!(784 * 16 + 16 * 64, 13568);
        assert!(784 * 16 + 16 * 64 < 784 * 64);
        assert_eq!(specs[0].activation, Activation::Linear);
        assert_eq!(specs[1].activation, Activation::Relu);
        assert_eq!(specs[3].activation, Activation::Linear);
    }

    #[test]
    fn rank_too_large() {
        let arch = mnist(64).with_variant(Variant::LinearBottleneck { ranks: vec![16, 11] });
        assert!(matches!(
            arch.validate(),
            Err(ModelError::RankTooLarge { layer: 1, rank: 11, max: 10 })
        ));
    }

    #[test]
    fn solve_width() {
        let s = solve_width_for_budget(&mnist(1), 3970).unwrap();
        assert_eq!((s.value, s.residual), (5, 0));
        let s = solve_width_for_budget(&mnist(1), 6352).unwrap();
        assert_eq!((s.value, s.residual), (8, 0));
        let s = solve_width_for_budget(&mnist(1), 4000).unwrap();
        assert_eq!((s.value, s.count, s.residual), (5, 3970, 30));
        assert!(matches!(
            solve_width_for_budget(&mnist(1), 793),
            Err(ModelError::BudgetTooSmall { minimum: 794, .. })
        ));
    }

    #[test]
    fn solve_bottleneck_rank() {
        let template = MlpArch::one_hidden(784, 64, 10, Activation::Relu, Parameterization::Standard, false)
            .with_variant(Variant::LinearBottleneck { ranks: vec![1, 1] });
        // rank r costs r*(784+64) + min(r,10)*(64+10)
        let s = solve_width_for_budget(&template, 16 * 848 + 10 * 74).unwrap();
        assert_eq!((s.value, s.residual), (16, 0));
        let s = solve_width_for_budget(&template, 16 * 848 + 10 * 74 + 100).unwrap();
        assert_eq!((s.value, s.residual), (16, 100));
    }

    #[test]
    fn solve_nonlinear_bottleneck() {
        let mut t = MlpArch::one_hidden(784, 64, 10, Activation::Relu, Parameterization::Standard, true);
        t.hidden_widths = vec![67, 1];
        t.variant = Variant::NonlinearBottleneck;
        let budget = 784 * 64 + 64 * 64 + 64 * 10;
        let s = solve_width_for_budget(&t, budget).unwrap();
        // 784*67 + 67*b + b*10 <= 54912
        assert_eq!(s.value, (budget - 784 * 67) as usize / 77);
        assert_eq!(s.count + s.residual, budget);
    }

    #[test]
    fn sparse_variant_counts_kept_weights() {
        let arch = mnist(80);
        let plan = crate::allocator::staggered_allocate(&arch.weight_sizes(), 63520 - 3970).unwrap();
        let sparse = arch.sparsified(&plan, 1).unwrap();
        assert_eq!(sparse.param_count().unwrap(), 3970);
        assert!((sparse.overall_connectivity().unwrap() - 0.0625).abs() < 1e-12);
        let specs = sparse.layer_specs().unwrap();
        assert_eq!(specs[0].keep, Some(3170));
        assert_eq!(specs[1].keep, None);
    }

    #[test]
    fn invalid_archs() {
        let mut a = mnist(5);
        a.hidden_widths = vec![];
        assert!(a.validate().is_err());
        let mut a = mnist(5);
        a.hidden_widths = vec![0];
        assert!(a.validate().is_err());
        let a = mnist(5).with_variant(Variant::NonlinearBottleneck);
        assert!(a.validate().is_err());
    }
}
