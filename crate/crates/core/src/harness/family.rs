use super::HarnessError;
use crate::allocator::{
    plan_from_layer_connectivities, proportional_allocate, staggered_allocate, AllocError, AllocationPlan,
};
use crate::model::{solve_width_for_budget, ModelError, with_free_dim, Activation, FreeDim, MlpArch, Parameterization, Variant};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Sparse,
    Dense,
    LinearBottleneck,
    NonlinearBottleneck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRule {
    #[default]
    Staggered,
    Proportional,
}

fn default_input() -> usize {
    784
}

fn default_output() -> usize {
    10
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_parameterization() -> Parameterization {
    Parameterization::Standard
}

fn yes() -> bool {
    true
}

/// A set of one-hidden-layer networks sharing a weight budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: FamilyKind,
    /// Counted weights (biases excluded) of every member.
    pub budget: u64,
    /// Hidden widths; the smallest is the dense baseline.
    pub widths: Vec<usize>,
    /// When set, every sparse width is crossed with these last-layer
    /// connectivities instead of using `allocation`.
    #[serde(default)]
    pub last_layer_connectivity: Option<Vec<f64>>,
    #[serde(default)]
    pub allocation: AllocationRule,
    #[serde(default = "default_input")]
    pub input_dim: usize,
    #[serde(default = "default_output")]
    pub output_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_parameterization")]
    pub parameterization: Parameterization,
    #[serde(default = "yes")]
    pub use_biases: bool,
    #[serde(default)]
    pub rescale_sparse_init: bool,
}

impl FamilySpec {
    pub fn baseline_width(&self) -> usize {
        self.widths.iter().copied().min().unwrap_or(0)
    }

    fn dense(&self, width: usize) -> MlpArch {
        let mut arch = MlpArch::one_hidden(
            self.input_dim,
            width,
            self.output_dim,
            self.activation,
            self.parameterization,
            self.use_biases,
        );
        arch.rescale_sparse_init = self.rescale_sparse_init;
        arch
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.widths.is_empty() {
            return bad("widths must not be empty");
        }
        if self.widths.contains(&0) {
            return bad("widths must be positive");
        }
        let mut sorted = self.widths.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.widths.len() {
            return bad("widths must be distinct");
        }
        if self.budget == 0 {
            return bad("budget must be positive");
        }
        if let Some(grid) = &self.last_layer_connectivity {
            if grid.is_empty() {
                return bad("the last-layer connectivity grid must not be empty");
            }
            if self.family != FamilyKind::Sparse {
                return bad("a last-layer connectivity grid needs the sparse family");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub width: usize,
    /// Requested last-layer connectivity, when the family crosses a grid.
    pub last_layer_connectivity: Option<f64>,
    /// Fully resolved arch; sparse members carry mask seed 0 until a cell
    /// assigns one.
    pub arch: MlpArch,
    pub param_count: u64,
    /// `budget - param_count`.
    pub residual: u64,
    pub connectivity: f64,
    pub layer_connectivity: Vec<f64>,
}

/// A grid point rejected by the allocator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidCell {
    pub width: usize,
    pub last_layer_connectivity: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub members: Vec<FamilyMember>,
    pub invalid: Vec<InvalidCell>,
}

fn member(
    width: usize,
    llc: Option<f64>,
    arch: MlpArch,
    budget: u64,
) -> Result<FamilyMember, HarnessError> {
    let param_count = arch.param_count()?;
    Ok(FamilyMember {
        width,
        last_layer_connectivity: llc,
        connectivity: arch.overall_connectivity()?,
        layer_connectivity: arch.layer_connectivities(),
        arch,
        param_count,
        residual: budget.saturating_sub(param_count),
    })
}

fn sparse_arch(dense: MlpArch, plan: &AllocationPlan) -> Result<MlpArch, HarnessError> {
    if plan.is_dense() {
        Ok(dense)
    } else {
        Ok(dense.sparsified(plan, 0)?)
    }
}

/// Resolves every member of a fixed-budget family, widths in ascending order.
pub fn build_family(spec: &FamilySpec) -> Result<Family, HarnessError> {
    spec.validate()?;
    let mut widths = spec.widths.clone();
    widths.sort_unstable();
    let mut members = Vec::new();
    let mut invalid = Vec::new();
    for &width in &widths {
        let dense = spec.dense(width);
        match spec.family {
            FamilyKind::Dense => members.push(member(width, None, dense, spec.budget)?),
            FamilyKind::Sparse => {
                let sizes = dense.weight_sizes();
                let count = sizes.total();
                if count < spec.budget {
                    return Err(HarnessError::WidthBelowBudget {
                        width,
                        count,
                        budget: spec.budget,
                    });
                }
                match &spec.last_layer_connectivity {
                    None => {
                        let freeze = count - spec.budget;
                        let plan = match spec.allocation {
                            AllocationRule::Staggered => staggered_allocate(&sizes, freeze)?,
                            AllocationRule::Proportional => proportional_allocate(&sizes, freeze)?,
                        };
                        members.push(member(width, None, sparse_arch(dense, &plan)?, spec.budget)?);
                    }
                    Some(grid) => {
                        for &llc in grid {
                            match plan_from_layer_connectivities(&sizes, spec.budget, llc) {
                                Ok(plan) => members.push(member(
                                    width,
                                    Some(llc),
                                    sparse_arch(dense.clone(), &plan)?,
                                    spec.budget,
                                )?),
                                Err(e @ AllocError::InvalidCombination { .. }) => invalid.push(InvalidCell {
                                    width,
                                    last_layer_connectivity: llc,
                                    reason: e.to_string(),
                                }),
                                Err(e) => return Err(e.into()),
                            }
                        }
                    }
                }
            }
            FamilyKind::LinearBottleneck => {
                let template = dense.with_variant(Variant::LinearBottleneck { ranks: vec![1, 1] });
                let arch = if width == spec.baseline_width() {
                    spec.dense(width)
                } else {
                    let sol = solve_width_for_budget(&template, spec.budget)?;
                    with_free_dim(&template, FreeDim::BottleneckRank, sol.value)
                };
                members.push(member(width, None, arch, spec.budget)?);
            }
            FamilyKind::NonlinearBottleneck => {
                let mut template = spec.dense(width);
                template.variant = Variant::NonlinearBottleneck;
                let arch = if width == spec.baseline_width() {
                    template.hidden_widths = vec![width, width];
                    let count = template.param_count()?;
                    if count > spec.budget {
                        return Err(ModelError::BudgetTooSmall {
                            budget: spec.budget,
                            minimum: count,
                        }
                        .into());
                    }
                    template
                } else {
                    template.hidden_widths = vec![width, 1];
                    let sol = solve_width_for_budget(&template, spec.budget)?;
                    with_free_dim(&template, FreeDim::NonlinearBottleneck, sol.value)
                };
                members.push(member(width, None, arch, spec.budget)?);
            }
        }
    }
    Ok(Family { members, invalid })
}
