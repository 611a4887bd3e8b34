//! The optimization pipeline: rewrites, then filter placement.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::{OptimizerConfig, SelectivityModel, Statistics};
use crate::dp::{self, DpStats};
use crate::ir::{validate, PlanTree, Violation};
use crate::placement::{apply_placement, Placement, PlacementContext, PlacementError};
use crate::pullup::{pull_up, PullupStats};
use crate::rewrite::{simplify_to_fixed_point, RewriteError, TraceEvent};
use crate::IrError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// The parsed plan, untouched.
    None,
    /// Rewrites, then the greedy pull-up pass.
    Pullup,
    /// Rewrites, then cost-based placement.
    CostModel,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::None, Strategy::Pullup, Strategy::CostModel];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Pullup => "pullup",
            Strategy::CostModel => "cost_model",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Strategy::None),
            "pullup" => Ok(Strategy::Pullup),
            "cost_model" | "cost-model" | "costmodel" => Ok(Strategy::CostModel),
            other => Err(alloc::format!(
                "unknown strategy `{other}` (expected none, pullup or cost_model)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("invalid input plan: {0:?}")]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimized {
    pub strategy: Strategy,
    pub tree: PlanTree,
    pub trace: Vec<TraceEvent>,
    /// Placement realized by `tree` with its estimate. Always present for the
    /// cost-based strategy; for the others only when statistics suffice.
    pub placement: Option<Placement>,
    pub pullup: Option<PullupStats>,
    pub dp: Option<DpStats>,
    pub warnings: Vec<String>,
}

pub fn optimize(
    tree: &PlanTree,
    strategy: Strategy,
    model: &SelectivityModel,
    stats: &Statistics,
    config: &OptimizerConfig,
) -> Result<Optimized, OptimizeError> {
    let violations = validate(tree);
    if !violations.is_empty() {
        return Err(OptimizeError::Invalid(violations));
    }
    let estimate_of = |base: &PlanTree, placed: &PlanTree| {
        PlacementContext::new(base, model, stats, config)
            .and_then(|ctx| ctx.placement_of(placed))
            .ok()
    };
    match strategy {
        Strategy::None => Ok(Optimized {
            strategy,
            placement: estimate_of(tree, tree),
            tree: tree.clone(),
            trace: Vec::new(),
            pullup: None,
            dp: None,
            warnings: Vec::new(),
        }),
        Strategy::Pullup => {
            let (simple, trace) = simplify_to_fixed_point(tree)?;
            let (pulled, ps) = pull_up(&simple)?;
            Ok(Optimized {
                strategy,
                placement: estimate_of(&simple, &pulled),
                tree: pulled,
                trace,
                pullup: Some(ps),
                dp: None,
                warnings: Vec::new(),
            })
        }
        Strategy::CostModel => {
            let (simple, trace) = simplify_to_fixed_point(tree)?;
            let ctx = match PlacementContext::new(&simple, model, stats, config) {
                Err(PlacementError::TooManyFilters { count, max }) => {
                    let (pulled, ps) = pull_up(&simple)?;
                    return Ok(Optimized {
                        strategy,
                        tree: pulled,
                        trace,
                        placement: None,
                        pullup: Some(ps),
                        dp: None,
                        warnings: alloc::vec![alloc::format!(
                            "{count} semantic filters exceed the placer limit of {max}; used pull-up instead"
                        )],
                    });
                }
                other => other?,
            };
            let result = dp::place(&ctx)?;
            let placed = apply_placement(&simple, &ctx, &result.placement)?;
            Ok(Optimized {
                strategy,
                tree: placed,
                trace,
                placement: Some(result.placement),
                pullup: None,
                dp: Some(result.stats),
                warnings: Vec::new(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::tests::{two_sided, uniform_stats};

    #[test]
    fn strategies_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("greedy".parse::<Strategy>().is_err());
    }

    #[test]
    fn cost_model_never_estimates_worse_than_pullup() {
        let (tree, _) = two_sided();
        let stats = uniform_stats(&["books", "reviews"], 1000.0);
        let model = SelectivityModel::default();
        for alpha in [1e-7, 1e-3, 0.1, 1.0, 10.0] {
            let cfg = OptimizerConfig {
                alpha,
                ..Default::default()
            };
            let dp = optimize(&tree, Strategy::CostModel, &model, &stats, &cfg).unwrap();
            let pu = optimize(&tree, Strategy::Pullup, &model, &stats, &cfg).unwrap();
            let none = optimize(&tree, Strategy::None, &model, &stats, &cfg).unwrap();
            let d = dp.placement.unwrap().estimate.total;
            assert!(d <= pu.placement.unwrap().estimate.total);
            assert!(d <= none.placement.unwrap().estimate.total);
            assert!(validate(&dp.tree).is_empty());
        }
    }
}
