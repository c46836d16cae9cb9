//! Constraint rules, geometric metrics, and model evaluation.

mod chamfer;
mod modes;

pub use chamfer::{chamfer, distribution_metrics, DistributionMetrics};
pub use modes::{eval_scenes, EvalCase, EvalMode, EvalReport, FamilyRate, ModeReport};

use crate::branches::LayoutVector;
use crate::graph::Predicate;
use crate::{Error, Result};

/// Margins for the spatial rules. All comparisons are strict, so ties at a
/// margin never satisfy a rule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleThresholds {
    /// Positional margin for left/right and front/behind.
    pub margin: f64,
    /// Relative margin for volume and height comparisons.
    pub volume_margin: f64,
    /// Center distance bound for close-by.
    pub close_dist: f64,
    /// Mirror-placement and size tolerance for symmetrical-to.
    pub sym_tol: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        RuleThresholds { margin: 0.05, volume_margin: 0.1, close_dist: 0.3, sym_tol: 0.08 }
    }
}

/// Does `pred(a, b)` hold geometrically? Defined for the six spatial
/// families; same-as is a shape-identity relation checked elsewhere.
pub fn check_constraint(
    pred: Predicate,
    a: &LayoutVector,
    b: &LayoutVector,
    th: &RuleThresholds,
) -> Result<bool> {
    let ok = match pred {
        Predicate::LeftOf => a.t[0] < b.t[0] - th.margin,
        Predicate::RightOf => a.t[0] > b.t[0] + th.margin,
        Predicate::FrontOf => a.t[2] > b.t[2] + th.margin,
        Predicate::Behind => a.t[2] < b.t[2] - th.margin,
        Predicate::BiggerThan => a.volume() > b.volume() * (1.0 + th.volume_margin),
        Predicate::SmallerThan => b.volume() > a.volume() * (1.0 + th.volume_margin),
        Predicate::TallerThan => a.s[1] > b.s[1] * (1.0 + th.volume_margin),
        Predicate::ShorterThan => b.s[1] > a.s[1] * (1.0 + th.volume_margin),
        Predicate::CloseBy => dist(a.t, b.t) < th.close_dist,
        Predicate::SymmetricalTo => {
            let mirrored = [-a.t[0], a.t[1], a.t[2]];
            let size_gap = (0..3).map(|k| (a.s[k] - b.s[k]).abs()).fold(0.0, f64::max);
            dist(mirrored, b.t) < th.sym_tol && size_gap < th.sym_tol
        }
        Predicate::SameAs => {
            return Err(Error::Metric(
                "same-as is a shape identity, not a layout rule".into(),
            ))
        }
    };
    Ok(ok)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum::<f64>().sqrt()
}
