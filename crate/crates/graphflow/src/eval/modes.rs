//! Constraint-satisfaction scoring.
//!
//! A case pairs the conditioning graph with the geometry some generator
//! produced for it. Each canonically-directed edge is scored once; the
//! inverse direction holds iff the forward one does, so scoring both would
//! only double the counts.

use super::{check_constraint, RuleThresholds};
use crate::branches::LayoutVector;
use crate::graph::{Family, Predicate, SceneGraph, VoxelGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Generation,
    RelationshipChange,
    NodeAddition,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] =
        [EvalMode::Generation, EvalMode::RelationshipChange, EvalMode::NodeAddition];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Generation => "generation-only",
            EvalMode::RelationshipChange => "relationship-change",
            EvalMode::NodeAddition => "node-addition",
        }
    }

    pub fn from_name(s: &str) -> Result<EvalMode> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown eval mode \"{s}\"")))
    }
}

/// One generated scene to score against its conditioning graph.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub graph: SceneGraph,
    pub layouts: Vec<LayoutVector>,
    /// Decoded occupancies; enables the same-as identity check.
    pub grids: Option<Vec<VoxelGrid>>,
}

#[derive(Debug, Clone, Copy)]
pub struct FamilyRate {
    pub family: Family,
    pub satisfied: usize,
    pub total: usize,
}

impl FamilyRate {
    /// None when the family never occurred.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.satisfied as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ModeReport {
    pub mode: EvalMode,
    /// Spatial families in `Family::SPATIAL` order.
    pub families: Vec<FamilyRate>,
    /// Same-as pairs whose grids matched exactly / checked.
    pub same_as_exact: usize,
    pub same_as_total: usize,
    pub scenes: usize,
}

impl ModeReport {
    pub fn overall(&self) -> Option<f64> {
        let total: usize = self.families.iter().map(|f| f.total).sum();
        let sat: usize = self.families.iter().map(|f| f.satisfied).sum();
        (total > 0).then(|| sat as f64 / total as f64)
    }
}

/// Score every canonical edge of every case.
pub fn eval_scenes(
    mode: EvalMode,
    cases: &[EvalCase],
    th: &RuleThresholds,
) -> Result<ModeReport> {
    let mut families: Vec<FamilyRate> = Family::SPATIAL
        .iter()
        .map(|&family| FamilyRate { family, satisfied: 0, total: 0 })
        .collect();
    let mut same_as_exact = 0;
    let mut same_as_total = 0;

    for (ci, case) in cases.iter().enumerate() {
        if case.layouts.len() != case.graph.len() {
            return Err(Error::Metric(format!(
                "case {ci}: {} layouts for {} nodes",
                case.layouts.len(),
                case.graph.len()
            )));
        }
        if let Some(g) = &case.grids {
            if g.len() != case.graph.len() {
                return Err(Error::Metric(format!(
                    "case {ci}: {} grids for {} nodes",
                    g.len(),
                    case.graph.len()
                )));
            }
        }
        for e in case.graph.edges() {
            if e.src > e.dst {
                continue;
            }
            if e.pred == Predicate::SameAs {
                if let Some(grids) = &case.grids {
                    same_as_total += 1;
                    if grids[e.src] == grids[e.dst] {
                        same_as_exact += 1;
                    }
                }
                continue;
            }
            let slot = Family::SPATIAL
                .iter()
                .position(|&f| f == e.pred.family())
                .expect("spatial predicate");
            families[slot].total += 1;
            if check_constraint(e.pred, &case.layouts[e.src], &case.layouts[e.dst], th)? {
                families[slot].satisfied += 1;
            }
        }
    }

    Ok(ModeReport { mode, families, same_as_exact, same_as_total, scenes: cases.len() })
}

/// Family-by-mode table plus free-form aux lines, rendered as TSV.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub modes: Vec<ModeReport>,
    pub aux: Vec<(String, String)>,
}

impl EvalReport {
    pub fn push_aux(&mut self, key: &str, value: String) {
        self.aux.push((key.to_string(), value));
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("family");
        for m in &self.modes {
            out.push('\t');
            out.push_str(m.mode.name());
        }
        out.push('\n');
        for (row, &family) in Family::SPATIAL.iter().enumerate() {
            out.push_str(family.label());
            for m in &self.modes {
                out.push('\t');
                match m.families[row].rate() {
                    Some(r) => out.push_str(&format!("{r:.4}")),
                    None => out.push('-'),
                }
            }
            out.push('\n');
        }
        out.push('\n');
        for m in &self.modes {
            out.push_str(&format!("scenes:{}\t{}\n", m.mode.name(), m.scenes));
            if m.same_as_total > 0 {
                out.push_str(&format!(
                    "same-as:{}\t{:.4}\n",
                    m.mode.name(),
                    m.same_as_exact as f64 / m.same_as_total as f64
                ));
            }
        }
        for (k, v) in &self.aux {
            out.push_str(&format!("{k}\t{v}\n"));
        }
        out
    }
}
