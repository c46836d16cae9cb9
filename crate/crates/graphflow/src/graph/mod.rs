//! Scene graphs: nodes carrying category, style and per-modality features,
//! plus predicate-labeled directed edges.
//!
//! The stored edge set is normalized: closed under predicate inverses, with
//! same-as closed transitively, no self-edges, and at most one predicate per
//! family per ordered pair.

mod embed;
mod json;
mod oracle;
mod voxel;

pub use embed::{make_node, mask_modalities, synth_features, TEXT_DIM, VISION_DIM};
pub use json::{graph_from_json, graph_to_json, read_graph, write_graph};
pub use oracle::{
    generate_dataset, generate_scene, prototype, prototype_library, style_color, voxel_feature,
    OracleConfig, SceneSample,
};
pub use voxel::{VoxelGrid, GRID};

use crate::{Error, Result};

/// Relation vocabulary. Directed; every predicate declares an inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    LeftOf,
    RightOf,
    FrontOf,
    Behind,
    BiggerThan,
    SmallerThan,
    TallerThan,
    ShorterThan,
    CloseBy,
    SymmetricalTo,
    SameAs,
}

/// Predicate families; at most one predicate per family may label an
/// ordered node pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Lateral,
    Depth,
    Volume,
    Height,
    Proximity,
    Symmetry,
    Identity,
}

impl Family {
    pub const SPATIAL: [Family; 6] = [
        Family::Lateral,
        Family::Depth,
        Family::Volume,
        Family::Height,
        Family::Proximity,
        Family::Symmetry,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Family::Lateral => "left/right",
            Family::Depth => "front/behind",
            Family::Volume => "bigger/smaller",
            Family::Height => "taller/shorter",
            Family::Proximity => "close-by",
            Family::Symmetry => "symmetrical",
            Family::Identity => "same-as",
        }
    }
}

impl Predicate {
    pub const ALL: [Predicate; 11] = [
        Predicate::LeftOf,
        Predicate::RightOf,
        Predicate::FrontOf,
        Predicate::Behind,
        Predicate::BiggerThan,
        Predicate::SmallerThan,
        Predicate::TallerThan,
        Predicate::ShorterThan,
        Predicate::CloseBy,
        Predicate::SymmetricalTo,
        Predicate::SameAs,
    ];

    pub fn index(self) -> usize {
        Predicate::ALL.iter().position(|&p| p == self).unwrap()
    }

    pub fn inverse(self) -> Predicate {
        match self {
            Predicate::LeftOf => Predicate::RightOf,
            Predicate::RightOf => Predicate::LeftOf,
            Predicate::FrontOf => Predicate::Behind,
            Predicate::Behind => Predicate::FrontOf,
            Predicate::BiggerThan => Predicate::SmallerThan,
            Predicate::SmallerThan => Predicate::BiggerThan,
            Predicate::TallerThan => Predicate::ShorterThan,
            Predicate::ShorterThan => Predicate::TallerThan,
            Predicate::CloseBy => Predicate::CloseBy,
            Predicate::SymmetricalTo => Predicate::SymmetricalTo,
            Predicate::SameAs => Predicate::SameAs,
        }
    }

    pub fn family(self) -> Family {
        match self {
            Predicate::LeftOf | Predicate::RightOf => Family::Lateral,
            Predicate::FrontOf | Predicate::Behind => Family::Depth,
            Predicate::BiggerThan | Predicate::SmallerThan => Family::Volume,
            Predicate::TallerThan | Predicate::ShorterThan => Family::Height,
            Predicate::CloseBy => Family::Proximity,
            Predicate::SymmetricalTo => Family::Symmetry,
            Predicate::SameAs => Family::Identity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left-of",
            Predicate::RightOf => "right-of",
            Predicate::FrontOf => "front-of",
            Predicate::Behind => "behind",
            Predicate::BiggerThan => "bigger-than",
            Predicate::SmallerThan => "smaller-than",
            Predicate::TallerThan => "taller-than",
            Predicate::ShorterThan => "shorter-than",
            Predicate::CloseBy => "close-by",
            Predicate::SymmetricalTo => "symmetrical-to",
            Predicate::SameAs => "same-as",
        }
    }

    pub fn from_name(s: &str) -> Result<Predicate> {
        Predicate::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown predicate \"{s}\"")))
    }
}

/// Which modalities a node actually carries. Masked-out slots hold exact
/// zeros in the feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Image,
    Both,
    None,
}

impl Modality {
    pub fn has_text(self) -> bool {
        matches!(self, Modality::Text | Modality::Both)
    }

    pub fn has_vision(self) -> bool {
        matches!(self, Modality::Image | Modality::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Both => "both",
            Modality::None => "none",
        }
    }

    pub fn from_name(s: &str) -> Result<Modality> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "both" => Ok(Modality::Both),
            "none" => Ok(Modality::None),
            other => Err(Error::Parse(format!("unknown modality \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub category: usize,
    pub style: usize,
    pub modality: Modality,
    /// Text feature, dim 32. Zeroed unless modality has text.
    pub text_feat: Vec<f64>,
    /// Vision feature, dim 32. Zeroed unless modality has vision.
    pub vision_feat: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub pred: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub nodes: Vec<NodeSpec>,
    edges: Vec<Edge>,
}

impl SceneGraph {
    /// Normalizing constructor: rejects self-edges and out-of-range
    /// endpoints, closes the edge set under inverses and same-as
    /// transitivity, sorts canonically, and enforces family uniqueness.
    pub fn new(nodes: Vec<NodeSpec>, edges: Vec<(usize, usize, Predicate)>) -> Result<SceneGraph> {
        let n = nodes.len();
        for &(s, d, p) in &edges {
            if s >= n || d >= n {
                return Err(Error::Validation {
                    rule: "edge-endpoints".into(),
                    detail: format!("edge ({s}, {d}, {}) references a missing node", p.name()),
                });
            }
            if s == d {
                return Err(Error::Validation {
                    rule: "no-self-edges".into(),
                    detail: format!("node {s} relates to itself via {}", p.name()),
                });
            }
        }

        let mut set: std::collections::BTreeSet<Edge> = edges
            .iter()
            .map(|&(src, dst, pred)| Edge { src, dst, pred })
            .collect();

        // Same-as is an equivalence: union-find over the declared pairs,
        // then materialize every in-class pair.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in set.iter().filter(|e| e.pred == Predicate::SameAs).cloned().collect::<Vec<_>>() {
            let (a, b) = (find(&mut parent, e.src), find(&mut parent, e.dst));
            if a != b {
                parent[a] = b;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && find(&mut parent, i) == find(&mut parent, j) {
                    set.insert(Edge { src: i, dst: j, pred: Predicate::SameAs });
                }
            }
        }

        // Close under inverses.
        for e in set.iter().cloned().collect::<Vec<_>>() {
            set.insert(Edge { src: e.dst, dst: e.src, pred: e.pred.inverse() });
        }

        // One predicate per family per ordered pair.
        let mut seen = std::collections::HashMap::new();
        for e in &set {
            if let Some(prev) = seen.insert((e.src, e.dst, e.pred.family()), e.pred) {
                if prev != e.pred {
                    return Err(Error::Validation {
                        rule: "one-predicate-per-family".into(),
                        detail: format!(
                            "pair ({}, {}) carries both {} and {}",
                            e.src,
                            e.dst,
                            prev.name(),
                            e.pred.name()
                        ),
                    });
                }
            }
        }

        Ok(SceneGraph { nodes, edges: set.into_iter().collect() })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Undirected relationship count. The edge set is closed under
    /// inverses, so each relationship appears exactly once with src < dst.
    pub fn relation_count(&self) -> usize {
        self.edges.iter().filter(|e| e.src < e.dst).count()
    }

    /// Replace the predicate of an existing edge. The old edge and its
    /// inverse go away; the new predicate is inserted with its inverse and
    /// the same-as closure is recomputed.
    pub fn change_relationship(
        &self,
        src: usize,
        dst: usize,
        old: Predicate,
        new: Predicate,
    ) -> Result<SceneGraph> {
        let target = Edge { src, dst, pred: old };
        if !self.edges.contains(&target) {
            return Err(Error::Validation {
                rule: "edge-exists".into(),
                detail: format!("no edge ({src}, {dst}, {})", old.name()),
            });
        }
        let inv = Edge { src: dst, dst: src, pred: old.inverse() };
        let mut kept: Vec<(usize, usize, Predicate)> = self
            .edges
            .iter()
            .filter(|&&e| e != target && e != inv)
            .map(|e| (e.src, e.dst, e.pred))
            .collect();
        kept.push((src, dst, new));
        SceneGraph::new(self.nodes.clone(), kept)
    }

    /// Append a node together with its incident edges.
    pub fn add_node(
        &self,
        spec: NodeSpec,
        edges: &[(usize, usize, Predicate)],
    ) -> Result<SceneGraph> {
        let new_id = self.nodes.len();
        for &(s, d, _) in edges {
            if s != new_id && d != new_id {
                return Err(Error::Validation {
                    rule: "edge-touches-new-node".into(),
                    detail: format!("edge ({s}, {d}) does not touch node {new_id}"),
                });
            }
        }
        let mut nodes = self.nodes.clone();
        nodes.push(spec);
        let mut all: Vec<(usize, usize, Predicate)> =
            self.edges.iter().map(|e| (e.src, e.dst, e.pred)).collect();
        all.extend_from_slice(edges);
        SceneGraph::new(nodes, all)
    }

    /// Nodes reachable from `i` by one hop in either direction.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|e| {
                if e.src == i {
                    Some(e.dst)
                } else if e.dst == i {
                    Some(e.src)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_node() -> NodeSpec {
        NodeSpec {
            category: 0,
            style: 0,
            modality: Modality::Both,
            text_feat: vec![0.0; TEXT_DIM],
            vision_feat: vec![0.0; VISION_DIM],
        }
    }

    #[test]
    fn inverses_are_involutions() {
        for p in Predicate::ALL {
            assert_eq!(p.inverse().inverse(), p);
            assert_eq!(p.family(), p.inverse().family());
        }
    }

    #[test]
    fn constructor_adds_inverse_edges() {
        let g = SceneGraph::new(
            vec![plain_node(), plain_node()],
            vec![(0, 1, Predicate::LeftOf)],
        )
        .unwrap();
        assert_eq!(g.edges().len(), 2);
        assert!(g.edges().contains(&Edge { src: 1, dst: 0, pred: Predicate::RightOf }));
    }

    #[test]
    fn self_edges_are_rejected() {
        let err = SceneGraph::new(vec![plain_node()], vec![(0, 0, Predicate::CloseBy)]);
        assert!(matches!(err, Err(crate::Error::Validation { .. })));
    }

    #[test]
    fn same_as_closes_transitively() {
        let g = SceneGraph::new(
            vec![plain_node(), plain_node(), plain_node()],
            vec![(0, 1, Predicate::SameAs), (1, 2, Predicate::SameAs)],
        )
        .unwrap();
        assert!(g.edges().contains(&Edge { src: 0, dst: 2, pred: Predicate::SameAs }));
        assert!(g.edges().contains(&Edge { src: 2, dst: 0, pred: Predicate::SameAs }));
        assert_eq!(g.edges().len(), 6);
    }

    #[test]
    fn conflicting_family_is_rejected() {
        let err = SceneGraph::new(
            vec![plain_node(), plain_node()],
            vec![(0, 1, Predicate::LeftOf), (0, 1, Predicate::RightOf)],
        );
        assert!(matches!(err, Err(crate::Error::Validation { .. })));
    }

    #[test]
    fn contradictory_directions_are_rejected() {
        // (0,1,left-of) implies (1,0,right-of); a stated (1,0,left-of) then
        // collides in the lateral family.
        let err = SceneGraph::new(
            vec![plain_node(), plain_node()],
            vec![(0, 1, Predicate::LeftOf), (1, 0, Predicate::LeftOf)],
        );
        assert!(matches!(err, Err(crate::Error::Validation { .. })));
    }

    #[test]
    fn change_relationship_swaps_inverse_too() {
        let g = SceneGraph::new(
            vec![plain_node(), plain_node()],
            vec![(0, 1, Predicate::LeftOf)],
        )
        .unwrap();
        let g2 = g.change_relationship(0, 1, Predicate::LeftOf, Predicate::RightOf).unwrap();
        assert_eq!(g2.edges().len(), 2);
        assert!(g2.edges().contains(&Edge { src: 0, dst: 1, pred: Predicate::RightOf }));
        assert!(g2.edges().contains(&Edge { src: 1, dst: 0, pred: Predicate::LeftOf }));
    }

    #[test]
    fn change_missing_edge_is_an_error() {
        let g = SceneGraph::new(vec![plain_node(), plain_node()], vec![]).unwrap();
        assert!(g.change_relationship(0, 1, Predicate::LeftOf, Predicate::RightOf).is_err());
    }

    #[test]
    fn add_node_with_close_by_adds_edge_and_inverse() {
        let g = SceneGraph::new(vec![plain_node(), plain_node()], vec![]).unwrap();
        let g2 = g.add_node(plain_node(), &[(2, 0, Predicate::CloseBy)]).unwrap();
        assert_eq!(g2.len(), 3);
        assert_eq!(g2.edges().len(), 2);
    }
}
