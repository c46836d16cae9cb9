//! Human-editable JSON exchange format for scene graphs.
//!
//! ```json
//! {
//!   "nodes": [{"category": "bed", "style": 1, "modality": "both"}],
//!   "edges": [[0, 1, "left-of"]]
//! }
//! ```
//!
//! Only one direction per relation needs to be written; the inverse is
//! restored on load. Unknown keys are rejected so typos surface early.

use super::{make_node, Modality, Predicate, SceneGraph};
use crate::{Error, Result};
use serde_json::{json, Map, Value};
use std::path::Path;

fn expect_keys(obj: &Map<String, Value>, allowed: &[&str], what: &str) -> Result<()> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Parse(format!("unexpected key \"{k}\" in {what}")));
        }
    }
    Ok(())
}

fn as_obj<'v>(v: &'v Value, what: &str) -> Result<&'v Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::Parse(format!("{what} must be an object")))
}

fn get_str<'v>(obj: &'v Map<String, Value>, key: &str, what: &str) -> Result<&'v str> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Parse(format!("{what} needs a string \"{key}\"")))
}

fn get_index(obj: &Map<String, Value>, key: &str, what: &str) -> Result<usize> {
    obj.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| Error::Parse(format!("{what} needs a non-negative integer \"{key}\"")))
}

/// Parse a graph, resolving category names against `categories` and
/// synthesizing node features with `embed_seed`.
pub fn graph_from_json(
    text: &str,
    categories: &[String],
    styles: usize,
    embed_seed: u64,
) -> Result<SceneGraph> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("invalid JSON: {e}")))?;
    let root = as_obj(&root, "document root")?;
    expect_keys(root, &["nodes", "edges"], "document root")?;

    let nodes_v = root
        .get("nodes")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse("document root needs a \"nodes\" array".into()))?;

    let mut nodes = Vec::with_capacity(nodes_v.len());
    for (i, nv) in nodes_v.iter().enumerate() {
        let what = format!("node {i}");
        let obj = as_obj(nv, &what)?;
        expect_keys(obj, &["category", "style", "modality"], &what)?;
        let cat_name = get_str(obj, "category", &what)?;
        let category = categories.iter().position(|c| c == cat_name).ok_or_else(|| {
            Error::Vocabulary(format!(
                "node {i}: unknown category \"{cat_name}\" (known: {})",
                categories.join(", ")
            ))
        })?;
        let style = get_index(obj, "style", &what)?;
        if style >= styles {
            return Err(Error::Vocabulary(format!(
                "node {i}: style {style} out of range (styles: {styles})"
            )));
        }
        let modality = match obj.get("modality") {
            None => Modality::Both,
            Some(v) => Modality::from_name(
                v.as_str()
                    .ok_or_else(|| Error::Parse(format!("{what}: modality must be a string")))?,
            )?,
        };
        nodes.push(make_node(category, style, modality, embed_seed));
    }

    let mut edges = Vec::new();
    if let Some(ev) = root.get("edges") {
        let arr = ev
            .as_array()
            .ok_or_else(|| Error::Parse("\"edges\" must be an array".into()))?;
        for (i, e) in arr.iter().enumerate() {
            let what = format!("edge {i}");
            let trip = e
                .as_array()
                .filter(|a| a.len() == 3)
                .ok_or_else(|| {
                    Error::Parse(format!("{what} must be a [src, dst, \"predicate\"] triple"))
                })?;
            let src = trip[0]
                .as_u64()
                .ok_or_else(|| Error::Parse(format!("{what}: src must be an index")))?;
            let dst = trip[1]
                .as_u64()
                .ok_or_else(|| Error::Parse(format!("{what}: dst must be an index")))?;
            let pred = Predicate::from_name(
                trip[2]
                    .as_str()
                    .ok_or_else(|| Error::Parse(format!("{what}: predicate must be a string")))?,
            )?;
            edges.push((src as usize, dst as usize, pred));
        }
    }

    SceneGraph::new(nodes, edges)
}

/// Serialize a graph. Each relation is written once, in its `src < dst`
/// direction; inverses are implied.
pub fn graph_to_json(graph: &SceneGraph, categories: &[String]) -> Result<String> {
    let mut nodes = Vec::with_capacity(graph.len());
    for (i, n) in graph.nodes.iter().enumerate() {
        let name = categories.get(n.category).ok_or_else(|| {
            Error::Vocabulary(format!(
                "node {i}: category index {} beyond vocabulary of {}",
                n.category,
                categories.len()
            ))
        })?;
        nodes.push(json!({
            "category": name,
            "style": n.style,
            "modality": n.modality.name(),
        }));
    }
    let edges: Vec<Value> = graph
        .edges()
        .iter()
        .filter(|e| e.src < e.dst)
        .map(|e| json!([e.src, e.dst, e.pred.name()]))
        .collect();
    serde_json::to_string_pretty(&json!({"nodes": nodes, "edges": edges}))
        .map_err(|e| Error::Parse(format!("serialization failed: {e}")))
}

pub fn read_graph(
    path: &Path,
    categories: &[String],
    styles: usize,
    embed_seed: u64,
) -> Result<SceneGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    graph_from_json(&text, categories, styles, embed_seed)
}

pub fn write_graph(path: &Path, graph: &SceneGraph, categories: &[String]) -> Result<()> {
    let text = graph_to_json(graph, categories)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_dataset, OracleConfig};

    fn vocab() -> Vec<String> {
        ["bed", "chair", "table"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn round_trip_preserves_graph() {
        let cfg = OracleConfig::default();
        for sample in generate_dataset(&cfg, 20, 42).unwrap() {
            let text = graph_to_json(&sample.graph, &cfg.categories).unwrap();
            let back =
                graph_from_json(&text, &cfg.categories, cfg.styles, cfg.embed_seed).unwrap();
            assert_eq!(back, sample.graph);
        }
    }

    #[test]
    fn unknown_category_is_a_vocabulary_error() {
        let text = r#"{"nodes": [{"category": "sofa", "style": 0}], "edges": []}"#;
        let err = graph_from_json(text, &vocab(), 4, 7).unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)), "{err}");
        assert!(err.to_string().contains("sofa"));
    }

    #[test]
    fn unknown_predicate_is_rejected() {
        let text = r#"{
            "nodes": [{"category": "bed", "style": 0}, {"category": "chair", "style": 1}],
            "edges": [[0, 1, "next-to"]]
        }"#;
        let err = graph_from_json(text, &vocab(), 4, 7).unwrap_err();
        assert!(err.to_string().contains("next-to"));
    }

    #[test]
    fn malformed_edge_triple_is_rejected() {
        let text = r#"{
            "nodes": [{"category": "bed", "style": 0}, {"category": "chair", "style": 1}],
            "edges": [[0, 1]]
        }"#;
        let err = graph_from_json(text, &vocab(), 4, 7).unwrap_err();
        assert!(err.to_string().contains("triple"), "{err}");
    }

    #[test]
    fn typo_keys_are_rejected() {
        let text = r#"{"nodes": [{"category": "bed", "styel": 0}], "edges": []}"#;
        let err = graph_from_json(text, &vocab(), 4, 7).unwrap_err();
        assert!(err.to_string().contains("styel"));
    }

    #[test]
    fn modality_defaults_to_both() {
        let text = r#"{"nodes": [{"category": "bed", "style": 0}], "edges": []}"#;
        let g = graph_from_json(text, &vocab(), 4, 7).unwrap();
        assert_eq!(g.nodes[0].modality, crate::graph::Modality::Both);
    }

    #[test]
    fn file_io_round_trips() {
        let cfg = OracleConfig::default();
        let sample = &generate_dataset(&cfg, 1, 8).unwrap()[0];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        write_graph(&path, &sample.graph, &cfg.categories).unwrap();
        let back = read_graph(&path, &cfg.categories, cfg.styles, cfg.embed_seed).unwrap();
        assert_eq!(back, sample.graph);
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = read_graph(Path::new("/nonexistent/g.json"), &vocab(), 4, 7).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/g.json"));
    }
}
