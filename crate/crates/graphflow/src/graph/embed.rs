//! Synthetic stand-ins for text and vision encoders.
//!
//! Features are unit-norm vectors drawn from streams keyed on (category,
//! style, seed): the text feature depends on category alone, the vision
//! feature on category and style. Identical inputs always produce identical
//! features.

use super::{Modality, NodeSpec, SceneGraph};
use crate::tensor::Rng;

pub const TEXT_DIM: usize = 32;
pub const VISION_DIM: usize = 32;

fn unit_vec(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let mut v = rng.normal_vec(dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

/// (text, vision) features for a node. Respects the modality mask by
/// zeroing absent slots.
pub fn synth_features(
    category: usize,
    style: usize,
    modality: Modality,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let u = if modality.has_text() {
        let mut r = Rng::new(seed, 0x7E07 ^ (category as u64) << 8);
        unit_vec(&mut r, TEXT_DIM)
    } else {
        vec![0.0; TEXT_DIM]
    };
    let f = if modality.has_vision() {
        let mut r = Rng::new(seed, 0x51DE ^ ((category as u64) << 20 | style as u64));
        unit_vec(&mut r, VISION_DIM)
    } else {
        vec![0.0; VISION_DIM]
    };
    (u, f)
}

/// Training-time corruption: each present modality is dropped independently
/// with probability `ratio`, zeroing its feature and updating the mask.
pub fn mask_modalities(graph: &SceneGraph, ratio: f64, rng: &mut Rng) -> SceneGraph {
    let mut g = graph.clone();
    for node in &mut g.nodes {
        let drop_text = node.modality.has_text() && rng.bernoulli(ratio);
        let drop_vision = node.modality.has_vision() && rng.bernoulli(ratio);
        if drop_text {
            node.text_feat.iter_mut().for_each(|v| *v = 0.0);
        }
        if drop_vision {
            node.vision_feat.iter_mut().for_each(|v| *v = 0.0);
        }
        node.modality = match (
            node.modality.has_text() && !drop_text,
            node.modality.has_vision() && !drop_vision,
        ) {
            (true, true) => Modality::Both,
            (true, false) => Modality::Text,
            (false, true) => Modality::Image,
            (false, false) => Modality::None,
        };
    }
    g
}

/// Node with features synthesized for its category, style and mask.
pub fn make_node(category: usize, style: usize, modality: Modality, seed: u64) -> NodeSpec {
    let (u, f) = synth_features(category, style, modality, seed);
    NodeSpec { category, style, modality, text_feat: u, vision_feat: f }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_ignores_style_vision_does_not() {
        let (u0, f0) = synth_features(2, 0, Modality::Both, 7);
        let (u1, f1) = synth_features(2, 3, Modality::Both, 7);
        assert_eq!(u0, u1);
        assert_ne!(f0, f1);
        let cos: f64 = f0.iter().zip(&f1).map(|(a, b)| a * b).sum();
        assert!(cos < 0.99, "styles too correlated: {cos}");
    }

    #[test]
    fn features_are_unit_norm_and_deterministic() {
        let (u, f) = synth_features(1, 2, Modality::Both, 7);
        let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nf: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((nu - 1.0).abs() < 1e-12 && (nf - 1.0).abs() < 1e-12);
        assert_eq!(synth_features(1, 2, Modality::Both, 7), (u, f));
    }

    #[test]
    fn masked_slots_are_exact_zeros() {
        let (u, f) = synth_features(0, 0, Modality::Text, 7);
        assert!(u.iter().any(|&x| x != 0.0));
        assert!(f.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ratio_one_masks_everything() {
        let nodes = vec![make_node(0, 0, Modality::Both, 7), make_node(1, 1, Modality::Both, 7)];
        let g = SceneGraph::new(nodes, vec![]).unwrap();
        let mut rng = Rng::new(5, 0);
        let masked = mask_modalities(&g, 1.0, &mut rng);
        for node in &masked.nodes {
            assert_eq!(node.modality, Modality::None);
            assert!(node.text_feat.iter().all(|&x| x == 0.0));
            assert!(node.vision_feat.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn ratio_zero_changes_nothing() {
        let nodes = vec![make_node(0, 1, Modality::Both, 7)];
        let g = SceneGraph::new(nodes, vec![]).unwrap();
        let mut rng = Rng::new(5, 0);
        let masked = mask_modalities(&g, 0.0, &mut rng);
        assert_eq!(masked, g);
    }
}
