//! Top-down SVG sketch of an assembled scene: one boundary rectangle for the
//! room, one rotated rectangle plus category label per node, in node-index
//! order. Output is a pure function of the scene, byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::branches::AssembledScene;
use crate::{Error, Result};

/// Pixels per room unit; the room spans [-1, 1] in x and z.
const SCALE: f64 = 300.0;
const CENTER: f64 = 320.0;

fn px(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    let mut s = format!("{v:.2}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(scene: &AssembledScene, vocab: &[String]) -> Result<String> {
    let mut out = String::new();
    out.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 640\">\n");
    out.push_str(
        "<rect x=\"20\" y=\"20\" width=\"600\" height=\"600\" fill=\"none\" \
         stroke=\"black\" stroke-width=\"2\"/>\n",
    );
    for node in &scene.nodes {
        let name = vocab.get(node.category).ok_or_else(|| {
            Error::Contract(format!(
                "node category {} outside vocabulary of {}",
                node.category,
                vocab.len()
            ))
        })?;
        let l = &node.layout;
        let cx = CENTER + l.t[0] * SCALE;
        let cy = CENTER - l.t[2] * SCALE;
        let w = 2.0 * l.s[0] * SCALE;
        let h = 2.0 * l.s[2] * SCALE;
        // Yaw rotates +x toward -z in the room, which is clockwise on screen,
        // matching SVG's rotate direction.
        let deg = l.yaw().to_degrees();
        let mut rgb = [0.0; 3];
        for c in &node.colors {
            for (acc, ch) in rgb.iter_mut().zip(c) {
                *acc += ch;
            }
        }
        let n = node.colors.len().max(1) as f64;
        let byte = |v: f64| ((v / n * 255.0).round().clamp(0.0, 255.0)) as u8;
        writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({},{},{})\" \
             stroke=\"black\" stroke-width=\"1\" transform=\"rotate({} {} {})\"/>",
            px(cx - w / 2.0),
            px(cy - h / 2.0),
            px(w),
            px(h),
            byte(rgb[0]),
            byte(rgb[1]),
            byte(rgb[2]),
            px(deg),
            px(cx),
            px(cy),
        )
        .expect("string write");
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
            px(cx),
            px(cy),
            escape(name),
        )
        .expect("string write");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_svg(path: &Path, scene: &AssembledScene, vocab: &[String]) -> Result<()> {
    let text = render_svg(scene, vocab)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
