//! Top-down orthographic SVG of a labeled point cloud.

use std::fmt::Write;

use crate::classdict::ClassDictionary;
use crate::labels::{LabelField, UNLABELED};

const PALETTE: [&str; 10] = [
    "#7f7f7f", "#1f77b4", "#d62728", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#bcbd22", "#17becf",
];
const UNLABELED_COLOR: &str = "#d9d9d9";
const SIZE: f64 = 800.0;
const MARGIN: f64 = 20.0;
const LEGEND_WIDTH: f64 = 180.0;

pub fn class_color(class: u16) -> &'static str {
    if class == UNLABELED {
        UNLABELED_COLOR
    } else {
        PALETTE[class as usize % PALETTE.len()]
    }
}

/// Points drawn as dots seen from above (+y up), lower points first, with a
/// legend of the classes present.
pub fn render_svg(points: &[[f32; 3]], labels: &LabelField, dict: &ClassDictionary, title: &str) -> String {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a] as f64);
            hi[a] = hi[a].max(p[a] as f64);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][2].total_cmp(&points[b][2]).then(a.cmp(&b)));

    let mut s = String::new();
    let width = SIZE + LEGEND_WIDTH;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{SIZE}" viewBox="0 0 {width} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect width="{width}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(s, r#"<g stroke="none">"#);
    for i in order {
        let p = points[i];
        let x = MARGIN + (p[0] as f64 - lo[0]) * scale;
        let y = SIZE - MARGIN - (p[1] as f64 - lo[1]) * scale;
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{}"/>"#,
            class_color(labels.get(i))
        );
    }
    let _ = writeln!(s, "</g>");
    let mut present: Vec<u16> = labels.as_slice().to_vec();
    present.sort_unstable();
    present.dedup();
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="14">"#);
    for (row, &c) in present.iter().enumerate() {
        let y = MARGIN + 22.0 * row as f64;
        let name = if c == UNLABELED {
            "unlabeled".to_string()
        } else {
            dict.class_name(c).map_or_else(|| format!("class {c}"), str::to_string)
        };
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{y}" width="14" height="14" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            SIZE + 10.0,
            class_color(c),
            SIZE + 30.0,
            y + 12.0,
            escape(&name)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
