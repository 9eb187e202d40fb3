//! Attention matrices as tab-separated text and SVG heatmaps.

use std::fmt::Write as _;

use crate::corpus::Dialogue;

/// Row/column labels `"<turn>:<intent>"`.
pub fn turn_labels(d: &Dialogue) -> Vec<String> {
    d.turns
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{i}:{}", t.user_intent))
        .collect()
}

/// Header row of column labels, then one row per prediction turn.
pub fn attention_tsv(matrix: &[Vec<f64>], labels: &[String]) -> String {
    let mut out = String::from("turn");
    for l in labels {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for (label, row) in labels.iter().zip(matrix) {
        out.push_str(label);
        for v in row {
            let _ = write!(out, "\t{v:?}");
        }
        out.push('\n');
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grayscale heatmap: darker is more weight, future cells hatched.
pub fn attention_svg(matrix: &[Vec<f64>], labels: &[String], title: &str) -> String {
    const CELL: usize = 22;
    const MARGIN: usize = 170;
    let n = matrix.len();
    let side = MARGIN + n * CELL + 10;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{}" font-family="monospace" font-size="10">"#,
        side + 20
    );
    out.push_str(concat!(
        r#"<defs><pattern id="masked" width="4" height="4" patternUnits="userSpaceOnUse">"#,
        r##"<rect width="4" height="4" fill="#f4f4f4"/><path d="M0,4 L4,0" stroke="#c8c8c8"/></pattern></defs>"##,
        "\n"
    ));
    let _ = writeln!(out, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(title));
    let top = MARGIN + 20;
    for (i, row) in matrix.iter().enumerate() {
        let y = top + i * CELL;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN - 4,
            y + CELL / 2 + 3,
            escape(&labels[i])
        );
        for (j, &v) in row.iter().enumerate() {
            let x = MARGIN + j * CELL;
            if j > i {
                let _ = writeln!(
                    out,
                    r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="url(#masked)"/>"#
                );
            } else {
                let g = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                let _ = writeln!(
                    out,
                    r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"><title>{v:.4}</title></rect>"#
                );
            }
        }
    }
    for (j, l) in labels.iter().enumerate() {
        let x = MARGIN + j * CELL + CELL / 2 + 3;
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" transform="rotate(-90 {x} {})">{}</text>"#,
            top - 4,
            top - 4,
            escape(l)
        );
    }
    out.push_str("</svg>\n");
    out
}
