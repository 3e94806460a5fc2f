//! Minimal SVG heatmap of a confusion matrix.

use std::fmt::Write;

use postocr::align::ConfusionMatrix;

const CELL: usize = 18;
const LABEL: usize = 40;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Rows are reference units, columns hypothesis units; darker cells hold
/// more mass. Values are scaled by the largest cell.
pub fn heatmap(m: &ConfusionMatrix, title: &str) -> String {
    let labels = m.labels();
    let n = labels.len();
    let max = labels
        .iter()
        .flat_map(|r| labels.iter().map(move |c| m.get(r, c)))
        .fold(0.0f64, f64::max);
    let size = LABEL + n * CELL + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="10">"#,
        size + 20
    );
    let _ = writeln!(s, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(title));
    for (j, c) in labels.iter().enumerate() {
        let x = LABEL + j * CELL + CELL / 2;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, 20 + LABEL - 6, escape(c));
    }
    for (i, r) in labels.iter().enumerate() {
        let y = 20 + LABEL + i * CELL;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LABEL - 4, y + CELL - 5, escape(r));
        for (j, c) in labels.iter().enumerate() {
            let v = if max > 0.0 { m.get(r, c) / max } else { 0.0 };
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="#ddd"><title>{} → {}: {}</title></rect>"##,
                LABEL + j * CELL,
                escape(r),
                escape(c),
                m.get(r, c)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
