//! Minimal static SVG charts: line plots, small multiples and heatmaps.

use std::fmt::Write;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// One polyline.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    (x0, x1, y0, y1)
}

/// Draws `series` into the box at (`ox`, `oy`) of size `w x h`.
#[allow(clippy::too_many_arguments)]
fn panel(out: &mut String, series: &[Series], title: &str, ox: f64, oy: f64, w: f64, h: f64, legend: bool) {
    let (x0, x1, y0, y1) = bounds(series);
    let (pl, pr, pt, pb) = (44.0, 8.0, 20.0, 22.0);
    let (iw, ih) = (w - pl - pr, h - pt - pb);
    let sx = |x: f64| ox + pl + (x - x0) / (x1 - x0) * iw;
    let sy = |y: f64| oy + pt + (1.0 - (y - y0) / (y1 - y0)) * ih;
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{iw:.1}" height="{ih:.1}" fill="none" stroke="#999"/>"##,
        ox + pl,
        oy + pt
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
        ox + pl + iw / 2.0,
        oy + 13.0,
        escape(title)
    );
    for (y, anchor) in [(y0, "end"), (y1, "end")] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="{anchor}">{:.3}</text>"#,
            ox + pl - 3.0,
            sy(y) + 3.0,
            y
        );
    }
    for x in [x0, x1] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{:.3}</text>"#,
            sx(x),
            oy + h - 8.0,
            x
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ =
            writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        if legend {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" fill="{color}">{}</text>"#,
                ox + pl + 4.0,
                oy + pt + 11.0 * (i + 1) as f64,
                escape(&s.label)
            );
        }
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// A single line chart with a legend.
pub fn line_chart(title: &str, series: &[Series]) -> String {
    let mut body = String::new();
    panel(&mut body, series, title, 0.0, 0.0, 480.0, 320.0, true);
    document(480.0, 320.0, &body)
}

/// A grid of panels, `cols` per row, each holding its own series.
pub fn small_multiples(panels: &[(String, Vec<Series>)], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols).max(1);
    let (w, h) = (180.0, 130.0);
    let mut body = String::new();
    for (i, (title, series)) in panels.iter().enumerate() {
        panel(&mut body, series, title, (i % cols) as f64 * w, (i / cols) as f64 * h, w, h, false);
    }
    document(cols as f64 * w, rows as f64 * h, &body)
}

/// Heatmap of `values[row][col]`, shaded from white to the maximum entry.
pub fn heatmap(title: &str, values: &[Vec<f64>], row_labels: &[String], col_labels: &[String]) -> String {
    let cell = 40.0;
    let (left, top) = (50.0, 40.0);
    let n_cols = col_labels.len();
    let max = values.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0, f64::max).max(1e-12);
    let mut body = String::new();
    let _ = writeln!(body, r#"<text x="{left}" y="16" font-size="12">{}</text>"#, escape(title));
    for (c, label) in col_labels.iter().enumerate() {
        let _ = writeln!(
            body,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            left + (c as f64 + 0.5) * cell,
            top - 6.0,
            escape(label)
        );
    }
    for (r, row) in values.iter().enumerate() {
        let y = top + r as f64 * cell;
        if let Some(label) = row_labels.get(r) {
            let _ = writeln!(
                body,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
                left - 6.0,
                y + cell / 2.0 + 3.0,
                escape(label)
            );
        }
        for (c, &v) in row.iter().enumerate() {
            let t = if v.is_finite() { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                body,
                r##"<rect x="{:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#fff"/>"##,
                left + c as f64 * cell
            );
            let _ = writeln!(
                body,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{v:.2}</text>"#,
                left + (c as f64 + 0.5) * cell,
                y + cell / 2.0 + 3.0
            );
        }
    }
    document(left + n_cols as f64 * cell + 10.0, top + values.len() as f64 * cell + 10.0, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_is_wellformed() {
        let s = Series { label: "a<b".into(), points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, f64::NAN)] };
        let svg = line_chart("re", &[s]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn small_multiples_layout() {
        let panels: Vec<_> = (0..5)
            .map(|i| {
                (format!("p{i}"), vec![Series { label: String::new(), points: vec![(0.0, 0.0), (1.0, i as f64)] }])
            })
            .collect();
        let svg = small_multiples(&panels, 2);
        assert_eq!(svg.matches("<polyline").count(), 5);
        assert!(svg.contains(r#"height="390""#));
    }

    #[test]
    fn heatmap_cells() {
        let v = vec![vec![0.0, 1.0], vec![0.5, 0.25]];
        let labels = |p: &str| (0..2).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let svg = heatmap("mi", &v, &labels("L"), &labels("S"));
        assert_eq!(svg.matches("rgb(").count(), 4);
        assert!(svg.contains("rgb(0,0,255)") && svg.contains("rgb(255,255,255)"));
    }
}
