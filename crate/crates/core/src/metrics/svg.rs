//! Static SVG rendering of dataset statistics: lip-velocity scatter,
//! duration histogram and the region correlation graph.

use std::fmt::Write as _;

use super::CorrelationGraph;

const PANEL: f64 = 320.0;
const MARGIN: f64 = 40.0;

pub struct StatsPlotInput<'a> {
    /// Per-sequence `(v_x, v_y)` of the lip region.
    pub lip_velocity: &'a [(f64, f64)],
    /// Per-sequence durations in seconds.
    pub durations: &'a [f64],
    pub graph: Option<&'a CorrelationGraph>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_max(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.fold(0.0, f64::max);
    if m > 0.0 { m * 1.1 } else { 1.0 }
}

fn frame(out: &mut String, x0: f64, title: &str, xlabel: &str, ylabel: &str) {
    let inner = PANEL - 2.0 * MARGIN;
    let _ = writeln!(
        out,
        r#"<rect x="{:.1}" y="{MARGIN:.1}" width="{inner:.1}" height="{inner:.1}" fill="none" stroke="black"/>"#,
        x0 + MARGIN
    );
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="13">{}</text>"#, x0 + PANEL / 2.0, esc(title));
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
        x0 + PANEL / 2.0,
        PANEL - 8.0,
        esc(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" transform="rotate(-90 {:.1} {:.1})" text-anchor="middle">{}</text>"#,
        x0 + 14.0,
        PANEL / 2.0,
        x0 + 14.0,
        PANEL / 2.0,
        esc(ylabel)
    );
}

fn scatter(out: &mut String, x0: f64, points: &[(f64, f64)]) {
    frame(out, x0, "lip velocity per sequence", "v_x (units/frame)", "v_y (units/frame)");
    let inner = PANEL - 2.0 * MARGIN;
    let mx = axis_max(points.iter().map(|p| p.0));
    let my = axis_max(points.iter().map(|p| p.1));
    for &(x, y) in points {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#888"/>"##,
            x0 + MARGIN + x / mx * inner,
            MARGIN + inner - y / my * inner
        );
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="9">{mx:.3e}</text>"#, x0 + PANEL - MARGIN - 30.0, PANEL - MARGIN + 12.0);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="9">{my:.3e}</text>"#, x0 + MARGIN + 2.0, MARGIN - 4.0);
}

fn histogram(out: &mut String, x0: f64, values: &[f64]) {
    frame(out, x0, "sequence duration", "seconds", "count");
    let inner = PANEL - 2.0 * MARGIN;
    if values.is_empty() {
        return;
    }
    let bins = 10usize;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let top = *counts.iter().max().unwrap() as f64;
    let bw = inner / bins as f64;
    for (i, &c) in counts.iter().enumerate() {
        let h = c as f64 / top * inner;
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#6a8caf" stroke="white"/>"##,
            x0 + MARGIN + i as f64 * bw,
            MARGIN + inner - h,
            bw
        );
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="9">{lo:.2}</text>"#, x0 + MARGIN, PANEL - MARGIN + 12.0);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{:.2}</text>"#, x0 + PANEL - MARGIN, PANEL - MARGIN + 12.0, lo + width * bins as f64);
}

fn graph(out: &mut String, x0: f64, g: &CorrelationGraph) {
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="13">region correlation</text>"#, x0 + PANEL / 2.0);
    let (cx, cy) = (x0 + PANEL / 2.0, PANEL / 2.0 + 8.0);
    let radius = PANEL / 2.0 - MARGIN - 10.0;
    let k = g.regions.len().max(1) as f64;
    let pos: Vec<(f64, f64)> = (0..g.regions.len())
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / k - std::f64::consts::FRAC_PI_2;
            (cx + radius * a.cos(), cy + radius * a.sin())
        })
        .collect();
    let index = |name: &str| g.regions.iter().position(|r| r == name);
    for e in &g.edges {
        if let (Some(i), Some(j)) = (index(&e.a), index(&e.b)) {
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444" stroke-width="{:.2}"/>"##,
                pos[i].0,
                pos[i].1,
                pos[j].0,
                pos[j].1,
                1.0 + 4.0 * e.weight.max(0.0)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle">{:.2}</text>"#,
                (pos[i].0 + pos[j].0) / 2.0,
                (pos[i].1 + pos[j].1) / 2.0 - 3.0,
                e.weight
            );
        }
    }
    for (i, name) in g.regions.iter().enumerate() {
        let fill = if g.degenerate.contains(name) { "#ccc" } else { "#d9534f" };
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="9" fill="{fill}"/>"#, pos[i].0, pos[i].1);
        let label = match g.self_corr.get(i).copied().flatten() {
            Some(c) => format!("{name} ({c:.2})"),
            None => name.clone(),
        };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            pos[i].0,
            pos[i].1 + 22.0,
            esc(&label)
        );
    }
}

/// Three side-by-side panels as one SVG document.
pub fn stats_svg(input: &StatsPlotInput) -> String {
    let width = PANEL * 3.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL}" viewBox="0 0 {width} {PANEL}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    scatter(&mut out, 0.0, input.lip_velocity);
    histogram(&mut out, PANEL, input.durations);
    if let Some(g) = input.graph {
        graph(&mut out, 2.0 * PANEL, g);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::CorrelationEdge;

    #[test]
    fn renders_all_panels() {
        let g = CorrelationGraph {
            regions: vec!["lip".into(), "jaw".into(), "a<b".into()],
            self_corr: vec![Some(0.8), None, Some(0.5)],
            degenerate: vec!["jaw".into()],
            threshold: 0.5,
            edges: vec![CorrelationEdge { a: "lip".into(), b: "a<b".into(), weight: 0.7 }],
        };
        let svg = stats_svg(&StatsPlotInput {
            lip_velocity: &[(0.001, 0.002), (0.003, 0.001)],
            durations: &[1.0, 2.5, 2.6],
            graph: Some(&g),
        });
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2 + 3);
        assert_eq!(svg.matches("<line").count(), 1);
        assert!(svg.contains("a&lt;b"));
    }
}
