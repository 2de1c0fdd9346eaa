//! Minimal SVG plots: polylines and scatter points on shared axes.

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    /// Each inner list is drawn as one polyline (or as dots when `dots`).
    pub paths: Vec<Vec<[f64; 2]>>,
    pub dots: bool,
}

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One square panel with equal axis scaling.
pub fn plot(title: &str, axes: [&str; 2], series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.paths.iter().flatten());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !lo[0].is_finite() {
        lo = [0.0; 2];
        hi = [1.0; 2];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.1;
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let scale = (W - 2.0 * PAD) / span;
    let map = |p: &[f64; 2]| {
        (
            W / 2.0 + (p[0] - mid[0]) * scale,
            H / 2.0 - (p[1] - mid[1]) * scale,
        )
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(axes[0])
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(axes[1])
    );
    for (i, series) in series.iter().enumerate() {
        let _ = writeln!(s, r#"<g stroke="{0}" fill="{0}">"#, series.color);
        for path in &series.paths {
            if series.dots {
                for p in path {
                    let (x, y) = map(p);
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" stroke="none" fill-opacity="0.5"/>"#);
                }
            } else {
                let coords: Vec<String> = path.iter().map(|p| {
                    let (x, y) = map(p);
                    format!("{x:.2},{y:.2}")
                }).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke-width="1" stroke-opacity="0.6"/>"#,
                    coords.join(" ")
                );
            }
        }
        let _ = writeln!(s, "</g>");
        let y = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
            PAD + 8.0,
            series.color,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}
