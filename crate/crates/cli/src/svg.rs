//! Minimal self-contained SVG line charts and histograms.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (mut x0, mut x1) = bounds(xs);
        let (mut y0, mut y1) = bounds(ys);
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        Frame { x0, x1, y0: y0 - pad, y1: y1 + pad }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ =
        writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

fn axes(out: &mut String, f: &Frame) {
    let (xa, xb, ya, yb) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{xa} {ya} V{yb} H{xb}" fill="none" stroke="black"/>"#);
    for t in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * t as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * t as f64 / 4.0;
        let (px, py) = (f.px(fx), f.py(fy));
        let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{yb}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, yb + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, yb + 18.0, tick(fx));
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{py:.2}" x2="{xa}" y2="{py:.2}" stroke="black"/>"#, xa - 5.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, xa - 8.0, py + 4.0, tick(fy));
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let f = Frame::new(xs, ys);
    let mut out = String::new();
    header(&mut out, title, x_label, y_label);
    axes(&mut out, &f);
    for (k, s) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1)))
            .collect();
        let _ =
            writeln!(out, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, pts.join(" "));
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted above");
            let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{colour}"/>"#);
        }
        let ly = TOP + 8.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="12" height="3" fill="{colour}"/>"#,
            LEFT + 12.0,
            ly - 4.0
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, LEFT + 30.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

pub fn histogram(title: &str, x_label: &str, values: &[f64], bins: usize) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let bins = bins.max(1);
    let (mut lo, mut hi) = bounds(finite.iter().copied());
    if finite.is_empty() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &finite {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let max = *counts.iter().max().unwrap_or(&1) as f64;
    let f = Frame { x0: lo, x1: hi, y0: 0.0, y1: max.max(1.0) * 1.05 };
    let mut out = String::new();
    header(&mut out, title, x_label, "count");
    axes(&mut out, &f);
    for (k, c) in counts.iter().enumerate() {
        let (xa, xb) = (f.px(lo + width * k as f64), f.px(lo + width * (k + 1) as f64));
        let (ya, yb) = (f.py(*c as f64), f.py(0.0));
        let _ = writeln!(
            out,
            r#"<rect x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="white"/>"#,
            xb - xa,
            yb - ya,
            COLOURS[0]
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_is_deterministic_svg() {
        let s = [Series { label: "a<b".into(), points: vec![(0.0, 0.0), (1.0, 0.3), (2.0, f64::NAN)] }];
        let a = line_chart("t", "x", "y", &s);
        assert_eq!(a, line_chart("t", "x", "y", &s));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b"));
        assert_eq!(a.matches("<circle").count(), 2);
    }

    #[test]
    fn histogram_counts_every_finite_value() {
        let h = histogram("t", "x", &[1.0, 1.0, 2.0, f64::INFINITY], 2);
        assert_eq!(h.matches("<rect").count(), 3);
        let flat = histogram("t", "x", &[], 4);
        assert!(flat.contains("</svg>"));
    }
}
