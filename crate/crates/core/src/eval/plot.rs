//! Minimal SVG charts: scatter, overlaid histograms and line plots.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Frame {
    x: [f64; 2],
    y: [f64; 2],
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it.filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                return [0.0, 1.0];
            }
            if hi - lo < 1e-12 {
                return [lo - 0.5, hi + 0.5];
            }
            let m = 0.05 * (hi - lo);
            [lo - m, hi + m]
        };
        Frame { x: span(&mut xs.clone()), y: span(&mut ys.clone()) }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x[0]) / (self.x[1] - self.x[0]) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y[0]) / (self.y[1] - self.y[0]) * (H - 2.0 * PAD)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD, PAD);
    let _ = write!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    for (v, anchor_x) in [(frame.x[0], x0), (frame.x[1], x1)] {
        let _ = write!(out, r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{v:.3}</text>"#, y0 + 14.0);
    }
    for (v, anchor_y) in [(frame.y[0], y0), (frame.y[1], y1)] {
        let _ = write!(out, r#"<text x="{}" y="{anchor_y}" text-anchor="end">{v:.3}</text>"#, x0 - 4.0);
    }
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(x_label));
    let _ = write!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, W - PAD - 90.0, y - 9.0);
        let _ = write!(out, r#"<text x="{}" y="{y}">{}</text>"#, W - PAD - 76.0, escape(name));
    }
}

/// Points coloured by integer label.
pub fn scatter_svg(title: &str, points: &[[f64; 2]], labels: &[usize]) -> String {
    let frame = Frame::fit(points.iter().map(|p| p[0]), points.iter().map(|p| p[1]));
    let mut out = String::new();
    open(&mut out, title, &frame, "component 1", "component 2");
    for (p, &l) in points.iter().zip(labels) {
        let _ = write!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            frame.px(p[0]),
            frame.py(p[1]),
            PALETTE[l % PALETTE.len()]
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Equal-width bin counts over `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins.max(1)];
    let width = (hi - lo) / counts.len() as f64;
    for &v in values.iter().filter(|v| v.is_finite()) {
        let idx = if width > 0.0 { ((v - lo) / width).floor() as isize } else { 0 };
        let idx = idx.clamp(0, counts.len() as isize - 1) as usize;
        counts[idx] += 1;
    }
    counts
}

/// Overlaid, density-normalized histograms sharing one binning.
pub fn histogram_svg(title: &str, series: &[(String, Vec<f64>)], bins: usize) -> String {
    let all = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
    let width = (hi - lo) / bins.max(1) as f64;
    let densities: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, v)| {
            let n = v.len().max(1) as f64;
            histogram(v, lo, hi, bins).into_iter().map(|c| c as f64 / (n * width)).collect()
        })
        .collect();
    let top = densities.iter().flatten().copied().fold(0.0, f64::max);
    let frame = Frame { x: [lo, hi], y: [0.0, if top > 0.0 { top * 1.05 } else { 1.0 }] };
    let mut out = String::new();
    open(&mut out, title, &frame, "distance", "density");
    for (s, dens) in densities.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        for (b, &d) in dens.iter().enumerate() {
            let x0 = frame.px(lo + b as f64 * width);
            let x1 = frame.px(lo + (b + 1) as f64 * width);
            let y = frame.py(d);
            let _ = write!(
                out,
                r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.45"/>"#,
                (x1 - x0).max(0.5),
                (frame.py(0.0) - y).max(0.0)
            );
        }
    }
    legend(&mut out, &series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// One polyline per series over shared x positions.
pub fn line_svg(title: &str, x_label: &str, y_label: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let frame = Frame::fit(xs.iter().copied(), series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut out = String::new();
    open(&mut out, title, &frame, x_label, y_label);
    for (s, (_, ys)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = write!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = write!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
    }
    legend(&mut out, &series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}
