//! Static SVG plots.
//!
//! Output is a pure function of the input: fixed canvas, fixed palette,
//! fixed number formatting and element order.

use std::fmt::Write as _;

use qphi_core::variability::{default_bin_count, normalized_histogram, pearson};
use qphi_core::Result;

/// Longest polyline emitted; longer series are decimated by stride.
pub const MAX_POLYLINE_POINTS: usize = 2000;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 48.0;

#[derive(Debug, Clone, Copy)]
struct Range1 {
    lo: f64,
    hi: f64,
}

impl Range1 {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        if hi == lo {
            let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
            return Self { lo: lo - pad, hi: hi + pad };
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad }
    }

    fn including(self, v: f64) -> Self {
        Self { lo: self.lo.min(v), hi: self.hi.max(v) }
    }
}

/// Ticks at 1, 2 or 5 times a power of ten.
fn ticks(r: Range1) -> Vec<f64> {
    let raw = (r.hi - r.lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (r.lo / step).ceil() as i64;
    let last = (r.hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if (1e-2..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Indices kept when drawing `len` points.
fn decimate(len: usize) -> Vec<usize> {
    if len <= MAX_POLYLINE_POINTS {
        return (0..len).collect();
    }
    let stride = len.div_ceil(MAX_POLYLINE_POINTS - 1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

struct Panel {
    left: f64,
    top: f64,
    x: Range1,
    y: Range1,
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.left + MARGIN_L + (x - self.x.lo) / (self.x.hi - self.x.lo) * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        self.top + PANEL_H - MARGIN_B - (y - self.y.lo) / (self.y.hi - self.y.lo) * (PANEL_H - MARGIN_T - MARGIN_B)
    }
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(cols: usize, rows: usize) -> Self {
        Self { width: PANEL_W * cols as f64, height: PANEL_H * rows as f64, body: String::new() }
    }

    fn panel(&mut self, col: usize, row: usize, x: Range1, y: Range1, title: &str, xlabel: &str, ylabel: &str) -> Panel {
        let p = Panel { left: PANEL_W * col as f64, top: PANEL_H * row as f64, x, y };
        let (x0, x1) = (p.left + MARGIN_L, p.left + PANEL_W - MARGIN_R);
        let (y0, y1) = (p.top + MARGIN_T, p.top + PANEL_H - MARGIN_B);
        let b = &mut self.body;
        let _ = writeln!(b, "<g class=\"panel\">");
        let _ = writeln!(
            b,
            "<rect class=\"frame\" x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#000\"/>",
            x1 - x0,
            y1 - y0
        );
        for t in ticks(x) {
            let px = p.px(t);
            let _ = writeln!(b, "<line x1=\"{px:.2}\" y1=\"{y1:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#000\"/>", y1 + 4.0);
            let _ = writeln!(
                b,
                "<text x=\"{px:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                y1 + 16.0,
                label(t)
            );
        }
        for t in ticks(y) {
            let py = p.py(t);
            let _ = writeln!(b, "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0:.2}\" y2=\"{py:.2}\" stroke=\"#000\"/>", x0 - 4.0);
            let _ = writeln!(
                b,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{}</text>",
                x0 - 6.0,
                py + 4.0,
                label(t)
            );
        }
        let _ = writeln!(
            b,
            "<text class=\"title\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
            0.5 * (x0 + x1),
            p.top + 20.0,
            escape(title)
        );
        let _ = writeln!(
            b,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            0.5 * (x0 + x1),
            y1 + 36.0,
            escape(xlabel)
        );
        let _ = writeln!(
            b,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 {:.2} {:.2})\">{}</text>",
            p.left + 16.0,
            0.5 * (y0 + y1),
            p.left + 16.0,
            0.5 * (y0 + y1),
            escape(ylabel)
        );
        p
    }

    fn polyline(&mut self, p: &Panel, class: &str, id: Option<u64>, color: &str, xs: &[f64], ys: &[f64]) {
        let mut pts = String::new();
        for k in decimate(xs.len()) {
            if !pts.is_empty() {
                pts.push(' ');
            }
            let _ = write!(pts, "{:.2},{:.2}", p.px(xs[k]), p.py(ys[k]));
        }
        let id = id.map(|c| format!(" data-cycle=\"{c}\"")).unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<polyline class=\"{class}\"{id} fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{pts}\"/>"
        );
    }

    fn text(&mut self, x: f64, y: f64, class: &str, s: &str) {
        let _ = writeln!(self.body, "<text class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"12\">{}</text>", escape(s));
    }

    fn end_panel(&mut self) {
        self.body.push_str("</g>\n");
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"#fff\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// One series of an overlay plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub cycle_id: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn overlay_panel(svg: &mut Svg, series: &[Series], title: &str, xlabel: &str, ylabel: &str) -> Panel {
    let x = Range1::of(series.iter().flat_map(|s| s.x.iter().copied()));
    let y = Range1::of(series.iter().flat_map(|s| s.y.iter().copied()));
    let p = svg.panel(0, 0, x, y, title, xlabel, ylabel);
    for (k, s) in series.iter().enumerate() {
        svg.polyline(&p, "cycle", Some(s.cycle_id), PALETTE[k % PALETTE.len()], &s.x, &s.y);
    }
    p
}

/// One polyline per series, e.g. I-V or Q-φ curves of several cycles.
pub fn overlay(series: &[Series], title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut svg = Svg::new(1, 1);
    overlay_panel(&mut svg, series, title, xlabel, ylabel);
    svg.end_panel();
    svg.finish()
}

/// Normalized Q-φ curves with the model line `min(1, x^n)`.
pub fn normalized_overlay(series: &[Series], n: f64) -> String {
    let mut svg = Svg::new(1, 1);
    let x_hi = series.iter().flat_map(|s| s.x.iter().copied()).filter(|v| v.is_finite()).fold(1.0, f64::max);
    let x = Range1::of(series.iter().flat_map(|s| s.x.iter().copied())).including(0.0).including(1.0);
    let y = Range1::of(series.iter().flat_map(|s| s.y.iter().copied())).including(0.0).including(1.0);
    let p = svg.panel(0, 0, x, y, &format!("normalized Q-phi, model n = {}", label(n)), "phi / phi_rst", "Q / Q_rst");
    for (k, s) in series.iter().enumerate() {
        svg.polyline(&p, "cycle", Some(s.cycle_id), PALETTE[k % PALETTE.len()], &s.x, &s.y);
    }
    let steps = 200;
    let xs: Vec<f64> = (0..=steps).map(|k| x_hi * k as f64 / steps as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&v| v.powf(n).min(1.0)).collect();
    svg.polyline(&p, "model", None, "#000", &xs, &ys);
    svg.end_panel();
    svg.finish()
}

/// Histograms of values normalized to their mean, one panel per quantity.
/// Only bins with nonzero counts are drawn.
pub fn histograms(quantities: &[(&str, Vec<f64>)]) -> Result<String> {
    let mut svg = Svg::new(1, quantities.len().max(1));
    for (row, (name, values)) in quantities.iter().enumerate() {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let h = normalized_histogram(values, mean, default_bin_count(values.len()))?;
        let x = Range1::of(h.edges.iter().copied());
        let y = Range1 { lo: 0.0, hi: h.counts.iter().copied().max().unwrap_or(1).max(1) as f64 * 1.1 };
        let p = svg.panel(0, row, x, y, &format!("{name} / mean"), "normalized value", "count");
        for (k, &c) in h.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (x0, x1) = (p.px(h.edges[k]), p.px(h.edges[k + 1]));
            let (y0, y1) = (p.py(c as f64), p.py(0.0));
            let _ = writeln!(
                svg.body,
                "<rect class=\"bar\" data-count=\"{c}\" x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" stroke=\"#000\"/>",
                x1 - x0,
                y1 - y0,
                PALETTE[row % PALETTE.len()]
            );
        }
        svg.end_panel();
    }
    Ok(svg.finish())
}

/// Scatter panels side by side. With `annotate`, each panel carries the
/// Pearson coefficient of its two quantities to three decimals.
pub fn scatter(panels: &[(&str, &str, Vec<f64>, Vec<f64>)], annotate: bool) -> Result<String> {
    let mut svg = Svg::new(panels.len().max(1), 1);
    for (col, (xname, yname, xs, ys)) in panels.iter().enumerate() {
        let p = svg.panel(col, 0, Range1::of(xs.iter().copied()), Range1::of(ys.iter().copied()), &format!("{yname} vs {xname}"), xname, yname);
        for (x, y) in xs.iter().zip(ys) {
            let _ = writeln!(
                svg.body,
                "<circle class=\"point\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\"/>",
                p.px(*x),
                p.py(*y),
                PALETTE[col % PALETTE.len()]
            );
        }
        if annotate {
            let r = pearson(xs, ys)?;
            svg.text(p.left + MARGIN_L + 8.0, p.top + MARGIN_T + 16.0, "pearson", &format!("r = {r:.3}"));
        }
        svg.end_panel();
    }
    Ok(svg.finish())
}
