//! Minimal static SVG line plots and heatmaps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 58.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#e377c2"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else if a >= 100.0 || (v - v.round()).abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric error bar per point.
    pub errors: Option<Vec<f64>>,
    pub color: String,
    pub dashed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    /// Explicit x tick positions; derived from the data when empty.
    pub x_ticks: Vec<f64>,
    pub series: Vec<Series>,
    /// Labelled vertical reference lines.
    pub vlines: Vec<(f64, String)>,
    /// Labelled horizontal reference lines.
    pub hlines: Vec<(f64, String)>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    a: f64,
    b: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool, a: f64, b: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = (hi - lo) * 0.05;
        Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
            a,
            b,
        }
    }

    fn map(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }

    fn contains(&self, v: f64) -> bool {
        let v = if self.log {
            if v <= 0.0 {
                return false;
            }
            v.log10()
        } else {
            v
        };
        v >= self.lo - 1e-12 && v <= self.hi + 1e-12
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let lo = self.lo.ceil() as i32;
            let hi = self.hi.floor() as i32;
            if hi >= lo {
                return (lo..=hi).map(|e| 10f64.powi(e)).collect();
            }
            return vec![10f64.powf((self.lo + self.hi) / 2.0)];
        }
        nice_ticks(self.lo, self.hi)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>
"#,
        (LEFT + W - RIGHT) / 2.0,
        esc(title)
    );
}

fn axis_labels(out: &mut String, x_label: &str, y_label: &str) {
    let cx = (LEFT + W - RIGHT) / 2.0;
    let cy = (TOP + H - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#,
        H - 14.0,
        esc(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{cy}" text-anchor="middle" transform="rotate(-90 18 {cy})">{}</text>"#,
        esc(y_label)
    );
}

impl LinePlot {
    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| {
            s.points.iter().enumerate().flat_map(move |(i, p)| {
                let e = s.errors.as_ref().map_or(0.0, |e| e[i]);
                [p.1 - e, p.1 + e]
            })
        });
        let x = Axis::new(
            xs.chain(self.vlines.iter().map(|v| v.0)).chain(self.x_ticks.iter().copied()),
            self.log_x,
            LEFT,
            W - RIGHT,
        );
        let y = Axis::new(ys.chain(self.hlines.iter().map(|h| h.0)), self.log_y, H - BOTTOM, TOP);

        let mut out = String::new();
        header(&mut out, &self.title);
        let _ = writeln!(
            out,
            r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            W - RIGHT - LEFT,
            H - BOTTOM - TOP
        );
        let xt = if self.x_ticks.is_empty() { x.ticks() } else { self.x_ticks.clone() };
        for t in xt.into_iter().filter(|&t| x.contains(t)) {
            let px = x.map(t);
            let _ = writeln!(
                out,
                r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#333"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
                H - BOTTOM,
                H - BOTTOM + 5.0,
                H - BOTTOM + 19.0,
                label(t)
            );
        }
        for t in y.ticks().into_iter().filter(|&t| y.contains(t)) {
            let py = y.map(t);
            let _ = writeln!(
                out,
                r##"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="#333"/><line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#eee"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT - 5.0,
                W - RIGHT,
                LEFT - 8.0,
                py + 4.0,
                label(t)
            );
        }
        for (v, name) in &self.vlines {
            if x.contains(*v) {
                let px = x.map(*v);
                let _ = writeln!(
                    out,
                    r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="#888" stroke-dasharray="2 3"/><text x="{:.2}" y="{}" fill="#555">{}</text>"##,
                    H - BOTTOM,
                    px + 3.0,
                    TOP + 12.0,
                    esc(name)
                );
            }
        }
        for (v, name) in &self.hlines {
            if y.contains(*v) {
                let py = y.map(*v);
                let _ = writeln!(
                    out,
                    r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#888" stroke-dasharray="2 3"/><text x="{}" y="{:.2}" fill="#555">{}</text>"##,
                    W - RIGHT,
                    LEFT + 4.0,
                    py - 4.0,
                    esc(name)
                );
            }
        }
        for (k, s) in self.series.iter().enumerate() {
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| x.contains(p.0) && y.contains(p.1))
                .map(|p| format!("{:.2},{:.2}", x.map(p.0), y.map(p.1)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
                pts.join(" "),
                s.color
            );
            for (i, p) in s.points.iter().enumerate() {
                if !(x.contains(p.0) && y.contains(p.1)) {
                    continue;
                }
                let (px, py) = (x.map(p.0), y.map(p.1));
                if let Some(e) = s.errors.as_ref().map(|e| e[i]).filter(|e| *e > 0.0) {
                    let lo = p.1 - e;
                    let (y0, y1) = (y.map(if y.contains(lo) { lo } else { p.1 }), y.map(p.1 + e));
                    let _ = writeln!(
                        out,
                        r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{y1:.2}" stroke="{}"/>"#,
                        s.color
                    );
                }
                let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{}"/>"#, s.color);
            }
            let ly = TOP + 14.0 + 18.0 * k as f64;
            let lx = W - RIGHT + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
                lx + 22.0,
                s.color,
                lx + 28.0,
                ly + 4.0,
                esc(&s.name)
            );
        }
        axis_labels(&mut out, &self.x_label, &self.y_label);
        out.push_str("</svg>\n");
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct Heatmap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_ticks: Vec<String>,
    pub y_ticks: Vec<String>,
    /// `cells[row][col]`, row 0 drawn at the bottom.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Value drawn white.
    pub center: f64,
    /// Value drawn fully red.
    pub upper: f64,
    /// Value drawn fully blue.
    pub lower: f64,
    pub stars: Vec<(usize, usize)>,
}

fn mix(t: f64, to: (f64, f64, f64)) -> String {
    let t = t.clamp(0.0, 1.0);
    let c = |v: f64| (255.0 + (v - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(to.0), c(to.1), c(to.2))
}

impl Heatmap {
    pub fn color(&self, v: f64) -> String {
        if v >= self.center {
            let span = self.upper - self.center;
            mix(if span > 0.0 { (v - self.center) / span } else { 0.0 }, (178.0, 24.0, 43.0))
        } else {
            let span = self.center - self.lower;
            mix(if span > 0.0 { (self.center - v) / span } else { 1.0 }, (33.0, 102.0, 172.0))
        }
    }

    pub fn render(&self) -> String {
        let rows = self.cells.len().max(1);
        let cols = self.cells.iter().map(|r| r.len()).max().unwrap_or(0).max(1);
        let cw = (W - RIGHT - LEFT) / cols as f64;
        let ch = (H - BOTTOM - TOP) / rows as f64;
        let mut out = String::new();
        header(&mut out, &self.title);
        for (r, row) in self.cells.iter().enumerate() {
            let y0 = H - BOTTOM - (r + 1) as f64 * ch;
            for (c, v) in row.iter().enumerate() {
                let x0 = LEFT + c as f64 * cw;
                let (fill, text) = match v {
                    Some(v) => (self.color(*v), format!("{:.1}", 100.0 * v)),
                    None => ("#f0f0f0".to_string(), String::new()),
                };
                let _ = writeln!(
                    out,
                    r##"<rect x="{x0:.2}" y="{y0:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}" stroke="#fff"/>"##
                );
                if !text.is_empty() && cw > 26.0 && ch > 12.0 {
                    let _ = writeln!(
                        out,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{text}</text>"#,
                        x0 + cw / 2.0,
                        y0 + ch / 2.0 + 3.0
                    );
                }
            }
        }
        for &(r, c) in &self.stars {
            let cx = LEFT + (c as f64 + 0.85) * cw;
            let cy = H - BOTTOM - (r as f64 + 0.8) * ch;
            let _ = writeln!(
                out,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="14" fill="black">★</text>"#,
                cy + 5.0
            );
        }
        for (c, t) in self.x_ticks.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                LEFT + (c as f64 + 0.5) * cw,
                H - BOTTOM + 16.0,
                esc(t)
            );
        }
        for (r, t) in self.y_ticks.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
                LEFT - 6.0,
                H - BOTTOM - (r as f64 + 0.5) * ch + 4.0,
                esc(t)
            );
        }
        let bx = W - RIGHT + 30.0;
        let steps = 40;
        let bh = (H - BOTTOM - TOP) / steps as f64;
        for k in 0..steps {
            let t = k as f64 / (steps - 1) as f64;
            let v = self.lower + (self.upper - self.lower) * t;
            let _ = writeln!(
                out,
                r#"<rect x="{bx}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
                H - BOTTOM - (k + 1) as f64 * bh,
                bh + 0.5,
                self.color(v)
            );
        }
        for (v, name) in [
            (self.lower, "min"),
            (self.center, "baseline"),
            (self.upper, "max"),
        ] {
            let span = (self.upper - self.lower).max(1e-12);
            let py = H - BOTTOM - (v - self.lower) / span * (H - BOTTOM - TOP);
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.2}" font-size="10">{:.1} {name}</text>"#,
                bx + 20.0,
                py + 4.0,
                100.0 * v
            );
        }
        axis_labels(&mut out, &self.x_label, &self.y_label);
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(nice_ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(label(0.25), "0.25");
        assert_eq!(label(1024.0), "1024");
    }

    #[test]
    fn heatmap_colors_anchor_at_center() {
        let h = Heatmap {
            center: 0.9,
            upper: 0.96,
            lower: 0.5,
            ..Heatmap::default()
        };
        assert_eq!(h.color(0.9), "#ffffff");
        assert_eq!(h.color(0.96), "#b2182b");
        assert_eq!(h.color(0.5), "#2166ac");
    }

    #[test]
    fn line_plot_is_well_formed() {
        let p = LinePlot {
            title: "t <1>".into(),
            log_x: true,
            log_y: true,
            series: vec![Series {
                name: "a".into(),
                points: vec![(16.0, 1e-3), (1024.0, 1e-4)],
                errors: Some(vec![1e-4, 1e-5]),
                color: PALETTE[0].into(),
                dashed: false,
            }],
            vlines: vec![(158.0, "n*".into())],
            ..LinePlot::default()
        };
        let svg = p.render();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
