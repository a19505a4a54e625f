//! Minimal static SVG 1.1 plots: line plots and heat maps.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Round tick values covering [lo, hi].
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, s: &mut String, title: &str, xl: &str, yl: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(s, r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#000"/>"##, x1 - x0, y1 - y0);
        for t in ticks(self.x.0, self.x.1) {
            let px = self.px(t);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="#000"/><text x="{px:.2}" y="{}" text-anchor="middle" font-size="12">{}</text>"##,
                y1 + 5.0,
                y1 + 20.0,
                label(t)
            );
        }
        for t in ticks(self.y.0, self.y.1) {
            let py = self.py(t);
            let _ = writeln!(
                s,
                r##"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#000"/><text x="{}" y="{:.2}" text-anchor="end" font-size="12">{}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                label(t)
            );
        }
        let _ = writeln!(
            s,
            r##"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
            (x0 + x1) / 2.0,
            escape(title)
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"##,
            (x0 + x1) / 2.0,
            H - 15.0,
            escape(xl)
        );
        let _ = writeln!(
            s,
            r##"<text x="18" y="{0}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {0})">{1}</text>"##,
            (y0 + y1) / 2.0,
            escape(yl)
        );
    }
}

fn header() -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"#fff\"/>\n"
    )
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line plot of one or more series; non-finite points break the line.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let frame = Frame {
        x: range(all().map(|p| p.0)),
        y: range(all().map(|p| p.1)),
    };
    let mut s = header();
    frame.axes(&mut s, title, x_label, y_label);
    for (k, ser) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &ser.points {
            if !(x.is_finite() && y.is_finite()) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, frame.px(x), frame.py(y));
            pen_down = true;
        }
        let _ = writeln!(s, r##"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"##, d.trim_end());
        if ser.points.len() <= 40 {
            for &(x, y) in ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"##, frame.px(x), frame.py(y));
            }
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{2}" y="{3}" font-size="12">{4}</text>"##,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0,
            W - RIGHT + 35.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Blue-to-yellow ramp.
fn colour(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let f = t * (stops.len() - 1) as f64;
    let i = (f.floor() as usize).min(stops.len() - 2);
    let u = f - i as f64;
    let (a, b) = (stops[i], stops[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * u).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heat map of `values[j][i]` over the grid `xs[i]`, `ys[j]`; non-finite cells
/// are left blank.
pub fn heat_map(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>], scale_label: &str) -> String {
    let half = |v: &[f64], i: usize| -> (f64, f64) {
        let lo = if i > 0 { 0.5 * (v[i - 1] + v[i]) } else if v.len() > 1 { v[0] - 0.5 * (v[1] - v[0]) } else { v[0] - 0.5 };
        let hi = if i + 1 < v.len() { 0.5 * (v[i] + v[i + 1]) } else if v.len() > 1 { v[i] + 0.5 * (v[i] - v[i - 1]) } else { v[0] + 0.5 };
        (lo, hi)
    };
    let frame = Frame {
        x: (half(xs, 0).0, half(xs, xs.len() - 1).1),
        y: (half(ys, 0).0, half(ys, ys.len() - 1).1),
    };
    let (vlo, vhi) = range(values.iter().flatten().copied());
    let mut s = header();
    for (j, row) in values.iter().enumerate() {
        let (y0, y1) = half(ys, j);
        for (i, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let (x0, x1) = half(xs, i);
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"##,
                frame.px(x0),
                frame.py(y1),
                frame.px(x1) - frame.px(x0) + 0.3,
                frame.py(y0) - frame.py(y1) + 0.3,
                colour((v - vlo) / (vhi - vlo))
            );
        }
    }
    frame.axes(&mut s, title, x_label, y_label);
    // colour bar
    let (bx, bw, btop, bbot) = (W - RIGHT + 30.0, 20.0, TOP, H - BOTTOM);
    let n = 50;
    for k in 0..n {
        let t = k as f64 / (n - 1) as f64;
        let y = bbot - (k + 1) as f64 * (bbot - btop) / n as f64;
        let _ = writeln!(
            s,
            r##"<rect x="{bx}" y="{y:.2}" width="{bw}" height="{:.2}" fill="{}"/>"##,
            (bbot - btop) / n as f64 + 0.3,
            colour(t)
        );
    }
    for (v, y) in [(vhi, btop + 4.0), (vlo, bbot)] {
        let _ = writeln!(s, r##"<text x="{}" y="{y:.2}" font-size="12">{}</text>"##, bx + bw + 5.0, label(v));
    }
    let _ = writeln!(s, r##"<text x="{bx}" y="{}" font-size="12">{}</text>"##, btop - 8.0, escape(scale_label));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert!(ticks(-0.3, 0.7).contains(&0.0));
    }

    #[test]
    fn plots_are_well_formed() {
        let s = line_plot(
            "a<b",
            "x",
            "y",
            &[Series {
                name: "s".into(),
                points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)],
            }],
        );
        assert!(s.starts_with("<?xml") && s.ends_with("</svg>\n"));
        assert!(s.contains("a&lt;b"));
        let h = heat_map("t", "x", "y", &[0.0, 1.0], &[0.0, 1.0, 2.0], &[vec![1.0, 2.0], vec![3.0, f64::NAN], vec![0.0, 1.0]], "G");
        assert_eq!(h.matches("<rect").count(), 1 + 5 + 50 + 1);
    }
}
