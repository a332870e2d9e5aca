//! Loss curves as a standalone SVG, rendered from trace CSV text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Mean and standard deviation of the loss across trials, per iteration.
pub struct Curve {
    pub label: String,
    pub iters: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Reads `trial,iter,loss,...` text. The last non-terminal row of each
/// (trial, iter) is the loss after that iteration's events; a terminal row
/// counts only for an iteration without other rows.
pub fn curve_from_csv(label: &str, text: &str) -> Result<Curve, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| format!("{label}: {e}"))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| format!("{label}: missing column {name}"));
    let (ti, ii, li, ei) = (col("trial")?, col("iter")?, col("loss")?, col("event")?);
    let mut per_iter: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| format!("{label}: {e}"))?;
        let parse = |k: usize| rec[k].parse::<f64>().map_err(|e| format!("{label}: bad number {:?}: {e}", &rec[k]));
        let trial = parse(ti)? as usize;
        let iter = parse(ii)? as usize;
        let loss = parse(li)?;
        let slot = per_iter.entry(iter).or_default();
        // the terminal row only fills an iteration nothing else reported
        if &rec[ei] == "terminate" {
            slot.entry(trial).or_insert(loss);
        } else {
            slot.insert(trial, loss);
        }
    }
    let mut curve = Curve { label: label.to_string(), iters: Vec::new(), mean: Vec::new(), std: Vec::new() };
    for (iter, trials) in per_iter {
        let n = trials.len() as f64;
        let mean = trials.values().sum::<f64>() / n;
        let var = trials.values().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        curve.iters.push(iter);
        curve.mean.push(mean);
        curve.std.push(var.sqrt());
    }
    Ok(curve)
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn value(&self, y: f64) -> f64 {
        if self.log {
            y.max(10f64.powf(self.lo)).log10()
        } else {
            y
        }
    }

    fn pixel(&self, y: f64) -> f64 {
        let v = self.value(y);
        TOP + (HEIGHT - TOP - BOTTOM) * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }
}

fn x_pixel(iter: usize, max_iter: usize) -> f64 {
    LEFT + (WIDTH - LEFT - RIGHT) * iter as f64 / max_iter.max(1) as f64
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with a one-standard-deviation band per method. The loss axis is
/// logarithmic when every mean is positive, linear otherwise.
pub fn loss_plot_svg(title: &str, traces: &[(String, String)]) -> Result<String, String> {
    let curves: Vec<Curve> = traces.iter().map(|(l, t)| curve_from_csv(l, t)).collect::<Result<_, _>>()?;
    let finite = |c: &Curve| c.mean.iter().copied().filter(|x| x.is_finite()).collect::<Vec<_>>();
    let all: Vec<f64> = curves.iter().flat_map(finite).collect();
    if all.is_empty() {
        return Err("no finite losses to plot".into());
    }
    let log = all.iter().all(|&x| x > 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &curves {
        for (m, s) in c.mean.iter().zip(&c.std) {
            if !m.is_finite() {
                continue;
            }
            let (a, b) = if log { (m.log10(), (m + s).log10()) } else { (m - s, m + s) };
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    if log {
        lo = lo.floor();
        hi = hi.ceil();
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let axis = Axis { log, lo, hi };
    let max_iter = curves.iter().filter_map(|c| c.iters.last().copied()).max().unwrap_or(1);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);

    // y ticks
    if log {
        let mut e = lo as i64;
        while e as f64 <= hi {
            let y = axis.pixel(10f64.powi(e as i32));
            let _ = writeln!(s, r##"<line x1="{x0}" x2="{x1}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#, x0 - 6.0, y + 4.0);
            e += 1;
        }
    } else {
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let y = axis.pixel(v);
            let _ = writeln!(s, r##"<line x1="{x0}" x2="{x1}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3e}</text>"#, x0 - 6.0, y + 4.0);
        }
    }
    for k in 0..=5 {
        let it = max_iter * k / 5;
        let x = x_pixel(it, max_iter);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{it}</text>"#, y1 + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, (x0 + x1) / 2.0, HEIGHT - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">loss{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        if log { " (log scale)" } else { "" }
    );

    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(usize, f64, f64)> = c
            .iters
            .iter()
            .zip(c.mean.iter().zip(&c.std))
            .filter(|(_, (m, _))| m.is_finite())
            .map(|(&i, (&m, &sd))| (i, m, sd))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let mut band = String::new();
        for &(i, m, sd) in &pts {
            let _ = write!(band, "{:.2},{:.2} ", x_pixel(i, max_iter), axis.pixel(m + sd));
        }
        for &(i, m, sd) in pts.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", x_pixel(i, max_iter), axis.pixel(m - sd));
        }
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, band.trim_end());
        let mut line = String::new();
        for &(i, m, _) in &pts {
            let _ = write!(line, "{:.2},{:.2} ", x_pixel(i, max_iter), axis.pixel(m));
        }
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#, line.trim_end());
        let ly = y0 + 16.0 + 20.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, x1 + 14.0, x1 + 38.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x1 + 44.0, ly + 4.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
