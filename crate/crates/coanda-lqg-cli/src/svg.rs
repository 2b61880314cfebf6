//! Minimal static SVG line plots for the emitted artifacts.

/// One curve: label, color, and (x, y) points.
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub struct PlotSpec<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub series: Vec<Series<'a>>,
}

const W: f64 = 860.0;
const H: f64 = 520.0;
const ML: f64 = 72.0;
const MR: f64 = 24.0;
const MT: f64 = 40.0;
const MB: f64 = 56.0;

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let span = hi - lo;
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= 7.0)
        .unwrap_or(mag * 10.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 * span {
        out.push(t);
        t += step;
    }
    out
}

/// Renders the plot to an SVG string.
pub fn render(spec: &PlotSpec) -> String {
    let xf = |x: f64| if spec.log_x { x.max(1e-12).log10() } else { x };
    let (mut x_lo, mut x_hi) = (f64::MAX, f64::MIN);
    let (mut y_lo, mut y_hi) = (f64::MAX, f64::MIN);
    for s in &spec.series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            x_lo = x_lo.min(xf(x));
            x_hi = x_hi.max(xf(x));
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    if x_lo > x_hi {
        x_lo = 0.0;
        x_hi = 1.0;
    }
    if y_lo > y_hi {
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if (y_hi - y_lo).abs() < 1e-30 {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let pad = 0.04 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
    let px = |x: f64| ML + (xf(x) - x_lo) / (x_hi - x_lo) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        xml_escape(spec.title)
    ));

    // axes box and ticks
    out.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    if spec.log_x {
        let d0 = x_lo.floor() as i64;
        let d1 = x_hi.ceil() as i64;
        for d in d0..=d1 {
            let x = 10f64.powi(d as i32);
            let xv = d as f64;
            if xv < x_lo - 1e-9 || xv > x_hi + 1e-9 {
                continue;
            }
            let p = ML + (xv - x_lo) / (x_hi - x_lo) * (W - ML - MR);
            out.push_str(&format!(
                "<line x1=\"{p:.1}\" y1=\"{MT}\" x2=\"{p:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
                H - MB
            ));
            out.push_str(&format!(
                "<text x=\"{p:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
                H - MB + 18.0,
                format_tick(x)
            ));
        }
    } else {
        for t in nice_ticks(x_lo, x_hi) {
            let p = ML + (t - x_lo) / (x_hi - x_lo) * (W - ML - MR);
            out.push_str(&format!(
                "<line x1=\"{p:.1}\" y1=\"{MT}\" x2=\"{p:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
                H - MB
            ));
            out.push_str(&format!(
                "<text x=\"{p:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
                H - MB + 18.0,
                format_tick(t)
            ));
        }
    }
    for t in nice_ticks(y_lo, y_hi) {
        let p = py(t);
        out.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{p:.1}\" x2=\"{:.1}\" y2=\"{p:.1}\" stroke=\"#ddd\"/>\n",
            W - MR
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            ML - 8.0,
            p + 4.0,
            format_tick(t)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 14.0,
        xml_escape(spec.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        xml_escape(spec.y_label)
    ));

    // curves
    for s in &spec.series {
        let mut d = String::new();
        let mut pen_up = true;
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                pen_up = true;
                continue;
            }
            let cmd = if pen_up { 'M' } else { 'L' };
            d.push_str(&format!("{cmd}{:.2} {:.2} ", px(x), py(y)));
            pen_up = false;
        }
        out.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            d.trim_end(),
            s.color
        ));
    }
    // legend
    for (i, s) in spec.series.iter().enumerate() {
        let y = MT + 16.0 + 18.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            W - MR - 150.0,
            W - MR - 120.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            W - MR - 112.0,
            y + 4.0,
            xml_escape(s.label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 10_000.0 || a < 0.001 {
        format!("{v:.0e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
