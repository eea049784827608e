//! Minimal SVG charts: line and band panels, forest plots, box plots.
//! Coordinates are printed with fixed precision so output is byte-stable.

use std::fmt::Write;

const WIDTH: f64 = 760.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;
const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

pub const BLUE: &str = "#1f77b4";
pub const ORANGE: &str = "#ff7f0e";
pub const GREEN: &str = "#2ca02c";
pub const GREY: &str = "#555555";
pub const PALETTE: [&str; 3] = [BLUE, ORANGE, GREEN];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Roughly five round tick values covering `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|k| k * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Line {
        xs: Vec<f64>,
        ys: Vec<Option<f64>>,
        color: &'static str,
        dashed: bool,
    },
    Band {
        xs: Vec<f64>,
        lo: Vec<Option<f64>>,
        hi: Vec<Option<f64>>,
        color: &'static str,
    },
}

/// One x-y panel.
#[derive(Debug, Clone, Default)]
pub struct Panel {
    title: String,
    x_label: String,
    y_label: String,
    layers: Vec<Layer>,
    vlines: Vec<f64>,
    zero_line: bool,
}

impl Panel {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Default::default()
        }
    }

    pub fn line(mut self, xs: Vec<f64>, ys: Vec<Option<f64>>, color: &'static str, dashed: bool) -> Self {
        self.layers.push(Layer::Line { xs, ys, color, dashed });
        self
    }

    pub fn band(mut self, xs: Vec<f64>, lo: Vec<Option<f64>>, hi: Vec<Option<f64>>, color: &'static str) -> Self {
        self.layers.push(Layer::Band { xs, lo, hi, color });
        self
    }

    pub fn vline(mut self, x: f64) -> Self {
        self.vlines.push(x);
        self
    }

    pub fn zero_line(mut self) -> Self {
        self.zero_line = true;
        self
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let mut see = |x: f64, y: Option<f64>| {
            if let Some(y) = y.filter(|y| y.is_finite()) {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        };
        for l in &self.layers {
            match l {
                Layer::Line { xs, ys, .. } => xs.iter().zip(ys).for_each(|(&x, &y)| see(x, y)),
                Layer::Band { xs, lo, hi, .. } => {
                    for ((&x, &l), &h) in xs.iter().zip(lo).zip(hi) {
                        see(x, l);
                        see(x, h);
                    }
                }
            }
        }
        if self.zero_line {
            y0 = y0.min(0.0);
            y1 = y1.max(0.0);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        for &v in &self.vlines {
            x0 = x0.min(v);
            x1 = x1.max(v);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            let pad = y0.abs().max(1.0) * 0.05;
            y0 -= pad;
            y1 += pad;
        }
        let pad = (y1 - y0) * 0.05;
        (x0, x1, y0 - pad, y1 + pad)
    }

    fn render(&self, out: &mut String, top: f64, height: f64) {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = height - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + MARGIN_TOP + (y1 - y) / (y1 - y0) * ph;

        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} font-weight=\"bold\">{}</text>",
            MARGIN_LEFT,
            top + 18.0,
            esc(&self.title)
        );
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#999999\"/>",
            MARGIN_LEFT,
            top + MARGIN_TOP
        );
        for t in ticks(x0, x1) {
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">{}</text>",
                sx(t),
                top + MARGIN_TOP + ph + 14.0,
                fmt_tick(t)
            );
        }
        for t in ticks(y0, y1) {
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#eeeeee\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"end\">{}</text>",
                MARGIN_LEFT,
                MARGIN_LEFT + pw,
                MARGIN_LEFT - 4.0,
                sy(t) + 4.0,
                fmt_tick(t),
                y = sy(t)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">{}</text>",
            MARGIN_LEFT + pw / 2.0,
            top + height - 6.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            "<text x=\"14\" y=\"{:.2}\" {FONT} text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{}</text>",
            top + MARGIN_TOP + ph / 2.0,
            top + MARGIN_TOP + ph / 2.0,
            esc(&self.y_label)
        );
        if self.zero_line && y0 < 0.0 && y1 > 0.0 {
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{GREY}\"/>",
                MARGIN_LEFT,
                MARGIN_LEFT + pw,
                y = sy(0.0)
            );
        }

        for l in &self.layers {
            match l {
                Layer::Band { xs, lo, hi, color } => {
                    for run in runs(xs, lo, hi) {
                        let mut d = String::new();
                        for (i, &(x, l, _)) in run.iter().enumerate() {
                            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(x), sy(l));
                        }
                        for &(x, _, h) in run.iter().rev() {
                            let _ = write!(d, "L{:.2},{:.2} ", sx(x), sy(h));
                        }
                        let _ = writeln!(
                            out,
                            "<path d=\"{}Z\" fill=\"{color}\" fill-opacity=\"0.25\" stroke=\"none\"/>",
                            d
                        );
                    }
                }
                Layer::Line { xs, ys, color, dashed } => {
                    for run in runs(xs, ys, ys) {
                        let pts: Vec<String> = run
                            .iter()
                            .map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y)))
                            .collect();
                        let _ = writeln!(
                            out,
                            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.3\"{}/>",
                            pts.join(" "),
                            if *dashed { " stroke-dasharray=\"4 3\"" } else { "" }
                        );
                    }
                }
            }
        }
        for &v in &self.vlines {
            let _ = writeln!(
                out,
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{GREY}\" stroke-dasharray=\"2 2\"/>",
                top + MARGIN_TOP,
                top + MARGIN_TOP + ph,
                x = sx(v)
            );
        }
    }
}

/// Splits parallel series into maximal runs where all values are present.
fn runs(xs: &[f64], a: &[Option<f64>], b: &[Option<f64>]) -> Vec<Vec<(f64, f64, f64)>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for ((&x, &a), &b) in xs.iter().zip(a).zip(b) {
        match (a, b) {
            (Some(a), Some(b)) if a.is_finite() && b.is_finite() => cur.push((x, a, b)),
            _ => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn document(height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {WIDTH:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Panels stacked vertically, each `panel_height` tall.
pub fn stacked(panels: &[Panel], panel_height: f64) -> String {
    let mut body = String::new();
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut body, i as f64 * panel_height, panel_height);
    }
    document(panels.len() as f64 * panel_height, &body)
}

/// One row of a forest plot.
#[derive(Debug, Clone)]
pub struct Interval {
    pub label: String,
    pub outer: (f64, f64),
    pub inner: (f64, f64),
    pub center: f64,
    pub highlight: bool,
}

pub fn forest(title: &str, rows: &[Interval]) -> String {
    let row_h = 18.0;
    let left = 150.0;
    let pw = WIDTH - left - MARGIN_RIGHT;
    let height = MARGIN_TOP + MARGIN_BOTTOM + row_h * rows.len().max(1) as f64;
    let mut lo = rows.iter().map(|r| r.outer.0).fold(0.0f64, f64::min);
    let mut hi = rows.iter().map(|r| r.outer.1).fold(0.0f64, f64::max);
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        lo = -1.0;
        hi = 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |x: f64| left + (x - lo) / (hi - lo) * pw;
    let bottom = MARGIN_TOP + row_h * rows.len() as f64;

    let mut body = String::new();
    let _ = writeln!(
        body,
        "<text x=\"{left:.2}\" y=\"18\" {FONT} font-weight=\"bold\">{}</text>",
        esc(title)
    );
    for t in ticks(lo, hi) {
        let _ = writeln!(
            body,
            "<line x1=\"{x:.2}\" y1=\"{MARGIN_TOP:.2}\" x2=\"{x:.2}\" y2=\"{bottom:.2}\" stroke=\"#eeeeee\"/>\n<text x=\"{x:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">{}</text>",
            bottom + 14.0,
            fmt_tick(t),
            x = sx(t)
        );
    }
    let _ = writeln!(
        body,
        "<line x1=\"{x:.2}\" y1=\"{MARGIN_TOP:.2}\" x2=\"{x:.2}\" y2=\"{bottom:.2}\" stroke=\"{GREY}\"/>",
        x = sx(0.0)
    );
    for (i, r) in rows.iter().enumerate() {
        let y = MARGIN_TOP + row_h * (i as f64 + 0.5);
        let color = if r.highlight { ORANGE } else { BLUE };
        let _ = writeln!(
            body,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"end\">{}</text>\n<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"4\"/>\n<circle cx=\"{:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"white\" stroke=\"{color}\"/>",
            left - 6.0,
            y + 4.0,
            esc(&r.label),
            sx(r.outer.0),
            sx(r.outer.1),
            sx(r.inner.0),
            sx(r.inner.1),
            sx(r.center),
        );
    }
    document(height, &body)
}

/// Five-number summary of one box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Groups along the x axis, each with up to `series.len()` side-by-side
/// boxes. Missing boxes leave a gap.
pub fn boxplot(title: &str, y_label: &str, series: &[&str], groups: &[(String, Vec<Option<BoxStats>>)]) -> String {
    let height = 420.0;
    let bottom_margin = 110.0;
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = height - MARGIN_TOP - bottom_margin;
    let all: Vec<BoxStats> = groups.iter().flat_map(|(_, b)| b.iter().flatten().copied()).collect();
    let mut lo = all.iter().map(|b| b.min).fold(0.0f64, f64::min);
    let mut hi = all.iter().map(|b| b.max).fold(0.0f64, f64::max);
    if hi <= lo {
        lo = -1.0;
        hi = 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let sy = |y: f64| MARGIN_TOP + (hi - y) / (hi - lo) * ph;
    let gw = pw / groups.len().max(1) as f64;
    let bw = gw * 0.8 / series.len().max(1) as f64;

    let mut body = String::new();
    let _ = writeln!(
        body,
        "<text x=\"{MARGIN_LEFT:.2}\" y=\"18\" {FONT} font-weight=\"bold\">{}</text>",
        esc(title)
    );
    for t in ticks(lo, hi) {
        let _ = writeln!(
            body,
            "<line x1=\"{MARGIN_LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#eeeeee\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"end\">{}</text>",
            MARGIN_LEFT + pw,
            MARGIN_LEFT - 4.0,
            sy(t) + 4.0,
            fmt_tick(t),
            y = sy(t)
        );
    }
    let _ = writeln!(
        body,
        "<line x1=\"{MARGIN_LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{GREY}\"/>",
        MARGIN_LEFT + pw,
        y = sy(0.0)
    );
    let _ = writeln!(
        body,
        "<text x=\"14\" y=\"{c:.2}\" {FONT} text-anchor=\"middle\" transform=\"rotate(-90 14 {c:.2})\">{}</text>",
        esc(y_label),
        c = MARGIN_TOP + ph / 2.0
    );
    for (g, (label, boxes)) in groups.iter().enumerate() {
        let gx = MARGIN_LEFT + gw * g as f64 + gw * 0.1;
        let cx = MARGIN_LEFT + gw * (g as f64 + 0.5);
        let ly = MARGIN_TOP + ph + 10.0;
        let _ = writeln!(
            body,
            "<text x=\"{cx:.2}\" y=\"{ly:.2}\" {FONT} text-anchor=\"end\" transform=\"rotate(-40 {cx:.2} {ly:.2})\">{}</text>",
            esc(label)
        );
        for (k, b) in boxes.iter().enumerate() {
            let Some(b) = b else { continue };
            let color = PALETTE[k % PALETTE.len()];
            let x = gx + bw * k as f64;
            let mid = x + bw / 2.0;
            let _ = writeln!(
                body,
                "<line x1=\"{mid:.2}\" y1=\"{:.2}\" x2=\"{mid:.2}\" y2=\"{:.2}\" stroke=\"{color}\"/>\n<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.35\" stroke=\"{color}\"/>\n<line x1=\"{:.2}\" y1=\"{m:.2}\" x2=\"{:.2}\" y2=\"{m:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                sy(b.max),
                sy(b.min),
                x + bw * 0.1,
                sy(b.q75),
                bw * 0.8,
                (sy(b.q25) - sy(b.q75)).max(0.5),
                x + bw * 0.1,
                x + bw * 0.9,
                m = sy(b.median)
            );
        }
    }
    for (k, name) in series.iter().enumerate() {
        let x = MARGIN_LEFT + 10.0 + 110.0 * k as f64;
        let y = height - 14.0;
        let _ = writeln!(
            body,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n<text x=\"{:.2}\" y=\"{y:.2}\" {FONT}>{}</text>",
            y - 9.0,
            PALETTE[k % PALETTE.len()],
            x + 14.0,
            esc(name)
        );
    }
    document(height, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = ticks(0.3, 9.7);
        assert_eq!(t, vec![2.0, 4.0, 6.0, 8.0]);
        let t = ticks(-12.0, 3.0);
        assert!(t.contains(&0.0));
        assert!(t.iter().all(|v| (-12.0..=3.0).contains(v)));
        assert_eq!(ticks(1.0, 1.0), vec![1.0]);
    }

    proptest::proptest! {
        #[test]
        fn ticks_are_few_increasing_and_in_range(lo in -1e6f64..1e6, width in 1e-6f64..1e6) {
            let hi = lo + width;
            let t = ticks(lo, hi);
            proptest::prop_assert!((2..=11).contains(&t.len()), "{:?}", t);
            proptest::prop_assert!(t.windows(2).all(|w| w[0] < w[1]));
            let slack = 1e-9 * width.max(lo.abs());
            proptest::prop_assert!(t.iter().all(|v| lo - slack <= *v && *v <= hi + slack));
        }
    }

    #[test]
    fn gaps_split_runs() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [Some(1.0), Some(2.0), None, Some(3.0), Some(f64::NAN)];
        let r = runs(&xs, &y, &y);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].len(), 2);
        assert_eq!(r[1], vec![(3.0, 3.0, 3.0)]);
    }

    #[test]
    fn documents_are_well_formed_and_escaped() {
        let p = Panel::new("a < b", "day", "visits")
            .line(vec![0.0, 1.0], vec![Some(1.0), Some(2.0)], BLUE, false)
            .band(
                vec![0.0, 1.0],
                vec![Some(0.0), Some(1.0)],
                vec![Some(2.0), Some(3.0)],
                BLUE,
            )
            .vline(0.5)
            .zero_line();
        let s = stacked(&[p.clone(), p], 200.0);
        assert!(s.starts_with("<svg"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<polyline").count(), 2);

        let f = forest(
            "f",
            &[Interval {
                label: "x".into(),
                outer: (-1.0, 2.0),
                inner: (0.0, 1.0),
                center: 0.5,
                highlight: true,
            }],
        );
        assert_eq!(f.matches("<circle").count(), 1);

        let b = BoxStats {
            min: -3.0,
            q25: -2.0,
            median: -1.0,
            q75: 0.5,
            max: 2.0,
        };
        let s = boxplot("b", "Phi", &["r1", "r2"], &[("g".into(), vec![Some(b), None])]);
        assert_eq!(s.matches("fill-opacity=\"0.35\"").count(), 1);
    }
}
