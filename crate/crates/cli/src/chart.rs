//! Self-contained SVG charts emitted as direct markup: grouped bars for
//! sliced metrics and polylines for loss/AUC curves. No external assets, so
//! the files render anywhere as-is.

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 460.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 64.0;
const MARGIN_BOTTOM: f64 = 56.0;

const PALETTE: [&str; 6] = ["#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#b279a2"];

/// One named sequence of values: a line, or one bar per group.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Series {
        Series { name: name.into(), values }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    let mut s = if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    };
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    s
}

struct Frame {
    x0: f64,
    y0: f64,
    pw: f64,
    ph: f64,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn new(lo: f64, hi: f64) -> Frame {
        Frame {
            x0: MARGIN_LEFT,
            y0: MARGIN_TOP,
            pw: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
            ph: HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
            lo,
            hi,
        }
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.ph - (v - self.lo) / (self.hi - self.lo) * self.ph
    }

    fn x(&self, frac: f64) -> f64 {
        self.x0 + frac * self.pw
    }
}

fn open_svg(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
            "<text x=\"{ml}\" y=\"24\" font-size=\"16\" fill=\"#222222\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        ml = MARGIN_LEFT,
        title = escape(title)
    )
}

fn legend(series: &[Series]) -> String {
    let mut out = String::new();
    let mut x = MARGIN_LEFT;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        out.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"36\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n"
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"45\" font-size=\"12\" fill=\"#222222\">{}</text>\n",
            x + 14.0,
            escape(&s.name)
        ));
        x += 24.0 + 7.5 * s.name.len() as f64;
    }
    out
}

fn y_axis(frame: &Frame, y_label: &str) -> String {
    let mut out = String::new();
    for i in 0..5 {
        let v = frame.lo + (frame.hi - frame.lo) * i as f64 / 4.0;
        let y = frame.y(v);
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#e0e0e0\"/>\n",
            frame.x0,
            frame.x0 + frame.pw
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#444444\" \
             text-anchor=\"end\">{}</text>\n",
            frame.x0 - 6.0,
            y + 4.0,
            fmt_num(v)
        ));
    }
    out.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" font-size=\"12\" fill=\"#222222\" \
         transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\">{}</text>\n",
        frame.y0 + frame.ph / 2.0,
        frame.y0 + frame.ph / 2.0,
        escape(y_label)
    ));
    out.push_str(&format!(
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" \
         stroke=\"#999999\"/>\n",
        frame.x0, frame.y0, frame.pw, frame.ph
    ));
    out
}

fn no_data(title: &str) -> String {
    let mut svg = open_svg(title);
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"14\" fill=\"#888888\" \
         text-anchor=\"middle\">no data</text>\n</svg>\n",
        WIDTH / 2.0,
        HEIGHT / 2.0
    ));
    svg
}

fn finite_bounds(series: &[Series]) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in &s.values {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Polyline per series over the value index.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let Some((mut lo, mut hi)) = finite_bounds(series) else {
        return no_data(title);
    };
    let pad = ((hi - lo) * 0.05).max(1e-9);
    lo -= pad;
    hi += pad;
    let frame = Frame::new(lo, hi);
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);

    let mut svg = open_svg(title);
    svg.push_str(&legend(series));
    svg.push_str(&y_axis(&frame, y_label));

    let step = (n / 6).max(1);
    let mut marks: Vec<usize> = (0..n).step_by(step).collect();
    if n > 0 && marks.last() != Some(&(n - 1)) {
        marks.push(n - 1);
    }
    let x_of = |i: usize| {
        if n <= 1 {
            frame.x(0.5)
        } else {
            frame.x(i as f64 / (n - 1) as f64)
        }
    };
    for &i in &marks {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#444444\" \
             text-anchor=\"middle\">{i}</text>\n",
            x_of(i),
            frame.y0 + frame.ph + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"#222222\" \
         text-anchor=\"middle\">{}</text>\n",
        frame.x0 + frame.pw / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    ));

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x_of(i), frame.y(v)))
            .collect();
        if points.len() == 1 {
            let (x, y) = points[0].split_once(',').expect("point format");
            svg.push_str(&format!("<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>\n"));
        } else if !points.is_empty() {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"1.5\"/>\n",
                points.join(" ")
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// One bar per series within each labeled group; bars rise from zero.
pub fn grouped_bar_chart(
    title: &str,
    y_label: &str,
    groups: &[String],
    series: &[Series],
) -> String {
    let Some((data_lo, data_hi)) = finite_bounds(series) else {
        return no_data(title);
    };
    if groups.is_empty() {
        return no_data(title);
    }
    let lo = data_lo.min(0.0);
    let hi = if data_hi > 0.0 { data_hi * 1.08 } else { 0.0 } + 1e-9;
    let frame = Frame::new(lo, hi);

    let mut svg = open_svg(title);
    svg.push_str(&legend(series));
    svg.push_str(&y_axis(&frame, y_label));

    let n_groups = groups.len();
    let n_series = series.len().max(1);
    let group_w = frame.pw / n_groups as f64;
    let bar_w = group_w * 0.76 / n_series as f64;
    let total_bars = n_groups * n_series;

    for (g, label) in groups.iter().enumerate() {
        let left = frame.x0 + g as f64 * group_w + group_w * 0.12;
        for (si, s) in series.iter().enumerate() {
            let Some(&v) = s.values.get(g) else { continue };
            if !v.is_finite() {
                continue;
            }
            let color = PALETTE[si % PALETTE.len()];
            let x = left + si as f64 * bar_w;
            let (y, h) = if v >= 0.0 {
                (frame.y(v), frame.y(0.0) - frame.y(v))
            } else {
                (frame.y(0.0), frame.y(v) - frame.y(0.0))
            };
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" \
                 fill=\"{color}\"/>\n",
                bar_w * 0.92
            ));
            if total_bars <= 18 {
                svg.push_str(&format!(
                    "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"#333333\" \
                     text-anchor=\"middle\">{}</text>\n",
                    x + bar_w * 0.46,
                    frame.y(v.max(0.0)) - 4.0,
                    fmt_num(v)
                ));
            }
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#222222\" \
             text-anchor=\"middle\">{}</text>\n",
            frame.x0 + (g as f64 + 0.5) * group_w,
            frame.y0 + frame.ph + 18.0,
            escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
