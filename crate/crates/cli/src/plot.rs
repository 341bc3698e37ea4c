//! Minimal static SVG charts for the report directory.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const PAD: f64 = 56.0;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// A scatter plot joined by a polyline, with an optional horizontal
/// reference line, on log axes when `log` is set.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
    reference: Option<f64>,
    log: bool,
) -> String {
    let tf = |v: f64| if log { v.max(f64::MIN_POSITIVE).log10() } else { v };
    let (x0, x1) = range(points.iter().map(|p| tf(p.0)));
    let (y0, y1) = range(points.iter().map(|p| tf(p.1)).chain(reference.map(tf)));
    let sx = |x: f64| PAD + (tf(x) - x0) / (x1 - x0) * (WIDTH - 2.0 * PAD);
    let sy = |y: f64| HEIGHT - PAD - (tf(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * PAD);
    let mut svg = header(title);
    let _ = writeln!(
        svg,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    );
    let scale = if log { " (log10)" } else { "" };
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}{scale}</text>",
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}{scale}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (v, anchor, x, y) in [
        (x0, "start", PAD, HEIGHT - PAD + 16.0),
        (x1, "end", WIDTH - PAD, HEIGHT - PAD + 16.0),
        (y0, "end", PAD - 4.0, HEIGHT - PAD),
        (y1, "end", PAD - 4.0, PAD + 10.0),
    ] {
        let _ = writeln!(svg, "<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\">{v:.3}</text>");
    }
    if let Some(r) = reference {
        let _ = writeln!(
            svg,
            "<line x1=\"{PAD}\" x2=\"{}\" y1=\"{y:.2}\" y2=\"{y:.2}\" stroke=\"#c33\" stroke-dasharray=\"6 4\"/>",
            WIDTH - PAD,
            y = sy(r)
        );
    }
    let path: Vec<String> = points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    if path.len() > 1 {
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#36c\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
    }
    for p in &path {
        let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
        let _ = writeln!(svg, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"#36c\"/>");
    }
    svg.push_str("</svg>\n");
    svg
}

/// A heat map of `rows x cols` values, first row at the bottom, shaded from
/// white (minimum) to dark blue (maximum).
pub fn heatmap(title: &str, values: &[Vec<f64>]) -> String {
    let rows = values.len().max(1);
    let cols = values.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let (lo, hi) = range(values.iter().flatten().copied());
    let cw = (WIDTH - 2.0 * PAD) / cols as f64;
    let ch = (HEIGHT - 2.0 * PAD) / rows as f64;
    let mut svg = header(title);
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let t = if v.is_finite() { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 1.0 };
            let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"rgb({},{},{})\"/>",
                PAD + j as f64 * cw,
                HEIGHT - PAD - (i + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                shade(20.0),
                shade(50.0),
                shade(140.0)
            );
        }
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">min {lo:.4}   max {hi:.4}</text>",
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_closed_svg() {
        let c = line_chart("r", "N", "ratio", &[(4.0, 2.0), (16.0, 4.0)], Some(1.0), true);
        assert!(c.starts_with("<svg") && c.trim_end().ends_with("</svg>"));
        assert_eq!(c.matches("<circle").count(), 2);
        let h = heatmap("h<1>", &[vec![0.0, 1.0], vec![0.5, f64::NAN]]);
        assert_eq!(h.matches("<rect").count(), 5);
        assert!(h.contains("h&lt;1&gt;"));
    }
}
