//! SVG emission for series, histograms and grids. Pure functions of their inputs.

use std::fmt::Write;

use ganvert_core::Grid2;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
/// Viridis anchor colours.
const VIRIDIS: [(f64, f64, f64); 5] =
    [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];

fn header(w: f64, h: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn axes(svg: &mut String, x: (f64, f64), y: (f64, f64), x_label: &str, y_label: &str, log_y: bool) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN / 2.0 + 10.0);
    let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x.0 + f * (x.1 - x.0);
        let px = x0 + f * (x1 - x0);
        let _ = writeln!(svg, "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", y0 + 16.0, tick(xv));
        let yv = y.0 + f * (y.1 - y.0);
        let yv = if log_y { 10f64.powf(yv) } else { yv };
        let py = y0 + f * (y1 - y0);
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", x0 - 4.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Polylines of each `(name, ys)` series against `xs`.
pub fn line_plot(title: &str, x_label: &str, xs: &[f64], series: &[(String, Vec<f64>)], log_y: bool) -> String {
    let tr = |v: f64| if log_y { v.max(1e-300).log10() } else { v };
    let xr = range(xs.iter().copied());
    let yr = range(series.iter().flat_map(|(_, ys)| ys.iter().map(|&v| tr(v))));
    let mut svg = header(WIDTH, HEIGHT, title);
    axes(&mut svg, xr, yr, x_label, if log_y { "value (log)" } else { "value" }, log_y);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN / 2.0 + 10.0);
    for (k, (name, ys)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| {
                let px = x0 + (x - xr.0) / (xr.1 - xr.0) * (x1 - x0);
                let py = y0 + (tr(y) - yr.0) / (yr.1 - yr.0) * (y1 - y0);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" "));
        let ly = y1 + 4.0 + 14.0 * k as f64;
        let _ = writeln!(svg, "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{colour}\" stroke-width=\"2\"/>", x1 - 110.0, x1 - 92.0);
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>", x1 - 88.0, ly + 4.0, escape(name));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bars over `[lo_i, hi_i)` with heights `counts`.
pub fn bar_chart(title: &str, x_label: &str, edges: &[(f64, f64)], counts: &[f64]) -> String {
    let xr = range(edges.iter().flat_map(|&(a, b)| [a, b]));
    let yr = (0.0, counts.iter().copied().fold(0.0, f64::max).max(1.0));
    let mut svg = header(WIDTH, HEIGHT, title);
    axes(&mut svg, xr, yr, x_label, "count", false);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN / 2.0 + 10.0);
    for (&(a, b), &c) in edges.iter().zip(counts) {
        let pa = x0 + (a - xr.0) / (xr.1 - xr.0) * (x1 - x0);
        let pb = x0 + (b - xr.0) / (xr.1 - xr.0) * (x1 - x0);
        let h = c / yr.1 * (y0 - y1);
        let _ = writeln!(
            svg,
            "<rect x=\"{pa:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\" stroke=\"white\"/>",
            y0 - h,
            (pb - pa).max(0.5),
            PALETTE[0]
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn viridis(f: f64) -> String {
    let f = if f.is_finite() { f.clamp(0.0, 1.0) } else { 0.0 };
    let s = f * (VIRIDIS.len() - 1) as f64;
    let i = (s.floor() as usize).min(VIRIDIS.len() - 2);
    let t = s - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mix = |p: f64, q: f64| (p + t * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Cell map with `x` to the right and depth downwards.
pub fn heatmap(title: &str, grid: &Grid2, limits: Option<(f64, f64)>) -> String {
    let (lo, hi) = limits.unwrap_or_else(|| range(grid.as_slice().iter().copied()));
    let cell = ((WIDTH - 2.0 * MARGIN) / grid.nx() as f64).min((HEIGHT - 2.0 * MARGIN) / grid.nz() as f64);
    let (w, h) = (grid.nx() as f64 * cell + 2.0 * MARGIN, grid.nz() as f64 * cell + 2.0 * MARGIN);
    let mut svg = header(w, h, title);
    for x in 0..grid.nx() {
        for z in 0..grid.nz() {
            let f = (grid.get(x, z) - lo) / (hi - lo);
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                MARGIN + x as f64 * cell,
                MARGIN + z as f64 * cell,
                cell + 0.05,
                cell + 0.05,
                viridis(f)
            );
        }
    }
    let _ = writeln!(svg, "<text x=\"{MARGIN}\" y=\"{:.1}\">min {} max {}</text>", h - MARGIN / 2.0, tick(lo), tick(hi));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_enough() {
        let s = line_plot("t", "x", &[0.0, 1.0, 2.0], &[("a".into(), vec![1.0, 3.0, 2.0])], false);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<polyline").count(), 1);
        let g = Grid2::from_fn(4, 2, |x, z| (x + z) as f64);
        let h = heatmap("g", &g, None);
        assert_eq!(h.matches("<rect").count(), 1 + 8);
        let b = bar_chart("h", "x", &[(0.0, 1.0), (1.0, 2.0)], &[3.0, 1.0]);
        assert_eq!(b.matches("<rect").count(), 3);
    }

    #[test]
    fn palette_endpoints() {
        assert_eq!(viridis(0.0), "#440154");
        assert_eq!(viridis(1.0), "#fde725");
        assert_eq!(viridis(f64::NAN), "#440154");
    }

    #[test]
    fn escapes_markup() {
        assert!(line_plot("a<b", "x", &[0.0], &[], false).contains("a&lt;b"));
    }
}
