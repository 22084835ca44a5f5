//! Deterministic SVG rendering of diagram CSV files: one polyline per
//! branch, the active parameter on the x axis and the output `f` on y.

use dfcn_core::io::DiagramFile;

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 620.0;
const MARGIN: f64 = 60.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

/// Renders the diagram as a standalone SVG document.
pub fn render_svg(file: &DiagramFile, x_component: usize) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    let points: Vec<(usize, f64, f64)> = file
        .rows
        .iter()
        .filter(|r| x_component < r.mu.len())
        .map(|r| (r.branch_id, r.mu[x_component], r.f))
        .collect();
    let (x_lo, x_hi, y_lo, y_hi) = if points.is_empty() {
        (0.0, 1.0, -1.0, 1.0)
    } else {
        let mut x_lo = f64::INFINITY;
        let mut x_hi = f64::NEG_INFINITY;
        let mut y_lo = f64::INFINITY;
        let mut y_hi = f64::NEG_INFINITY;
        for &(_, x, y) in &points {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        let pad = |lo: f64, hi: f64| {
            let d = (hi - lo).abs().max(1e-12) * 0.05;
            (lo - d, hi + d)
        };
        let (x_lo, x_hi) = pad(x_lo, x_hi);
        let (y_lo, y_hi) = pad(y_lo, y_hi);
        (x_lo, x_hi, y_lo, y_hi)
    };

    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    // axes
    svg.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN, MARGIN, MARGIN,
        HEIGHT - MARGIN
    ));
    for t in ticks(x_lo, x_hi, 5) {
        let x = sx(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN,
            HEIGHT - MARGIN + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{t:.4}</text>\n",
            HEIGHT - MARGIN + 20.0
        ));
    }
    for t in ticks(y_lo, y_hi, 5) {
        let y = sy(t);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            MARGIN - 6.0,
            MARGIN
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{t:.4}</text>\n",
            MARGIN - 10.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\">mu_{x_component}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {:.2})\">f</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));

    // one polyline per branch, in branch-id order
    for id in file.branch_ids() {
        let color = PALETTE[id % PALETTE.len()];
        let mut path = String::new();
        for &(bid, x, y) in &points {
            if bid == id {
                path.push_str(&format!("{:.3},{:.3} ", sx(x), sy(y)));
            }
        }
        if !path.is_empty() {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.trim_end()
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
