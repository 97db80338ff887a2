//! Dependency-free SVG scatter plots for 2-D projections.

use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 150.0;

/// Fixed palette; groups beyond twelve cycle.
const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
];

/// One scatter plot: points grouped by label, one color per group.
#[derive(Debug, Clone, Default)]
pub struct ScatterPlot {
    pub title: String,
    pub groups: Vec<(String, Vec<[f64; 2]>)>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the plot. Deterministic output: the config hash and tool
/// version ride in a leading XML comment, coordinates are fixed-precision.
pub fn render_svg(plot: &ScatterPlot, config_hash: &str) -> String {
    let all: Vec<&[f64; 2]> = plot.groups.iter().flat_map(|(_, pts)| pts).collect();
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &all {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    if all.is_empty() || min_x == max_x {
        min_x -= 1.0;
        max_x += 1.0;
    }
    if all.is_empty() || min_y == max_y {
        min_y -= 1.0;
        max_y += 1.0;
    }
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_WIDTH;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - min_x) / (max_x - min_x) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y - min_y) / (max_y - min_y) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str(&format!(
        "<!-- microtol plot v1 tool={} config={} -->\n",
        crate::TOOL_VERSION,
        config_hash
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" fill=\"none\" stroke=\"#333333\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        MARGIN + plot_w / 2.0,
        MARGIN - 12.0,
        escape(&plot.title)
    ));

    for (gi, (label, points)) in plot.groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        for p in points {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.75\"/>\n",
                sx(p[0]),
                sy(p[1])
            ));
        }
        // Legend swatch and label.
        let ly = MARGIN + 10.0 + gi as f64 * 18.0;
        let lx = WIDTH - LEGEND_WIDTH - MARGIN + 12.0;
        out.push_str(&format!(
            "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            ly - 9.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{ly:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            lx + 14.0,
            escape(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

pub fn save_svg(plot: &ScatterPlot, config_hash: &str, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, render_svg(plot, config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScatterPlot {
        ScatterPlot {
            title: "phylum projection".to_string(),
            groups: vec![
                ("P_0-0".to_string(), vec![[0.0, 0.0], [1.0, 1.5]]),
                ("P_0-1".to_string(), vec![[-2.0, 3.0]]),
            ],
        }
    }

    #[test]
    fn svg_contains_points_legend_and_metadata() {
        let svg = render_svg(&sample(), "beef");
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("P_0-0"));
        assert!(svg.contains("config=beef"));
        assert!(svg.contains("phylum projection"));
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(render_svg(&sample(), "x"), render_svg(&sample(), "x"));
    }

    #[test]
    fn degenerate_inputs_do_not_produce_nan_coordinates() {
        let plot = ScatterPlot {
            title: "single point".to_string(),
            groups: vec![("g".to_string(), vec![[2.0, 2.0]])],
        };
        let svg = render_svg(&plot, "h");
        assert!(!svg.contains("NaN"));
    }
}
