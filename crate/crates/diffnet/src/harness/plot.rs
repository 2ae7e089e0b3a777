//! Self-contained SVG line charts. No rendering dependencies: the output is
//! a single `<svg>` document with one polyline per series plus axes, tick
//! labels and a legend.

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct Axes<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub log_y: bool,
}

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn transform(value: f64, log: bool) -> f64 {
    if log {
        value.max(1e-300).log10()
    } else {
        value
    }
}

fn tick_label(value: f64, log: bool) -> String {
    let shown = if log { 10f64.powf(value) } else { value };
    if shown != 0.0 && (shown.abs() >= 1e4 || shown.abs() < 1e-3) {
        format!("{shown:.2e}")
    } else {
        format!("{shown:.4}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Renders the series into an SVG document. A comment line carries the
/// config hash so plots are traceable to the run that produced them.
pub fn line_chart(axes: Axes<'_>, series: &[Series], config_hash: &str) -> String {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            let tx = transform(x, axes.log_x);
            let ty = transform(y, axes.log_y);
            min_x = min_x.min(tx);
            max_x = max_x.max(tx);
            min_y = min_y.min(ty);
            max_y = max_y.max(ty);
        }
    }
    if !min_x.is_finite() {
        min_x = 0.0;
        max_x = 1.0;
        min_y = 0.0;
        max_y = 1.0;
    }
    if (max_x - min_x).abs() < 1e-12 {
        max_x = min_x + 1.0;
    }
    if (max_y - min_y).abs() < 1e-12 {
        max_y = min_y + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let px = MARGIN_LEFT + (x - min_x) / (max_x - min_x) * plot_w;
        let py = MARGIN_TOP + (1.0 - (y - min_y) / (max_y - min_y)) * plot_h;
        (px, py)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!("<!-- config_hash={config_hash} -->\n"));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"28\" font-family=\"sans-serif\" font-size=\"17\" \
         text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape_xml(axes.title)
    ));

    // Frame.
    let (x0, y0) = (MARGIN_LEFT, MARGIN_TOP + plot_h);
    let (x1, y1) = (MARGIN_LEFT + plot_w, MARGIN_TOP);
    svg.push_str(&format!(
        "<rect x=\"{x0:.1}\" y=\"{y1:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" \
         stroke=\"#333333\" stroke-width=\"1\"/>\n",
        plot_w, plot_h
    ));

    // Ticks: four intervals per axis.
    for i in 0..=4 {
        let fx = min_x + (max_x - min_x) * i as f64 / 4.0;
        let (px, _) = to_px(fx, min_y);
        svg.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#333333\"/>\n",
            y0 + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>\n",
            y0 + 22.0,
            escape_xml(&tick_label(fx, axes.log_x))
        ));
        let fy = min_y + (max_y - min_y) * i as f64 / 4.0;
        let (_, py) = to_px(min_x, fy);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0:.1}\" y2=\"{py:.1}\" stroke=\"#333333\"/>\n",
            x0 - 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{}</text>\n",
            x0 - 10.0,
            py + 4.0,
            escape_xml(&tick_label(fy, axes.log_y))
        ));
    }

    // Axis labels.
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0,
        escape_xml(axes.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"22\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\" transform=\"rotate(-90 22 {:.1})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape_xml(axes.y_label)
    ));

    // Series.
    for (index, s) in series.iter().enumerate() {
        let color = PALETTE[index % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (px, py) = to_px(transform(x, axes.log_x), transform(y, axes.log_y));
                format!("{px:.2},{py:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let legend_y = MARGIN_TOP + 16.0 + 20.0 * index as f64;
        let legend_x = MARGIN_LEFT + plot_w + 14.0;
        svg.push_str(&format!(
            "<line x1=\"{legend_x:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
             stroke=\"{color}\" stroke-width=\"3\"/>\n",
            legend_y - 4.0,
            legend_x + 22.0,
            legend_y - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{legend_y:.1}\" font-family=\"sans-serif\" \
             font-size=\"13\">{}</text>\n",
            legend_x + 28.0,
            escape_xml(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

/// Minimal well-formedness check used by tests: tags balance and the
/// document has a single svg root.
pub fn is_well_formed_xml(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let Some(end_rel) = rest[start..].find('>') else {
            return false;
        };
        let tag = &rest[start + 1..start + end_rel];
        rest = &rest[start + end_rel + 1..];
        if tag.starts_with("!--") {
            continue;
        }
        if tag.starts_with('?') || tag.ends_with('/') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name => {}
                _ => return false,
            }
        } else {
            let name: String = tag
                .split_whitespace()
                .next()
                .unwrap_or_default()
                .to_string();
            if name.is_empty() {
                return false;
            }
            stack.push(name);
        }
    }
    stack.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed_with_one_polyline_per_series() {
        let series = vec![
            Series {
                label: "K=1".into(),
                points: vec![(1.0, 100.0), (2.0, 50.0), (4.0, 25.0)],
            },
            Series {
                label: "K=2".into(),
                points: vec![(1.0, 50.0), (2.0, 25.0), (4.0, 12.5)],
            },
        ];
        let svg = line_chart(
            Axes {
                title: "median escape time <vs> K",
                x_label: "K",
                y_label: "iterations",
                log_x: true,
                log_y: true,
            },
            &series,
            "cafebabe",
        );
        assert!(is_well_formed_xml(&svg), "svg not well formed:\n{svg}");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("config_hash=cafebabe"));
        assert!(svg.contains("&lt;vs&gt;"));
    }

    #[test]
    fn degenerate_ranges_do_not_break() {
        let series = vec![Series {
            label: "flat".into(),
            points: vec![(1.0, 5.0), (2.0, 5.0)],
        }];
        let svg = line_chart(
            Axes {
                title: "flat",
                x_label: "x",
                y_label: "y",
                log_x: false,
                log_y: false,
            },
            &series,
            "00",
        );
        assert!(is_well_formed_xml(&svg));
    }

    #[test]
    fn xml_checker_rejects_imbalance() {
        assert!(!is_well_formed_xml("<svg><g></svg>"));
        assert!(is_well_formed_xml("<svg><g/><text>x</text></svg>"));
    }
}
