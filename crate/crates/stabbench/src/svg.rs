//! Minimal hand-rolled SVG line plots for the run reports.

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 56.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    /// Raw (x, y) points; nonfinite or (on log axes) nonpositive values
    /// become gaps in the polyline.
    pub points: Vec<(f64, f64)>,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Positions marked with a red cross (NaN events). The y value may be
    /// nonfinite; markers then sit at the top edge of the plot area.
    pub markers: Vec<(f64, f64)>,
}

struct AxisScale {
    min: f64,
    max: f64,
    log: bool,
}

impl AxisScale {
    fn transform(&self, v: f64) -> Option<f64> {
        if self.log {
            if v > 0.0 && v.is_finite() {
                Some(v.log10())
            } else {
                None
            }
        } else if v.is_finite() {
            Some(v)
        } else {
            None
        }
    }

    fn to_unit(&self, t: f64) -> f64 {
        if self.max > self.min {
            (t - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }
}

fn build_scale(values: impl Iterator<Item = f64>, log: bool) -> AxisScale {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut scale = AxisScale { min: 0.0, max: 1.0, log };
    for v in values {
        if let Some(t) = scale.transform(v) {
            min = min.min(t);
            max = max.max(t);
        }
    }
    if min > max {
        min = 0.0;
        max = 1.0;
    }
    if min == max {
        min -= 0.5;
        max += 0.5;
    }
    let pad = (max - min) * 0.05;
    scale.min = min - pad;
    scale.max = max + pad;
    scale
}

fn fmt_tick(t: f64, log: bool) -> String {
    if log {
        format!("1e{}", t.round() as i64)
    } else if t.abs() >= 1000.0 || (t != 0.0 && t.abs() < 0.01) {
        format!("{t:.1e}")
    } else {
        format!("{t:.3}")
    }
}

fn tick_positions(scale: &AxisScale) -> Vec<f64> {
    if scale.log {
        let lo = scale.min.ceil() as i64;
        let hi = scale.max.floor() as i64;
        if hi >= lo && (hi - lo) <= 40 {
            let step = 1 + (hi - lo) as usize / 10;
            return (lo..=hi).step_by(step).map(|k| k as f64).collect();
        }
    }
    (0..=4).map(|k| scale.min + (scale.max - scale.min) * k as f64 / 4.0).collect()
}

impl LinePlot {
    pub fn render(&self) -> String {
        let xs = build_scale(
            self.series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.0))
                .chain(self.markers.iter().map(|m| m.0)),
            self.log_x,
        );
        let ys = build_scale(
            self.series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.1))
                .chain(self.markers.iter().map(|m| m.1)),
            self.log_y,
        );
        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |t: f64| MARGIN_L + xs.to_unit(t) * plot_w;
        let py = |t: f64| MARGIN_T + (1.0 - ys.to_unit(t)) * plot_h;

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        out.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            WIDTH / 2.0,
            xml_escape(&self.title)
        ));
        out.push_str(&format!(
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
             fill=\"none\" stroke=\"#333\"/>\n"
        ));

        for t in tick_positions(&xs) {
            let x = px(t);
            out.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#ccc\"/>\n",
                MARGIN_T,
                MARGIN_T + plot_h
            ));
            out.push_str(&format!(
                "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                MARGIN_T + plot_h + 18.0,
                fmt_tick(t, self.log_x)
            ));
        }
        for t in tick_positions(&ys) {
            let y = py(t);
            out.push_str(&format!(
                "<line x1=\"{MARGIN_L}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#ccc\"/>\n",
                MARGIN_L + plot_w
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
                MARGIN_L - 6.0,
                y + 4.0,
                fmt_tick(t, self.log_y)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_L + plot_w / 2.0,
            HEIGHT - 14.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0,
            xml_escape(&self.y_label)
        ));

        for (si, series) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            // split into finite runs; gaps where the transform rejects a value
            let mut run: Vec<String> = Vec::new();
            let flush = |run: &mut Vec<String>, out: &mut String| {
                if run.len() >= 2 {
                    out.push_str(&format!(
                        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                        run.join(" ")
                    ));
                } else if run.len() == 1 {
                    let parts: Vec<&str> = run[0].split(',').collect();
                    out.push_str(&format!(
                        "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{color}\"/>\n",
                        parts[0], parts[1]
                    ));
                }
                run.clear();
            };
            for &(x, y) in &series.points {
                match (xs.transform(x), ys.transform(y)) {
                    (Some(tx), Some(ty)) => {
                        run.push(format!("{:.1},{:.1}", px(tx), py(ty)));
                    }
                    _ => flush(&mut run, &mut out),
                }
            }
            flush(&mut run, &mut out);
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
                MARGIN_L + plot_w - 150.0,
                MARGIN_T + 16.0 + 16.0 * si as f64,
                xml_escape(&series.name)
            ));
        }

        for &(x, y) in &self.markers {
            let tx = match xs.transform(x) {
                Some(t) => px(t),
                None => continue,
            };
            let ty = ys.transform(y).map(py).unwrap_or(MARGIN_T + 6.0);
            out.push_str(&format!(
                "<path d=\"M {0:.1} {1:.1} l 8 8 m 0 -8 l -8 8\" stroke=\"red\" stroke-width=\"2\" \
                 transform=\"translate(-4 -4)\" fill=\"none\"/>\n",
                tx, ty
            ));
        }

        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polylines_with_gaps_and_markers() {
        let plot = LinePlot {
            title: "loss & gradient".to_string(),
            x_label: "iteration".to_string(),
            y_label: "loss".to_string(),
            log_x: false,
            log_y: true,
            series: vec![Series {
                name: "loss".to_string(),
                points: vec![(0.0, 1.0), (1.0, 0.1), (2.0, f64::NAN), (3.0, 0.01)],
            }],
            markers: vec![(2.0, f64::NAN)],
        };
        let svg = plot.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("stroke=\"red\""));
        assert!(svg.contains("&amp;"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
