//! Minimal standalone SVG pictures of planar sets and sample points.

use std::fmt::Write as _;

#[derive(Debug, Clone)]
struct Layer {
    label: String,
    color: String,
    polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
struct PointGroup {
    label: String,
    color: String,
    points: Vec<[f64; 2]>,
}

/// Polygons and point groups drawn in data coordinates with a legend.
#[derive(Debug, Clone, Default)]
pub struct SetPlot {
    title: String,
    metadata: Vec<String>,
    layers: Vec<Layer>,
    groups: Vec<PointGroup>,
}

const SIZE: f64 = 480.0;
const PAD: f64 = 40.0;
const LEGEND_ROW: f64 = 18.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl SetPlot {
    pub fn new(title: &str) -> Self {
        Self {
            title: title.to_string(),
            ..Self::default()
        }
    }

    /// Lines stored verbatim in the `<metadata>` element.
    pub fn metadata(mut self, lines: Vec<String>) -> Self {
        self.metadata = lines;
        self
    }

    pub fn polygon(mut self, label: &str, color: &str, vertices: Vec<[f64; 2]>) -> Self {
        self.layers.push(Layer {
            label: label.to_string(),
            color: color.to_string(),
            polygon: vertices,
        });
        self
    }

    pub fn points(mut self, label: &str, color: &str, points: Vec<[f64; 2]>) -> Self {
        self.groups.push(PointGroup {
            label: label.to_string(),
            color: color.to_string(),
            points,
        });
        self
    }

    fn extent(&self) -> ([f64; 2], [f64; 2]) {
        let all = self
            .layers
            .iter()
            .flat_map(|l| l.polygon.iter())
            .chain(self.groups.iter().flat_map(|g| g.points.iter()));
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in all {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        for i in 0..2 {
            if !lo[i].is_finite() {
                lo[i] = -1.0;
                hi[i] = 1.0;
            } else if hi[i] - lo[i] < 1e-12 {
                lo[i] -= 1.0;
                hi[i] += 1.0;
            }
        }
        (lo, hi)
    }

    pub fn render(&self) -> String {
        let (lo, hi) = self.extent();
        let scale = (SIZE / (hi[0] - lo[0])).min(SIZE / (hi[1] - lo[1]));
        let map = |p: &[f64; 2]| (PAD + (p[0] - lo[0]) * scale, PAD + (hi[1] - p[1]) * scale);
        let entries = self.layers.len() + self.groups.len();
        let width = SIZE + 2.0 * PAD;
        let height = SIZE + 2.0 * PAD + LEGEND_ROW * entries as f64;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" width="{width}" height="{height}">"#
        );
        let _ = writeln!(s, "<title>{}</title>", escape(&self.title));
        if !self.metadata.is_empty() {
            let _ = writeln!(s, "<metadata>");
            for line in &self.metadata {
                let _ = writeln!(s, "{}", escape(line));
            }
            let _ = writeln!(s, "</metadata>");
        }
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
        let (x0, y0) = map(&[lo[0], hi[1]]);
        let (x1, y1) = map(&[hi[0], lo[1]]);
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.3}" y="{y0:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="#888" stroke-width="1"/>"##,
            x1 - x0,
            y1 - y0
        );
        for (v, anchor, (x, y)) in [
            (lo[0], "start", (x0, y1 + 14.0)),
            (hi[0], "end", (x1, y1 + 14.0)),
            (lo[1], "end", (x0 - 4.0, y1)),
            (hi[1], "end", (x0 - 4.0, y0 + 10.0)),
        ] {
            let _ = writeln!(s, r#"<text x="{x:.3}" y="{y:.3}" font-size="11" text-anchor="{anchor}">{v:.3}</text>"#);
        }
        for layer in &self.layers {
            if layer.polygon.is_empty() {
                continue;
            }
            let pts: Vec<String> = layer
                .polygon
                .iter()
                .map(|p| {
                    let (x, y) = map(p);
                    format!("{x:.3},{y:.3}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.25" stroke="{}" stroke-width="1.5"/>"#,
                pts.join(" "),
                layer.color,
                layer.color
            );
        }
        for group in &self.groups {
            for p in &group.points {
                let (x, y) = map(p);
                let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="3" fill="{}"/>"#, group.color);
            }
        }
        let mut y = SIZE + 2.0 * PAD;
        for (label, color) in self
            .layers
            .iter()
            .map(|l| (&l.label, &l.color))
            .chain(self.groups.iter().map(|g| (&g.label, &g.color)))
        {
            let _ = writeln!(s, r#"<rect x="{PAD}" y="{:.3}" width="12" height="12" fill="{color}"/>"#, y - 10.0);
            let _ = writeln!(s, r#"<text x="{:.3}" y="{y:.3}" font-size="12">{}</text>"#, PAD + 18.0, escape(label));
            y += LEGEND_ROW;
        }
        let _ = writeln!(s, "</svg>");
        s
    }
}
