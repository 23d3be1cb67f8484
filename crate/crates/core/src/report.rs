//! Deterministic report files: CSV tables, pretty JSON and log-log SVG plots.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::Serialize;

/// Floor used to place zero or negative samples on a log axis.
pub const PLOT_FLOOR: f64 = 1e-16;
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 50.0);

/// `{:.16e}`: 17 significant digits, round-trips every finite double.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v == 0.0 {
        // no "-0"
        format!("{:.16e}", 0.0)
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    Missing,
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Num(v) => format_f64(*v),
            Field::Int(v) => v.to_string(),
            Field::Bool(b) => b.to_string(),
            Field::Text(s) => s.clone(),
            Field::Missing => String::new(),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Num(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Bool(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.into())
    }
}

impl From<Option<f64>> for Field {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Field::Missing, Field::Num)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// RFC 4180: CRLF line ends, quoting only where needed.
    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Field::render))?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

/// Pretty JSON with a trailing newline. Keys follow struct field order, map
/// keys are sorted, non-finite numbers become `null`.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Markers,
    Line,
    Dashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series: Vec::new() }
    }

    pub fn with(mut self, name: &str, points: Vec<(f64, f64)>, style: Style) -> Self {
        self.series.push(Series { name: name.into(), points, style });
        self
    }

    /// `c·x^{-p}` sampled at the given abscissae.
    pub fn power_line(xs: &[f64], c: f64, p: f64) -> Vec<(f64, f64)> {
        xs.iter().map(|&x| (x, c * x.powf(-p))).collect()
    }

    pub fn markers(&self) -> usize {
        self.series.iter().filter(|s| s.style == Style::Markers).map(|s| s.points.len()).sum()
    }

    /// Log-log SVG 1.1. Nonpositive y values of marker series are drawn at
    /// [`PLOT_FLOOR`] as crosses; nonpositive or non-finite line points are
    /// dropped.
    pub fn to_svg(&self) -> String {
        let usable = |x: f64, y: f64| x > 0.0 && x.is_finite() && y.is_finite();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if usable(x, y) {
                    xs.push(x.log10());
                    ys.push(y.max(PLOT_FLOOR).log10());
                }
            }
        }
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-9 {
                (lo.floor() - 0.5, lo.floor() + 1.5)
            } else {
                (lo.floor(), hi.ceil())
            }
        };
        let (x0, x1) = range(&xs);
        let (y0, y1) = range(&ys);
        let (ml, mr, mt, mb) = MARGIN;
        let px = |lx: f64| ml + (lx - x0) / (x1 - x0) * (WIDTH - ml - mr);
        let py = |ly: f64| HEIGHT - mb - (ly - y0) / (y1 - y0) * (HEIGHT - mt - mb);
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<title>{}</title>"#, escape(&self.title));
        let _ = writeln!(s, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
        let _ = writeln!(
            s,
            r##"<rect x="{ml}" y="{mt}" width="{:.3}" height="{:.3}" fill="none" stroke="#000000"/>"##,
            WIDTH - ml - mr,
            HEIGHT - mt - mb
        );
        for k in (x0 as i64)..=(x1 as i64) {
            let x = px(k as f64);
            let _ = writeln!(s, r##"<line x1="{x:.3}" y1="{mt}" x2="{x:.3}" y2="{:.3}" stroke="#dddddd"/>"##, HEIGHT - mb);
            let _ = writeln!(s, r#"<text x="{x:.3}" y="{:.3}" text-anchor="middle">1e{k}</text>"#, HEIGHT - mb + 15.0);
        }
        for k in (y0 as i64)..=(y1 as i64) {
            let y = py(k as f64);
            let _ = writeln!(s, r##"<line x1="{ml}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="#dddddd"/>"##, WIDTH - mr);
            let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" text-anchor="end">1e{k}</text>"#, ml - 5.0, y + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.3}" text-anchor="middle" transform="rotate(-90 14 {:.3})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(s, r#"<text x="{:.3}" y="18" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let _ = writeln!(s, r#"<g class="series" id="series-{i}">"#);
            match series.style {
                Style::Markers => {
                    for &(x, y) in &series.points {
                        if !usable(x, y) {
                            continue;
                        }
                        let (cx, cy) = (px(x.log10()), py(y.max(PLOT_FLOOR).log10()));
                        if y > 0.0 {
                            let _ = writeln!(s, r#"<circle class="sample" cx="{cx:.3}" cy="{cy:.3}" r="2.5" fill="{color}"/>"#);
                        } else {
                            let _ = writeln!(
                                s,
                                r#"<path class="sample zero" d="M{:.3},{:.3}L{:.3},{:.3}M{:.3},{:.3}L{:.3},{:.3}" stroke="{color}"/>"#,
                                cx - 3.0,
                                cy - 3.0,
                                cx + 3.0,
                                cy + 3.0,
                                cx - 3.0,
                                cy + 3.0,
                                cx + 3.0,
                                cy - 3.0
                            );
                        }
                    }
                }
                Style::Line | Style::Dashed => {
                    let pts: Vec<String> = series
                        .points
                        .iter()
                        .filter(|&&(x, y)| usable(x, y) && y > 0.0)
                        .map(|&(x, y)| format!("{:.3},{:.3}", px(x.log10()), py(y.log10())))
                        .collect();
                    if pts.len() >= 2 {
                        let dash = if series.style == Style::Dashed { r#" stroke-dasharray="6,4""# } else { "" };
                        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#, pts.join(" "));
                    }
                }
            }
            let ly = mt + 14.0 + 14.0 * i as f64;
            let _ = writeln!(s, r#"<text x="{:.3}" y="{ly:.3}" text-anchor="end" fill="{color}">{}</text>"#, WIDTH - mr - 6.0, escape(&series.name));
            let _ = writeln!(s, "</g>");
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(1.0), "1.0000000000000000e0");
        assert_eq!(format_f64(f64::INFINITY), "inf");
        for v in [0.1, std::f64::consts::PI, 1e-300, -2.5e17] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_quoting_and_line_ends() {
        let mut t = Table::new(&["name", "value"]);
        t.push(vec!["a,b".into(), 1.5.into()]);
        t.push(vec!["plain".into(), Field::Missing]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(text, "name,value\r\n\"a,b\",1.5000000000000000e0\r\nplain,\r\n");
    }

    #[test]
    fn svg_markers_and_zero_floor() {
        let xs: Vec<f64> = (1..=48).map(|k| k as f64 * 10.0).collect();
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, if x == 100.0 { 0.0 } else { 1.0 / x })).collect();
        let plot = Plot::new("t", "λ", "|F|").with("samples", pts, Style::Markers).with("fit", Plot::power_line(&xs, 1.0, 1.0), Style::Line);
        let svg = plot.to_svg();
        assert_eq!(svg.matches("class=\"sample").count(), 48);
        assert_eq!(svg.matches("class=\"sample zero\"").count(), 1);
        assert!(svg.starts_with("<?xml") && svg.ends_with("</svg>\n"));
        assert_eq!(svg, plot.to_svg());
        let single = Plot::new("one", "x", "y").with("s", vec![(10.0, 0.5)], Style::Markers).to_svg();
        assert_eq!(single.matches("<circle").count(), 1);
        assert!(!single.contains("<polyline"));
    }
}
