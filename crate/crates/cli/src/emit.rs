//! CSV tables and SVG sweep plots. All numbers use the default `f64`
//! formatting so output is identical wherever it is produced.

use std::fmt::Write as _;

use thiserror::Error;
use wrlab::analysis::SweepResult;

#[derive(Debug, Error, PartialEq)]
pub enum EmitError {
    #[error("sweep `{label}` has {rows} row(s); a plot needs at least two")]
    TooFewRows { label: String, rows: usize },
}

/// A CSV table with a mandatory header, LF line endings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I, T>(&mut self, row: I)
    where
        I: IntoIterator<Item = T>,
        T: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|x| x.to_string()).collect();
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = line.iter().map(|c| quote(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out.into_bytes()
    }
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Per-row sweep table: `R,quantity,log_R,log_quantity,reference_power`.
pub fn sweep_rows(s: &SweepResult) -> Table {
    let mut t = Table::new(&["R", "quantity", "log_R", "log_quantity", "reference_power"]);
    for row in &s.rows {
        t.push([row.r, row.quantity, row.r.ln(), row.quantity.ln(), row.reference]);
    }
    t
}

/// One-row fit summary: `slope,stderr,ref_slope,pass`.
pub fn sweep_summary(s: &SweepResult) -> Table {
    let mut t = Table::new(&["slope", "stderr", "ref_slope", "pass"]);
    t.push([s.fitted_slope.to_string(), s.slope_stderr.to_string(), s.ref_slope.to_string(), s.pass().to_string()]);
    t
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 56.0;
const BOTTOM: f64 = 64.0;

/// Log-log scatter of the sweep with the fitted line, the reference-slope
/// line through the first row, and a legend.
pub fn sweep_svg(s: &SweepResult) -> Result<String, EmitError> {
    if s.rows.len() < 2 {
        return Err(EmitError::TooFewRows { label: s.label.clone(), rows: s.rows.len() });
    }
    let xs: Vec<f64> = s.rows.iter().map(|r| r.r.ln()).collect();
    let ys: Vec<f64> = s.rows.iter().map(|r| r.quantity.ln()).collect();
    let fit = |x: f64| s.intercept + s.fitted_slope * x;
    let reference = |x: f64| ys[0] + s.ref_slope * (x - xs[0]);

    let (x0, x1) = span(&xs);
    let mut all_y = ys.clone();
    for &x in [x0, x1].iter() {
        all_y.push(fit(x));
        all_y.push(reference(x));
    }
    let (y0, y1) = span(&all_y);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    let _ = writeln!(out, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(&s.label));
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">log R</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">log quantity</text>"#,
        H / 2.0,
        H / 2.0
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.3}</text>"#,
            px(xv),
            H - BOTTOM + 18.0,
            xv
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#, LEFT - 6.0, py(yv) + 4.0, yv);
    }
    let line = |out: &mut String, f: &dyn Fn(f64) -> f64, colour: &str, dash: &str| {
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="1.5"{dash}/>"#,
            px(x0),
            py(f(x0)),
            px(x1),
            py(f(x1))
        );
    };
    line(&mut out, &fit, "#1f77b4", "");
    line(&mut out, &reference, "#d62728", r#" stroke-dasharray="6 4""#);
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="black"/>"#, px(*x), py(*y));
    }
    let lx = LEFT + 12.0;
    let ly = TOP + 16.0;
    let _ = writeln!(out, r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="#1f77b4" stroke-width="1.5"/>"##, lx + 24.0);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}">fit: slope {:.4} ± {:.4}</text>"#,
        lx + 30.0,
        ly + 4.0,
        s.fitted_slope,
        s.slope_stderr
    );
    let ly2 = ly + 18.0;
    let _ = writeln!(
        out,
        r##"<line x1="{lx}" y1="{ly2}" x2="{}" y2="{ly2}" stroke="#d62728" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
        lx + 24.0
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}">reference: slope {:.4}</text>"#, lx + 30.0, ly2 + 4.0, s.ref_slope);
    out.push_str("</svg>\n");
    Ok(out)
}

fn span(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_law() -> SweepResult {
        let rs = [2.0, 4.0, 8.0, 16.0];
        let qs: Vec<f64> = rs.iter().map(|r: &f64| 5.0 * r.powf(-0.75)).collect();
        SweepResult::from_rows("power", &rs, &qs, -0.75, 0.01).unwrap()
    }

    #[test]
    fn exact_power_law_lines_coincide() {
        let s = power_law();
        assert!((s.fitted_slope + 0.75).abs() < 1e-12);
        let svg = sweep_svg(&s).unwrap();
        let lines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<line x1=\"80.00\"")).collect();
        assert_eq!(lines.len(), 2);
        let coords = |l: &str| l.split(" stroke=").next().unwrap().to_string();
        assert_eq!(coords(lines[0]), coords(lines[1]));
    }

    #[test]
    fn svg_is_deterministic() {
        assert_eq!(sweep_svg(&power_law()).unwrap(), sweep_svg(&power_law()).unwrap());
    }

    #[test]
    fn single_row_rejected() {
        let mut s = power_law();
        s.rows.truncate(1);
        assert!(matches!(sweep_svg(&s), Err(EmitError::TooFewRows { rows: 1, .. })));
    }

    #[test]
    fn distinct_lines_when_slopes_differ() {
        let rs = [64.0, 128.0, 256.0, 512.0];
        let qs: Vec<f64> = rs.iter().map(|r: &f64| r.powf(-1.0) * (1.0 + 0.01 * r.ln())).collect();
        let s = SweepResult::from_rows("gap", &rs, &qs, -1.25, 0.15).unwrap();
        assert!((s.fitted_slope - s.ref_slope).abs() > s.slope_stderr);
        let svg = sweep_svg(&s).unwrap();
        let lines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<line x1=\"80.00\"")).collect();
        let coords = |l: &str| l.split(" stroke=").next().unwrap().to_string();
        assert_ne!(coords(lines[0]), coords(lines[1]));
    }

    #[test]
    fn csv_quoting_and_line_endings() {
        let mut t = Table::new(&["a", "b"]);
        t.push(["x,y", "1"]);
        let s = String::from_utf8(t.to_bytes()).unwrap();
        assert_eq!(s, "a,b\n\"x,y\",1\n");
        let s = power_law();
        let rows = String::from_utf8(sweep_rows(&s).to_bytes()).unwrap();
        assert!(rows.starts_with("R,quantity,log_R,log_quantity,reference_power\n2,"));
        assert!(!rows.contains('\r'));
        let sum = String::from_utf8(sweep_summary(&s).to_bytes()).unwrap();
        assert!(sum.starts_with("slope,stderr,ref_slope,pass\n"));
    }
}
