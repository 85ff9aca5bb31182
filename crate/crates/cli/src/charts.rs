//! SVG line charts rendered from the report tables.
//!
//! Each renderer takes the table's text and nothing else, so re-rendering a
//! written table reproduces its chart. Blank cells break the line.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{CliError, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
}

/// Rows of a headered CSV as maps from column name to cell.
fn rows(name: &str, text: &str, columns: &[&str]) -> Result<Vec<BTreeMap<String, String>>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(|e| CliError::data(name, e))?.iter().map(str::to_owned).collect();
    if header != columns {
        return Err(CliError::data(name, format!("expected columns {columns:?}, found {header:?}")));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| CliError::data(name, e))?;
            Ok(header.iter().cloned().zip(r.iter().map(str::to_owned)).collect())
        })
        .collect()
}

fn number(name: &str, cell: &str) -> Result<f64> {
    cell.parse().map_err(|_| CliError::data(name, format!("not a number: {cell:?}")))
}

fn optional(name: &str, cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        Ok(None)
    } else {
        number(name, cell).map(Some)
    }
}

/// Series in order of first appearance, points in table order.
fn group(name: &str, rows: &[BTreeMap<String, String>], key: &str, x: &str, y: &str) -> Result<Vec<Series>> {
    let mut series: Vec<Series> = Vec::new();
    for row in rows {
        let point = (number(name, &row[x])?, optional(name, &row[y])?);
        match series.iter_mut().find(|s| s.name == row[key]) {
            Some(s) => s.points.push(point),
            None => series.push(Series { name: row[key].clone(), points: vec![point] }),
        }
    }
    Ok(series)
}

/// `method,alpha,avg_cost` for one cost matrix.
pub fn cost_chart(name: &str, cm_id: &str, table: &str) -> Result<String> {
    let rows = rows(name, table, &["method", "alpha", "avg_cost"])?;
    let series = group(name, &rows, "method", "alpha", "avg_cost")?;
    let positive = |s: &Series| s.points.iter().all(|&(x, y)| x > 0.0 && y.is_none_or(|y| y > 0.0));
    let logs = series.iter().all(positive);
    Ok(render(&Plot {
        title: format!("Average cost on test, {cm_id}"),
        x_label: "alpha".into(),
        y_label: "AvgCost".into(),
        x_log: logs,
        y_log: logs,
        series,
    }))
}

/// `method,eta,count` for one (alpha, cost matrix).
pub fn histogram_chart(name: &str, cm_id: &str, alpha: &str, table: &str) -> Result<String> {
    let rows = rows(name, table, &["method", "eta", "count"])?;
    Ok(render(&Plot {
        title: format!("Decision horizons, {cm_id}, alpha = {alpha}"),
        x_label: "horizon".into(),
        y_label: "decisions".into(),
        x_log: false,
        y_log: false,
        series: group(name, &rows, "method", "eta", "count")?,
    }))
}

/// `eta,auc`.
pub fn auc_chart(name: &str, table: &str) -> Result<String> {
    let rows = rows(name, table, &["eta", "auc"])?;
    let points = rows.iter().map(|r| Ok((number(name, &r["eta"])?, optional(name, &r["auc"])?))).collect::<Result<_>>()?;
    Ok(render(&Plot {
        title: "AUC of each horizon's classifier on test".into(),
        x_label: "horizon".into(),
        y_label: "AUC".into(),
        x_log: false,
        y_log: false,
        series: vec![Series { name: "auc".into(), points }],
    }))
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
    /// Spacing of linear ticks.
    step: f64,
    from: f64,
    to: f64,
}

/// 1, 2 or 5 times a power of ten, giving about six intervals over `span`.
fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let unit = [1.0, 2.0, 5.0, 10.0].into_iter().find(|&u| u * magnitude >= raw).unwrap_or(10.0);
    unit * magnitude
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool, from: f64, to: f64) -> Self {
        let (mut lo, mut hi) = values.map(|v| if log { v.log10() } else { v }).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            (lo, hi) = (lo - pad, hi + pad);
        }
        let step = if log { 1.0 } else { nice_step(hi - lo) };
        (lo, hi) = ((lo / step).floor() * step, (hi / step).ceil() * step);
        Self { log, lo, hi, step, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        let n = ((self.hi - self.lo) / self.step).round() as i32;
        (0..=n)
            .map(|i| {
                let v = self.lo + self.step * i as f64;
                if self.log {
                    (10f64.powf(v), log_label(v.round() as i32))
                } else {
                    let decimals = (-self.step.log10().floor()).max(0.0) as usize;
                    (v, format!("{:.*}", decimals, v + 0.0))
                }
            })
            .collect()
    }
}

fn log_label(exponent: i32) -> String {
    match exponent {
        -2..=4 => {
            let s = format!("{:.2}", 10f64.powi(exponent));
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        }
        e => format!("1e{e}"),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(plot: &Plot) -> String {
    let points = || plot.series.iter().flat_map(|s| s.points.iter());
    let x = Axis::new(points().map(|p| p.0), plot.x_log, LEFT, WIDTH - RIGHT);
    let y = Axis::new(points().filter_map(|p| p.1), plot.y_log, HEIGHT - BOTTOM, TOP);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&plot.title));
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(svg, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for (t, label) in x.ticks() {
        let px = x.map(t);
        let _ = writeln!(svg, r##"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{y1}" stroke="#e5e5e5"/>"##);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 16.0, label);
    }
    for (t, label) in y.ticks() {
        let py = y.map(t);
        let _ = writeln!(svg, r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#e5e5e5"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, label);
    }
    let axis_note = |log: bool| if log { " (log)" } else { "" };
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0, escape(&plot.x_label), axis_note(plot.x_log));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}{2}</text>"#,
        (y0 + y1) / 2.0,
        escape(&plot.y_label),
        axis_note(plot.y_log)
    );
    for (i, s) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut runs: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for &(px, py) in &s.points {
            match py {
                Some(py) => runs.last_mut().expect("never empty").push((x.map(px), y.map(py))),
                None if !runs.last().expect("never empty").is_empty() => runs.push(Vec::new()),
                None => {}
            }
        }
        for run in runs.iter().filter(|r| r.len() > 1) {
            let pts: Vec<String> = run.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        }
        for (a, b) in runs.iter().flatten() {
            let _ = writeln!(svg, r#"<circle cx="{a:.2}" cy="{b:.2}" r="2.5" fill="{color}"/>"#);
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.name));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_method() {
        let table = "method,alpha,avg_cost\nlate,0.001,0.2\nlate,0.01,0.3\nsr,0.001,0.1\nsr,0.01,0.15\n";
        let svg = cost_chart("t", "cm1", table).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("alpha (log)"));
        assert_eq!(cost_chart("t", "cm1", table).unwrap(), svg);
    }

    #[test]
    fn single_method_gives_single_curve() {
        let svg = cost_chart("t", "cm2", "method,alpha,avg_cost\nearly,0.1,1\nearly,1,2\nearly,10,3\n").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn blank_cells_break_the_line() {
        let svg = cost_chart("t", "cm1", "method,alpha,avg_cost\nsr,0.001,1\nsr,0.01,2\nsr,0.1,\nsr,1,4\nsr,10,5\n").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
    }

    #[test]
    fn zero_costs_fall_back_to_linear_axes() {
        let svg = cost_chart("t", "cm1", "method,alpha,avg_cost\nlate,0,0\nlate,1,0.5\n").unwrap();
        assert!(!svg.contains("(log)"));
    }

    #[test]
    fn linear_ticks_are_round() {
        let axis = Axis::new([0.0, 11_920.0].into_iter(), false, 0.0, 1.0);
        let labels: Vec<String> = axis.ticks().into_iter().map(|t| t.1).collect();
        assert_eq!(labels, ["0", "2000", "4000", "6000", "8000", "10000", "12000"]);
        let axis = Axis::new([-10.0, 50.0].into_iter(), false, 0.0, 1.0);
        assert_eq!(axis.ticks().first().unwrap().1, "-10");
        let axis = Axis::new([0.42, 0.91].into_iter(), false, 0.0, 1.0);
        assert_eq!(axis.ticks().into_iter().map(|t| t.1).collect::<Vec<_>>(), ["0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"]);
    }

    #[test]
    fn wrong_columns_are_data_errors() {
        let err = auc_chart("auc.csv", "eta,value\n1,0.5\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(auc_chart("auc.csv", "eta,auc\n1,high\n").is_err());
    }

    #[test]
    fn histogram_and_auc_render() {
        let svg = histogram_chart("h", "cm2", "0.1", "method,eta,count\nsr,-1,3\nsr,0,5\nlate,-1,8\nlate,0,0\n").unwrap();
        assert!(svg.contains("alpha = 0.1"));
        let svg = auc_chart("a", "eta,auc\n-1,0.9\n0,\n1,0.7\n2,0.6\n").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
