use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::measures::mean_sd;
use crate::error::Result;
use crate::models::ModelKind;

/// One (task, model, seed) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub task: String,
    pub model: String,
    pub seed: u64,
    pub latent_dim: usize,
    pub train_mse: Option<f64>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub test_mse: Option<f64>,
    /// Percent of the PCA reference's test MSE.
    pub normalized_mse: Option<f64>,
    pub ctrl_error: Option<f64>,
    pub ctrl_percent: Option<f64>,
    /// Mean over latent axes with a defined fit.
    pub r2: Option<f64>,
    pub r2_axes: Vec<Option<f64>>,
    pub angle_mean: Option<f64>,
    pub angle_sd: Option<f64>,
    pub angle_skipped: usize,
    /// (mean, sd) of final end-effector distance to goal.
    pub reach_distance: Option<(f64, f64)>,
    /// (mean, sd) of end-effector path length.
    pub reach_length: Option<(f64, f64)>,
    /// Row-major alignment used during evaluation.
    pub alignment: Vec<f64>,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn new(task: &str, kind: ModelKind, seed: u64, latent_dim: usize) -> Self {
        ReportRow {
            task: task.to_string(),
            model: kind.name().to_string(),
            seed,
            latent_dim,
            train_mse: None,
            initial_loss: None,
            final_loss: None,
            test_mse: None,
            normalized_mse: None,
            ctrl_error: None,
            ctrl_percent: None,
            r2: None,
            r2_axes: Vec::new(),
            angle_mean: None,
            angle_sd: None,
            angle_skipped: 0,
            reach_distance: None,
            reach_length: None,
            alignment: Vec::new(),
            error: None,
        }
    }
}

/// Raw series for plots of one (task, model), taken from its first seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotData {
    pub task: String,
    pub model: String,
    pub seed: u64,
    /// Per latent axis: (z, signed displacement).
    pub consistency: Vec<Vec<(f64, f64)>>,
    pub reach_paths: Vec<Vec<[f64; 2]>>,
    pub reach_goals: Vec<[f64; 2]>,
}

/// Mean and standard deviation over seeds of one (task, model).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub task: String,
    pub model: String,
    pub seeds: usize,
    pub failures: usize,
    pub normalized_mse: Option<(f64, f64)>,
    pub test_mse: Option<(f64, f64)>,
    pub ctrl_percent: Option<(f64, f64)>,
    pub ctrl_error: Option<(f64, f64)>,
    pub r2: Option<(f64, f64)>,
    pub angle: Option<(f64, f64)>,
    pub reach_distance: Option<(f64, f64)>,
    pub reach_length: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub plots: Vec<PlotData>,
}

pub const CSV_COLUMNS: [&str; 20] = [
    "task",
    "model",
    "seed",
    "latent_dim",
    "train_mse",
    "test_mse",
    "normalized_mse_pct",
    "ctrl_error",
    "ctrl_pct",
    "r2",
    "angle_mean_deg",
    "angle_sd_deg",
    "angle_skipped",
    "reach_dist_mean",
    "reach_dist_sd",
    "reach_len_mean",
    "reach_len_sd",
    "initial_loss",
    "final_loss",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn stats<F: Fn(&ReportRow) -> Option<f64>>(rows: &[&ReportRow], f: F) -> Option<(f64, f64)> {
    let values: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!values.is_empty()).then(|| mean_sd(&values))
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let fields = [
                csv_field(&r.task),
                csv_field(&r.model),
                r.seed.to_string(),
                r.latent_dim.to_string(),
                opt(r.train_mse),
                opt(r.test_mse),
                opt(r.normalized_mse),
                opt(r.ctrl_error),
                opt(r.ctrl_percent),
                opt(r.r2),
                opt(r.angle_mean),
                opt(r.angle_sd),
                r.angle_skipped.to_string(),
                opt(r.reach_distance.map(|x| x.0)),
                opt(r.reach_distance.map(|x| x.1)),
                opt(r.reach_length.map(|x| x.0)),
                opt(r.reach_length.map(|x| x.1)),
                opt(r.initial_loss),
                opt(r.final_loss),
                csv_field(r.error.as_deref().unwrap_or("")),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Aggregates rows per (task, model) in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let key = (r.task.clone(), r.model.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(task, model)| {
                let all: Vec<&ReportRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.task == task && r.model == model)
                    .collect();
                let ok: Vec<&ReportRow> = all.iter().copied().filter(|r| r.error.is_none()).collect();
                SummaryRow {
                    seeds: all.len(),
                    failures: all.len() - ok.len(),
                    normalized_mse: stats(&ok, |r| r.normalized_mse),
                    test_mse: stats(&ok, |r| r.test_mse),
                    ctrl_percent: stats(&ok, |r| r.ctrl_percent),
                    ctrl_error: stats(&ok, |r| r.ctrl_error),
                    r2: stats(&ok, |r| r.r2),
                    angle: stats(&ok, |r| r.angle_mean),
                    reach_distance: stats(&ok, |r| r.reach_distance.map(|x| x.0)),
                    reach_length: stats(&ok, |r| r.reach_length.map(|x| x.0)),
                    task,
                    model,
                }
            })
            .collect()
    }

    /// Fixed-width text table of [`summary`](Self::summary).
    pub fn summary_table(&self) -> String {
        let cell = |v: Option<(f64, f64)>, digits: usize| match v {
            Some((m, s)) => format!("{m:.digits$}±{s:.digits$}"),
            None => "-".to_string(),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:<5} {:>5} {:>14} {:>14} {:>12} {:>12} {:>14} {:>14}",
            "task", "model", "seeds", "mse % PCA", "ctrl % PCA", "R2", "angle deg", "reach dist", "reach length"
        );
        for s in self.summary() {
            let _ = writeln!(
                out,
                "{:<8} {:<5} {:>5} {:>14} {:>14} {:>12} {:>12} {:>14} {:>14}",
                s.task,
                s.model,
                if s.failures > 0 {
                    format!("{}!{}", s.seeds, s.failures)
                } else {
                    s.seeds.to_string()
                },
                cell(s.normalized_mse, 2),
                cell(s.ctrl_percent, 1),
                cell(s.r2, 3),
                cell(s.angle, 1),
                cell(s.reach_distance, 3),
                cell(s.reach_length, 3),
            );
        }
        out
    }

    /// Writes `report.csv`, `summary.txt` and `report.json` into `dir`, plus
    /// SVG plots when `plots` is set. Returns the written paths.
    pub fn write_files(&self, dir: impl AsRef<Path>, plots: bool) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, contents: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, contents)?;
            written.push(path);
            Ok(())
        };
        put("report.csv".into(), self.to_csv())?;
        put("summary.txt".into(), self.summary_table())?;
        put("report.json".into(), serde_json::to_string_pretty(self)?)?;
        if plots {
            for p in &self.plots {
                for (axis, points) in p.consistency.iter().enumerate() {
                    let title = format!("{} {} axis {}: z vs signed displacement", p.task, p.model, axis + 1);
                    put(
                        format!("{}_{}_consistency_z{}.svg", p.task, p.model, axis + 1),
                        svg_scatter(&title, points),
                    )?;
                }
                if !p.reach_paths.is_empty() {
                    let title = format!("{} {} end-effector paths", p.task, p.model);
                    put(
                        format!("{}_{}_reach_paths.svg", p.task, p.model),
                        svg_paths(&title, &p.reach_paths, &p.reach_goals),
                    )?;
                }
            }
        }
        Ok(written)
    }
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return Frame {
                x: (0.0, 1.0),
                y: (0.0, 1.0),
            };
        }
        let widen = |lo: f64, hi: f64| if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        Frame {
            x: widen(x0, x1),
            y: widen(y0, y1),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD);
        let py = H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD);
        (px, py)
    }

    fn axes(&self, out: &mut String, title: &str) {
        let _ = write!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\
             <text x=\"{}\" y=\"20\" font-size=\"13\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\
             <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
            W / 2.0,
            escape(title),
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let label = |out: &mut String, x: f64, y: f64, anchor: &str, v: f64| {
            let _ = write!(
                out,
                "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"10\" text-anchor=\"{anchor}\" font-family=\"sans-serif\">{v:.3}</text>"
            );
        };
        label(out, PAD, H - PAD + 14.0, "start", self.x.0);
        label(out, W - PAD, H - PAD + 14.0, "end", self.x.1);
        label(out, PAD - 4.0, H - PAD, "end", self.y.0);
        label(out, PAD - 4.0, PAD + 8.0, "end", self.y.1);
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn svg_scatter(title: &str, points: &[(f64, f64)]) -> String {
    let frame = Frame::fit(points.iter().copied());
    let mut out = String::new();
    frame.axes(&mut out, title);
    for &(x, y) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let (px, py) = frame.map(x, y);
        let _ = write!(out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>");
    }
    out.push_str("</svg>\n");
    out
}

pub fn svg_paths(title: &str, paths: &[Vec<[f64; 2]>], goals: &[[f64; 2]]) -> String {
    let all = paths.iter().flatten().chain(goals.iter()).map(|p| (p[0], p[1]));
    let frame = Frame::fit(all);
    let mut out = String::new();
    frame.axes(&mut out, title);
    for path in paths.iter().filter(|p| p.len() > 1) {
        let pts: Vec<String> = path
            .iter()
            .map(|p| {
                let (x, y) = frame.map(p[0], p[1]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = write!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-opacity=\"0.4\"/>",
            pts.join(" ")
        );
    }
    for g in goals {
        let (x, y) = frame.map(g[0], g[1]);
        let _ = write!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"#2ca02c\"/>");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: ModelKind, seed: u64, nmse: f64) -> ReportRow {
        let mut r = ReportRow::new("sine", model, seed, 1);
        r.normalized_mse = Some(nmse);
        r
    }

    #[test]
    fn csv_has_fixed_header_and_one_line_per_row() {
        let report = EvalReport {
            rows: vec![row(ModelKind::Ae, 0, 90.0), row(ModelKind::Ae, 1, 110.0)],
            plots: vec![],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), CSV_COLUMNS.len());
        assert_eq!(lines[1].split(',').count(), CSV_COLUMNS.len());
    }

    #[test]
    fn summary_aggregates_and_counts_failures() {
        let mut failed = row(ModelKind::Ae, 2, 0.0);
        failed.normalized_mse = None;
        failed.error = Some("boom, again".into());
        let report = EvalReport {
            rows: vec![row(ModelKind::Ae, 0, 90.0), row(ModelKind::Ae, 1, 110.0), failed],
            plots: vec![],
        };
        let s = &report.summary()[0];
        assert_eq!(s.seeds, 3);
        assert_eq!(s.failures, 1);
        assert_eq!(s.normalized_mse, Some((100.0, 10.0)));
        assert!(report.to_csv().contains("\"boom, again\""));
    }

    #[test]
    fn svg_output_is_well_formed() {
        let svg = svg_scatter("a < b", &[(0.0, 1.0), (1.0, 2.0)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<circle").count(), 2);
        let paths = svg_paths("p", &[vec![[0.0, 0.0], [1.0, 1.0]]], &[[1.0, 1.0]]);
        assert!(paths.contains("<polyline"));
    }
}
