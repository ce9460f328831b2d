use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::SweepTable;
use crate::error::{Error, Result};
use crate::tasks::EvalResult;
use crate::train::TrainReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 50.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let lo = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        let hi = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
        let (mut x0, mut x1) = (lo(&mut xs.clone()), hi(&mut xs.clone()));
        let (mut y0, mut y1) = (lo(&mut ys.clone()).min(0.0), hi(&mut ys.clone()));
        if !(x1 > x0) {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if !(y1 > y0) {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * M)
    }
}

fn header(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).ok();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).ok();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).ok();
    writeln!(
        s,
        r#"<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>"#,
        b = H - M,
        r = W - M
    )
    .ok();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(xlabel)).ok();
    writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(ylabel)).ok();
    for (v, anchor) in [(f.y0, "end"), (f.y1, "end")] {
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="{anchor}">{}</text>"#, M - 4.0, f.py(v) + 4.0, tick(v)).ok();
    }
    for v in [f.x0, f.x1] {
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, f.px(v), H - M + 16.0, tick(v)).ok();
    }
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of labelled (x, y) series.
fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let f = Frame::new(
        series.iter().flat_map(|s| s.1.iter().map(|p| p.0)),
        series.iter().flat_map(|s| s.1.iter().map(|p| p.1)),
    );
    let mut s = header(title, xlabel, ylabel, &f);
    for (i, (label, pts)) in series.iter().enumerate() {
        let c = COLOURS[i % COLOURS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).ok();
        if pts.len() == 1 {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, f.px(pts[0].0), f.py(pts[0].1)).ok();
        }
        writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{}</text>"#, W - M - 120.0, M + 14.0 * i as f64, escape(label)).ok();
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of labelled values.
fn bar_chart(title: &str, xlabel: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let f = Frame::new([0.0, bars.len() as f64].into_iter(), bars.iter().map(|b| b.1));
    let mut s = header(title, xlabel, ylabel, &f);
    let slot = (W - 2.0 * M) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = M + slot * i as f64 + slot * 0.15;
        let top = f.py(*v);
        writeln!(
            s,
            r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            slot * 0.7,
            (f.py(0.0) - top).max(0.0),
            COLOURS[0]
        )
        .ok();
        writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, x + slot * 0.35, H - M + 30.0, escape(label)).ok();
    }
    s.push_str("</svg>\n");
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn seed_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name();
        if name.to_string_lossy().starts_with("seed-") && e.path().is_dir() {
            out.push(e.path());
        }
    }
    out.sort();
    Ok(out)
}

#[derive(serde::Deserialize)]
struct Reports {
    pretrain: Option<TrainReport>,
    finetune: std::collections::BTreeMap<usize, Vec<TrainReport>>,
}

fn curve(reports: &[TrainReport]) -> Vec<(f64, f64)> {
    reports
        .iter()
        .flat_map(|r| r.trajectory())
        .enumerate()
        .map(|(i, v)| ((i + 1) as f64, v))
        .collect()
}

/// Renders SVG plots for a run or sweep directory and returns their paths.
/// Fails without writing anything when no results are found.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut losses = Vec::new();
    let mut evals: Vec<EvalResult> = Vec::new();
    let seeds = if dir.is_dir() { seed_dirs(dir)? } else { Vec::new() };
    for s in &seeds {
        let label = s.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let reports_path = s.join("train_reports.json");
        if reports_path.is_file() {
            let r: Reports = read_json(&reports_path)?;
            let pts = match r.pretrain {
                Some(p) => curve(&[p]),
                None => r.finetune.values().next_back().map(|v| curve(v)).unwrap_or_default(),
            };
            if !pts.is_empty() {
                losses.push((label, pts));
            }
        }
        let eval_path = s.join("eval.json");
        if eval_path.is_file() {
            evals.push(read_json(&eval_path)?);
        }
    }
    let sweep_path = dir.join("sweep.json");
    let sweep: Option<SweepTable> = if sweep_path.is_file() { Some(read_json(&sweep_path)?) } else { None };

    if losses.is_empty() && evals.is_empty() && sweep.is_none() {
        return Err(Error::MissingResults(vec![
            dir.join("seed-*/train_reports.json"),
            dir.join("seed-*/eval.json"),
            sweep_path,
        ]));
    }

    let mut files = Vec::new();
    let mut emit = |name: &str, svg: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
        files.push(p);
        Ok(())
    };
    if !losses.is_empty() {
        emit("loss_curve.svg", line_chart("Training loss", "epoch", "loss", &losses))?;
    }
    if !evals.is_empty() {
        // Mean RMSE per horizon across seeds, in the order of the first run.
        let mut bars: Vec<(String, f64)> = Vec::new();
        for (i, score) in evals[0].scores.iter().enumerate() {
            let vals: Vec<f64> = evals.iter().filter_map(|e| e.scores.get(i)).map(|s| s.rmse).collect();
            let label = score.horizon.map_or_else(|| evals[0].task.clone(), |h| format!("h{h}"));
            bars.push((label, vals.iter().sum::<f64>() / vals.len() as f64));
        }
        if bars.len() > 1 {
            let avg = evals.iter().map(|e| e.average_rmse).sum::<f64>() / evals.len() as f64;
            bars.push(("avg".into(), avg));
        }
        let title = format!("RMSE by horizon: {} on {}", evals[0].task, evals[0].dataset);
        emit("rmse_by_horizon.svg", bar_chart(&title, "horizon", "RMSE", &bars))?;
    }
    if let Some(t) = sweep {
        let pts: Vec<(f64, f64)> = t.medians();
        emit(
            "fraction_curve.svg",
            line_chart("RMSE by training fraction", "fraction of training data", "median RMSE", &[("median".into(), pts)]),
        )?;
    }
    Ok(files)
}
