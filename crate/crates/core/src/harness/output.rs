use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::run::ResultRow;
use crate::error::Result;
use crate::pgd::mean_stderr;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes rows with a header line. Floats use the shortest representation
/// that parses back to the same value; infinities are written as `inf`.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "run_id", "master_seed", "trial", "client_id", "lambda", "f", "n", "m", "sigma", "sigma_h", "alpha",
            "attack", "aggregator", "metric_name", "metric_value",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Into::into))
        .collect()
}

/// Mean and standard error of one metric at one λ, over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub run_id: String,
    pub metric: String,
    pub lambda: f64,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub samples: usize,
}

/// Groups rows by `(run_id, metric, λ)` in order of first appearance.
/// Clients of one trial are averaged first, so the error bar is the standard
/// error over independent trials.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryPoint> {
    let mut order: Vec<(String, String, u64)> = Vec::new();
    let mut groups: HashMap<(String, String, u64), BTreeMap<usize, (f64, usize)>> = HashMap::new();
    for r in rows {
        let key = (r.run_id.clone(), r.metric_name.clone(), r.lambda.to_bits());
        let g = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            BTreeMap::new()
        });
        let e = g.entry(r.trial).or_insert((0.0, 0));
        e.0 += r.metric_value;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|key| {
            let per_trial = &groups[&key];
            let means: Vec<f64> = per_trial.values().map(|(s, c)| s / *c as f64).collect();
            let (mean, stderr) = mean_stderr(&means);
            SummaryPoint {
                run_id: key.0,
                metric: key.1,
                lambda: f64::from_bits(key.2),
                mean,
                stderr,
                trials: means.len(),
                samples: per_trial.values().map(|(_, c)| c).sum(),
            }
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line plot of one metric against λ: one polyline per run with a shaded
/// mean ± stderr band.
pub fn render_svg(metric: &str, points: &[SummaryPoint]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let mut series: Vec<(&str, Vec<&SummaryPoint>)> = Vec::new();
    for p in points.iter().filter(|p| p.metric == metric && p.mean.is_finite()) {
        match series.iter_mut().find(|(id, _)| *id == p.run_id) {
            Some((_, v)) => v.push(p),
            None => series.push((&p.run_id, vec![p])),
        }
    }
    let finite = |x: f64| if x.is_finite() { x } else { 0.0 };
    let lo = series
        .iter()
        .flat_map(|(_, v)| v.iter().map(|p| p.mean - finite(p.stderr)))
        .fold(f64::INFINITY, f64::min);
    let hi = series
        .iter()
        .flat_map(|(_, v)| v.iter().map(|p| p.mean + finite(p.stderr)))
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 0.5, lo + 0.5)
    } else {
        (0.0, 1.0)
    };
    let x = |l: f64| pad + l * (w - 2.0 * pad);
    let y = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">λ</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="30" font-size="12">{}</text>"#, escape(metric));
    let _ = writeln!(s, r#"<text x="5" y="{}" font-size="10">{lo:.4}</text>"#, h - pad);
    let _ = writeln!(s, r#"<text x="5" y="{}" font-size="10">{hi:.4}</text>"#, pad + 4.0);
    for (k, (id, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let upper = pts.iter().map(|p| format!("{:.2},{:.2}", x(p.lambda), y(p.mean + finite(p.stderr))));
        let lower = pts
            .iter()
            .rev()
            .map(|p| format!("{:.2},{:.2}", x(p.lambda), y(p.mean - finite(p.stderr))));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.lambda), y(p.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"><title>{}</title></polyline>"#,
            line.join(" "),
            escape(id)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    master_seed: u64,
    rows: usize,
    files: Vec<String>,
    config: &'a ScenarioConfig,
}

#[derive(Serialize)]
struct Summary<'a> {
    master_seed: u64,
    points: &'a [SummaryPoint],
}

/// Writes `results.csv`, `summary.json`, one `<metric>.svg` per metric and
/// `manifest.json` into `dir`, creating it if needed. Returns the paths written.
pub fn emit_outputs(rows: &[ResultRow], cfg: &ScenarioConfig, master_seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join(RESULTS_FILE);
    write_results(rows, fs::File::create(&path)?)?;
    written.push(path);

    let points = summarize(rows);
    let path = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&Summary {
        master_seed,
        points: &points,
    })?;
    text.push('\n');
    fs::write(&path, text)?;
    written.push(path);

    let mut metrics: Vec<&str> = Vec::new();
    for p in &points {
        if !metrics.contains(&p.metric.as_str()) {
            metrics.push(&p.metric);
        }
    }
    for metric in metrics {
        let path = dir.join(format!("{metric}.svg"));
        fs::write(&path, render_svg(metric, &points))?;
        written.push(path);
    }

    let path = dir.join(MANIFEST_FILE);
    let mut files: Vec<String> = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    files.push(MANIFEST_FILE.into());
    let mut text = serde_json::to_string_pretty(&Manifest {
        version: env!("CARGO_PKG_VERSION"),
        master_seed,
        rows: rows.len(),
        files,
        config: cfg,
    })?;
    text.push('\n');
    fs::write(&path, text)?;
    written.push(path);
    Ok(written)
}
