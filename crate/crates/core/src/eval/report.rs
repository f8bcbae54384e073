//! On-disk evaluation report: `manifest.json` plus, for every algorithm and
//! test variance, `{algorithm}/sigma2_{s}/` holding `curves.csv`,
//! `totals.csv` and `histogram.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::SweepConfig;
use crate::error::{Error, Result};
use crate::models::ModelConfig;

pub const REPORT_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_config: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor_config: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucb_beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub sweep: SweepConfig,
    pub agents: Vec<AgentEntry>,
    /// Free-form provenance such as checkpoint directories.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * bin as f64, self.lo + w * (bin + 1) as f64)
    }
}

/// Metrics of one algorithm at one test variance.
#[derive(Clone, Debug, PartialEq)]
pub struct CellReport {
    pub algorithm: String,
    pub sigma2: f64,
    pub avg_suboptimality: Vec<f64>,
    pub avg_regret: Vec<f64>,
    /// Total regret of every test environment, in environment order.
    pub totals: Vec<f64>,
    pub histogram: Histogram,
    pub prediction_loss: Option<Vec<f64>>,
}

impl CellReport {
    pub fn final_regret(&self) -> f64 {
        self.avg_regret.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub manifest: Manifest,
    pub cells: Vec<CellReport>,
}

impl EvalReport {
    pub fn cell(&self, algorithm: &str, sigma2: f64) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && (c.sigma2 - sigma2).abs() < 1e-12)
    }

    pub fn algorithms(&self) -> Vec<&str> {
        self.manifest.agents.iter().map(|a| a.name.as_str()).collect()
    }

    /// `(sigma2, avg_regret)` pairs of one algorithm.
    pub fn regret_curves(&self, algorithm: &str) -> Vec<(f64, Vec<f64>)> {
        self.cells
            .iter()
            .filter(|c| c.algorithm == algorithm)
            .map(|c| (c.sigma2, c.avg_regret.clone()))
            .collect()
    }
}

fn cell_dir(root: &Path, algorithm: &str, sigma2: f64) -> PathBuf {
    root.join(algorithm).join(format!("sigma2_{sigma2}"))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn save_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let manifest = serde_json::to_string_pretty(&report.manifest).expect("manifest serializes");
    write(&dir.join(MANIFEST), &(manifest + "\n"))?;
    for cell in &report.cells {
        let cd = cell_dir(dir, &cell.algorithm, cell.sigma2);
        let mut curves = String::from("t,avg_suboptimality,avg_regret,prediction_loss\n");
        for (i, (s, r)) in cell.avg_suboptimality.iter().zip(&cell.avg_regret).enumerate() {
            let p = cell
                .prediction_loss
                .as_ref()
                .map(|p| p[i].to_string())
                .unwrap_or_default();
            writeln!(curves, "{},{s},{r},{p}", i + 1).expect("string write");
        }
        write(&cd.join("curves.csv"), &curves)?;
        let mut totals = String::from("env,total_regret\n");
        for (i, v) in cell.totals.iter().enumerate() {
            writeln!(totals, "{i},{v}").expect("string write");
        }
        write(&cd.join("totals.csv"), &totals)?;
        let mut hist = String::from("bin,lo,hi,count\n");
        for (b, c) in cell.histogram.counts.iter().enumerate() {
            let (lo, hi) = cell.histogram.bin_edges(b);
            writeln!(hist, "{b},{lo},{hi},{c}").expect("string write");
        }
        write(&cd.join("histogram.csv"), &hist)?;
    }
    Ok(())
}

fn csv_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = read(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Format(format!("{}: expected header {header:?}", path.display())));
    }
    Ok(lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn num<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad number {field:?}", path.display())))
}

fn load_cell(dir: &Path, algorithm: &str, sigma2: f64) -> Result<CellReport> {
    let cd = cell_dir(dir, algorithm, sigma2);
    let path = cd.join("curves.csv");
    let rows = csv_rows(&path, "t,avg_suboptimality,avg_regret,prediction_loss")?;
    let mut sub = Vec::with_capacity(rows.len());
    let mut reg = Vec::with_capacity(rows.len());
    let mut pred = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.len() != 4 {
            return Err(Error::Format(format!("{}: expected 4 columns", path.display())));
        }
        sub.push(num(&path, &r[1])?);
        reg.push(num(&path, &r[2])?);
        if !r[3].is_empty() {
            pred.push(num(&path, &r[3])?);
        }
    }
    let prediction_loss = match pred.len() {
        0 => None,
        n if n == rows.len() => Some(pred),
        _ => return Err(Error::Format(format!("{}: partial prediction_loss column", path.display()))),
    };
    let path = cd.join("totals.csv");
    let totals = csv_rows(&path, "env,total_regret")?
        .iter()
        .map(|r| num(&path, r.get(1).map_or("", String::as_str)))
        .collect::<Result<Vec<f64>>>()?;
    let path = cd.join("histogram.csv");
    let hist_rows = csv_rows(&path, "bin,lo,hi,count")?;
    let counts = hist_rows
        .iter()
        .map(|r| num(&path, r.get(3).map_or("", String::as_str)))
        .collect::<Result<Vec<usize>>>()?;
    let hi = match hist_rows.last() {
        Some(r) => num(&path, r.get(2).map_or("", String::as_str))?,
        None => 0.0,
    };
    Ok(CellReport {
        algorithm: algorithm.to_string(),
        sigma2,
        avg_suboptimality: sub,
        avg_regret: reg,
        totals,
        histogram: Histogram { lo: 0.0, hi, counts },
        prediction_loss,
    })
}

pub fn load_report(dir: impl AsRef<Path>) -> Result<EvalReport> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let manifest: Manifest =
        serde_json::from_str(&read(&path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            supported: REPORT_FORMAT_VERSION,
        });
    }
    let mut cells = Vec::new();
    for agent in &manifest.agents {
        for &s in &manifest.sweep.sigma2 {
            cells.push(load_cell(dir, &agent.name, s)?);
        }
    }
    Ok(EvalReport { manifest, cells })
}
