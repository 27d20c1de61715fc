use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::model::Region;

pub const REPORT_KIND: &str = "facestab-report";
pub const REPORT_VERSION: u32 = 1;

/// Scores of one method on one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub region: Region,
    /// Mean vertex distance, mm.
    pub md: f64,
    /// Standard deviation of all vertex distances, mm.
    pub md_std: f64,
    /// Mean over samples of the largest vertex distance, mm.
    pub mx: f64,
    /// Area under the PCK curve, percent.
    pub auc: f64,
    pub pck: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub rows: Vec<RegionRow>,
    /// Median and mean per-pair skull RMS residual, mm.
    pub skull_median: f64,
    pub skull_mean: f64,
}

impl MethodReport {
    pub fn row(&self, region: Region) -> Option<&RegionRow> {
        self.rows.iter().find(|r| r.region == region)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    pub version: u32,
    pub sample_count: usize,
    pub thresholds: Vec<f64>,
    pub methods: Vec<MethodReport>,
    /// Configuration, seeds and input hashes of the run.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(sample_count: usize, thresholds: Vec<f64>, methods: Vec<MethodReport>, config: serde_json::Value) -> Self {
        Self {
            kind: REPORT_KIND.into(),
            version: REPORT_VERSION,
            sample_count,
            thresholds,
            methods,
            config,
        }
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
        if r.kind != REPORT_KIND || r.version != REPORT_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: expected {REPORT_KIND} v{REPORT_VERSION}, found {} v{}",
                path.display(),
                r.kind,
                r.version
            )));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// One line per method and region.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,region,md_mm,md_std_mm,mx_mm,auc_percent,skull_median_mm\n");
        for m in &self.methods {
            for r in &m.rows {
                let _ = writeln!(out, "{},{},{},{},{},{},{}", m.method, r.region, r.md, r.md_std, r.mx, r.auc, m.skull_median);
            }
        }
        out
    }

    /// Methods as rows, regions as column groups of `m_d`, `m_x` and AUC.
    pub fn to_table(&self) -> String {
        let regions: Vec<Region> = self.methods.first().map(|m| m.rows.iter().map(|r| r.region).collect()).unwrap_or_default();
        let width = self.methods.iter().map(|m| m.method.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:width$}", "method");
        for r in &regions {
            let _ = write!(out, " | {:^34}", r.as_str());
        }
        out.push_str(" | skull med\n");
        let _ = write!(out, "{:width$}", "");
        for _ in &regions {
            let _ = write!(out, " | {:>15} {:>8} {:>9}", "m_d", "m_x", "AUC");
        }
        out.push_str(" |\n");
        for m in &self.methods {
            let _ = write!(out, "{:width$}", m.method);
            for region in &regions {
                match m.row(*region) {
                    Some(r) => {
                        let _ = write!(out, " | {:>15} {:>8.3} {:>9.2}", format!("{:.3}±{:.3}", r.md, r.md_std), r.mx, r.auc);
                    }
                    None => {
                        let _ = write!(out, " | {:>34}", "-");
                    }
                }
            }
            let _ = writeln!(out, " | {:.3e}", m.skull_median);
        }
        out
    }
}
