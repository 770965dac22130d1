//! JSON summaries and CSV tables written by the command line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use predrec_core::kernel::KernelFamily;
use predrec_core::{Kernel, MixingDensity, MixingGrid, PrFit};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::ingest::ColumnSpec;

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub input: Option<PathBuf>,
    pub columns: ColumnSpec,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    /// Command-specific options after defaults and `auto` values are filled in.
    pub settings: Value,
}

/// Reproducibility header embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunHeader {
    pub fn new(config: RunConfig) -> Self {
        RunHeader {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub atoms: Vec<bool>,
}

impl GridRecord {
    pub fn from_grid(grid: &MixingGrid) -> Self {
        let (lo, hi) = grid.support();
        GridRecord {
            lo,
            hi,
            nodes: grid.nodes().to_vec(),
            weights: grid.weights().to_vec(),
            atoms: grid.atom_flags().to_vec(),
        }
    }

    pub fn to_grid(&self) -> Result<MixingGrid> {
        Ok(MixingGrid::from_parts(
            self.nodes.clone(),
            self.weights.clone(),
            self.atoms.clone(),
            self.lo,
            self.hi,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub family: String,
    pub theta: Vec<f64>,
}

impl KernelRecord {
    pub fn from_kernel(kernel: &Kernel) -> Self {
        KernelRecord {
            family: kernel.family().name().to_string(),
            theta: kernel.theta(),
        }
    }

    pub fn to_kernel(&self) -> Result<Kernel> {
        Ok(self.family.parse::<KernelFamily>()?.with_theta(&self.theta)?)
    }
}

/// A fitted mixing density together with everything needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub header: RunHeader,
    pub kernel: KernelRecord,
    pub grid: GridRecord,
    /// Density values at the grid nodes.
    pub density: Vec<f64>,
    pub n: usize,
    pub log_marginal_likelihood: f64,
    /// Per-step `ln f_{i-1}(Y_i)`.
    pub log_predictive: Vec<f64>,
    pub permutations_used: usize,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub extra: Value,
}

impl FitArtifact {
    pub fn from_fit(header: RunHeader, fit: &PrFit) -> Self {
        FitArtifact {
            header,
            kernel: KernelRecord::from_kernel(&fit.kernel),
            grid: GridRecord::from_grid(fit.density.grid()),
            density: fit.density.values().to_vec(),
            n: fit.per_step_log_predictive.len(),
            log_marginal_likelihood: fit.log_marginal_likelihood(),
            log_predictive: fit.per_step_log_predictive.clone(),
            permutations_used: fit.permutations_used,
            extra: Value::Null,
        }
    }

    /// Rebuild the mixing density.
    pub fn mixing_density(&self) -> Result<MixingDensity> {
        let grid = Arc::new(self.grid.to_grid()?);
        Ok(MixingDensity::from_values(grid, self.density.clone())?)
    }

    pub fn kernel(&self) -> Result<Kernel> {
        self.kernel.to_kernel()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Csv(e.into()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        self.write_to(file)
    }
}

/// `<dir>/<stem>.<table>.csv` next to the JSON output `<dir>/<stem>.json`.
pub fn table_path(json_path: &Path, table: &str) -> PathBuf {
    let stem = json_path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    json_path.with_file_name(format!("{stem}.{table}.csv"))
}
