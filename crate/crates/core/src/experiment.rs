//! Simulate → fit → evaluate, one replicate at a time, and the benchmark grid
//! built on top of it.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{FittedModel, SessConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::simgen::{generate, generate_null, GroupScheme, SimConfig, SimDataset};
use crate::trace::SelectionTrace;

#[derive(Clone, Debug)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub report: MetricsReport,
    pub trace: SelectionTrace,
    /// Upper bound on accepted entries over the whole run.
    pub entry_bound: usize,
}

/// Fits `sess` to a generated dataset and scores it against the truth.
pub fn evaluate(data: &SimDataset, sim: &SimConfig, sess: &SessConfig) -> Result<ReplicateOutcome> {
    let start = Instant::now();
    let model = FittedModel::fit(&data.x, &data.y, &data.groups, sess)?;
    let b_hat = model.coefficients();
    let elapsed = start.elapsed().as_secs_f64();
    let mut report = MetricsReport::recovery(&b_hat, &data.b_true, &data.groups)?;
    report.sparsity = Some(sim.sparsity);
    report.wall_time_s = elapsed;
    let entry_bound = sess.entry_cap(sim.n) * data.groups.expanded_responses();
    Ok(ReplicateOutcome {
        seed: sim.seed,
        report,
        trace: model.trace().clone(),
        entry_bound,
    })
}

pub fn run_replicate(sim: &SimConfig, sess: &SessConfig) -> Result<ReplicateOutcome> {
    evaluate(&generate(sim)?, sim, sess)
}

/// As [`run_replicate`] on the `B = 0` null model.
pub fn run_null_replicate(sim: &SimConfig, sess: &SessConfig) -> Result<ReplicateOutcome> {
    evaluate(&generate_null(sim)?, sim, sess)
}

/// Benchmark grid: every `(p, scheme, sparsity)` combination, `reps`
/// replicates each. Replicate `r` uses seed `base_seed + r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_q")]
    pub q: usize,
    pub p: Vec<usize>,
    pub schemes: Vec<GroupScheme>,
    pub sparsity: Vec<f64>,
    #[serde(default = "default_ar_rho")]
    pub ar_rho: f64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub sess: SessConfig,
}

fn default_n() -> usize {
    150
}
fn default_q() -> usize {
    200
}
fn default_ar_rho() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub p: usize,
    pub scheme: GroupScheme,
    pub sparsity: f64,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("p{}_{}_s{}", self.p, self.scheme.label(), self.sparsity)
    }
}

impl BenchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() || self.schemes.is_empty() || self.sparsity.is_empty() {
            return Err(Error::InvalidConfig("grid needs at least one p, scheme and sparsity".into()));
        }
        for cell in self.cells() {
            self.sim_config(&cell, 0).validate()?;
        }
        self.sess.validate()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &p in &self.p {
            for scheme in &self.schemes {
                for &sparsity in &self.sparsity {
                    out.push(Cell {
                        p,
                        scheme: scheme.clone(),
                        sparsity,
                    });
                }
            }
        }
        out
    }

    pub fn sim_config(&self, cell: &Cell, rep: usize) -> SimConfig {
        SimConfig {
            n: self.n,
            p: cell.p,
            q: self.q,
            sparsity: cell.sparsity,
            scheme: cell.scheme.clone(),
            ar_rho: self.ar_rho,
            seed: self.base_seed + rep as u64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReplicateRecord {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub outcome: std::result::Result<ReplicateOutcome, String>,
}

/// Runs every replicate of every cell. Work is spread over the current rayon
/// pool; records come back ordered by `(cell, rep)`.
pub fn run_grid(grid: &BenchGrid, reps: usize) -> Vec<ReplicateRecord> {
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    jobs.par_iter()
        .map(|&(c, rep)| {
            let sim = grid.sim_config(&cells[c], rep);
            ReplicateRecord {
                cell: c,
                rep,
                seed: sim.seed,
                outcome: run_replicate(&sim, &grid.sess).map_err(|e| e.to_string()),
            }
        })
        .collect()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-cell summary in Table column order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub completed: usize,
    pub failed: usize,
    /// `(mean, sd)` for pdr, fdr, dr, bdr, l1, l2, nne.
    pub stats: Vec<(f64, f64)>,
    pub mean_time_s: f64,
}

pub const SUMMARY_COLUMNS: [&str; 7] = ["pdr", "fdr", "dr", "bdr", "l1", "l2", "nne"];

impl CellSummary {
    pub fn complete(&self) -> bool {
        self.failed == 0
    }
}

pub fn summarize(grid: &BenchGrid, records: &[ReplicateRecord]) -> Vec<CellSummary> {
    grid.cells()
        .into_iter()
        .enumerate()
        .map(|(c, cell)| {
            let reports: Vec<&MetricsReport> = records
                .iter()
                .filter(|r| r.cell == c)
                .filter_map(|r| r.outcome.as_ref().ok().map(|o| &o.report))
                .collect();
            let failed = records
                .iter()
                .filter(|r| r.cell == c && r.outcome.is_err())
                .count();
            let column = |f: fn(&MetricsReport) -> f64| {
                mean_sd(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let stats = vec![
                column(|r| r.pdr),
                column(|r| r.fdr),
                column(|r| r.dr),
                column(|r| r.bdr),
                column(|r| r.l1_err),
                column(|r| r.l2_err),
                column(|r| r.nne as f64),
            ];
            let mean_time_s = column(|r| r.wall_time_s).0;
            CellSummary {
                cell,
                completed: reports.len(),
                failed,
                stats,
                mean_time_s,
            }
        })
        .collect()
}
