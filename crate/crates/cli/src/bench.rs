//! `sess bench`: the simulation grid.
//!
//! Outputs, all under `--out`:
//! - `aggregate.csv`: per-cell mean and sd. It holds no timings, so it is
//!   byte-identical for any thread count.
//! - `replicates.csv`: one metrics row per replicate, including wall time.
//! - `table.txt`: aligned text version of the aggregate.
//! - `manifest.json`

use std::fmt::Write as _;
use std::path::PathBuf;

use sess_core::experiment::{run_grid, summarize, BenchGrid, CellSummary, ReplicateRecord, SUMMARY_COLUMNS};
use sess_core::io::write_atomic;
use sess_core::metrics::{fmt_real, CSV_HEADER};

use crate::commands::{create_dir, csv_bytes, read_toml, sess_config};
use crate::manifest::RunManifest;
use crate::{BenchArgs, CliError, SINGLE_THREADED_ENV};

fn single_threaded() -> bool {
    std::env::var(SINGLE_THREADED_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let mut grid: BenchGrid = read_toml(&args.config)?;
    if let Some(seed) = args.seed {
        grid.base_seed = seed;
    }
    grid.sess = sess_config(&args.tuning, grid.sess.clone())?;
    grid.validate()?;
    if args.reps == 0 {
        return Err(CliError::config("--reps must be at least 1"));
    }
    let threads = if single_threaded() {
        1
    } else {
        args.threads.unwrap_or(0)
    };

    create_dir(&args.out)?;
    let artifacts: Vec<PathBuf> = ["aggregate.csv", "replicates.csv", "table.txt"]
        .iter()
        .map(|n| args.out.join(n))
        .collect();
    let seeds = (0..args.reps as u64).map(|r| grid.base_seed + r).collect();
    RunManifest::new(
        "bench",
        &serde_json::json!({ "grid": grid, "reps": args.reps, "threads": threads }),
        seeds,
        artifacts.clone(),
    )
    .write(&args.out)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::new(5, format!("thread pool: {e}")))?;
    let records = pool.install(|| run_grid(&grid, args.reps));
    let summaries = summarize(&grid, &records);

    let violations: Vec<usize> = (0..summaries.len())
        .map(|c| {
            records
                .iter()
                .filter(|r| r.cell == c)
                .filter(|r| matches!(&r.outcome, Ok(o) if o.trace.validate(o.entry_bound).is_err()))
                .count()
        })
        .collect();

    write_atomic(&artifacts[0], &aggregate_csv(&summaries, &violations, args.reps)?)?;
    write_atomic(&artifacts[1], &replicates_csv(&grid, &records)?)?;
    write_atomic(&artifacts[2], table(&summaries).as_bytes())?;

    if records.iter().all(|r| r.outcome.is_err()) {
        let first = records
            .iter()
            .find_map(|r| r.outcome.as_ref().err())
            .cloned()
            .unwrap_or_default();
        return Err(CliError::new(5, format!("every replicate failed; first error: {first}")));
    }
    Ok(())
}

pub fn aggregate_header() -> Vec<String> {
    let mut h: Vec<String> = ["cell", "p", "scheme", "sparsity", "reps", "completed", "failed", "trace_violations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for c in SUMMARY_COLUMNS {
        h.push(format!("{c}_mean"));
        h.push(format!("{c}_sd"));
    }
    h
}

fn aggregate_csv(summaries: &[CellSummary], violations: &[usize], reps: usize) -> Result<Vec<u8>, CliError> {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .zip(violations)
        .map(|(s, v)| {
            let mut row = vec![
                s.cell.label(),
                s.cell.p.to_string(),
                s.cell.scheme.label(),
                fmt_real(s.cell.sparsity),
                reps.to_string(),
                s.completed.to_string(),
                s.failed.to_string(),
                v.to_string(),
            ];
            for (m, sd) in &s.stats {
                row.push(fmt_real(*m));
                row.push(fmt_real(*sd));
            }
            row
        })
        .collect();
    let header = aggregate_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(&header, &rows)
}

fn replicates_csv(grid: &BenchGrid, records: &[ReplicateRecord]) -> Result<Vec<u8>, CliError> {
    let cells = grid.cells();
    let mut header = vec!["cell", "rep", "seed", "status", "trace_ok"];
    header.extend(CSV_HEADER);
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut row = vec![cells[r.cell].label(), r.rep.to_string(), r.seed.to_string()];
            match &r.outcome {
                Ok(o) => {
                    row.push("ok".into());
                    row.push(o.trace.validate(o.entry_bound).is_ok().to_string());
                    row.extend(o.report.csv_record());
                }
                Err(e) => {
                    row.push(format!("failed: {e}"));
                    row.push(String::new());
                    row.extend(std::iter::repeat_n(String::new(), CSV_HEADER.len()));
                }
            }
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Table layout: `mean(sd)` per metric, three decimals.
pub fn table(summaries: &[CellSummary]) -> String {
    let mut head = vec!["cell".to_string()];
    head.extend(SUMMARY_COLUMNS.iter().map(|c| c.to_uppercase()));
    head.push("time(s)".into());
    head.push("status".into());
    let mut rows = vec![head];
    for s in summaries {
        let mut row = vec![s.cell.label()];
        row.extend(s.stats.iter().map(|(m, sd)| format!("{m:.3}({sd:.3})")));
        row.push(format!("{:.2}", s.mean_time_s));
        row.push(if s.complete() {
            "complete".into()
        } else {
            format!("incomplete ({} failed)", s.failed)
        });
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
