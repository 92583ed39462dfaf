//! File formats: dense matrix CSV, groups TOML, sparse estimate triplets and
//! the JSON-lines trace.
//!
//! Every writer goes through [`write_atomic`]: the content lands in a
//! temporary file next to the target and is renamed into place, so a failed
//! run never leaves a truncated file behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{Group, GroupSpec};
use crate::metrics::fmt_real;
use crate::numerics::Matrix;
use crate::trace::SelectionTrace;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => parse_error(
            path,
            line,
            len as usize + 1,
            format!("expected {expected_len} fields, found {len}"),
        ),
        other => parse_error(path, line, 0, format!("{other:?}")),
    }
}

// ---- dense matrices ----

/// Reads a numeric CSV with one header line. Errors carry 1-based line and
/// column of the offending cell.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = read_text(path)?;
    parse_matrix(&text, path)
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let ncols = rdr.headers().map_err(|e| csv_error(path, e))?.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_error(path, line, c + 1, format!("`{cell}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(parse_error(path, line, c + 1, format!("`{cell}` is not finite")));
            }
            values.push(v);
        }
        nrows += 1;
    }
    Ok(Matrix::from_row_slice(nrows, ncols, &values))
}

/// Header cells are `{prefix}1 .. {prefix}ncols`.
pub fn matrix_to_csv(m: &Matrix, prefix: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=m.ncols()).map(|c| format!("{prefix}{c}")).collect();
    w.write_record(&header).map_err(csv_write)?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| fmt_real(*v)))
            .map_err(csv_write)?;
    }
    w.into_inner().map_err(|e| csv_write(e.into_error().into()))
}

fn csv_write(e: csv::Error) -> Error {
    Error::InvalidArgs(format!("csv serialization: {e}"))
}

pub fn write_matrix(path: &Path, m: &Matrix, prefix: &str) -> Result<()> {
    write_atomic(path, &matrix_to_csv(m, prefix)?)
}

// ---- sparse estimates ----

/// `row,col,value` with 1-based original indices. An empty estimate is a
/// header-only file.
pub fn triplets_to_csv(b: &Matrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "col", "value"]).map_err(csv_write)?;
    for i in 0..b.nrows() {
        for l in 0..b.ncols() {
            let v = b[(i, l)];
            if v != 0.0 {
                w.write_record([(i + 1).to_string(), (l + 1).to_string(), fmt_real(v)])
                    .map_err(csv_write)?;
            }
        }
    }
    w.into_inner().map_err(|e| csv_write(e.into_error().into()))
}

pub fn write_triplets(path: &Path, b: &Matrix) -> Result<()> {
    write_atomic(path, &triplets_to_csv(b)?)
}

/// Dense `p x q` matrix from a triplet file; repeated cells are summed.
pub fn read_triplets(path: &Path, p: usize, q: usize) -> Result<Matrix> {
    let text = read_text(path)?;
    parse_triplets(&text, path, p, q)
}

pub fn parse_triplets(text: &str, path: &Path, p: usize, q: usize) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_error(path, e))?;
    if header.len() != 3 {
        return Err(parse_error(path, 1, 1, "expected header `row,col,value`"));
    }
    let mut b = Matrix::zeros(p, q);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |pos| pos.line());
        let index = |c: usize, bound: usize| -> Result<usize> {
            let cell = rec[c].trim();
            match cell.parse::<usize>() {
                Ok(v) if v >= 1 && v <= bound => Ok(v - 1),
                Ok(v) => Err(Error::IndexOutOfRange {
                    context: if c == 0 { "estimate row" } else { "estimate column" },
                    index: v,
                    size: bound,
                }),
                Err(_) => Err(parse_error(path, line, c + 1, format!("`{cell}` is not an index"))),
            }
        };
        let (i, l) = (index(0, p)?, index(1, q)?);
        let cell = rec[2].trim();
        let v: f64 = cell
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_error(path, line, 3, format!("`{cell}` is not a finite number")))?;
        b[(i, l)] += v;
    }
    Ok(b)
}

// ---- groups ----

#[derive(Debug, Serialize, Deserialize)]
struct GroupEntry {
    name: String,
    indices: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupsFile {
    predictors: Vec<GroupEntry>,
    responses: Vec<GroupEntry>,
}

/// Parses `"1-20,25,30-31"` into sorted-as-written 0-based indices.
pub fn parse_index_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let one = |t: &str| -> std::result::Result<usize, String> {
            match t.trim().parse::<usize>() {
                Ok(0) => Err("indices are 1-based".into()),
                Ok(v) => Ok(v - 1),
                Err(_) => Err(format!("`{t}` is not an index")),
            }
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (one(a)?, one(b)?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(one(part)?),
        }
    }
    Ok(out)
}

/// Inverse of [`parse_index_list`], collapsing runs into ranges.
pub fn format_index_list(members: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < members.len() {
        let start = members[i];
        let mut end = start;
        while i + 1 < members.len() && members[i + 1] == end + 1 {
            end += 1;
            i += 1;
        }
        parts.push(if end == start {
            format!("{}", start + 1)
        } else {
            format!("{}-{}", start + 1, end + 1)
        });
        i += 1;
    }
    parts.join(",")
}

fn line_col(text: &str, offset: usize) -> (u64, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() as u64 + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

pub fn parse_groups(text: &str, path: &Path, p: usize, q: usize) -> Result<GroupSpec> {
    let file: GroupsFile = toml::from_str(text).map_err(|e| {
        let (line, col) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        parse_error(path, line, col, e.message().to_string())
    })?;
    let convert = |entries: Vec<GroupEntry>| -> Result<Vec<Group>> {
        entries
            .into_iter()
            .map(|g| {
                let members = parse_index_list(&g.indices).map_err(|m| {
                    let (line, col) = text
                        .find(&g.indices)
                        .map_or((0, 0), |o| line_col(text, o));
                    parse_error(path, line, col, format!("group `{}`: {m}", g.name))
                })?;
                Ok(Group::new(g.name, members))
            })
            .collect()
    };
    let predictors = convert(file.predictors)?;
    let responses = convert(file.responses)?;
    GroupSpec::new(predictors, responses, p, q)
}

pub fn read_groups(path: &Path, p: usize, q: usize) -> Result<GroupSpec> {
    parse_groups(&read_text(path)?, path, p, q)
}

pub fn groups_to_toml(spec: &GroupSpec) -> String {
    let entry = |g: &Group| GroupEntry {
        name: g.name.clone(),
        indices: format_index_list(&g.members),
    };
    let file = GroupsFile {
        predictors: spec.predictor_groups().iter().map(entry).collect(),
        responses: spec.response_groups().iter().map(entry).collect(),
    };
    toml::to_string(&file).expect("groups serialize")
}

pub fn write_groups(path: &Path, spec: &GroupSpec) -> Result<()> {
    write_atomic(path, groups_to_toml(spec).as_bytes())
}

// ---- trace and JSON ----

pub fn write_trace(path: &Path, trace: &SelectionTrace) -> Result<()> {
    write_atomic(path, trace.to_jsonl().as_bytes())
}

pub fn read_trace(path: &Path) -> Result<SelectionTrace> {
    let text = read_text(path)?;
    SelectionTrace::from_jsonl(&text)
        .map_err(|e| parse_error(path, e.line() as u64, e.column(), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgs(format!("json serialization: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
