//! Recovery and prediction measures.
//!
//! Supports are compared entrywise (`θ_il = 1{β_il ≠ 0}`). Empty sets follow
//! two conventions: PDR is 1 when the truth is empty and FDR is 0 when the
//! estimate is empty.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::GroupSpec;
use crate::numerics::Matrix;

pub const CSV_HEADER: [&str; 12] = [
    "method", "sparsity", "pdr", "fdr", "dr", "bdr", "l1", "l2", "mse", "mspe", "nne", "time_s",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub sparsity: Option<f64>,
    pub pdr: f64,
    pub fdr: f64,
    pub dr: f64,
    pub bdr: f64,
    pub l1_err: f64,
    pub l2_err: f64,
    pub mse: Option<f64>,
    pub mspe: Option<f64>,
    pub nne: usize,
    pub wall_time_s: f64,
}

impl MetricsReport {
    /// Recovery metrics of `b_hat` against `b_true`; prediction fields empty.
    pub fn recovery(b_hat: &Matrix, b_true: &Matrix, groups: &GroupSpec) -> Result<Self> {
        let (pdr, fdr, dr) = support_metrics(b_hat, b_true)?;
        let bdr = block_metrics(b_hat, b_true, groups)?;
        let (l1_err, l2_err) = error_norms(b_hat, b_true)?;
        Ok(MetricsReport {
            method: "sess".into(),
            sparsity: None,
            pdr,
            fdr,
            dr,
            bdr,
            l1_err,
            l2_err,
            mse: None,
            mspe: None,
            nne: count_nonzero(b_hat),
            wall_time_s: 0.0,
        })
    }

    /// Prediction-only report, for data without a known truth. Recovery
    /// fields are NaN.
    pub fn unscored(nne: usize) -> Self {
        MetricsReport {
            method: "sess".into(),
            sparsity: None,
            pdr: f64::NAN,
            fdr: f64::NAN,
            dr: f64::NAN,
            bdr: f64::NAN,
            l1_err: f64::NAN,
            l2_err: f64::NAN,
            mse: None,
            mspe: None,
            nne,
            wall_time_s: 0.0,
        }
    }

    /// Fields in [`CSV_HEADER`] order; missing and NaN values are empty cells.
    pub fn csv_record(&self) -> Vec<String> {
        let cell = |v: f64| if v.is_nan() { String::new() } else { fmt_real(v) };
        let opt = |v: Option<f64>| v.map(cell).unwrap_or_default();
        vec![
            self.method.clone(),
            opt(self.sparsity),
            cell(self.pdr),
            cell(self.fdr),
            cell(self.dr),
            cell(self.bdr),
            cell(self.l1_err),
            cell(self.l2_err),
            opt(self.mse),
            opt(self.mspe),
            self.nne.to_string(),
            cell(self.wall_time_s),
        ]
    }
}

/// Shortest representation that round-trips.
pub fn fmt_real(v: f64) -> String {
    format!("{v}")
}

fn check_dims(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::mismatch(context, b.nrows(), a.nrows()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::mismatch(context, b.ncols(), a.ncols()));
    }
    Ok(())
}

pub fn count_nonzero(m: &Matrix) -> usize {
    m.iter().filter(|v| **v != 0.0).count()
}

fn rates(true_pos: usize, truth: usize, selected: usize) -> (f64, f64, f64) {
    let pdr = if truth == 0 {
        1.0
    } else {
        true_pos as f64 / truth as f64
    };
    let fdr = if selected == 0 {
        0.0
    } else {
        (selected - true_pos) as f64 / selected as f64
    };
    (pdr, fdr, pdr + 1.0 - fdr)
}

/// `(PDR, FDR, DR)` of the entrywise supports.
pub fn support_metrics(b_hat: &Matrix, b_true: &Matrix) -> Result<(f64, f64, f64)> {
    check_dims("support_metrics", b_hat, b_true)?;
    let (mut tp, mut truth, mut selected) = (0, 0, 0);
    for (h, t) in b_hat.iter().zip(b_true.iter()) {
        let (h, t) = (*h != 0.0, *t != 0.0);
        tp += (h && t) as usize;
        truth += t as usize;
        selected += h as usize;
    }
    Ok(rates(tp, truth, selected))
}

fn touched_blocks(b: &Matrix, groups: &GroupSpec) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (k, xg) in groups.predictor_groups().iter().enumerate() {
        for (j, yg) in groups.response_groups().iter().enumerate() {
            let hit = xg
                .members
                .iter()
                .any(|&i| yg.members.iter().any(|&l| b[(i, l)] != 0.0));
            if hit {
                out.insert((k, j));
            }
        }
    }
    out
}

/// Block-level DR; a block counts once however many groups overlap it.
pub fn block_metrics(b_hat: &Matrix, b_true: &Matrix, groups: &GroupSpec) -> Result<f64> {
    check_dims("block_metrics", b_hat, b_true)?;
    check_dims(
        "block_metrics groups",
        b_true,
        &Matrix::zeros(groups.original_predictors(), groups.original_responses()),
    )?;
    let est = touched_blocks(b_hat, groups);
    let truth = touched_blocks(b_true, groups);
    let tp = est.intersection(&truth).count();
    Ok(rates(tp, truth.len(), est.len()).2)
}

/// Entrywise ℓ1 and Frobenius norms of `b_hat - b_true`.
pub fn error_norms(b_hat: &Matrix, b_true: &Matrix) -> Result<(f64, f64)> {
    check_dims("error_norms", b_hat, b_true)?;
    let d = b_hat - b_true;
    Ok((d.iter().map(|v| v.abs()).sum(), d.norm()))
}

fn mean_squared_residual(b_hat: &Matrix, intercept: &[f64], x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.ncols() != b_hat.nrows() {
        return Err(Error::mismatch("prediction predictors", b_hat.nrows(), x.ncols()));
    }
    if y.nrows() != x.nrows() {
        return Err(Error::mismatch("prediction rows", x.nrows(), y.nrows()));
    }
    if y.ncols() != b_hat.ncols() {
        return Err(Error::mismatch("prediction responses", b_hat.ncols(), y.ncols()));
    }
    if intercept.len() != b_hat.ncols() {
        return Err(Error::mismatch("intercepts", b_hat.ncols(), intercept.len()));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let mut r = y - x * b_hat;
    for (mut col, c) in r.column_iter_mut().zip(intercept) {
        col.add_scalar_mut(-c);
    }
    Ok(r.norm_squared() / r.len() as f64)
}

/// `(MSE, MSPE, NNE)` for the linear predictor `intercept + x·b_hat`.
///
/// `train` and `test` are `(X, Y)` pairs in original units; MSPE is `None`
/// without a test set.
pub fn prediction_metrics(
    b_hat: &Matrix,
    intercept: &[f64],
    train: (&Matrix, &Matrix),
    test: Option<(&Matrix, &Matrix)>,
) -> Result<(f64, Option<f64>, usize)> {
    let mse = mean_squared_residual(b_hat, intercept, train.0, train.1)?;
    let mspe = test
        .map(|(x, y)| mean_squared_residual(b_hat, intercept, x, y))
        .transpose()?;
    Ok((mse, mspe, count_nonzero(b_hat)))
}
