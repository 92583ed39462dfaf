//! Canonical-correlation screening.
//!
//! The block score is the trace of
//! `(X_k'X_k)^+ X_k' R_j (R_j'R_j)^+ R_j' X_k`, i.e. the sum of squared sample
//! canonical correlations between a predictor group and the current residuals
//! of a response group. It equals `tr(P_X P_R)` for the two orthogonal
//! projectors, which is how it is evaluated here.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::ExpandedDataset;
use crate::numerics::{ColumnBasis, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcScore {
    pub value: f64,
    pub k: usize,
    pub j: usize,
    pub row: Option<usize>,
}

fn projector_overlap(a: &ColumnBasis, b: &ColumnBasis) -> f64 {
    if a.rank() == 0 || b.rank() == 0 {
        return 0.0;
    }
    (a.matrix().transpose() * b.matrix()).norm_squared()
}

/// Sum of squared canonical correlations between two column sets.
pub fn cc_trace(x_block: &Matrix, y_resid: &Matrix) -> Result<f64> {
    if x_block.nrows() != y_resid.nrows() {
        return Err(Error::mismatch("cc_trace rows", x_block.nrows(), y_resid.nrows()));
    }
    if x_block.ncols() == 0 || y_resid.ncols() == 0 {
        return Err(Error::InvalidArgs("cc_trace needs at least one column on each side".into()));
    }
    Ok(projector_overlap(
        &ColumnBasis::new(x_block),
        &ColumnBasis::new(y_resid),
    ))
}

/// Squared multiple correlation of one column against the span of `y_resid`.
pub fn row_cc(x_col: &Matrix, y_resid: &Matrix) -> Result<f64> {
    if x_col.ncols() != 1 {
        return Err(Error::mismatch("row_cc columns", 1, x_col.ncols()));
    }
    if x_col.nrows() != y_resid.nrows() {
        return Err(Error::mismatch("row_cc rows", y_resid.nrows(), x_col.nrows()));
    }
    let basis = ColumnBasis::new(y_resid);
    row_cc_with_basis(x_col.as_slice(), &basis)
}

pub(crate) fn row_cc_with_basis(x: &[f64], basis: &ColumnBasis) -> Result<f64> {
    let norm: f64 = x.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return Err(Error::ZeroColumn);
    }
    Ok(basis.projected_norm_squared(x) / norm)
}

/// Caches the column bases of the predictor groups, which never change during
/// a fit.
#[derive(Clone, Debug)]
pub struct BlockScorer {
    predictor_bases: Vec<ColumnBasis>,
}

impl BlockScorer {
    pub fn new(data: &ExpandedDataset) -> Self {
        let k = data.groups().num_predictor_groups();
        let predictor_bases = (0..k)
            .into_par_iter()
            .map(|k| ColumnBasis::new(&data.x_block(k)))
            .collect();
        BlockScorer { predictor_bases }
    }

    /// Highest-scoring block among those not in `excluded`.
    ///
    /// Scores are computed in parallel but the argmax is taken sequentially in
    /// `(k, j)` order with a strict comparison, so ties go to the smallest
    /// `(k, j)` whatever the schedule.
    pub fn best_block(
        &self,
        data: &ExpandedDataset,
        residuals: &Matrix,
        excluded: &BTreeSet<(usize, usize)>,
    ) -> Result<CcScore> {
        let groups = data.groups();
        if residuals.nrows() != data.n() || residuals.ncols() != data.q() {
            return Err(Error::mismatch("residual columns", data.q(), residuals.ncols()));
        }
        let (kk, jj) = (groups.num_predictor_groups(), groups.num_response_groups());
        let active_j: Vec<usize> = (0..jj)
            .filter(|&j| (0..kk).any(|k| !excluded.contains(&(k, j))))
            .collect();
        if active_j.is_empty() {
            return Err(Error::AllBlocksExcluded);
        }
        let residual_bases: Vec<(usize, ColumnBasis)> = active_j
            .par_iter()
            .map(|&j| {
                let block = residuals
                    .columns(groups.response_offset(j), groups.response_group_size(j))
                    .clone_owned();
                (j, ColumnBasis::new(&block))
            })
            .collect();
        let pairs: Vec<(usize, usize, usize)> = (0..kk)
            .flat_map(|k| {
                residual_bases
                    .iter()
                    .enumerate()
                    .filter(move |(_, (j, _))| !excluded.contains(&(k, *j)))
                    .map(move |(slot, (j, _))| (k, *j, slot))
            })
            .collect();
        let scores: Vec<f64> = pairs
            .par_iter()
            .map(|&(k, _, slot)| projector_overlap(&self.predictor_bases[k], &residual_bases[slot].1))
            .collect();
        let mut best: Option<CcScore> = None;
        for (&(k, j, _), &value) in pairs.iter().zip(&scores) {
            if best.is_none_or(|b| value > b.value) {
                best = Some(CcScore {
                    value,
                    k,
                    j,
                    row: None,
                });
            }
        }
        best.ok_or(Error::AllBlocksExcluded)
    }
}

/// One-shot block search; see [`BlockScorer::best_block`].
pub fn score_all_blocks(
    data: &ExpandedDataset,
    residuals: &Matrix,
    excluded: &BTreeSet<(usize, usize)>,
) -> Result<CcScore> {
    BlockScorer::new(data).best_block(data, residuals, excluded)
}
