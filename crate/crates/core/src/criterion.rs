//! Extended BIC used as the stopping rule for entry selection.
//!
//! ```text
//! EBIC(ζ) = fit(ζ) + λ1 · Σ_l r_l · ln n + 2 λ2 γ · ( ln C(KJ, m) + Σ_l ln C(|B_l|, r_l) )
//! ```
//!
//! where the sums run over the `m` blocks that hold at least one selected
//! entry and `r_l` is the number of selected entries in block `l`. The
//! goodness-of-fit term is one of [`FitTerm`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{BlockCoordinate, ExpandedDataset, GroupSpec};
use crate::numerics::{least_squares, log_binomial, Matrix};

/// Residual sums of squares at or below this are treated as an exact fit.
pub const PERFECT_FIT_RSS: f64 = 1e-300;

/// How residual sums of squares enter the criterion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTerm {
    /// `n Σ_l ln(RSS_l / n)` over expanded response columns: the Gaussian
    /// likelihood with a separate error variance per response.
    #[default]
    PerResponse,
    /// `n Σ_j ln(‖Y_j - X B^(j)‖_F² / n)` over response groups: one pooled
    /// error variance per response group.
    BlockFrobenius,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EbicParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    #[serde(default)]
    pub fit_term: FitTerm,
}

impl EbicParams {
    /// Default tuning (`λ1 = λ2 = 1`) with `γ` derived from the problem size
    /// and clamped to `[0, 1]`.
    pub fn for_size(n: usize, p: usize) -> Result<Self> {
        Ok(EbicParams {
            lambda1: 1.0,
            lambda2: 1.0,
            gamma: derive_gamma(n, p)?.clamp(0.0, 1.0),
            fit_term: FitTerm::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda1 = {}", self.lambda1)));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda2 = {}", self.lambda2)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma = {}", self.gamma)));
        }
        Ok(())
    }
}

/// `γ = 1 − ln n / (2 ln p)`, returned as is (it is negative when `p < √n`).
pub fn derive_gamma(n: usize, p: usize) -> Result<f64> {
    if n < 2 || p < 2 {
        return Err(Error::InvalidArgs(format!(
            "gamma needs n >= 2 and p >= 2, got n = {n}, p = {p}"
        )));
    }
    Ok(1.0 - (n as f64).ln() / (2.0 * (p as f64).ln()))
}

/// A candidate model: a set of selected coefficient entries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ModelState {
    pub selected: BTreeSet<BlockCoordinate>,
}

impl ModelState {
    pub fn new(selected: impl IntoIterator<Item = BlockCoordinate>) -> Self {
        ModelState {
            selected: selected.into_iter().collect(),
        }
    }

    /// Selected entries per nonzero block.
    pub fn block_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut out = BTreeMap::new();
        for c in &self.selected {
            *out.entry(c.block()).or_insert(0) += 1;
        }
        out
    }

    /// Number of distinct nonzero blocks.
    pub fn m(&self) -> usize {
        self.block_counts().len()
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Expanded predictor indices selected for each expanded response.
    pub fn supports(&self, groups: &GroupSpec) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![Vec::new(); groups.expanded_responses()];
        for &c in &self.selected {
            let (i, l) = groups.to_flat(c)?;
            out[l].push(i);
        }
        Ok(out)
    }
}

/// The three additive parts of the criterion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EbicTerms {
    pub fit: f64,
    pub size_penalty: f64,
    pub combinatorial_penalty: f64,
}

impl EbicTerms {
    pub fn total(&self) -> f64 {
        self.fit + self.size_penalty + self.combinatorial_penalty
    }
}

/// Evaluates the criterion from cached residual sums of squares.
#[derive(Clone, Debug)]
pub struct Criterion<'a> {
    groups: &'a GroupSpec,
    n: usize,
    params: EbicParams,
}

impl<'a> Criterion<'a> {
    pub fn new(groups: &'a GroupSpec, n: usize, params: EbicParams) -> Self {
        Criterion { groups, n, params }
    }

    pub fn params(&self) -> &EbicParams {
        &self.params
    }

    /// Goodness-of-fit term from per-response residual sums of squares.
    pub fn fit_term(&self, rss: &[f64]) -> Result<f64> {
        let nf = self.n as f64;
        match self.params.fit_term {
            FitTerm::PerResponse => {
                let mut acc = 0.0;
                for (l, &r) in rss.iter().enumerate() {
                    if r <= PERFECT_FIT_RSS {
                        return Err(Error::PerfectFit { response: l });
                    }
                    acc += (r / nf).ln();
                }
                Ok(nf * acc)
            }
            FitTerm::BlockFrobenius => {
                let mut acc = 0.0;
                for j in 0..self.groups.num_response_groups() {
                    let off = self.groups.response_offset(j);
                    let total: f64 = rss[off..off + self.groups.response_group_size(j)].iter().sum();
                    if total <= PERFECT_FIT_RSS {
                        return Err(Error::PerfectFit { response: off });
                    }
                    acc += (total / nf).ln();
                }
                Ok(nf * acc)
            }
        }
    }

    /// `(size penalty, combinatorial penalty)` for the given block counts.
    pub fn penalties(&self, counts: &BTreeMap<(usize, usize), usize>) -> Result<(f64, f64)> {
        let total: usize = counts.values().sum();
        let nonzero: Vec<_> = counts.iter().filter(|(_, &r)| r > 0).collect();
        let size = self.params.lambda1 * total as f64 * (self.n as f64).ln();
        let mut comb = log_binomial(self.groups.num_blocks(), nonzero.len())?;
        for (&(k, j), &r) in nonzero {
            comb += log_binomial(self.groups.block_size(k, j), r)?;
        }
        Ok((size, 2.0 * self.params.lambda2 * self.params.gamma * comb))
    }

    pub fn terms(&self, rss: &[f64], counts: &BTreeMap<(usize, usize), usize>) -> Result<EbicTerms> {
        let fit = self.fit_term(rss)?;
        let (size_penalty, combinatorial_penalty) = self.penalties(counts)?;
        Ok(EbicTerms {
            fit,
            size_penalty,
            combinatorial_penalty,
        })
    }
}

/// Residual sum of squares of one expanded response regressed on the given
/// expanded predictors.
pub fn response_rss(data: &ExpandedDataset, response: usize, support: &[usize]) -> Result<f64> {
    if support.len() >= data.n() {
        return Err(Error::Overcapacity {
            response,
            support: support.len(),
            n: data.n(),
        });
    }
    let y = data.y().column(response);
    if support.is_empty() {
        return Ok(y.norm_squared());
    }
    let design = data.x().select_columns(support.iter());
    let rhs = Matrix::from_column_slice(data.n(), 1, y.as_slice());
    let sol = least_squares(&design, &rhs)?;
    Ok(sol.residuals.norm_squared())
}

/// Refits every expanded response on its support in `state`.
pub fn residual_sums(state: &ModelState, data: &ExpandedDataset) -> Result<Vec<f64>> {
    state
        .supports(data.groups())?
        .iter()
        .enumerate()
        .map(|(l, s)| response_rss(data, l, s))
        .collect()
}

pub fn ebic_terms(state: &ModelState, data: &ExpandedDataset, params: &EbicParams) -> Result<EbicTerms> {
    let rss = residual_sums(state, data)?;
    Criterion::new(data.groups(), data.n(), *params).terms(&rss, &state.block_counts())
}

/// Extended BIC of `state`, refitting least squares from scratch.
pub fn ebic(state: &ModelState, data: &ExpandedDataset, params: &EbicParams) -> Result<f64> {
    ebic_terms(state, data, params).map(|t| t.total())
}
