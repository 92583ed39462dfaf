//! The sequential stepwise screening driver.
//!
//! Selection repeats three nested steps until a freshly chosen block gives
//! nothing (or every block is closed):
//!
//! 1. choose the open block `(k, j)` with the largest canonical-correlation
//!    trace between `X_k` and the current residuals of `Y_j`;
//! 2. inside it, choose the not yet exhausted row whose predictor is most
//!    correlated with those residuals;
//! 3. repeatedly add the entry of that row that minimizes the extended BIC,
//!    as long as the criterion strictly decreases.
//!
//! A row that yields entries is marked exhausted and step 2 runs again; a row
//! that yields nothing sends control back to step 1, closing the block if it
//! yielded anything. The selected support is then refit by least squares per
//! original response and small coefficients are zeroed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::criterion::{derive_gamma, Criterion, EbicParams, FitTerm, ModelState};
use crate::error::{Error, Result};
use crate::groups::{collapse_estimate, BlockCoordinate, ExpandedDataset, GroupSpec};
use crate::numerics::{
    least_squares, regularized_gram_inverse, standardize_columns, ColumnBasis, ColumnScaling,
    Matrix,
};
use crate::screening::{row_cc_with_basis, BlockScorer};
use crate::trace::{SelectionTrace, TerminationReason, TraceEvent};

/// How the final threshold `ρ` is derived when it is not fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Per-coefficient `ρ = c · se(β) · √(2 ln p)` with `se` the ordinary
    /// least-squares standard error of the refit coefficient.
    #[default]
    StandardError,
    /// One global `ρ = c · sd(β) · √(2 ln p)` with `sd` the sample standard
    /// deviation of all refit coefficients.
    CoefficientSpread,
}

impl ThresholdRule {
    /// Multiplier `c` used when none is configured.
    pub fn default_multiplier(self) -> f64 {
        match self {
            ThresholdRule::StandardError => 2.0,
            ThresholdRule::CoefficientSpread => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Derived as `1 − ln n / (2 ln p)`, clamped to `[0, 1]`, when absent.
    pub gamma: Option<f64>,
    pub fit_term: FitTerm,
    /// Fixed threshold; overrides `threshold_rule` when present.
    pub threshold_rho: Option<f64>,
    pub threshold_rule: ThresholdRule,
    /// `c` in the threshold rule; the rule's default when absent.
    pub threshold_multiplier: Option<f64>,
    /// Cap on selected predictors per expanded response. Defaults to `n − 2`:
    /// centred data with `n − 1` predictors fit exactly.
    pub max_entries: Option<usize>,
}

impl Default for SessConfig {
    fn default() -> Self {
        SessConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            gamma: None,
            fit_term: FitTerm::default(),
            threshold_rho: None,
            threshold_rule: ThresholdRule::default(),
            threshold_multiplier: None,
            max_entries: None,
        }
    }
}

impl SessConfig {
    pub fn ebic_params(&self, n: usize, p: usize) -> Result<EbicParams> {
        let gamma = match self.gamma {
            Some(g) => g,
            None => derive_gamma(n, p)?.clamp(0.0, 1.0),
        };
        let params = EbicParams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            gamma,
            fit_term: self.fit_term,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(rho) = self.threshold_rho {
            if !(rho >= 0.0 && rho.is_finite()) {
                return Err(Error::InvalidConfig(format!("threshold_rho = {rho}")));
            }
        }
        let c = self.multiplier();
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig(format!("threshold_multiplier = {c}")));
        }
        if self.max_entries == Some(0) {
            return Err(Error::InvalidConfig("max_entries must be positive".into()));
        }
        Ok(())
    }

    pub fn multiplier(&self) -> f64 {
        self.threshold_multiplier
            .unwrap_or_else(|| self.threshold_rule.default_multiplier())
    }

    /// Effective per-response cap for `n` observations.
    pub fn entry_cap(&self, n: usize) -> usize {
        let limit = n.saturating_sub(1);
        self.max_entries
            .unwrap_or(n.saturating_sub(2))
            .min(limit)
    }
}

/// Sparse coefficients keyed by block coordinate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoefficientEstimate {
    entries: BTreeMap<BlockCoordinate, f64>,
}

impl CoefficientEstimate {
    pub fn insert(&mut self, coord: BlockCoordinate, value: f64) {
        self.entries.insert(coord, value);
    }

    pub fn get(&self, coord: &BlockCoordinate) -> Option<f64> {
        self.entries.get(coord).copied()
    }

    pub fn entries(&self) -> &BTreeMap<BlockCoordinate, f64> {
        &self.entries
    }

    pub fn support(&self) -> BTreeSet<BlockCoordinate> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromIterator<(BlockCoordinate, f64)> for CoefficientEstimate {
    fn from_iter<I: IntoIterator<Item = (BlockCoordinate, f64)>>(iter: I) -> Self {
        CoefficientEstimate {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Least-squares refit of one original coefficient before thresholding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefitEntry {
    pub coord: BlockCoordinate,
    pub predictor: usize,
    pub response: usize,
    pub value: f64,
    pub std_error: f64,
    pub threshold: f64,
}

/// Everything produced by one run of the engine, in standardized units.
#[derive(Clone, Debug)]
pub struct SessFit {
    /// Thresholded refit; one entry per retained original pair.
    pub estimate: CoefficientEstimate,
    /// Support chosen by the selection stage.
    pub selection: ModelState,
    /// Refit coefficients before thresholding, with their thresholds.
    pub refit: Vec<RefitEntry>,
    pub trace: SelectionTrace,
    /// Criterion value of the selected model.
    pub ebic: f64,
    pub params: EbicParams,
}

#[derive(Clone, Debug, Default)]
pub struct Sess {
    config: SessConfig,
}

struct Candidate {
    col: usize,
    value: f64,
}

impl Sess {
    pub fn new(config: SessConfig) -> Self {
        Sess { config }
    }

    pub fn config(&self) -> &SessConfig {
        &self.config
    }

    /// Runs selection and finalization on standardized, expanded data.
    pub fn fit(&self, data: &ExpandedDataset) -> Result<SessFit> {
        self.config.validate()?;
        let n = data.n();
        if n < 2 {
            return Err(Error::InvalidArgs(format!("need at least 2 observations, got {n}")));
        }
        let params = self.config.ebic_params(n, data.p())?;
        let (selection, trace, ebic) = self.select(data, params)?;
        let refit = self.refit(data, &selection)?;
        let estimate = refit
            .iter()
            .filter(|e| e.value != 0.0 && e.value.abs() >= e.threshold)
            .map(|e| (e.coord, e.value))
            .collect();
        Ok(SessFit {
            estimate,
            selection,
            refit,
            trace,
            ebic,
            params,
        })
    }

    fn select(
        &self,
        data: &ExpandedDataset,
        params: EbicParams,
    ) -> Result<(ModelState, SelectionTrace, f64)> {
        let groups = data.groups();
        let criterion = Criterion::new(groups, data.n(), params);
        let cap = self.config.entry_cap(data.n());
        let scorer = BlockScorer::new(data);

        let mut residuals = data.y().clone();
        let mut rss: Vec<f64> = residuals.column_iter().map(|c| c.norm_squared()).collect();
        let mut supports: Vec<Vec<usize>> = vec![Vec::new(); data.q()];
        let mut state = ModelState::default();
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut closed = BTreeSet::new();
        let mut exhausted: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
        let mut trace = SelectionTrace::default();
        let mut current = criterion.terms(&rss, &counts)?.total();

        loop {
            // Step 1
            let block = match scorer.best_block(data, &residuals, &closed) {
                Ok(b) => b,
                Err(Error::AllBlocksExcluded) => {
                    trace.push(TraceEvent::Terminated {
                        reason: TerminationReason::AllBlocksClosed,
                    });
                    break;
                }
                Err(e) => return Err(e),
            };
            let (k, j) = (block.k, block.j);
            trace.push(TraceEvent::BlockChosen {
                k,
                j,
                score: block.value,
            });
            let x_off = groups.predictor_offset(k);
            let y_off = groups.response_offset(j);
            let y_len = groups.response_group_size(j);
            let mut block_entries = 0;

            loop {
                // Step 2
                let rows: Vec<usize> = (0..groups.predictor_group_size(k))
                    .filter(|a| !exhausted.contains(&(k, j, *a)))
                    .collect();
                if rows.is_empty() {
                    break;
                }
                let basis = ColumnBasis::new(&residuals.columns(y_off, y_len).clone_owned());
                let mut best_row: Option<(usize, f64)> = None;
                for &a in &rows {
                    let score = row_cc_with_basis(data.x().column(x_off + a).as_slice(), &basis)?;
                    if best_row.is_none_or(|(_, s)| score > s) {
                        best_row = Some((a, score));
                    }
                }
                let (a, score) = best_row.expect("rows is nonempty");
                trace.push(TraceEvent::RowChosen { k, j, row: a, score });

                // Step 3
                let predictor = x_off + a;
                let mut remaining: Vec<usize> = (0..y_len).collect();
                let mut row_entries = 0;
                while !remaining.is_empty() {
                    let mut best: Option<Candidate> = None;
                    *counts.entry((k, j)).or_insert(0) += 1;
                    for &m in &remaining {
                        let l = y_off + m;
                        if supports[l].len() >= cap {
                            continue;
                        }
                        let mut support = supports[l].clone();
                        support.push(predictor);
                        let (candidate_rss, _) = fit_response(data, l, &support)?;
                        let saved = std::mem::replace(&mut rss[l], candidate_rss);
                        let value = criterion.terms(&rss, &counts);
                        rss[l] = saved;
                        let value = match value {
                            Ok(t) => t.total(),
                            Err(Error::PerfectFit { .. }) => continue,
                            Err(e) => return Err(e),
                        };
                        if best.as_ref().is_none_or(|b| value < b.value) {
                            best = Some(Candidate { col: m, value });
                        }
                    }
                    let improved = best.filter(|b| b.value < current);
                    let Some(best) = improved else {
                        decrement(&mut counts, (k, j));
                        break;
                    };
                    let l = y_off + best.col;
                    supports[l].push(predictor);
                    let (new_rss, resid) = fit_response(data, l, &supports[l])?;
                    rss[l] = new_rss;
                    residuals.set_column(l, &resid);
                    let coord = BlockCoordinate::new(k, j, a, best.col);
                    state.selected.insert(coord);
                    trace.push(TraceEvent::EntryAccepted {
                        coord,
                        ebic_before: current,
                        ebic_after: best.value,
                    });
                    current = best.value;
                    remaining.retain(|&m| m != best.col);
                    row_entries += 1;
                }

                if row_entries > 0 {
                    exhausted.insert((k, j, a));
                    trace.push(TraceEvent::RowExhausted { k, j, row: a });
                    block_entries += row_entries;
                } else {
                    trace.push(TraceEvent::RowAbandoned { k, j, row: a });
                    break;
                }
            }

            if block_entries > 0 {
                closed.insert((k, j));
                trace.push(TraceEvent::BlockClosed { k, j });
            } else {
                trace.push(TraceEvent::Terminated {
                    reason: TerminationReason::EmptyBlock,
                });
                break;
            }
        }
        Ok((state, trace, current))
    }

    /// Least-squares refit of the collapsed support, one original response at
    /// a time, with per-entry thresholds attached.
    fn refit(&self, data: &ExpandedDataset, selection: &ModelState) -> Result<Vec<RefitEntry>> {
        let groups = data.groups();
        // first block coordinate (in sorted order) for every original pair
        let mut pairs: BTreeMap<usize, BTreeMap<usize, BlockCoordinate>> = BTreeMap::new();
        for &c in &selection.selected {
            let (i, l) = groups.to_original(c)?;
            pairs.entry(l).or_default().entry(i).or_insert(c);
        }
        let n = data.n();
        let log_factor = if data.p() >= 2 {
            (2.0 * (data.p() as f64).ln()).sqrt()
        } else {
            0.0
        };
        let mut out = Vec::new();
        for (&l, predictors) in &pairs {
            let y_col = data
                .first_response_copy(l)
                .expect("selected response appears in the expansion");
            let cols: Vec<usize> = predictors
                .keys()
                .map(|&i| data.first_predictor_copy(i).expect("selected predictor appears"))
                .collect();
            let design = data.x().select_columns(cols.iter());
            let rhs = data.y().columns(y_col, 1).clone_owned();
            let sol = least_squares(&design, &rhs)?;
            let df = n.saturating_sub(sol.rank + 1).max(1);
            let sigma2 = sol.residuals.norm_squared() / df as f64;
            let gram_inv = regularized_gram_inverse(&design);
            for (idx, (&i, &coord)) in predictors.iter().enumerate() {
                let std_error = (sigma2 * gram_inv[(idx, idx)]).max(0.0).sqrt();
                out.push(RefitEntry {
                    coord,
                    predictor: i,
                    response: l,
                    value: sol.coefficients[(idx, 0)],
                    std_error,
                    threshold: 0.0,
                });
            }
        }
        let multiplier = self.config.multiplier();
        match (self.config.threshold_rho, self.config.threshold_rule) {
            (Some(rho), _) => out.iter_mut().for_each(|e| e.threshold = rho),
            (None, ThresholdRule::StandardError) => out
                .iter_mut()
                .for_each(|e| e.threshold = multiplier * e.std_error * log_factor),
            (None, ThresholdRule::CoefficientSpread) => {
                let values: Vec<f64> = out.iter().map(|e| e.value).collect();
                let rho = match derive_threshold(&values, data.p(), multiplier) {
                    Ok(r) => r,
                    Err(Error::NoEntries) => 0.0,
                    Err(e) => return Err(e),
                };
                out.iter_mut().for_each(|e| e.threshold = rho);
            }
        }
        Ok(out)
    }
}

fn decrement(counts: &mut BTreeMap<(usize, usize), usize>, key: (usize, usize)) {
    if let Some(c) = counts.get_mut(&key) {
        *c -= 1;
        if *c == 0 {
            counts.remove(&key);
        }
    }
}

/// Residual sum of squares and residual vector of one expanded response
/// regressed on expanded predictors.
fn fit_response(
    data: &ExpandedDataset,
    response: usize,
    support: &[usize],
) -> Result<(f64, nalgebra::DVector<f64>)> {
    if support.len() >= data.n() {
        return Err(Error::Overcapacity {
            response,
            support: support.len(),
            n: data.n(),
        });
    }
    let rhs = data.y().columns(response, 1).clone_owned();
    let design = data.x().select_columns(support.iter());
    let sol = least_squares(&design, &rhs)?;
    let resid = sol.residuals.column(0).clone_owned();
    Ok((resid.norm_squared(), resid))
}

/// `ρ = multiplier · sd(values) · √(2 ln p)` with the sample standard
/// deviation (zero for a single value).
pub fn derive_threshold(values: &[f64], p: usize, multiplier: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NoEntries);
    }
    if p < 1 {
        return Err(Error::InvalidArgs("p must be positive".into()));
    }
    let sd = if values.len() < 2 {
        0.0
    } else {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (values.len() - 1) as f64).sqrt()
    };
    Ok(multiplier * sd * (2.0 * (p as f64).ln()).sqrt())
}

/// `x_new · collapse(estimate)` in original column coordinates.
pub fn predict(estimate: &CoefficientEstimate, x_new: &Matrix, groups: &GroupSpec) -> Result<Matrix> {
    if x_new.ncols() != groups.original_predictors() {
        return Err(Error::mismatch(
            "predictor columns",
            groups.original_predictors(),
            x_new.ncols(),
        ));
    }
    Ok(x_new * collapse_estimate(estimate, groups)?)
}

/// A fit on raw data: standardization, expansion, selection and the mapping
/// of the result back to the original units.
#[derive(Clone, Debug)]
pub struct FittedModel {
    groups: GroupSpec,
    x_scaling: ColumnScaling,
    y_scaling: ColumnScaling,
    fit: SessFit,
    standardized: Matrix,
}

impl FittedModel {
    pub fn fit(x: &Matrix, y: &Matrix, groups: &GroupSpec, config: &SessConfig) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::mismatch("rows", x.nrows(), y.nrows()));
        }
        let (xs, x_scaling) = standardize_columns(x)?;
        let (ys, y_scaling) = standardize_columns(y)?;
        let data = ExpandedDataset::expand(&xs, &ys, groups)?;
        let fit = Sess::new(config.clone()).fit(&data)?;
        let standardized = collapse_estimate(&fit.estimate, groups)?;
        Ok(FittedModel {
            groups: groups.clone(),
            x_scaling,
            y_scaling,
            fit,
            standardized,
        })
    }

    pub fn groups(&self) -> &GroupSpec {
        &self.groups
    }

    pub fn result(&self) -> &SessFit {
        &self.fit
    }

    pub fn trace(&self) -> &SelectionTrace {
        &self.fit.trace
    }

    /// Coefficients on the standardized scale, original coordinates.
    pub fn standardized_coefficients(&self) -> &Matrix {
        &self.standardized
    }

    /// Coefficients in the units of the raw data.
    pub fn coefficients(&self) -> Matrix {
        let b = &self.standardized;
        Matrix::from_fn(b.nrows(), b.ncols(), |i, l| {
            b[(i, l)] * self.y_scaling.scales[l] / self.x_scaling.scales[i]
        })
    }

    pub fn intercepts(&self) -> Vec<f64> {
        let b = self.coefficients();
        (0..b.ncols())
            .map(|l| {
                let shift: f64 = (0..b.nrows())
                    .map(|i| self.x_scaling.means[i] * b[(i, l)])
                    .sum();
                self.y_scaling.means[l] - shift
            })
            .collect()
    }

    /// Number of nonzero original coefficients.
    pub fn nonzeros(&self) -> usize {
        self.standardized.iter().filter(|v| **v != 0.0).count()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let xs = self.x_scaling.apply(x)?;
        let ys = predict(&self.fit.estimate, &xs, &self.groups)?;
        self.y_scaling.invert(&ys)
    }
}
