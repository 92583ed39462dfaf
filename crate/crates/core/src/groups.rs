//! Group structure over predictors and responses.
//!
//! Groups may overlap. Overlapping columns are duplicated when the data are
//! expanded into block-concatenated form `X = (X_1, ..., X_K)`,
//! `Y = (Y_1, ..., Y_J)`, so every expanded column belongs to exactly one
//! group. All indices in this module are zero-based.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::engine::CoefficientEstimate;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    /// Original column indices, in the order they were listed.
    pub members: Vec<usize>,
}

impl Group {
    pub fn new(name: impl Into<String>, members: Vec<usize>) -> Self {
        Group {
            name: name.into(),
            members,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Position of one coefficient inside the block matrix: block `(k, j)`,
/// row `row` within predictor group `k`, column `col` within response group `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockCoordinate {
    pub k: usize,
    pub j: usize,
    pub row: usize,
    pub col: usize,
}

impl BlockCoordinate {
    pub fn new(k: usize, j: usize, row: usize, col: usize) -> Self {
        BlockCoordinate { k, j, row, col }
    }

    pub fn block(&self) -> (usize, usize) {
        (self.k, self.j)
    }
}

/// Validated predictor and response groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    predictors: Vec<Group>,
    responses: Vec<Group>,
    n_predictors: usize,
    n_responses: usize,
    predictor_offsets: Vec<usize>,
    response_offsets: Vec<usize>,
}

fn offsets(groups: &[Group]) -> Vec<usize> {
    let mut out = Vec::with_capacity(groups.len() + 1);
    let mut acc = 0;
    out.push(0);
    for g in groups {
        acc += g.len();
        out.push(acc);
    }
    out
}

fn validate(groups: &[Group], total: usize, context: &'static str) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::InvalidArgs(format!("no {context} groups given")));
    }
    let mut covered = vec![false; total];
    for g in groups {
        if g.is_empty() {
            return Err(Error::EmptyGroup(g.name.clone()));
        }
        let mut seen = BTreeSet::new();
        for &c in &g.members {
            if c >= total {
                return Err(Error::IndexOutOfRange {
                    context,
                    index: c,
                    size: total,
                });
            }
            if !seen.insert(c) {
                return Err(Error::InvalidArgs(format!(
                    "group `{}` lists column {} twice",
                    g.name,
                    c + 1
                )));
            }
            covered[c] = true;
        }
    }
    if let Some(missing) = covered.iter().position(|c| !c) {
        return Err(Error::InvalidArgs(format!(
            "{context} column {} is not in any group",
            missing + 1
        )));
    }
    Ok(())
}

fn locate(offsets: &[usize], index: usize) -> (usize, usize) {
    // offsets is strictly increasing because groups are nonempty
    let g = offsets.partition_point(|&o| o <= index) - 1;
    (g, index - offsets[g])
}

impl GroupSpec {
    pub fn new(
        predictors: Vec<Group>,
        responses: Vec<Group>,
        n_predictors: usize,
        n_responses: usize,
    ) -> Result<Self> {
        validate(&predictors, n_predictors, "predictor")?;
        validate(&responses, n_responses, "response")?;
        let predictor_offsets = offsets(&predictors);
        let response_offsets = offsets(&responses);
        Ok(GroupSpec {
            predictors,
            responses,
            n_predictors,
            n_responses,
            predictor_offsets,
            response_offsets,
        })
    }

    /// Contiguous, non-overlapping groups with the given sizes.
    pub fn contiguous(predictor_sizes: &[usize], response_sizes: &[usize]) -> Result<Self> {
        fn build(sizes: &[usize], prefix: &str) -> (Vec<Group>, usize) {
            let mut start = 0;
            let groups = sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let g = Group::new(format!("{prefix}{}", i + 1), (start..start + s).collect());
                    start += s;
                    g
                })
                .collect();
            (groups, start)
        }
        let (xg, p) = build(predictor_sizes, "X");
        let (yg, q) = build(response_sizes, "Y");
        GroupSpec::new(xg, yg, p, q)
    }

    pub fn predictor_groups(&self) -> &[Group] {
        &self.predictors
    }

    pub fn response_groups(&self) -> &[Group] {
        &self.responses
    }

    /// Number of predictor groups, `K`.
    pub fn num_predictor_groups(&self) -> usize {
        self.predictors.len()
    }

    /// Number of response groups, `J`.
    pub fn num_response_groups(&self) -> usize {
        self.responses.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.predictors.len() * self.responses.len()
    }

    pub fn original_predictors(&self) -> usize {
        self.n_predictors
    }

    pub fn original_responses(&self) -> usize {
        self.n_responses
    }

    pub fn expanded_predictors(&self) -> usize {
        *self.predictor_offsets.last().unwrap()
    }

    pub fn expanded_responses(&self) -> usize {
        *self.response_offsets.last().unwrap()
    }

    pub fn predictor_offset(&self, k: usize) -> usize {
        self.predictor_offsets[k]
    }

    pub fn response_offset(&self, j: usize) -> usize {
        self.response_offsets[j]
    }

    pub fn predictor_group_size(&self, k: usize) -> usize {
        self.predictors[k].len()
    }

    pub fn response_group_size(&self, j: usize) -> usize {
        self.responses[j].len()
    }

    /// Number of entries in block `B_kj`.
    pub fn block_size(&self, k: usize, j: usize) -> usize {
        self.predictors[k].len() * self.responses[j].len()
    }

    /// Original predictor behind an expanded predictor column.
    pub fn predictor_origin(&self, i: usize) -> usize {
        let (k, a) = locate(&self.predictor_offsets, i);
        self.predictors[k].members[a]
    }

    /// Original response behind an expanded response column.
    pub fn response_origin(&self, l: usize) -> usize {
        let (j, m) = locate(&self.response_offsets, l);
        self.responses[j].members[m]
    }

    /// Response group owning an expanded response column.
    pub fn response_group_of(&self, l: usize) -> usize {
        locate(&self.response_offsets, l).0
    }

    pub fn to_flat(&self, c: BlockCoordinate) -> Result<(usize, usize)> {
        self.check(c)?;
        Ok((
            self.predictor_offsets[c.k] + c.row,
            self.response_offsets[c.j] + c.col,
        ))
    }

    pub fn from_flat(&self, i: usize, l: usize) -> Result<BlockCoordinate> {
        let (p, q) = (self.expanded_predictors(), self.expanded_responses());
        if i >= p {
            return Err(Error::IndexOutOfRange {
                context: "expanded predictor",
                index: i,
                size: p,
            });
        }
        if l >= q {
            return Err(Error::IndexOutOfRange {
                context: "expanded response",
                index: l,
                size: q,
            });
        }
        let (k, row) = locate(&self.predictor_offsets, i);
        let (j, col) = locate(&self.response_offsets, l);
        Ok(BlockCoordinate { k, j, row, col })
    }

    /// Original `(predictor, response)` pair of a block coordinate.
    pub fn to_original(&self, c: BlockCoordinate) -> Result<(usize, usize)> {
        self.check(c)?;
        Ok((
            self.predictors[c.k].members[c.row],
            self.responses[c.j].members[c.col],
        ))
    }

    fn check(&self, c: BlockCoordinate) -> Result<()> {
        let bound = |context, index, size| {
            if index >= size {
                Err(Error::IndexOutOfRange {
                    context,
                    index,
                    size,
                })
            } else {
                Ok(())
            }
        };
        bound("predictor group", c.k, self.predictors.len())?;
        bound("response group", c.j, self.responses.len())?;
        bound("block row", c.row, self.predictors[c.k].len())?;
        bound("block column", c.col, self.responses[c.j].len())
    }

    /// All block coordinates mapping to original pair `(i, l)`.
    pub fn coordinates_of(&self, i: usize, l: usize) -> Vec<BlockCoordinate> {
        let mut out = Vec::new();
        for (k, xg) in self.predictors.iter().enumerate() {
            let Some(row) = xg.members.iter().position(|&c| c == i) else {
                continue;
            };
            for (j, yg) in self.responses.iter().enumerate() {
                if let Some(col) = yg.members.iter().position(|&c| c == l) {
                    out.push(BlockCoordinate { k, j, row, col });
                }
            }
        }
        out
    }
}

/// Standardized data in block-concatenated form.
#[derive(Clone, Debug)]
pub struct ExpandedDataset {
    x: Matrix,
    y: Matrix,
    groups: GroupSpec,
    predictor_origin: Vec<usize>,
    response_origin: Vec<usize>,
}

impl ExpandedDataset {
    /// Duplicates overlapped columns so that each group owns its own copy.
    pub fn expand(x_orig: &Matrix, y_orig: &Matrix, groups: &GroupSpec) -> Result<Self> {
        if x_orig.ncols() != groups.original_predictors() {
            return Err(Error::mismatch(
                "predictor columns",
                groups.original_predictors(),
                x_orig.ncols(),
            ));
        }
        if y_orig.ncols() != groups.original_responses() {
            return Err(Error::mismatch(
                "response columns",
                groups.original_responses(),
                y_orig.ncols(),
            ));
        }
        if x_orig.nrows() != y_orig.nrows() {
            return Err(Error::mismatch("rows", x_orig.nrows(), y_orig.nrows()));
        }
        let predictor_origin: Vec<usize> = groups
            .predictors
            .iter()
            .flat_map(|g| g.members.iter().copied())
            .collect();
        let response_origin: Vec<usize> = groups
            .responses
            .iter()
            .flat_map(|g| g.members.iter().copied())
            .collect();
        let x = x_orig.select_columns(predictor_origin.iter());
        let y = y_orig.select_columns(response_origin.iter());
        Ok(ExpandedDataset {
            x,
            y,
            groups: groups.clone(),
            predictor_origin,
            response_origin,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Expanded predictor count.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Expanded response count.
    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn groups(&self) -> &GroupSpec {
        &self.groups
    }

    pub fn predictor_origin(&self) -> &[usize] {
        &self.predictor_origin
    }

    pub fn response_origin(&self) -> &[usize] {
        &self.response_origin
    }

    pub fn x_block(&self, k: usize) -> Matrix {
        let g = &self.groups;
        self.x
            .columns(g.predictor_offset(k), g.predictor_group_size(k))
            .clone_owned()
    }

    pub fn y_block(&self, j: usize) -> Matrix {
        let g = &self.groups;
        self.y
            .columns(g.response_offset(j), g.response_group_size(j))
            .clone_owned()
    }

    /// Expanded column holding the first copy of an original predictor.
    pub fn first_predictor_copy(&self, i_orig: usize) -> Option<usize> {
        self.predictor_origin.iter().position(|&c| c == i_orig)
    }

    /// Expanded column holding the first copy of an original response.
    pub fn first_response_copy(&self, l_orig: usize) -> Option<usize> {
        self.response_origin.iter().position(|&c| c == l_orig)
    }
}

/// Maps an expanded estimate back to the original `p x q` coefficient matrix.
///
/// Entries that land on the same original pair are summed, so that
/// `X_orig * collapse(B)` equals `X_expanded * B`.
pub fn collapse_estimate(estimate: &CoefficientEstimate, groups: &GroupSpec) -> Result<Matrix> {
    let mut out = Matrix::zeros(groups.original_predictors(), groups.original_responses());
    for (&coord, &value) in estimate.entries() {
        let (i, l) = groups.to_original(coord)?;
        out[(i, l)] += value;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overlap_spec() -> GroupSpec {
        // Y_1 = {y1, y2}, Y_2 = {y2, y3, y4}
        GroupSpec::new(
            vec![Group::new("X1", vec![0, 1]), Group::new("X2", vec![1, 2])],
            vec![Group::new("Y1", vec![0, 1]), Group::new("Y2", vec![1, 2, 3])],
            3,
            4,
        )
        .unwrap()
    }

    fn ramp(rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| (r * 10 + c) as f64 + 0.5 * (r * c) as f64)
    }

    #[test]
    fn overlapping_response_groups_duplicate_columns() {
        let spec = overlap_spec();
        let data = ExpandedDataset::expand(&ramp(6, 3), &ramp(6, 4), &spec).unwrap();
        assert_eq!(data.q(), 5);
        assert_eq!(data.p(), 4);
        assert_eq!(data.y().column(1), data.y().column(2));
        assert_eq!(data.response_origin(), &[0, 1, 1, 2, 3]);
    }

    #[test]
    fn expansion_reproduces_original_columns() {
        let spec = overlap_spec();
        let (x, y) = (ramp(5, 3), ramp(5, 4));
        let data = ExpandedDataset::expand(&x, &y, &spec).unwrap();
        for (c, &o) in data.predictor_origin().iter().enumerate() {
            assert_eq!(data.x().column(c), x.column(o));
        }
        for (c, &o) in data.response_origin().iter().enumerate() {
            assert_eq!(data.y().column(c), y.column(o));
        }
    }

    #[test]
    fn disjoint_groups_permute_columns() {
        let spec = GroupSpec::new(
            vec![Group::new("X", vec![0, 1])],
            vec![Group::new("A", vec![2, 0]), Group::new("B", vec![1])],
            2,
            3,
        )
        .unwrap();
        let (x, y) = (ramp(4, 2), ramp(4, 3));
        let data = ExpandedDataset::expand(&x, &y, &spec).unwrap();
        assert_eq!(data.x(), &x);
        assert_eq!(data.y(), &y.select_columns([2, 0, 1].iter()));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let empty = GroupSpec::new(
            vec![Group::new("X", vec![0]), Group::new("E", vec![])],
            vec![Group::new("Y", vec![0])],
            1,
            1,
        );
        assert!(matches!(empty, Err(Error::EmptyGroup(name)) if name == "E"));
        let out_of_range = GroupSpec::new(
            vec![Group::new("X", vec![0, 3])],
            vec![Group::new("Y", vec![0])],
            2,
            1,
        );
        assert!(matches!(out_of_range, Err(Error::IndexOutOfRange { .. })));
        let uncovered = GroupSpec::new(
            vec![Group::new("X", vec![0])],
            vec![Group::new("Y", vec![0])],
            2,
            1,
        );
        assert!(matches!(uncovered, Err(Error::InvalidArgs(_))));
    }

    #[test]
    fn flat_offsets_match_naive_loop() {
        let spec = GroupSpec::contiguous(&[20; 3], &[20; 4]).unwrap();
        assert_eq!(
            spec.to_flat(BlockCoordinate::new(0, 0, 0, 0)).unwrap(),
            (0, 0)
        );
        // naive: walk group sizes
        let naive = |k: usize, a: usize, j: usize, m: usize| {
            let mut i = 0;
            for kk in 0..k {
                i += spec.predictor_group_size(kk);
            }
            let mut l = 0;
            for jj in 0..j {
                l += spec.response_group_size(jj);
            }
            (i + a, l + m)
        };
        assert_eq!(naive(1, 4, 2, 6), (24, 46));
        assert_eq!(
            spec.to_flat(BlockCoordinate::new(1, 2, 4, 6)).unwrap(),
            (24, 46)
        );
    }

    #[test]
    fn flat_round_trip_is_bijective() {
        let spec = GroupSpec::contiguous(&[2, 3, 1], &[3, 2]).unwrap();
        let mut seen = BTreeSet::new();
        for k in 0..3 {
            for j in 0..2 {
                for row in 0..spec.predictor_group_size(k) {
                    for col in 0..spec.response_group_size(j) {
                        let c = BlockCoordinate::new(k, j, row, col);
                        let (i, l) = spec.to_flat(c).unwrap();
                        assert!(seen.insert((i, l)));
                        assert_eq!(spec.from_flat(i, l).unwrap(), c);
                    }
                }
            }
        }
        assert_eq!(seen.len(), 6 * 5);
        assert!(spec.to_flat(BlockCoordinate::new(2, 0, 1, 0)).is_err());
        assert!(spec.from_flat(6, 0).is_err());
    }

    #[test]
    fn collapse_sums_overlapping_entries() {
        let spec = overlap_spec();
        let mut est = CoefficientEstimate::default();
        // original pair (x1, y2) through Y1 (col 1) and Y2 (col 0)
        est.insert(BlockCoordinate::new(0, 0, 0, 1), 0.5);
        est.insert(BlockCoordinate::new(0, 1, 0, 0), 0.25);
        let b = collapse_estimate(&est, &spec).unwrap();
        assert_eq!(b[(0, 1)], 0.75);
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn collapse_preserves_predictions() {
        let spec = overlap_spec();
        let x = ramp(7, 3);
        let data = ExpandedDataset::expand(&x, &ramp(7, 4), &spec).unwrap();
        let mut est = CoefficientEstimate::default();
        let mut dense = Matrix::zeros(data.p(), data.q());
        for (n, (i, l)) in [(0, 0), (1, 2), (2, 2), (3, 4), (1, 1)].iter().enumerate() {
            let v = 0.3 * n as f64 - 0.4;
            est.insert(spec.from_flat(*i, *l).unwrap(), v);
            dense[(*i, *l)] = v;
        }
        let collapsed = collapse_estimate(&est, &spec).unwrap();
        // predictions are compared per original response: expanded copies of
        // one response add up
        let expanded_pred = data.x() * dense;
        let mut summed = Matrix::zeros(7, 4);
        for (l, &o) in data.response_origin().iter().enumerate() {
            for r in 0..7 {
                summed[(r, o)] += expanded_pred[(r, l)];
            }
        }
        assert!((x * collapsed - summed).amax() < 1e-12);
    }

    #[test]
    fn coordinates_of_lists_every_copy() {
        let spec = overlap_spec();
        let coords = spec.coordinates_of(1, 1);
        // x2 is in X1 and X2, y2 in Y1 and Y2
        assert_eq!(coords.len(), 4);
        for c in coords {
            assert_eq!(spec.to_original(c).unwrap(), (1, 1));
        }
    }
}
