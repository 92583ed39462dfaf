//! Dense linear-algebra primitives shared by the rest of the crate.
//!
//! Everything here is a pure function of its inputs. Rank deficiency is never
//! an error: singular values below `SPECTRAL_CUTOFF * sigma_max` are treated as
//! zero and the minimum-norm / Moore-Penrose answer is returned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Relative cutoff applied to singular values.
pub const SPECTRAL_CUTOFF: f64 = 1e-10;

/// Per-column centring and scaling recorded by [`standardize_columns`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ColumnScaling {
    pub fn ncols(&self) -> usize {
        self.means.len()
    }

    /// Applies the stored transform to new data with the same columns.
    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.ncols() != self.ncols() {
            return Err(Error::mismatch("column scaling", self.ncols(), m.ncols()));
        }
        let mut out = m.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (mu, s) = (self.means[c], self.scales[c]);
            col.apply(|v| *v = (*v - mu) / s);
        }
        Ok(out)
    }

    /// Maps standardized values back to the original units.
    pub fn invert(&self, m: &Matrix) -> Result<Matrix> {
        if m.ncols() != self.ncols() {
            return Err(Error::mismatch("column scaling", self.ncols(), m.ncols()));
        }
        let mut out = m.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (mu, s) = (self.means[c], self.scales[c]);
            col.apply(|v| *v = *v * s + mu);
        }
        Ok(out)
    }
}

/// Centres every column and scales it so that its sum of squares equals the
/// number of rows.
pub fn standardize_columns(m: &Matrix) -> Result<(Matrix, ColumnScaling)> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::InvalidArgs(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let mut means = Vec::with_capacity(m.ncols());
    let mut scales = Vec::with_capacity(m.ncols());
    for (c, col) in m.column_iter().enumerate() {
        let mean = col.mean();
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let scale = (ss / n as f64).sqrt();
        let magnitude = col.amax().max(f64::MIN_POSITIVE);
        if !scale.is_finite() || scale <= 1e-12 * magnitude {
            return Err(Error::ConstantColumn(c));
        }
        means.push(mean);
        scales.push(scale);
    }
    let scaling = ColumnScaling { means, scales };
    let out = scaling.apply(m)?;
    Ok((out, scaling))
}

/// Result of [`least_squares`].
#[derive(Clone, Debug)]
pub struct LstSqSolution {
    pub coefficients: Matrix,
    pub residuals: Matrix,
    pub rank: usize,
}

impl LstSqSolution {
    /// Squared Euclidean norm of each residual column.
    pub fn residual_sums_of_squares(&self) -> Vec<f64> {
        self.residuals
            .column_iter()
            .map(|c| c.norm_squared())
            .collect()
    }
}

struct ThinSvd {
    u: Matrix,
    singular: DVector<f64>,
    v_t: Matrix,
    rank: usize,
}

/// Thin SVD computed by faer; nalgebra's SVD loses accuracy on some
/// rank-deficient inputs, which duplicated group columns produce routinely.
fn thin_svd(m: &Matrix) -> ThinSvd {
    let (n, d) = m.shape();
    let r = n.min(d);
    if r == 0 {
        return ThinSvd {
            u: Matrix::zeros(n, 0),
            singular: DVector::zeros(0),
            v_t: Matrix::zeros(0, d),
            rank: 0,
        };
    }
    let svd = faer::Mat::<f64>::from_fn(n, d, |i, j| m[(i, j)])
        .thin_svd()
        .expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let singular = DVector::from_fn(r, |i, _| s[i]);
    let u = Matrix::from_fn(n, r, |i, j| u[(i, j)]);
    let v_t = Matrix::from_fn(r, d, |i, j| v[(j, i)]);
    let smax = singular.iter().cloned().fold(0.0, f64::max);
    let rank = singular
        .iter()
        .filter(|&&s| smax > 0.0 && s > smax * SPECTRAL_CUTOFF)
        .count();
    ThinSvd {
        u,
        singular,
        v_t,
        rank,
    }
}

impl ThinSvd {
    fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        let smax = self.singular.iter().cloned().fold(0.0, f64::max);
        (0..self.singular.len())
            .filter(move |&i| smax > 0.0 && self.singular[i] > smax * SPECTRAL_CUTOFF)
    }
}

/// Minimum-norm least-squares solution of `design * B ≈ rhs`.
pub fn least_squares(design: &Matrix, rhs: &Matrix) -> Result<LstSqSolution> {
    if design.nrows() != rhs.nrows() {
        return Err(Error::mismatch(
            "least squares rows",
            design.nrows(),
            rhs.nrows(),
        ));
    }
    let d = design.ncols();
    if d == 0 {
        return Ok(LstSqSolution {
            coefficients: Matrix::zeros(0, rhs.ncols()),
            residuals: rhs.clone(),
            rank: 0,
        });
    }
    let svd = thin_svd(design);
    let mut coefficients = Matrix::zeros(d, rhs.ncols());
    for i in svd.kept() {
        let ui = svd.u.column(i);
        let vi = svd.v_t.row(i);
        let s = svd.singular[i];
        for c in 0..rhs.ncols() {
            let w = ui.dot(&rhs.column(c)) / s;
            for r in 0..d {
                coefficients[(r, c)] += vi[r] * w;
            }
        }
    }
    let residuals = rhs - design * &coefficients;
    Ok(LstSqSolution {
        coefficients,
        residuals,
        rank: svd.rank,
    })
}

/// Moore-Penrose inverse of the Gram matrix `m^T m`.
pub fn regularized_gram_inverse(m: &Matrix) -> Matrix {
    let d = m.ncols();
    if d == 0 {
        return Matrix::zeros(0, 0);
    }
    let svd = thin_svd(m);
    let mut out = Matrix::zeros(d, d);
    for i in svd.kept() {
        let v = svd.v_t.row(i).transpose();
        let w = 1.0 / (svd.singular[i] * svd.singular[i]);
        out += (&v * v.transpose()) * w;
    }
    out
}

/// Orthonormal basis for the column space of a matrix.
#[derive(Clone, Debug)]
pub struct ColumnBasis {
    basis: Matrix,
}

impl ColumnBasis {
    pub fn new(m: &Matrix) -> Self {
        if m.ncols() == 0 {
            return ColumnBasis {
                basis: Matrix::zeros(m.nrows(), 0),
            };
        }
        let svd = thin_svd(m);
        let cols: Vec<usize> = svd.kept().collect();
        let basis = svd.u.select_columns(cols.iter());
        ColumnBasis { basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.basis.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.basis
    }

    /// Squared norm of the projection of `v` onto the span.
    pub fn projected_norm_squared(&self, v: &[f64]) -> f64 {
        self.basis
            .column_iter()
            .map(|q| {
                let d: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
                d * d
            })
            .sum()
    }
}

pub fn trace(m: &Matrix) -> f64 {
    m.diagonal().sum()
}

/// Natural logarithm of the binomial coefficient `n choose k`.
pub fn log_binomial(n: usize, k: usize) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidArgs(format!(
            "binomial coefficient with k = {k} > n = {n}"
        )));
    }
    let k = k.min(n - k);
    if k == 0 {
        return Ok(0.0);
    }
    // A direct product is more accurate than log-gamma differences for small k.
    if k <= 64 {
        let nf = n as f64;
        return Ok((0..k)
            .map(|i| ((nf - i as f64) / (i as f64 + 1.0)).ln())
            .sum());
    }
    let (n, k) = (n as f64, k as f64);
    Ok(ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0))
}
