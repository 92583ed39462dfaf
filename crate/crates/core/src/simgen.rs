//! Synthetic multiresponse datasets with diagonal block signal.
//!
//! * rows of `X` are i.i.d. `N(0, Σ)` with `Σ_ij = ρ^|i-j|`, built by the AR(1)
//!   recursion and then standardized;
//! * diagonal blocks `B_kk` hold `±U[1, 5]` draws, a random `sparsity`
//!   fraction of them zeroed; off-diagonal blocks are zero;
//! * noise is `N(0, σ²)` with `σ² = Σ_l var((XB)_l) / (5q)`.
//!
//! Each component draws from its own ChaCha8 stream of the configured seed,
//! so changing e.g. the noise never perturbs the design.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::GroupSpec;
use crate::numerics::{standardize_columns, Matrix};

const STREAM_GROUPS: u64 = 0;
const STREAM_DESIGN: u64 = 1;
const STREAM_COEFFICIENTS: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupScheme {
    /// Every group has the same size.
    Equal { size: usize },
    /// Sizes drawn uniformly from `sizes`, left to right.
    Unequal { sizes: Vec<usize> },
}

impl GroupScheme {
    pub fn standard_equal() -> Self {
        GroupScheme::Equal { size: 20 }
    }

    pub fn standard_unequal() -> Self {
        GroupScheme::Unequal {
            sizes: vec![20, 30],
        }
    }

    pub fn label(&self) -> String {
        match self {
            GroupScheme::Equal { size } => format!("equal{size}"),
            GroupScheme::Unequal { sizes } => {
                let s: Vec<String> = sizes.iter().map(|v| v.to_string()).collect();
                format!("unequal{}", s.join("/"))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Fraction of diagonal-block entries set to zero.
    pub sparsity: f64,
    pub scheme: GroupScheme,
    #[serde(default = "default_ar_rho")]
    pub ar_rho: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ar_rho() -> f64 {
    0.5
}

impl SimConfig {
    /// `n = 150`, `q = 200`, AR coefficient 0.5.
    pub fn standard(p: usize, sparsity: f64, scheme: GroupScheme, seed: u64) -> Self {
        SimConfig {
            n: 150,
            p,
            q: 200,
            sparsity,
            scheme,
            ar_rho: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n = {} < 2", self.n)));
        }
        if self.p == 0 || self.q == 0 {
            return Err(Error::InvalidConfig("p and q must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::InvalidConfig(format!("sparsity = {}", self.sparsity)));
        }
        if !(self.ar_rho.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!("ar_rho = {}", self.ar_rho)));
        }
        match &self.scheme {
            GroupScheme::Equal { size } if *size == 0 => {
                Err(Error::InvalidConfig("group size must be positive".into()))
            }
            GroupScheme::Unequal { sizes } if sizes.is_empty() || sizes.contains(&0) => {
                Err(Error::InvalidConfig("group sizes must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimDataset {
    pub x: Matrix,
    pub y: Matrix,
    pub b_true: Matrix,
    pub groups: GroupSpec,
    pub sigma2: f64,
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// AR(1)-correlated Gaussian design with standardized columns.
pub fn gen_design<R: Rng>(n: usize, p: usize, ar_rho: f64, rng: &mut R) -> Result<Matrix> {
    let innovation = (1.0 - ar_rho * ar_rho).sqrt();
    let mut x = Matrix::zeros(n, p);
    for r in 0..n {
        let mut prev = 0.0;
        for c in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            let v = if c == 0 { z } else { ar_rho * prev + innovation * z };
            x[(r, c)] = v;
            prev = v;
        }
    }
    Ok(standardize_columns(&x)?.0)
}

/// Diagonal-block coefficient matrix in original `p x q` coordinates.
pub fn gen_coefficients<R: Rng>(groups: &GroupSpec, sparsity: f64, rng: &mut R) -> Matrix {
    let (p, q) = (groups.original_predictors(), groups.original_responses());
    let mut b = Matrix::zeros(p, q);
    let diagonal = groups
        .num_predictor_groups()
        .min(groups.num_response_groups());
    let mut positions = Vec::new();
    for k in 0..diagonal {
        for &i in &groups.predictor_groups()[k].members {
            for &l in &groups.response_groups()[k].members {
                positions.push((i, l));
            }
        }
    }
    for &(i, l) in &positions {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let magnitude: f64 = rng.random_range(1.0..=5.0);
        b[(i, l)] = sign * magnitude;
    }
    let zeroed = zero_count(sparsity, positions.len());
    for idx in sample(rng, positions.len(), zeroed) {
        b[positions[idx]] = 0.0;
    }
    b
}

/// `round(sparsity · count)`, clamped to `count`.
pub fn zero_count(sparsity: f64, count: usize) -> usize {
    ((sparsity * count as f64).round() as usize).min(count)
}

/// `y = XB + E` with `σ² = Σ_l var((XB)_l) / (5q)`.
pub fn gen_noise_and_response<R: Rng>(x: &Matrix, b_true: &Matrix, rng: &mut R) -> Result<(Matrix, f64)> {
    if x.ncols() != b_true.nrows() {
        return Err(Error::mismatch("coefficient rows", x.ncols(), b_true.nrows()));
    }
    let signal = x * b_true;
    let q = b_true.ncols();
    let v1: f64 = signal.column_iter().map(|c| sample_variance(c.as_slice())).sum();
    let sigma2 = v1 / (5.0 * q as f64);
    Ok((add_noise(signal, sigma2, rng), sigma2))
}

fn add_noise<R: Rng>(mut signal: Matrix, sigma2: f64, rng: &mut R) -> Matrix {
    let sd = sigma2.sqrt();
    for r in 0..signal.nrows() {
        for c in 0..signal.ncols() {
            let e: f64 = rng.sample(StandardNormal);
            signal[(r, c)] += sd * e;
        }
    }
    signal
}

pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64
}

/// Contiguous group sizes covering `total` exactly.
pub fn partition<R: Rng>(scheme: &GroupScheme, total: usize, rng: &mut R) -> Result<Vec<usize>> {
    match scheme {
        GroupScheme::Equal { size } => {
            if *size == 0 || !total.is_multiple_of(*size) {
                return Err(Error::InfeasiblePartition {
                    total,
                    sizes: vec![*size],
                });
            }
            Ok(vec![*size; total / size])
        }
        GroupScheme::Unequal { sizes } => {
            let reachable = reachable_totals(sizes, total);
            if !reachable[total] {
                return Err(Error::InfeasiblePartition {
                    total,
                    sizes: sizes.clone(),
                });
            }
            let mut out = Vec::new();
            let mut remaining = total;
            while remaining > 0 {
                let draw = sizes[rng.random_range(0..sizes.len())];
                let fits = |s: usize| s <= remaining && reachable[remaining - s];
                if fits(draw) {
                    out.push(draw);
                    remaining -= draw;
                    continue;
                }
                // the draw would leave an uncoverable remainder: take the
                // first size that keeps the partition feasible instead
                let alt = sizes
                    .iter()
                    .copied()
                    .find(|&s| fits(s))
                    .expect("a feasible remainder always has a feasible next size");
                out.push(alt);
                remaining -= alt;
            }
            Ok(out)
        }
    }
}

fn reachable_totals(sizes: &[usize], total: usize) -> Vec<bool> {
    let mut ok = vec![false; total + 1];
    ok[0] = true;
    for t in 1..=total {
        ok[t] = sizes.iter().any(|&s| s > 0 && s <= t && ok[t - s]);
    }
    ok
}

pub fn gen_groups<R: Rng>(scheme: &GroupScheme, p: usize, q: usize, rng: &mut R) -> Result<GroupSpec> {
    let xs = partition(scheme, p, rng)?;
    let ys = partition(scheme, q, rng)?;
    GroupSpec::contiguous(&xs, &ys)
}

/// Full dataset; a pure function of `config`.
pub fn generate(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let groups = gen_groups(&config.scheme, config.p, config.q, &mut stream(config.seed, STREAM_GROUPS))?;
    let x = gen_design(config.n, config.p, config.ar_rho, &mut stream(config.seed, STREAM_DESIGN))?;
    let b_true = gen_coefficients(&groups, config.sparsity, &mut stream(config.seed, STREAM_COEFFICIENTS));
    let (y, sigma2) = gen_noise_and_response(&x, &b_true, &mut stream(config.seed, STREAM_NOISE))?;
    Ok(SimDataset {
        x,
        y,
        b_true,
        groups,
        sigma2,
    })
}

/// Null dataset: same design and groups as [`generate`], `B = 0` and
/// standard normal responses. `sparsity` is ignored.
pub fn generate_null(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let groups = gen_groups(&config.scheme, config.p, config.q, &mut stream(config.seed, STREAM_GROUPS))?;
    let x = gen_design(config.n, config.p, config.ar_rho, &mut stream(config.seed, STREAM_DESIGN))?;
    let b_true = Matrix::zeros(config.p, config.q);
    let y = add_noise(
        Matrix::zeros(config.n, config.q),
        1.0,
        &mut stream(config.seed, STREAM_NOISE),
    );
    Ok(SimDataset {
        x,
        y,
        b_true,
        groups,
        sigma2: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_groups_are_contiguous() {
        let g = gen_groups(&GroupScheme::standard_equal(), 200, 200, &mut stream(1, 0)).unwrap();
        assert_eq!(g.num_predictor_groups(), 10);
        assert_eq!(g.num_response_groups(), 10);
        for (k, grp) in g.predictor_groups().iter().enumerate() {
            assert_eq!(grp.members, (20 * k..20 * (k + 1)).collect::<Vec<_>>());
        }
        assert!(matches!(
            partition(&GroupScheme::Equal { size: 30 }, 200, &mut stream(1, 0)),
            Err(Error::InfeasiblePartition { .. })
        ));
    }

    #[test]
    fn unequal_partition_covers_exactly() {
        for seed in 0..50 {
            let sizes = partition(&GroupScheme::standard_unequal(), 200, &mut stream(seed, 0)).unwrap();
            assert_eq!(sizes.iter().sum::<usize>(), 200);
            assert!(sizes.iter().all(|s| *s == 20 || *s == 30));
            let again = partition(&GroupScheme::standard_unequal(), 200, &mut stream(seed, 0)).unwrap();
            assert_eq!(sizes, again);
        }
        assert!(partition(&GroupScheme::standard_unequal(), 45, &mut stream(0, 0)).is_err());
    }

    #[test]
    fn sparsity_extremes() {
        let g = GroupSpec::contiguous(&[20; 10], &[20; 10]).unwrap();
        let b = gen_coefficients(&g, 1.0, &mut stream(3, 2));
        assert!(b.iter().all(|v| *v == 0.0));
        let b = gen_coefficients(&g, 0.0, &mut stream(3, 2));
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 4000);
        for k in 0..10 {
            for i in 20 * k..20 * (k + 1) {
                for l in 20 * k..20 * (k + 1) {
                    assert!((1.0..=5.0).contains(&b[(i, l)].abs()));
                }
            }
        }
    }

    #[test]
    fn sparsity_count_is_exact() {
        let g = GroupSpec::contiguous(&[20; 10], &[20; 10]).unwrap();
        let b = gen_coefficients(&g, 0.9, &mut stream(4, 2));
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 400);
        assert_eq!(zero_count(0.95, 4000), 3800);
        assert_eq!(zero_count(0.7, 4000), 2800);
    }

    #[test]
    fn extra_predictor_groups_carry_no_signal() {
        let g = GroupSpec::contiguous(&[20; 20], &[20; 10]).unwrap();
        let b = gen_coefficients(&g, 0.0, &mut stream(5, 2));
        assert!(b.rows(200, 200).iter().all(|v| *v == 0.0));
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 4000);
    }

    #[test]
    fn zero_signal_means_zero_noise() {
        let x = gen_design(10, 4, 0.5, &mut stream(1, 1)).unwrap();
        let (y, s2) = gen_noise_and_response(&x, &Matrix::zeros(4, 3), &mut stream(1, 3)).unwrap();
        assert_eq!(s2, 0.0);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_variance_from_signal_variance() {
        // columns of XB with sample variance 5 each → σ² = 1
        let n = 6;
        let mut x = Matrix::zeros(n, 2);
        let base = [1.0, -1.0, 2.0, -2.0, 0.5, -0.5];
        let scale = (5.0 / sample_variance(&base)).sqrt();
        for r in 0..n {
            x[(r, 0)] = base[r] * scale;
            x[(r, 1)] = base[(r + 1) % n] * scale;
        }
        let b = Matrix::identity(2, 2);
        let (_, s2) = gen_noise_and_response(&x, &b, &mut stream(0, 3)).unwrap();
        assert!((s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = SimConfig {
            n: 20,
            p: 40,
            q: 40,
            sparsity: 0.5,
            scheme: GroupScheme::Equal { size: 10 },
            ar_rho: 0.5,
            seed: 99,
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.b_true, b.b_true);
        let other = generate(&SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.x, other.x);
    }
}
