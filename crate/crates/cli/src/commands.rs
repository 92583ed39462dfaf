use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use sess_core::io::{
    read_groups, read_matrix, read_triplets, write_atomic, write_groups,
    write_matrix, write_trace, write_triplets,
};
use sess_core::metrics::{prediction_metrics, CSV_HEADER};
use sess_core::simgen::generate;
use sess_core::{FittedModel, GroupSpec, Matrix, MetricsReport, SessConfig, SimConfig};

use crate::manifest::RunManifest;
use crate::{CliError, EvalArgs, FitArgs, Rho, SimulateArgs, TuningArgs};

/// Parses a TOML file; syntax and schema errors exit with code 2.
pub(crate) fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(3, format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| {
        let at = e
            .span()
            .map(|s| {
                let before = &text[..s.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
                format!(":{line}:{col}")
            })
            .unwrap_or_default();
        CliError::config(format!("{}{at}: {}", path.display(), e.message()))
    })
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::new(3, format!("{}: {e}", dir.display())))
}

pub(crate) fn csv_bytes<R: AsRef<[String]>>(header: &[&str], records: &[R]) -> Result<Vec<u8>, CliError> {
    let fail = |e: String| CliError::new(3, format!("csv output: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| fail(e.to_string()))?;
    for r in records {
        w.write_record(r.as_ref()).map_err(|e| fail(e.to_string()))?;
    }
    w.into_inner().map_err(|e| fail(e.to_string()))
}

/// Engine config from an optional file plus flag overrides.
pub(crate) fn sess_config(t: &TuningArgs, base: SessConfig) -> Result<SessConfig, CliError> {
    let mut cfg = match &t.engine_config {
        Some(path) => read_toml(path)?,
        None => base,
    };
    if let Some(v) = t.lambda1 {
        cfg.lambda1 = v;
    }
    if let Some(v) = t.lambda2 {
        cfg.lambda2 = v;
    }
    match t.rho {
        Some(Rho::Auto) => cfg.threshold_rho = None,
        Some(Rho::Fixed(v)) => cfg.threshold_rho = Some(v),
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut config: SimConfig = read_toml(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    create_dir(&args.out)?;
    let names = ["X.csv", "Y.csv", "B_true.csv", "groups.toml"];
    let artifacts: Vec<PathBuf> = names.iter().map(|n| args.out.join(n)).collect();
    RunManifest::new("simulate", &config, vec![config.seed], artifacts.clone()).write(&args.out)?;

    let data = generate(&config)?;
    write_matrix(&artifacts[0], &data.x, "x")?;
    write_matrix(&artifacts[1], &data.y, "y")?;
    write_matrix(&artifacts[2], &data.b_true, "y")?;
    write_groups(&artifacts[3], &data.groups)?;
    Ok(())
}

fn load_xy(x: &Path, y: &Path) -> Result<(Matrix, Matrix), CliError> {
    let x = read_matrix(x)?;
    let y = read_matrix(y)?;
    if x.nrows() != y.nrows() {
        return Err(sess_core::Error::DimensionMismatch {
            context: "X and Y rows",
            expected: x.nrows(),
            found: y.nrows(),
        }
        .into());
    }
    Ok((x, y))
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let config = sess_config(&args.tuning, SessConfig::default())?;
    let (x, y) = load_xy(&args.x, &args.y)?;
    let groups = read_groups(&args.groups, x.ncols(), y.ncols())?;
    create_dir(&args.out)?;
    let estimate_path = args.out.join("estimate.csv");
    let trace_path = args.out.join("trace.jsonl");
    RunManifest::new(
        "fit",
        &config,
        Vec::new(),
        vec![estimate_path.clone(), trace_path.clone()],
    )
    .write(&args.out)?;

    let model = FittedModel::fit(&x, &y, &groups, &config)?;
    write_triplets(&estimate_path, &model.coefficients())?;
    write_trace(&trace_path, model.trace())?;
    Ok(())
}

/// Intercepts that centre `y - x·b` on the given rows.
fn centring_intercepts(b: &Matrix, x: &Matrix, y: &Matrix) -> Vec<f64> {
    let n = x.nrows().max(1) as f64;
    let fitted = x * b;
    (0..y.ncols())
        .map(|l| (y.column(l).sum() - fitted.column(l).sum()) / n)
        .collect()
}

fn rows(m: &Matrix, idx: &[usize]) -> Matrix {
    m.select_rows(idx)
}

/// Training rows for an `n0`-of-`n` split, ascending, and the rest.
pub fn split_rows(n: usize, n0: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = sample(&mut rng, n, n0).into_vec();
    train.sort_unstable();
    let mut in_train = vec![false; n];
    train.iter().for_each(|&i| in_train[i] = true);
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    (train, test)
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let b_true = args.b_true.as_deref().map(read_matrix).transpose()?;
    let xy = match (&args.x, &args.y) {
        (Some(x), Some(y)) => Some(load_xy(x, y)?),
        (None, None) => None,
        _ => return Err(CliError::config("--x and --y must be given together")),
    };
    let (p, q) = match (&b_true, &xy) {
        (Some(b), _) => (b.nrows(), b.ncols()),
        (None, Some((x, y))) => (x.ncols(), y.ncols()),
        (None, None) => {
            return Err(CliError::config("need --b-true or --x/--y to size the estimate"))
        }
    };
    if let Some((x, y)) = &xy {
        let mismatch = |context, expected, found| -> CliError {
            sess_core::Error::DimensionMismatch {
                context,
                expected,
                found,
            }
            .into()
        };
        if x.ncols() != p {
            return Err(mismatch("X columns vs truth rows", p, x.ncols()));
        }
        if y.ncols() != q {
            return Err(mismatch("Y columns vs truth columns", q, y.ncols()));
        }
    }
    let groups = read_groups(&args.groups, p, q)?;

    let report = match args.split {
        Some(split) => {
            let (x, y) = xy
                .as_ref()
                .ok_or_else(|| CliError::config("--split needs --x and --y"))?;
            split_report(x, y, &groups, b_true.as_ref(), split.n0, args)?
        }
        None => {
            let path = args
                .estimate
                .as_deref()
                .ok_or_else(|| CliError::config("--estimate is required without --split"))?;
            let b_hat = read_triplets(path, p, q)?;
            let mut report = match &b_true {
                Some(b) => MetricsReport::recovery(&b_hat, b, &groups)?,
                None => MetricsReport::unscored(sess_core::metrics::count_nonzero(&b_hat)),
            };
            if let Some((x, y)) = &xy {
                let c = centring_intercepts(&b_hat, x, y);
                let (mse, _, _) = prediction_metrics(&b_hat, &c, (x, y), None)?;
                report.mse = Some(mse);
            }
            report
        }
    };

    let bytes = csv_bytes(&CSV_HEADER, &[report.csv_record()])?;
    match &args.out {
        Some(path) => write_atomic(path, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn split_report(
    x: &Matrix,
    y: &Matrix,
    groups: &GroupSpec,
    b_true: Option<&Matrix>,
    n0: usize,
    args: &EvalArgs,
) -> Result<MetricsReport, CliError> {
    let n = x.nrows();
    if n0 < 2 || n0 >= n {
        return Err(CliError::config(format!("split n0={n0} needs 2 <= n0 < {n}")));
    }
    let config = sess_config(&args.tuning, SessConfig::default())?;
    let (train, test) = split_rows(n, n0, args.seed);
    let (x_tr, y_tr) = (rows(x, &train), rows(y, &train));
    let (x_te, y_te) = (rows(x, &test), rows(y, &test));
    let start = Instant::now();
    let model = FittedModel::fit(&x_tr, &y_tr, groups, &config)?;
    let elapsed = start.elapsed().as_secs_f64();
    let b_hat = model.coefficients();
    let mut report = match b_true {
        Some(b) => MetricsReport::recovery(&b_hat, b, groups)?,
        None => MetricsReport::unscored(model.nonzeros()),
    };
    let (mse, mspe, _) = prediction_metrics(
        &b_hat,
        &model.intercepts(),
        (&x_tr, &y_tr),
        Some((&x_te, &y_te)),
    )?;
    report.mse = Some(mse);
    report.mspe = mspe;
    report.wall_time_s = elapsed;
    Ok(report)
}
