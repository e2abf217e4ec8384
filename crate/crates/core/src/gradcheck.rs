//! Central finite differences as an oracle for [`block_backward`].
//!
//! The loss is `sum(Y^2)`, so the upstream gradient handed to the analytic
//! backward pass is `2Y`. When `backprop_affinity` is off the analytic pass
//! treats `A` as a constant; the numeric side then freezes `A` at the
//! unperturbed point so both differentiate the same function.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::{
    block_backward, block_forward, block_forward_with_affinity, build_block_affinity, BlockConfig, BlockParams,
};
use crate::error::{Error, Result};
use crate::graph::FeatureMap;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::synth;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Grid used by [`check_block_gradients`]: `N = 9`.
pub const GRID: (usize, usize) = (3, 3);

/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every entry `i`.
pub fn finite_diff<T, F>(f: F, point: &Matrix<T>, eps: f64) -> Result<Matrix<T>>
where
    T: Scalar,
    F: Fn(&Matrix<T>) -> Result<T> + Sync,
{
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps must be positive, got {eps}")));
    }
    let h = T::of(eps);
    let eval = |idx: usize, delta: T| -> Result<T> {
        let mut p = point.clone();
        p.as_mut_slice()[idx] += delta;
        let v = f(&p)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss is {v} after perturbing entry {idx}")));
        }
        Ok(v)
    };
    let grads = (0..point.as_slice().len())
        .into_par_iter()
        .map(|idx| Ok((eval(idx, h)? - eval(idx, -h)?) / (h + h)))
        .collect::<Result<Vec<T>>>()?;
    Matrix::new(point.rows(), point.cols(), grads)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub parameter: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub checked_entries: usize,
    pub passed: bool,
}

impl GradReport {
    /// Compares entrywise with relative error `|a - n| / max(|a|, |n|, 1e-8)`.
    pub fn compare<T: Scalar>(
        parameter: impl Into<String>,
        analytic: &Matrix<T>,
        numeric: &Matrix<T>,
        tolerance: f64,
    ) -> Result<Self> {
        if analytic.shape() != numeric.shape() {
            return Err(Error::Shape("analytic and numeric gradients differ in shape".into()));
        }
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        for (&a, &n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let (a, n) = (a.to_f64_lossy(), n.to_f64_lossy());
            let abs = (a - n).abs();
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / a.abs().max(n.abs()).max(1e-8));
        }
        Ok(Self {
            parameter: parameter.into(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            checked_entries: analytic.as_slice().len(),
            passed: max_rel <= tolerance,
        })
    }
}

fn sum_sq<T: Scalar>(y: &FeatureMap<T>) -> T {
    y.values().as_slice().iter().map(|&v| v * v).sum()
}

/// Random input and parameters drawn from `seed`, as used by the check.
pub fn sample_problem<T: Scalar>(cfg: &BlockConfig, seed: u64) -> Result<(FeatureMap<T>, BlockParams<T>)> {
    let mut rng = synth::rng(seed);
    let x = synth::uniform_feature_map(&mut rng, GRID.0, GRID.1, cfg.c_in);
    let params = BlockParams::random(cfg, &mut rng)?;
    Ok((x, params))
}

/// One report per differentiated matrix, `x` first, then parameters in
/// their fixed role order.
pub fn gradient_reports_for(
    x: &FeatureMap<f64>,
    cfg: &BlockConfig,
    params: &BlockParams<f64>,
    tolerance: f64,
    eps: f64,
) -> Result<Vec<GradReport>> {
    let frozen = if cfg.backprop_affinity {
        None
    } else {
        Some(build_block_affinity(x, cfg, params)?.into_values())
    };
    let loss = |x: &FeatureMap<f64>, p: &BlockParams<f64>| -> Result<f64> {
        let y = match &frozen {
            Some(a) => block_forward_with_affinity(x, cfg, p, a)?,
            None => block_forward(x, cfg, p)?,
        };
        Ok(sum_sq(&y))
    };
    let y = block_forward(x, cfg, params)?;
    let upstream = y.values().scale(2.0);
    let analytic = block_backward(x, cfg, params, &upstream)?;

    let mut reports = Vec::new();
    let numeric_x = finite_diff(|v| loss(&x.with_values(v.clone())?, params), x.values(), eps)?;
    reports.push(GradReport::compare("x", &analytic.x, &numeric_x, tolerance)?);
    let names: Vec<String> = params.named(cfg).into_iter().map(|(n, _)| n).collect();
    let analytic_named = analytic.params.named(cfg);
    for (slot, name) in names.iter().enumerate() {
        let point = params.named(cfg)[slot].1.clone();
        let numeric = finite_diff(
            |v| {
                let mut p = params.clone();
                *p.named_mut(cfg)[slot].1 = v.clone();
                loss(x, &p)
            },
            &point,
            eps,
        )?;
        reports.push(GradReport::compare(name.clone(), analytic_named[slot].1, &numeric, tolerance)?);
    }
    Ok(reports)
}

/// Reports for a random problem drawn from `seed`.
pub fn gradient_reports(cfg: &BlockConfig, seed: u64, tolerance: f64, eps: f64) -> Result<Vec<GradReport>> {
    let (x, params) = sample_problem::<f64>(cfg, seed)?;
    gradient_reports_for(&x, cfg, &params, tolerance, eps)
}

/// Like [`gradient_reports`] with `eps = 1e-5`, but any failing report
/// turns into an error naming the offending matrices.
pub fn check_block_gradients(cfg: &BlockConfig, seed: u64, tolerance: f64) -> Result<Vec<GradReport>> {
    let reports = gradient_reports(cfg, seed, tolerance, DEFAULT_EPS)?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} (rel {:.3e})", r.parameter, r.max_rel_error))
        .collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(Error::GradientCheck(format!(
            "{} seed {seed}: {}",
            cfg.variant,
            failed.join(", ")
        )))
    }
}

/// Aligned plain-text table. `group` labels each row (for example the
/// variant and mode).
pub fn format_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a GradReport)>) -> String {
    let rows: Vec<_> = rows.into_iter().collect();
    let gw = rows.iter().map(|(g, _)| g.len()).max().unwrap_or(0).max(5);
    let pw = rows.iter().map(|(_, r)| r.parameter.len()).max().unwrap_or(0).max(9);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<gw$}  {:<pw$}  {:>7}  {:>12}  {:>12}  status",
        "group", "parameter", "entries", "max_abs_err", "max_rel_err"
    );
    for (g, r) in rows {
        let _ = writeln!(
            out,
            "{:<gw$}  {:<pw$}  {:>7}  {:>12.3e}  {:>12.3e}  {}",
            g,
            r.parameter,
            r.checked_entries,
            r.max_abs_error,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    out
}

pub fn write_csv<'a, W: Write>(rows: impl IntoIterator<Item = (&'a str, &'a GradReport)>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "group",
        "parameter",
        "checked_entries",
        "max_abs_error",
        "max_rel_error",
        "passed",
    ])?;
    for (g, r) in rows {
        w.write_record([
            g.to_string(),
            r.parameter.clone(),
            r.checked_entries.to_string(),
            format!("{:.6e}", r.max_abs_error),
            format!("{:.6e}", r.max_rel_error),
            r.passed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
