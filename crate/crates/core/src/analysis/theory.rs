//! Mean-square error of a clamped Gaussian sum over i.i.d. Pareto(1, α)
//! records, relative to the sum's expected value.
//!
//! For `X ~ Pareto(1, α)` clamped at `Δ`:
//!
//! ```text
//! b        = E[(X - Δ)+]   = Δ^(1-α) / (α - 1)
//! E[X ∧ Δ]                 = α/(α-1) - b
//! E[(X ∧ Δ)^2]             = α (Δ^(2-α) - 1) / (2 - α) + Δ^(2-α)    (α ≠ 2)
//! MSE(Δ)   = (n b)^2 + n Var(X ∧ Δ) + Δ^2 / (2ρ)
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimize::GoldenSection;

pub const DELTA_RANGE: (f64, f64) = (1.0, 1e12);

fn check(n: usize, alpha: f64, delta: f64, rho: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 1.0) || !(delta.is_finite() && delta >= 1.0) {
        return Err(Error::BadTailIndex { alpha, delta });
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::NonpositiveInput {
            name: "rho",
            value: rho,
        });
    }
    if n == 0 {
        return Err(Error::NonpositiveInput {
            name: "n",
            value: 0.0,
        });
    }
    Ok(())
}

pub fn pareto_mean(alpha: f64) -> f64 {
    alpha / (alpha - 1.0)
}

/// Mean and variance of `min(X, delta)` for `X ~ Pareto(1, alpha)`.
pub fn clamped_pareto_moments(alpha: f64, delta: f64) -> (f64, f64) {
    let bias = delta.powf(1.0 - alpha) / (alpha - 1.0);
    let mean = pareto_mean(alpha) - bias;
    let second = if (alpha - 2.0).abs() < 1e-12 {
        alpha * delta.ln() + 1.0
    } else {
        let d = delta.powf(2.0 - alpha);
        alpha * (d - 1.0) / (2.0 - alpha) + d
    };
    (mean, (second - mean * mean).max(0.0))
}

pub fn theoretical_mse(n: usize, alpha: f64, delta: f64, rho: f64) -> Result<f64> {
    check(n, alpha, delta, rho)?;
    let n = n as f64;
    let bias = delta.powf(1.0 - alpha) / (alpha - 1.0);
    let (_, var) = clamped_pareto_moments(alpha, delta);
    Ok((n * bias).powi(2) + n * var + delta * delta / (2.0 * rho))
}

/// `MSE(Δ) / E[S]` with `E[S] = n α / (α - 1)`.
pub fn theoretical_mse_ratio(n: usize, alpha: f64, delta: f64, rho: f64) -> Result<f64> {
    let mse = theoretical_mse(n, alpha, delta, rho)?;
    Ok(mse / (n as f64 * pareto_mean(alpha)))
}

/// Minimizer of [`theoretical_mse_ratio`] over `Δ ∈ [1, 1e12]`, searched on
/// `ln Δ` to relative tolerance `1e-6`.
pub fn optimal_delta(n: usize, alpha: f64, rho: f64) -> Result<f64> {
    check(n, alpha, 1.0, rho)?;
    let (lo, hi) = DELTA_RANGE;
    let m = GoldenSection::new(1e-6).minimize(
        |u| theoretical_mse_ratio(n, alpha, u.exp(), rho).unwrap_or(f64::INFINITY),
        lo.ln(),
        hi.ln(),
    );
    Ok(m.x.exp().clamp(lo, hi))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MseRow {
    pub alpha: f64,
    pub rho: f64,
    pub delta: f64,
    pub ratio: f64,
    /// True for the row at the optimal Δ of its `(alpha, rho)` pair.
    pub optimal: bool,
}

/// Ratio at every `(alpha, rho, delta)` plus one flagged row per
/// `(alpha, rho)` at the optimal Δ.
pub fn mse_grid(n: usize, alphas: &[f64], rhos: &[f64], deltas: &[f64]) -> Result<Vec<MseRow>> {
    let mut rows = Vec::new();
    for &alpha in alphas {
        for &rho in rhos {
            for &delta in deltas {
                rows.push(MseRow {
                    alpha,
                    rho,
                    delta,
                    ratio: theoretical_mse_ratio(n, alpha, delta, rho)?,
                    optimal: false,
                });
            }
            let delta = optimal_delta(n, alpha, rho)?;
            rows.push(MseRow {
                alpha,
                rho,
                delta,
                ratio: theoretical_mse_ratio(n, alpha, delta, rho)?,
                optimal: true,
            });
        }
    }
    Ok(rows)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            // base 10 so decade grids land on exact powers of ten
            let (a, b) = (lo.log10(), hi.log10());
            let mut out: Vec<f64> = (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect();
            out[0] = lo;
            out[count - 1] = hi;
            out
        }
    }
}
