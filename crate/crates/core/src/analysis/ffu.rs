//! Minimal budgets meeting a fitness-for-use target: every released
//! statistic has theoretical relative error at most `δ` with probability
//! `γ`, i.e. `σ ≤ δ |S| / Q((1+γ)/2)` and so `ρ ≥ Δ² / (2σ²)`.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{
    group_key_string, resolve_group_attrs, rho_for_sigma, row_key, sigma_for_rho, GroupKey,
    SeededRng,
};
use crate::table::{RowId, Table};
use crate::workload::{execute, filter_indices, passes, Aggregate, Formalism, Workload};

use super::metrics::{normal_quantile, query_rel_err, CdfSeries};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FfuBudget {
    pub query_index: usize,
    pub query_id: String,
    pub group_key: GroupKey,
    /// Whole-query budget for this group; AVG spends half on each part.
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FfuResult {
    pub delta_target: f64,
    pub gamma: f64,
    pub budgets: Vec<FfuBudget>,
    pub record_losses: Vec<(RowId, f64)>,
    pub cdf: CdfSeries,
}

/// Smallest `ρ` whose Gaussian scale keeps `query_rel_err <= target`.
fn min_rho(delta: f64, truth: f64, target: f64, gamma: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::ZeroTruth(
            "fitness-for-use needs nonzero answers".into(),
        ));
    }
    let sigma = target * truth.abs() / normal_quantile((1.0 + gamma) / 2.0);
    let mut rho = rho_for_sigma(delta, sigma);
    while query_rel_err(sigma_for_rho(delta, rho)?, truth, gamma)? > target {
        rho *= 1.0 + f64::EPSILON;
    }
    Ok(rho)
}

pub fn min_policy_for_ffu(
    workload: &Workload,
    table: &Table,
    delta_target: f64,
    gamma: f64,
) -> Result<FfuResult> {
    if !(delta_target.is_finite() && delta_target > 0.0) {
        return Err(Error::NonpositiveInput {
            name: "delta_target",
            value: delta_target,
        });
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadGamma(gamma));
    }
    let mut probe = workload.clone();
    probe.partition_selection = None;
    for q in &mut probe.queries {
        q.group_rho.clear();
    }
    let out = execute(&probe, table, &SeededRng::new(0).without_noise())?;

    let mut budgets = Vec::with_capacity(out.answers.len());
    for answer in &out.answers {
        let query = &workload.queries[answer.query_index];
        let mut need: f64 = 0.0;
        for &e in &answer.trace {
            let entry = &out.trace.entries[e];
            let rho = min_rho(entry.delta, entry.unclamped_value, delta_target, gamma)?;
            need = need.max(rho);
        }
        if matches!(query.aggregate, Aggregate::Avg { .. }) {
            need *= 2.0;
        }
        budgets.push(FfuBudget {
            query_index: answer.query_index,
            query_id: query.id.clone(),
            group_key: answer.group_key.clone(),
            rho: need,
        });
    }

    let record_losses = record_losses(workload, table, &budgets)?;
    let cdf = CdfSeries::from_values(record_losses.iter().map(|r| r.1).collect())?;
    Ok(FfuResult {
        delta_target,
        gamma,
        budgets,
        record_losses,
        cdf,
    })
}

/// Per record: the loss each covering release would charge at its minimal
/// budget, summed.
fn record_losses(
    workload: &Workload,
    table: &Table,
    budgets: &[FfuBudget],
) -> Result<Vec<(RowId, f64)>> {
    let schema = table.schema();
    let resolved = workload.thresholds.resolve(schema)?;
    let by_group: HashMap<(usize, &GroupKey), f64> = budgets
        .iter()
        .map(|b| ((b.query_index, &b.group_key), b.rho))
        .collect();
    let queries = workload
        .queries
        .iter()
        .map(|q| {
            Ok((
                filter_indices(schema, &q.filter)?,
                resolve_group_attrs(schema, &q.group_by)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(table
        .rows()
        .iter()
        .map(|row| {
            let m = resolved.split_count(row) as f64;
            let mut loss = 0.0;
            for (qi, (filter, groups)) in queries.iter().enumerate() {
                if !passes(row, filter) {
                    continue;
                }
                let Some(&rho) = by_group.get(&(qi, &row_key(row, groups))) else {
                    continue;
                };
                let q = &workload.queries[qi];
                loss += match (q.formalism, &q.aggregate) {
                    (Formalism::ZcdpPresplit, _) => rho,
                    (_, Aggregate::Count | Aggregate::CountDistinct) => rho,
                    (_, Aggregate::Sum { .. }) => m * m * rho,
                    (_, Aggregate::Avg { .. }) => (m * m + 1.0) * rho / 2.0,
                };
            }
            (row.id, loss)
        })
        .collect())
}

/// The workload with every group's budget set to its fitness-for-use
/// minimum. Partition selection is dropped since the minima assume every
/// group is released.
pub fn apply_ffu_budgets(workload: &Workload, result: &FfuResult) -> Workload {
    let mut w = workload.clone();
    w.partition_selection = None;
    for q in &mut w.queries {
        q.group_rho.clear();
    }
    for b in &result.budgets {
        w.queries[b.query_index]
            .group_rho
            .insert(group_key_string(&b.group_key), b.rho);
    }
    w
}
