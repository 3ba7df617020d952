//! Privacy-utility sweeps over univariate splitting thresholds and budgets:
//! one grouped post-split SUM per swept attribute, repeated over noise
//! replicates.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::PolicyFunction;
use crate::error::{Error, Result};
use crate::mechanisms::{resolve_group_attrs, row_key, GroupKey, SeededRng};
use crate::splitting::SplitThresholds;
use crate::table::{Attribute, Row, Schema, Table};
use crate::workload::{execute, Aggregate, Formalism, Query, Workload};

use super::metrics::{are, median, policy_cdf, CdfSeries};

fn default_replicates() -> usize {
    20
}

fn default_min_group_rows() -> usize {
    25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Measures swept one at a time; each gets its own univariate split.
    pub attributes: Vec<String>,
    pub group_by: Vec<String>,
    pub thresholds: Vec<f64>,
    pub rhos: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Groups with fewer true records are left out of the ARE summary.
    #[serde(default = "default_min_group_rows")]
    pub min_group_rows: usize,
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sweep: {m}")));
        if self.attributes.is_empty() {
            return bad("no attributes");
        }
        if self.thresholds.is_empty()
            || self.thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0))
        {
            return bad("thresholds must be positive and finite");
        }
        if self.rhos.is_empty() || self.rhos.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("budgets must be positive and finite");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AreRow {
    pub attribute: String,
    pub threshold: f64,
    pub rho: f64,
    pub prop_split: f64,
    pub query_id: String,
    pub group_key: GroupKey,
    pub replicate: usize,
    pub are: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub attribute: String,
    pub threshold: f64,
    pub rho: f64,
    pub prop_split: f64,
    pub median_are: Option<f64>,
    pub policy_cdf: CdfSeries,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<AreRow>,
    pub points: Vec<SweepPoint>,
}

/// Replicate `r` of a sweep draws noise from its own seed.
pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    seed.wrapping_add((replicate as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `table` reduced to the grouping attributes and one measure.
fn project(table: &Table, group_by: &[String], attribute: &str) -> Result<Table> {
    let schema = table.schema();
    let groups = resolve_group_attrs(schema, group_by)?;
    let m = schema.require_measure(attribute)?;
    let mut attrs: Vec<Attribute> = group_by.iter().map(Attribute::conditional).collect();
    attrs.push(Attribute::measure(attribute));
    let projected = Arc::new(Schema::new(attrs)?);
    let rows = table
        .rows()
        .iter()
        .map(|r| Row::new(r.id, row_key(r, &groups), vec![r.measures[m]]))
        .collect();
    Ok(Table::from_parts(projected, rows))
}

pub fn run_sweep(
    table: &Table,
    config: &SweepConfig,
    seed: u64,
    noise: bool,
) -> Result<SweepResult> {
    config.validate()?;
    let mut points = Vec::new();
    let mut jobs = Vec::new();
    for attr in &config.attributes {
        let projected = project(table, &config.group_by, attr)?;
        let mut counts: BTreeMap<GroupKey, usize> = BTreeMap::new();
        for r in projected.rows() {
            *counts.entry(r.labels.clone()).or_default() += 1;
        }
        let projected = Arc::new(projected);
        let counts = Arc::new(counts);
        for &threshold in &config.thresholds {
            let t = SplitThresholds::new([(attr.as_str(), threshold)]);
            let split = projected
                .rows()
                .iter()
                .filter(|r| r.measures[0] > threshold)
                .count();
            let prop_split = split as f64 / projected.len().max(1) as f64;
            for &rho in &config.rhos {
                let cdf = policy_cdf(&PolicyFunction::split_cost(rho, t.clone()), &projected)?;
                points.push(SweepPoint {
                    attribute: attr.clone(),
                    threshold,
                    rho,
                    prop_split,
                    median_are: None,
                    policy_cdf: cdf,
                });
                let workload = Workload::new(t.clone()).with_query(
                    Query::new(
                        format!("sum_{attr}"),
                        Aggregate::Sum { attr: attr.clone() },
                        Formalism::PrzcdpPostsplit,
                        rho,
                    )
                    .group_by(
                        &config
                            .group_by
                            .iter()
                            .map(String::as_str)
                            .collect::<Vec<_>>(),
                    ),
                );
                for replicate in 0..config.replicates {
                    jobs.push((
                        points.len() - 1,
                        Arc::clone(&projected),
                        Arc::clone(&counts),
                        workload.clone(),
                        replicate,
                    ));
                }
            }
        }
    }

    let per_job: Vec<(usize, Vec<AreRow>)> = jobs
        .par_iter()
        .map(|(point, table, counts, workload, replicate)| {
            let mut rng = SeededRng::new(replicate_seed(seed, *replicate));
            if !noise {
                rng = rng.without_noise();
            }
            let out = execute(workload, table, &rng)?;
            let p = &points[*point];
            let rows = out
                .answers
                .iter()
                .filter(|a| counts.get(&a.group_key).copied().unwrap_or(0) >= config.min_group_rows)
                .filter_map(|a| {
                    Some(AreRow {
                        attribute: p.attribute.clone(),
                        threshold: p.threshold,
                        rho: p.rho,
                        prop_split: p.prop_split,
                        query_id: a.query_id.clone(),
                        group_key: a.group_key.clone(),
                        replicate: *replicate,
                        are: are(a.value?, a.true_value).ok()?,
                    })
                })
                .collect();
            Ok((*point, rows))
        })
        .collect::<Result<_>>()?;

    let mut by_point: Vec<Vec<f64>> = vec![Vec::new(); points.len()];
    let mut rows = Vec::new();
    for (point, r) in per_job {
        by_point[point].extend(r.iter().map(|x| x.are));
        rows.extend(r);
    }
    for (p, ares) in points.iter_mut().zip(by_point) {
        p.median_are = median(ares);
    }
    Ok(SweepResult { rows, points })
}
