//! Error and privacy-loss metrics over completed runs.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::statistics::{Data, OrderStatistics};

use crate::accountant::{policy_min, PolicyFunction};
use crate::error::{Error, Result};
use crate::mechanisms::{clamp, resolve_group_attrs, rho_for_sigma, row_key, GroupKey};
use crate::table::{format_number, Row, RowId, Table};
use crate::workload::{filter_indices, passes, Component, Formalism, RunOutput, RunTrace};

/// `|noisy - truth| / |truth|`.
pub fn are(noisy: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::ZeroTruth(format!("noisy answer {noisy}")));
    }
    Ok((noisy - truth).abs() / truth.abs())
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Smallest `v` with `Pr(|N(0, sigma^2)| / |truth| >= v) <= 1 - gamma`.
pub fn query_rel_err(sigma: f64, truth: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadGamma(gamma));
    }
    if truth == 0.0 {
        return Err(Error::ZeroTruth("relative error of a zero answer".into()));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::NonpositiveSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    Ok(sigma * normal_quantile((1.0 + gamma) / 2.0) / truth.abs())
}

/// Empirical CDF as `(value, fraction of observations <= value)` steps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CdfSeries {
    pub points: Vec<(f64, f64)>,
}

impl CdfSeries {
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyTable);
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, v) in values.iter().enumerate() {
            let frac = (i + 1) as f64 / n as f64;
            match points.last_mut() {
                Some(last) if last.0 == *v => last.1 = frac,
                _ => points.push((*v, frac)),
            }
        }
        Ok(CdfSeries { points })
    }

    /// Fraction of observations `<= x`.
    pub fn fraction_at_most(&self, x: f64) -> f64 {
        self.points
            .iter()
            .take_while(|(v, _)| *v <= x)
            .last()
            .map_or(0.0, |p| p.1)
    }

    pub fn is_valid(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
            && self.points.last().is_some_and(|p| p.1 == 1.0)
    }
}

/// Empirical CDF of the policy evaluated at every record of `table`.
pub fn policy_cdf(policy: &PolicyFunction, table: &Table) -> Result<CdfSeries> {
    CdfSeries::from_values(
        policy_losses(policy, table)?
            .into_iter()
            .map(|p| p.1)
            .collect(),
    )
}

pub fn policy_losses(policy: &PolicyFunction, table: &Table) -> Result<Vec<(RowId, f64)>> {
    let bound = policy.bind(table.schema())?;
    table
        .rows()
        .iter()
        .map(|r| Ok((r.id, bound.evaluate(r)?)))
        .collect()
}

/// Filter as (attribute index, allowed labels) pairs, and group-by indices.
type QueryShape = (Vec<(usize, Vec<String>)>, Vec<usize>);

/// Index from a record to the trace entries whose statistic it touches.
struct TraceIndex<'a> {
    trace: &'a RunTrace,
    queries: Vec<QueryShape>,
    partition_attrs: Option<Vec<usize>>,
    by_group: HashMap<(Option<usize>, &'a GroupKey), Vec<usize>>,
    top_codes: Vec<Option<f64>>,
    measure: Vec<Option<usize>>,
}

impl<'a> TraceIndex<'a> {
    fn new(trace: &'a RunTrace, table: &Table) -> Result<Self> {
        let schema = table.schema();
        let w = &trace.workload;
        let mut queries = Vec::with_capacity(w.queries.len());
        let mut top_codes = Vec::with_capacity(w.queries.len());
        let mut measure = Vec::with_capacity(w.queries.len());
        for q in &w.queries {
            queries.push((
                filter_indices(schema, &q.filter)?,
                resolve_group_attrs(schema, &q.group_by)?,
            ));
            let attr = q.aggregate.measure();
            measure.push(attr.map(|a| schema.require_measure(a)).transpose()?);
            top_codes.push(attr.and_then(|a| w.top_codes.get(a).copied()));
        }
        let partition_attrs = w
            .partition_selection
            .as_ref()
            .map(|p| resolve_group_attrs(schema, &p.group_by))
            .transpose()?;
        let mut by_group: HashMap<_, Vec<usize>> = HashMap::new();
        for (i, e) in trace.entries.iter().enumerate() {
            by_group
                .entry((e.query_index, &e.group_key))
                .or_default()
                .push(i);
        }
        Ok(TraceIndex {
            trace,
            queries,
            partition_attrs,
            by_group,
            top_codes,
            measure,
        })
    }

    /// Sum over releases of (change in true answer from removing every
    /// split row of `row`)^2 / (2 sigma^2).
    fn loss(&self, row: &Row, splits: usize) -> f64 {
        let mut total = 0.0;
        let mut add = |entry: usize, change: f64| {
            let sigma = self.trace.entries[entry].sigma;
            total += rho_for_sigma(change, sigma);
        };
        if let Some(attrs) = &self.partition_attrs {
            let key = row_key(row, attrs);
            for &e in self.by_group.get(&(None, &key)).into_iter().flatten() {
                add(e, splits as f64);
            }
        }
        for (qi, (filter, groups)) in self.queries.iter().enumerate() {
            if !passes(row, filter) {
                continue;
            }
            let key = row_key(row, groups);
            for &e in self.by_group.get(&(Some(qi), &key)).into_iter().flatten() {
                let entry = &self.trace.entries[e];
                let change = match entry.component {
                    Component::Count | Component::AvgCount | Component::PartitionCount => 1.0,
                    Component::Sum | Component::AvgSum => {
                        let v = row.measures[self.measure[qi].expect("sum over a measure")];
                        match (entry.formalism, self.top_codes[qi]) {
                            (Formalism::ZcdpPresplit, Some(b)) => clamp(v, b),
                            _ => v,
                        }
                    }
                };
                add(e, change);
            }
        }
        total
    }
}

/// Exact Rényi-supremum loss the run incurred for one record: summed over
/// independent Gaussian releases, `(change)^2 / (2 sigma^2)`.
pub fn realized_loss(trace: &RunTrace, table: &Table, row_id: RowId) -> Result<f64> {
    let row = table.row(row_id).ok_or(Error::UnknownRowId(row_id))?;
    let index = TraceIndex::new(trace, table)?;
    let resolved = trace.workload.thresholds.resolve(table.schema())?;
    Ok(index.loss(row, resolved.split_count(row)))
}

/// [`realized_loss`] for every record, in table order.
pub fn realized_losses(trace: &RunTrace, table: &Table) -> Result<Vec<(RowId, f64)>> {
    let index = TraceIndex::new(trace, table)?;
    let resolved = trace.workload.thresholds.resolve(table.schema())?;
    Ok(table
        .rows()
        .iter()
        .map(|r| (r.id, index.loss(r, resolved.split_count(r))))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnswerMetric {
    pub query_id: String,
    pub group_key: GroupKey,
    pub true_value: f64,
    pub noisy_value: Option<f64>,
    /// `None` for a zero truth or a missing answer.
    pub are: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordMetric {
    pub row_id: RowId,
    pub policy_loss: f64,
    pub realized_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub answers: Vec<AnswerMetric>,
    pub records: Vec<RecordMetric>,
    /// 25th, 50th and 75th percentile of the defined AREs.
    pub are_quantiles: Option<[f64; 3]>,
    pub policy_min: f64,
    /// Share of records whose policy loss exceeds `policy_min`.
    pub prop_above_policy_min: f64,
}

pub fn metric_report(output: &RunOutput, table: &Table) -> Result<MetricReport> {
    let answers: Vec<AnswerMetric> = output
        .answers
        .iter()
        .map(|a| AnswerMetric {
            query_id: a.query_id.clone(),
            group_key: a.group_key.clone(),
            true_value: a.true_value,
            noisy_value: a.value,
            are: a.value.and_then(|v| are(v, a.true_value).ok()),
        })
        .collect();
    let policy = policy_losses(&output.policy, table)?;
    let realized = realized_losses(&output.trace, table)?;
    let records: Vec<RecordMetric> = policy
        .iter()
        .zip(&realized)
        .map(
            |(&(row_id, policy_loss), &(_, realized_loss))| RecordMetric {
                row_id,
                policy_loss,
                realized_loss,
            },
        )
        .collect();
    let ares: Vec<f64> = answers.iter().filter_map(|a| a.are).collect();
    let are_quantiles = (!ares.is_empty()).then(|| {
        let mut d = Data::new(ares);
        [d.quantile(0.25), d.quantile(0.5), d.quantile(0.75)]
    });
    let pmin = policy_min(&output.policy);
    let above = records
        .iter()
        .filter(|r| r.policy_loss > pmin * (1.0 + 1e-12))
        .count();
    Ok(MetricReport {
        prop_above_policy_min: if records.is_empty() {
            0.0
        } else {
            above as f64 / records.len() as f64
        },
        answers,
        records,
        are_quantiles,
        policy_min: pmin,
    })
}

pub fn median(values: Vec<f64>) -> Option<f64> {
    (!values.is_empty()).then(|| Data::new(values).median())
}

/// Writes `(prefix columns..., loss, cum_frac)` rows for a CDF.
pub(crate) fn write_cdf_rows<W: Write>(
    w: &mut csv::Writer<W>,
    prefix: &[String],
    cdf: &CdfSeries,
) -> Result<()> {
    for (loss, frac) in &cdf.points {
        let mut rec = prefix.to_vec();
        rec.push(format_number(*loss));
        rec.push(format_number(*frac));
        w.write_record(&rec)?;
    }
    Ok(())
}
