// Shared fixtures for the integration suites. Oracles here work on integer
// arithmetic and the raw table only; they never call into the splitter.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use przcdp::splitting::{GroupedThresholds, SplitThresholds, ThresholdScheme};
use przcdp::table::{Attribute, Row, Schema, Table};
use przcdp::workload::{Aggregate, Formalism, Query, Workload};
use rand::seq::SliceRandom;
use rand::Rng;

pub const LABELS: [&str; 4] = ["a", "b", "c", "d"];
pub const MEASURES: [&str; 2] = ["x", "y"];

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn schema() -> Schema {
    Schema::new(vec![
        Attribute::conditional("g"),
        Attribute::conditional("h"),
        Attribute::measure("x"),
        Attribute::measure("y"),
    ])
    .unwrap()
}

/// Integer-valued measures so sums over pieces are exact.
pub fn random_row<R: Rng>(rng: &mut R, id: u64, max_value: u64) -> Row {
    let g = LABELS[rng.gen_range(0..LABELS.len())].to_string();
    let h = LABELS[rng.gen_range(0..2)].to_string();
    let x = rng.gen_range(0..=max_value) as f64;
    let y = rng.gen_range(0..=max_value) as f64;
    Row::new(id, vec![g, h], vec![x, y])
}

pub fn random_table<R: Rng>(rng: &mut R, rows: usize, max_value: u64) -> Table {
    let rows = (0..rows as u64)
        .map(|i| random_row(rng, i + 1, max_value))
        .collect();
    Table::new(schema(), rows).unwrap()
}

pub fn random_thresholds<R: Rng>(rng: &mut R) -> SplitThresholds {
    SplitThresholds::new(MEASURES.iter().map(|m| (*m, rng.gen_range(1..=40) as f64)))
}

pub fn random_scheme<R: Rng>(rng: &mut R) -> ThresholdScheme {
    if rng.gen_bool(0.5) {
        random_thresholds(rng).into()
    } else {
        let groups = LABELS[..3]
            .iter()
            .map(|l| (l.to_string(), random_thresholds(rng)))
            .collect();
        GroupedThresholds {
            key: "g".into(),
            groups,
            default: random_thresholds(rng),
        }
        .into()
    }
}

/// Independent split count: `max(1, max_a ceil(r(a) / T(a)))`.
pub fn oracle_split_count(row: &Row, thresholds: &[u64]) -> u64 {
    row.measures
        .iter()
        .zip(thresholds)
        .map(|(v, t)| (*v as u64).div_ceil(*t))
        .max()
        .unwrap_or(1)
        .max(1)
}

pub fn thresholds_for(scheme: &ThresholdScheme, row: &Row) -> Vec<u64> {
    let set = match scheme {
        ThresholdScheme::Uniform(t) => t,
        ThresholdScheme::Grouped(g) => g.for_label(&row.labels[0]),
    };
    MEASURES
        .iter()
        .map(|m| set.get(m).unwrap() as u64)
        .collect()
}

fn random_group_by<R: Rng>(rng: &mut R) -> Vec<&'static str> {
    match rng.gen_range(0..4) {
        0 => vec![],
        1 => vec!["g"],
        2 => vec!["h"],
        _ => vec!["g", "h"],
    }
}

pub fn random_query<R: Rng>(rng: &mut R, id: usize, formalism: Formalism) -> Query {
    let attr = MEASURES.choose(rng).unwrap().to_string();
    let aggregate = match rng.gen_range(0..3) {
        0 => Aggregate::Count,
        1 => Aggregate::Sum { attr },
        _ => Aggregate::Avg { attr },
    };
    let rho = rng.gen_range(0.05..2.0);
    let mut q =
        Query::new(format!("q{id}"), aggregate, formalism, rho).group_by(&random_group_by(rng));
    if rng.gen_bool(0.3) {
        let keep: Vec<&str> = LABELS[..2].to_vec();
        q = q.filter("g", &keep);
    }
    q
}

/// Aggregates over the raw table, keyed by group labels. An ungrouped query
/// always has one answer; its AVG over no rows is undefined.
pub fn oracle_answers(table: &Table, query: &Query) -> BTreeMap<Vec<String>, Option<f64>> {
    let schema = table.schema();
    let keys: Vec<usize> = query
        .group_by
        .iter()
        .map(|a| schema.conditional_index(a).unwrap())
        .collect();
    let mut acc: BTreeMap<Vec<String>, (f64, f64)> = BTreeMap::new();
    if keys.is_empty() {
        acc.insert(Vec::new(), (0.0, 0.0));
    }
    for row in table.rows() {
        let keep = query.filter.iter().all(|(attr, allowed)| {
            let i = schema.conditional_index(attr).unwrap();
            allowed.contains(&row.labels[i])
        });
        if !keep {
            continue;
        }
        let key = keys.iter().map(|&i| row.labels[i].clone()).collect();
        let e = acc.entry(key).or_default();
        e.1 += 1.0;
        if let Some(attr) = query.aggregate.measure() {
            e.0 += row.measure(schema, attr).unwrap();
        }
    }
    acc.into_iter()
        .map(|(k, (sum, count))| {
            let v = match query.aggregate {
                Aggregate::Count | Aggregate::CountDistinct => Some(count),
                Aggregate::Sum { .. } => Some(sum),
                Aggregate::Avg { .. } => (count > 0.0).then(|| sum / count),
            };
            (k, v)
        })
        .collect()
}

/// Random workload over `table` plus top-codes for pre-split sums.
pub fn random_workload<R: Rng>(rng: &mut R, queries: usize) -> Workload {
    let mut w = Workload::new(random_scheme(rng));
    for i in 0..queries {
        let f = if rng.gen_bool(0.25) {
            Formalism::ZcdpPresplit
        } else {
            Formalism::PrzcdpPostsplit
        };
        w = w.with_query(random_query(rng, i, f));
    }
    w.top_codes = MEASURES.iter().map(|m| (m.to_string(), 50.0)).collect();
    w
}
