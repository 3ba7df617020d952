//! Unit splitting: every record is decomposed into `m` sub-records whose
//! measure values are capped at per-attribute thresholds and sum back to the
//! original values. Conditional labels and the origin row id are copied to
//! every sub-record.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{self, Row, RowId, Schema, Table, ORIGIN_ROW_ID_COLUMN};

/// Positive cap per measure attribute.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitThresholds(pub BTreeMap<String, f64>);

impl SplitThresholds {
    pub fn new<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        SplitThresholds(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, attribute: &str) -> Option<f64> {
        self.0.get(attribute).copied()
    }

    /// Thresholds aligned with the schema's measure order.
    pub fn resolve(&self, schema: &Schema) -> Result<Vec<f64>> {
        schema
            .measure_names()
            .map(|name| {
                let t = self
                    .get(name)
                    .ok_or_else(|| Error::MissingThreshold(name.to_string()))?;
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::BadThreshold {
                        attribute: name.to_string(),
                        value: t,
                    });
                }
                Ok(t)
            })
            .collect()
    }
}

/// Thresholds chosen per value of one conditional attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedThresholds {
    pub key: String,
    #[serde(default)]
    pub groups: BTreeMap<String, SplitThresholds>,
    pub default: SplitThresholds,
}

impl GroupedThresholds {
    pub fn for_label(&self, label: &str) -> &SplitThresholds {
        self.groups.get(label).unwrap_or(&self.default)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScheme {
    Uniform(SplitThresholds),
    Grouped(GroupedThresholds),
}

impl From<SplitThresholds> for ThresholdScheme {
    fn from(t: SplitThresholds) -> Self {
        ThresholdScheme::Uniform(t)
    }
}

impl From<GroupedThresholds> for ThresholdScheme {
    fn from(t: GroupedThresholds) -> Self {
        ThresholdScheme::Grouped(t)
    }
}

impl ThresholdScheme {
    pub fn resolve(&self, schema: &Schema) -> Result<ResolvedThresholds> {
        match self {
            ThresholdScheme::Uniform(t) => Ok(ResolvedThresholds {
                key: None,
                branches: BTreeMap::new(),
                default: t.resolve(schema)?,
            }),
            ThresholdScheme::Grouped(g) => {
                let key = schema.require_conditional(&g.key)?;
                let branches = g
                    .groups
                    .iter()
                    .map(|(label, t)| Ok((label.clone(), t.resolve(schema)?)))
                    .collect::<Result<_>>()?;
                Ok(ResolvedThresholds {
                    key: Some(key),
                    branches,
                    default: g.default.resolve(schema)?,
                })
            }
        }
    }

    /// Every threshold set the scheme can apply, default last.
    pub fn all_sets(&self) -> Vec<&SplitThresholds> {
        match self {
            ThresholdScheme::Uniform(t) => vec![t],
            ThresholdScheme::Grouped(g) => g.groups.values().chain([&g.default]).collect(),
        }
    }
}

/// A threshold scheme bound to a schema: thresholds as vectors in measure
/// order, with the branch key as a label index.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedThresholds {
    key: Option<usize>,
    branches: BTreeMap<String, Vec<f64>>,
    default: Vec<f64>,
}

impl ResolvedThresholds {
    pub fn for_row(&self, row: &Row) -> &[f64] {
        match self.key {
            Some(k) => self.branches.get(&row.labels[k]).unwrap_or(&self.default),
            None => &self.default,
        }
    }

    pub fn split_count(&self, row: &Row) -> usize {
        split_count_resolved(row, self.for_row(row))
    }

    /// Label index of the branch key, when grouped.
    pub fn key_index(&self) -> Option<usize> {
        self.key
    }

    /// Threshold for measure `m` in the branch for `label`.
    pub fn threshold_for_label(&self, label: Option<&str>, m: usize) -> f64 {
        match label.and_then(|l| self.branches.get(l)) {
            Some(t) => t[m],
            None => self.default[m],
        }
    }

    /// Largest threshold for measure `m` over the given branch labels, or
    /// over every branch (and the default) when `labels` is `None`.
    pub fn max_threshold(&self, m: usize, labels: Option<&[String]>) -> f64 {
        match (self.key, labels) {
            (Some(_), Some(labels)) => labels
                .iter()
                .map(|l| self.threshold_for_label(Some(l), m))
                .fold(0.0, f64::max),
            _ => self
                .branches
                .values()
                .map(|t| t[m])
                .fold(self.default[m], f64::max),
        }
    }
}

/// Number of sub-records for `row`: the smallest `m >= 1` with
/// `m * T(a) >= r(a)` for every measure `a`.
pub fn split_count(row: &Row, schema: &Schema, thresholds: &SplitThresholds) -> Result<usize> {
    row.check_shape(schema)?;
    let t = thresholds.resolve(schema)?;
    Ok(split_count_resolved(row, &t))
}

pub(crate) fn split_count_resolved(row: &Row, thresholds: &[f64]) -> usize {
    row.measures
        .iter()
        .zip(thresholds)
        .map(|(&v, &t)| pieces_needed(v, t))
        .max()
        .unwrap_or(1)
        .max(1)
}

fn pieces_needed(value: f64, cap: f64) -> usize {
    if value <= cap {
        return 1;
    }
    let mut m = (value / cap).ceil();
    while m * cap < value {
        m += 1.0;
    }
    while m > 1.0 && (m - 1.0) * cap >= value {
        m -= 1.0;
    }
    m as usize
}

/// Greedy decomposition of `value` into `m` parts: full caps first, then the
/// remainder, then zeros.
fn decompose(value: f64, cap: f64, m: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m);
    let mut full = ((value / cap).floor() as usize).min(m);
    while full > 0 && full as f64 * cap > value {
        full -= 1;
    }
    let mut remainder = value - full as f64 * cap;
    while remainder > cap && full < m {
        full += 1;
        remainder = value - full as f64 * cap;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = if i < full {
            cap
        } else if i == full {
            remainder
        } else {
            0.0
        };
    }
    if full == m && remainder > 0.0 {
        // unreachable when m came from pieces_needed
        out[m - 1] += remainder;
    }
}

/// Output of unit splitting. Each row's `id` is the id of the record it came
/// from, so ids repeat.
#[derive(Clone, Debug)]
pub struct SplitTable {
    schema: Arc<Schema>,
    rows: Vec<Row>,
}

impl SplitTable {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn distinct_origins(&self) -> usize {
        self.rows.iter().map(|r| r.id).collect::<HashSet<_>>().len()
    }

    /// `(origin id, number of sub-records)` in emission order.
    pub fn split_counts(&self) -> Vec<(RowId, usize)> {
        let mut out: Vec<(RowId, usize)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some((id, n)) if *id == r.id => *n += 1,
                _ => out.push((r.id, 1)),
            }
        }
        out
    }

    pub fn filter(&self, keep: impl Fn(&Row) -> bool) -> SplitTable {
        SplitTable {
            schema: Arc::clone(&self.schema),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.write_csv_with_comment(writer, None)
    }

    pub fn write_csv_with_comment<W: Write>(&self, writer: W, comment: Option<&str>) -> Result<()> {
        table::write_rows(
            writer,
            &self.schema,
            ORIGIN_ROW_ID_COLUMN,
            &self.rows,
            comment,
        )
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Reads a split table written by [`SplitTable::write_csv`].
pub fn read_split_csv<R: Read>(reader: R, schema: Schema) -> Result<SplitTable> {
    let (_, rows) = table::read_rows(reader, &schema, ORIGIN_ROW_ID_COLUMN)?;
    Ok(SplitTable {
        schema: Arc::new(schema),
        rows,
    })
}

pub fn load_split_csv(path: impl AsRef<Path>, schema: Schema) -> Result<SplitTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_split_csv(file, schema)
}

pub fn unit_split(table: &Table, thresholds: &SplitThresholds) -> Result<SplitTable> {
    unit_split_scheme(table, &ThresholdScheme::Uniform(thresholds.clone()))
}

pub fn unit_split_grouped(table: &Table, thresholds: &GroupedThresholds) -> Result<SplitTable> {
    unit_split_scheme(table, &ThresholdScheme::Grouped(thresholds.clone()))
}

pub fn unit_split_scheme(table: &Table, scheme: &ThresholdScheme) -> Result<SplitTable> {
    let resolved = scheme.resolve(table.schema())?;
    Ok(unit_split_resolved(table, &resolved))
}

pub(crate) fn unit_split_resolved(table: &Table, resolved: &ResolvedThresholds) -> SplitTable {
    let rows = table
        .rows()
        .par_iter()
        .map(|row| split_row(row, resolved.for_row(row)))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    SplitTable {
        schema: Arc::clone(table.schema_arc()),
        rows,
    }
}

fn split_row(row: &Row, thresholds: &[f64]) -> Vec<Row> {
    let m = split_count_resolved(row, thresholds);
    if m == 1 {
        return vec![row.clone()];
    }
    let mut columns = vec![0.0; m * row.measures.len()];
    for (a, (&v, &t)) in row.measures.iter().zip(thresholds).enumerate() {
        decompose(v, t, m, &mut columns[a * m..(a + 1) * m]);
    }
    (0..m)
        .map(|i| {
            let measures = (0..row.measures.len())
                .map(|a| columns[a * m + i])
                .collect();
            Row::new(row.id, row.labels.clone(), measures)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::tests::{table2_schema, table2a};

    fn t2() -> SplitThresholds {
        SplitThresholds::new([("Employees", 50.0), ("Payroll", 5_000_000.0)])
    }

    fn row(emp: f64, pay: f64) -> Row {
        Row::new(1, vec!["X".into()], vec![emp, pay])
    }

    #[test]
    fn split_count_examples() {
        let s = table2_schema();
        assert_eq!(
            split_count(&row(150.0, 10_000_000.0), &s, &t2()).unwrap(),
            3
        );
        assert_eq!(split_count(&row(50.0, 15_000_000.0), &s, &t2()).unwrap(), 3);
        assert_eq!(split_count(&row(0.0, 0.0), &s, &t2()).unwrap(), 1);
    }

    #[test]
    fn missing_threshold() {
        let s = table2_schema();
        let t = SplitThresholds::new([("Employees", 50.0)]);
        assert!(matches!(
            split_count(&row(1.0, 1.0), &s, &t),
            Err(Error::MissingThreshold(a)) if a == "Payroll"
        ));
        let bad = SplitThresholds::new([("Employees", 0.0), ("Payroll", 1.0)]);
        assert!(matches!(
            split_count(&row(1.0, 1.0), &s, &bad),
            Err(Error::BadThreshold { .. })
        ));
    }

    #[test]
    fn greedy_twelve_by_five() {
        let mut out = [0.0; 3];
        decompose(12.0, 5.0, 3, &mut out);
        assert_eq!(out, [5.0, 5.0, 2.0]);
        let mut out = [0.0; 4];
        decompose(10.0, 5.0, 4, &mut out);
        assert_eq!(out, [5.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn table2_post_split() {
        let split = unit_split(&table2a(), &t2()).unwrap();
        let got: Vec<(u64, &str, f64, f64)> = split
            .rows()
            .iter()
            .map(|r| (r.id, r.labels[0].as_str(), r.measures[0], r.measures[1]))
            .collect();
        let m = 5_000_000.0;
        let expected = vec![
            (1, "Agriculture", 50.0, m),
            (1, "Agriculture", 50.0, m),
            (1, "Agriculture", 50.0, 0.0),
            (2, "Agriculture", 50.0, m),
            (2, "Agriculture", 0.0, m),
            (2, "Agriculture", 0.0, m),
            (3, "Mining", 50.0, m),
            (3, "Mining", 50.0, m),
            (4, "Mining", 50.0, m),
            (4, "Mining", 0.0, m),
            (5, "Retail", 20.0, 1_000_000.0),
        ];
        assert_eq!(got, expected);
        assert_eq!(split.distinct_origins(), 5);
        assert_eq!(
            split.split_counts(),
            vec![(1, 3), (2, 3), (3, 2), (4, 2), (5, 1)]
        );
    }

    #[test]
    fn small_rows_are_copied() {
        let t = table2a();
        let huge = SplitThresholds::new([("Employees", 1e9), ("Payroll", 1e12)]);
        let split = unit_split(&t, &huge).unwrap();
        assert_eq!(split.len(), t.len());
        for (a, b) in split.rows().iter().zip(t.rows()) {
            assert_eq!(a.id, b.id);
            assert!(a.same_values(b));
        }
    }

    fn example6() -> GroupedThresholds {
        GroupedThresholds {
            key: "Industry".into(),
            groups: BTreeMap::from([
                ("Agriculture".to_string(), t2()),
                ("Retail".to_string(), t2()),
                (
                    "Mining".to_string(),
                    SplitThresholds::new([("Employees", 50.0), ("Payroll", 10_000_000.0)]),
                ),
            ]),
            default: t2(),
        }
    }

    #[test]
    fn grouped_example6_counts() {
        let split = unit_split_grouped(&table2a(), &example6()).unwrap();
        assert_eq!(
            split.split_counts(),
            vec![(1, 3), (2, 3), (3, 2), (4, 1), (5, 1)]
        );
    }

    #[test]
    fn grouped_degenerate_matches_uniform() {
        let g = GroupedThresholds {
            key: "Industry".into(),
            groups: BTreeMap::new(),
            default: t2(),
        };
        let a = unit_split_grouped(&table2a(), &g).unwrap();
        let b = unit_split(&table2a(), &t2()).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn unmapped_group_uses_default() {
        // row 1 in mapped group "A" (Employees cap 10), row 2 in unmapped "B"
        // falling back to the default cap 4: ceil(25/10)=3, ceil(25/4)=7.
        let schema = Schema::new(vec![
            crate::table::Attribute::conditional("G"),
            crate::table::Attribute::measure("E"),
        ])
        .unwrap();
        let t = Table::new(
            schema,
            vec![
                Row::new(1, vec!["A".into()], vec![25.0]),
                Row::new(2, vec!["B".into()], vec![25.0]),
            ],
        )
        .unwrap();
        let g = GroupedThresholds {
            key: "G".into(),
            groups: BTreeMap::from([("A".to_string(), SplitThresholds::new([("E", 10.0)]))]),
            default: SplitThresholds::new([("E", 4.0)]),
        };
        let split = unit_split_grouped(&t, &g).unwrap();
        assert_eq!(split.split_counts(), vec![(1, 3), (2, 7)]);
        let b_parts: Vec<f64> = split.rows()[3..].iter().map(|r| r.measures[0]).collect();
        assert_eq!(b_parts, vec![4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 1.0]);
    }

    #[test]
    fn grouped_key_must_be_conditional() {
        let g = GroupedThresholds {
            key: "Employees".into(),
            groups: BTreeMap::new(),
            default: t2(),
        };
        assert!(matches!(
            unit_split_grouped(&table2a(), &g),
            Err(Error::KeyAttributeNotConditional(_))
        ));
    }

    #[test]
    fn split_csv_round_trip() {
        let split = unit_split(&table2a(), &t2()).unwrap();
        let csv = split.to_csv_string();
        assert!(csv.starts_with("ORIGIN_ROW_ID,Industry,Employees,Payroll\n"));
        let back = read_split_csv(csv.as_bytes(), table2_schema()).unwrap();
        assert_eq!(back.to_csv_string(), csv);
    }

    #[test]
    fn real_valued_caps_hold() {
        let schema = Schema::new(vec![crate::table::Attribute::measure("x")]).unwrap();
        let t = Table::new(
            schema,
            vec![
                Row::new(1, vec![], vec![0.3]),
                Row::new(2, vec![], vec![1.0000000000000002]),
                Row::new(3, vec![], vec![0.7]),
            ],
        )
        .unwrap();
        let th = SplitThresholds::new([("x", 0.1)]);
        let split = unit_split(&t, &th).unwrap();
        for (id, m) in split.split_counts() {
            let parts: Vec<f64> = split
                .rows()
                .iter()
                .filter(|r| r.id == id)
                .map(|r| r.measures[0])
                .collect();
            assert_eq!(parts.len(), m);
            assert!(parts.iter().all(|&p| (0.0..=0.1).contains(&p)));
            let total: f64 = parts.iter().sum();
            let orig = t.row(id).unwrap().measures[0];
            assert!((total - orig).abs() <= 4.0 * f64::EPSILON * orig);
        }
    }
}
