//! Tabular data model: schemas with conditional and measure attributes,
//! immutable multiset tables keyed by stable row ids, and CSV I/O.
//!
//! Conditional attributes are opaque labels used for grouping and filtering.
//! Measure attributes are finite, non-negative reals that get aggregated.
//! Rows are equal when their ids are equal; duplicate value tuples are fine.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type RowId = u64;

/// Column holding the row id in raw-table CSVs.
pub const ROW_ID_COLUMN: &str = "ROW_ID";
/// Column holding the origin row id in split-table CSVs.
pub const ORIGIN_ROW_ID_COLUMN: &str = "ORIGIN_ROW_ID";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Conditional,
    Measure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn conditional(name: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Conditional,
        }
    }

    pub fn measure(name: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Measure,
        }
    }
}

/// Ordered attribute list. Rows store conditional labels and measure values
/// in two vectors, each following the order the attributes appear here.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    attributes: Vec<Attribute>,
    conditionals: Vec<usize>,
    measures: Vec<usize>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = HashSet::new();
        for attr in &attributes {
            if attr.name.is_empty() {
                return Err(Error::InvalidSchema("empty attribute name".into()));
            }
            if attr.name == ROW_ID_COLUMN || attr.name == ORIGIN_ROW_ID_COLUMN {
                return Err(Error::InvalidSchema(format!(
                    "`{}` is reserved for row ids",
                    attr.name
                )));
            }
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute `{}`",
                    attr.name
                )));
            }
        }
        let conditionals = positions(&attributes, AttributeKind::Conditional);
        let measures = positions(&attributes, AttributeKind::Measure);
        Ok(Schema {
            attributes,
            conditionals,
            measures,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn conditional_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.conditionals
            .iter()
            .map(move |&i| self.attributes[i].name.as_str())
    }

    pub fn measure_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.measures
            .iter()
            .map(move |&i| self.attributes[i].name.as_str())
    }

    pub fn num_conditionals(&self) -> usize {
        self.conditionals.len()
    }

    pub fn num_measures(&self) -> usize {
        self.measures.len()
    }

    /// Position of a conditional attribute within `Row::labels`.
    pub fn conditional_index(&self, name: &str) -> Option<usize> {
        self.conditionals
            .iter()
            .position(|&i| self.attributes[i].name == name)
    }

    /// Position of a measure attribute within `Row::measures`.
    pub fn measure_index(&self, name: &str) -> Option<usize> {
        self.measures
            .iter()
            .position(|&i| self.attributes[i].name == name)
    }

    pub fn require_conditional(&self, name: &str) -> Result<usize> {
        match self.attribute(name) {
            None => Err(Error::SchemaMismatch(format!("unknown attribute `{name}`"))),
            Some(a) if a.kind != AttributeKind::Conditional => {
                Err(Error::KeyAttributeNotConditional(name.to_string()))
            }
            Some(_) => Ok(self.conditional_index(name).expect("conditional present")),
        }
    }

    pub fn require_measure(&self, name: &str) -> Result<usize> {
        match self.attribute(name) {
            None => Err(Error::SchemaMismatch(format!("unknown attribute `{name}`"))),
            Some(a) if a.kind != AttributeKind::Measure => Err(Error::SchemaMismatch(format!(
                "`{name}` is not a measure attribute"
            ))),
            Some(_) => Ok(self.measure_index(name).expect("measure present")),
        }
    }
}

fn positions(attributes: &[Attribute], kind: AttributeKind) -> Vec<usize> {
    attributes
        .iter()
        .enumerate()
        .filter(|(_, a)| a.kind == kind)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Debug)]
pub struct Row {
    pub id: RowId,
    pub labels: Vec<String>,
    pub measures: Vec<f64>,
}

impl Row {
    pub fn new(id: RowId, labels: Vec<String>, measures: Vec<f64>) -> Self {
        Row {
            id,
            labels,
            measures,
        }
    }

    pub fn label(&self, schema: &Schema, name: &str) -> Option<&str> {
        schema
            .conditional_index(name)
            .and_then(|i| self.labels.get(i))
            .map(String::as_str)
    }

    pub fn measure(&self, schema: &Schema, name: &str) -> Option<f64> {
        schema
            .measure_index(name)
            .and_then(|i| self.measures.get(i))
            .copied()
    }

    /// Value-wise comparison, ignoring the id.
    pub fn same_values(&self, other: &Row) -> bool {
        self.labels == other.labels
            && self.measures.len() == other.measures.len()
            && self
                .measures
                .iter()
                .zip(&other.measures)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn check_shape(&self, schema: &Schema) -> Result<()> {
        if self.labels.len() != schema.num_conditionals()
            || self.measures.len() != schema.num_measures()
        {
            return Err(Error::SchemaMismatch(format!(
                "row {} has {} labels and {} measures, schema expects {} and {}",
                self.id,
                self.labels.len(),
                self.measures.len(),
                schema.num_conditionals(),
                schema.num_measures()
            )));
        }
        Ok(())
    }
}

impl PartialEq for Row {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for Row {}

/// Immutable multiset of rows with unique ids.
#[derive(Clone, Debug)]
pub struct Table {
    schema: Arc<Schema>,
    rows: Vec<Row>,
}

impl Table {
    /// Builds a table, rejecting it if [`validate`] reports any violation.
    pub fn new(schema: Schema, rows: Vec<Row>) -> Result<Self> {
        let table = Table::from_parts(Arc::new(schema), rows);
        validate(&table).map_err(|v| Error::Invalid(join_violations(&v)))?;
        Ok(table)
    }

    /// Builds a table without validation.
    pub fn from_parts(schema: Arc<Schema>, rows: Vec<Row>) -> Self {
        Table { schema, rows }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
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

    pub fn row(&self, id: RowId) -> Option<&Row> {
        self.rows.iter().find(|r| r.id == id)
    }

    /// Rows satisfying `keep`, sharing this table's schema.
    pub fn filter(&self, keep: impl Fn(&Row) -> bool) -> Table {
        Table {
            schema: Arc::clone(&self.schema),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.schema, ROW_ID_COLUMN, &self.rows, None)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateRowId,
    WrongArity,
    NonFiniteMeasure,
    NegativeMeasure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub row_id: RowId,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row_id, self.message)
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks every table invariant and returns all violations found.
pub fn validate(table: &Table) -> std::result::Result<(), Vec<Violation>> {
    let schema = table.schema();
    let mut violations = Vec::new();
    let mut seen = HashSet::with_capacity(table.len());
    for row in table.rows() {
        if !seen.insert(row.id) {
            violations.push(Violation {
                row_id: row.id,
                kind: ViolationKind::DuplicateRowId,
                message: format!("duplicate row id {}", row.id),
            });
        }
        if let Err(e) = row.check_shape(schema) {
            violations.push(Violation {
                row_id: row.id,
                kind: ViolationKind::WrongArity,
                message: e.to_string(),
            });
            continue;
        }
        for (name, &value) in schema.measure_names().zip(&row.measures) {
            if !value.is_finite() {
                violations.push(Violation {
                    row_id: row.id,
                    kind: ViolationKind::NonFiniteMeasure,
                    message: format!("measure `{name}` is not finite ({value})"),
                });
            } else if value < 0.0 {
                violations.push(Violation {
                    row_id: row.id,
                    kind: ViolationKind::NegativeMeasure,
                    message: format!("measure `{name}` is negative ({value})"),
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: Schema) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reads a raw table. A `ROW_ID` column is optional; without it ids are
/// assigned 1, 2, ... in file order. Lines starting with `#` are comments.
pub fn read_csv<R: Read>(reader: R, schema: Schema) -> Result<Table> {
    let (ids, rows) = read_rows(reader, &schema, ROW_ID_COLUMN)?;
    let rows = match ids {
        IdSource::Explicit => rows,
        IdSource::Sequential => rows
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.id = i as RowId + 1;
                r
            })
            .collect(),
    };
    Table::new(schema, rows)
}

pub(crate) enum IdSource {
    Explicit,
    Sequential,
}

pub(crate) fn read_rows<R: Read>(
    reader: R,
    schema: &Schema,
    id_column: &str,
) -> Result<(IdSource, Vec<Row>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::None)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let id_col = find(id_column);
    let mut label_cols = Vec::with_capacity(schema.num_conditionals());
    for name in schema.conditional_names() {
        label_cols.push(find(name).ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
            context: "csv header".into(),
        })?);
    }
    let mut measure_cols = Vec::with_capacity(schema.num_measures());
    for name in schema.measure_names() {
        measure_cols.push(find(name).ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
            context: "csv header".into(),
        })?);
    }
    for h in headers.iter() {
        if h != id_column && schema.attribute(h).is_none() {
            return Err(Error::SchemaMismatch(format!(
                "csv column `{h}` is not in the schema"
            )));
        }
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id = match id_col {
            Some(c) => record[c]
                .trim()
                .parse::<RowId>()
                .map_err(|e| Error::ParseFailure {
                    line,
                    column: id_column.to_string(),
                    message: format!("`{}`: {e}", &record[c]),
                })?,
            None => 0,
        };
        let labels = label_cols.iter().map(|&c| record[c].to_string()).collect();
        let mut measures = Vec::with_capacity(measure_cols.len());
        for (name, &c) in schema.measure_names().zip(&measure_cols) {
            let raw = record[c].trim();
            let value: f64 = raw.parse().map_err(|_| Error::ParseFailure {
                line,
                column: name.to_string(),
                message: format!("`{raw}` is not a decimal number"),
            })?;
            if !value.is_finite() {
                return Err(Error::ParseFailure {
                    line,
                    column: name.to_string(),
                    message: format!("`{raw}` is not finite"),
                });
            }
            if value < 0.0 {
                return Err(Error::NegativeMeasure {
                    row_id: if id_col.is_some() {
                        id
                    } else {
                        rows.len() as RowId + 1
                    },
                    column: name.to_string(),
                    value,
                });
            }
            measures.push(value);
        }
        rows.push(Row::new(id, labels, measures));
    }
    let source = if id_col.is_some() {
        IdSource::Explicit
    } else {
        IdSource::Sequential
    };
    Ok((source, rows))
}

pub(crate) fn write_rows<W: Write>(
    writer: W,
    schema: &Schema,
    id_column: &str,
    rows: &[Row],
    comment: Option<&str>,
) -> Result<()> {
    let mut writer = writer;
    if let Some(c) = comment {
        writeln!(writer, "# {c}").map_err(|e| Error::io("<csv writer>", e))?;
    }
    let mut wtr = csv_writer(writer);
    let mut header = Vec::with_capacity(schema.attributes().len() + 1);
    header.push(id_column.to_string());
    header.extend(schema.attributes().iter().map(|a| a.name.clone()));
    wtr.write_record(&header)?;

    let mut record = Vec::with_capacity(header.len());
    for row in rows {
        record.clear();
        record.push(row.id.to_string());
        let (mut li, mut mi) = (0, 0);
        for attr in schema.attributes() {
            match attr.kind {
                AttributeKind::Conditional => {
                    record.push(row.labels[li].clone());
                    li += 1;
                }
                AttributeKind::Measure => {
                    record.push(format_number(row.measures[mi]));
                    mi += 1;
                }
            }
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// CSV writer used for every output: `\n` line endings, minimal quoting.
pub(crate) fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer)
}

/// Shortest decimal that parses back to the same `f64`; integers print
/// without a fractional part.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

/// Parses a schema written as `name:kind,name:kind`, where kind is
/// `conditional` (or `c`) or `measure` (or `m`).
pub fn parse_schema_spec(spec: &str) -> Result<Schema> {
    let mut attrs = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, kind) = part
            .rsplit_once(':')
            .ok_or_else(|| Error::InvalidSchema(format!("`{part}` lacks `:kind`")))?;
        let kind = match kind.trim() {
            "conditional" | "c" => AttributeKind::Conditional,
            "measure" | "m" => AttributeKind::Measure,
            other => {
                return Err(Error::InvalidSchema(format!(
                    "unknown attribute kind `{other}`"
                )))
            }
        };
        attrs.push(Attribute {
            name: name.trim().to_string(),
            kind,
        });
    }
    Schema::new(attrs)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TABLE2A_CSV: &str = "ROW_ID,Industry,Employees,Payroll\n\
        1,Agriculture,150,10000000\n\
        2,Agriculture,50,15000000\n\
        3,Mining,100,10000000\n\
        4,Mining,50,10000000\n\
        5,Retail,20,1000000\n";

    pub(crate) fn table2_schema() -> Schema {
        Schema::new(vec![
            Attribute::conditional("Industry"),
            Attribute::measure("Employees"),
            Attribute::measure("Payroll"),
        ])
        .unwrap()
    }

    pub(crate) fn table2a() -> Table {
        read_csv(TABLE2A_CSV.as_bytes(), table2_schema()).unwrap()
    }

    #[test]
    fn loads_pre_split_table() {
        let t = table2a();
        assert_eq!(t.len(), 5);
        assert!(validate(&t).is_ok());
        let r1 = t.row(1).unwrap();
        assert_eq!(r1.label(t.schema(), "Industry"), Some("Agriculture"));
        assert_eq!(r1.measure(t.schema(), "Payroll"), Some(10_000_000.0));
    }

    #[test]
    fn empty_csv_with_header() {
        let t = read_csv(
            "ROW_ID,Industry,Employees,Payroll\n".as_bytes(),
            table2_schema(),
        )
        .unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn negative_measure_rejected() {
        let csv = "ROW_ID,Industry,Employees,Payroll\n7,Retail,-1,5\n";
        match read_csv(csv.as_bytes(), table2_schema()) {
            Err(Error::NegativeMeasure { row_id, column, .. }) => {
                assert_eq!(row_id, 7);
                assert_eq!(column, "Employees");
            }
            other => panic!("expected NegativeMeasure, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_parse_failure() {
        let csv = "ROW_ID,Industry,Employees\n1,Retail,5\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), table2_schema()),
            Err(Error::MissingColumn { column, .. }) if column == "Payroll"
        ));
        let csv = "ROW_ID,Industry,Employees,Payroll\n1,Retail,5,\"1,000\"\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), table2_schema()),
            Err(Error::ParseFailure { column, line: 2, .. }) if column == "Payroll"
        ));
        let csv = "ROW_ID,Industry,Employees,Payroll\n1,Retail,inf,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), table2_schema()),
            Err(Error::ParseFailure { .. })
        ));
    }

    #[test]
    fn sequential_ids_when_absent() {
        let csv = "Industry,Employees,Payroll\nRetail,5,1\nRetail,5,1\n";
        let t = read_csv(csv.as_bytes(), table2_schema()).unwrap();
        let ids: Vec<_> = t.rows().iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![1, 2]);
        // duplicate tuples are a multiset, not a violation
        assert!(t.rows()[0].same_values(&t.rows()[1]));
    }

    #[test]
    fn validate_reports_duplicates_and_non_finite() {
        let schema = Arc::new(table2_schema());
        let rows = vec![
            Row::new(1, vec!["A".into()], vec![1.0, 2.0]),
            Row::new(1, vec!["A".into()], vec![1.0, 2.0]),
            Row::new(3, vec!["B".into()], vec![f64::NAN, 2.0]),
            Row::new(4, vec!["B".into()], vec![1.0, f64::INFINITY]),
        ];
        let t = Table::from_parts(schema, rows);
        let v = validate(&t).unwrap_err();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0].kind, ViolationKind::DuplicateRowId);
        assert_eq!(v[0].row_id, 1);
        assert_eq!(v[1].kind, ViolationKind::NonFiniteMeasure);
        assert_eq!(v[1].row_id, 3);
        assert_eq!(v[2].row_id, 4);
    }

    #[test]
    fn schema_rejects_duplicates_and_reserved() {
        assert!(Schema::new(vec![Attribute::measure("a"), Attribute::measure("a")]).is_err());
        assert!(Schema::new(vec![Attribute::measure("ROW_ID")]).is_err());
        let s = parse_schema_spec("Industry:conditional, Employees:m").unwrap();
        assert_eq!(s.require_measure("Employees").unwrap(), 0);
        assert!(matches!(
            s.require_conditional("Employees"),
            Err(Error::KeyAttributeNotConditional(_))
        ));
    }

    #[test]
    fn csv_writes_integers_plainly() {
        let t = table2a();
        let out = t.to_csv_string();
        assert!(out.starts_with("ROW_ID,Industry,Employees,Payroll\n1,Agriculture,150,10000000\n"));
    }
}
