//! Tabular ingestion and preprocessing.
//!
//! Every column ends up as a single number in `[0, 1]`: missing values are
//! imputed with the training mode, categorical (and binary) columns are
//! ordinally encoded against their sorted category list, and all columns are
//! then min-max scaled with statistics fitted on the training split only.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("column `{0}` is empty")]
    EmptyColumn(String),
    #[error("column `{0}` has no observed values to fit")]
    AllMissing(String),
    #[error("split needs at least 10 rows, got {0}")]
    TooFewRows(usize),
    #[error("incremental plan needs at least 3 features, got {0}")]
    TooFewFeatures(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TabularError>;

/// One raw cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Text(String),
}

impl Cell {
    /// Parses a CSV field; empty strings and `?` are missing.
    pub fn parse(raw: &str) -> Self {
        let s = raw.trim();
        if s.is_empty() || s == "?" {
            Cell::Missing
        } else {
            Cell::Text(s.to_string())
        }
    }

    fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Text(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()),
            Cell::Missing => None,
        }
    }

    fn as_category(&self) -> Option<String> {
        match self {
            Cell::Number(v) => Some(v.to_string()),
            Cell::Text(s) => Some(s.clone()),
            Cell::Missing => None,
        }
    }
}

/// Raw dataset: named columns of cells plus binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    column_names: Vec<String>,
    columns: Vec<Vec<Cell>>,
    labels: Vec<u8>,
}

impl Table {
    pub fn new(column_names: Vec<String>, columns: Vec<Vec<Cell>>, labels: Vec<u8>) -> Result<Self> {
        if column_names.len() != columns.len() {
            return Err(TabularError::Schema(format!(
                "{} names for {} columns",
                column_names.len(),
                columns.len()
            )));
        }
        if let Some((name, col)) = column_names.iter().zip(&columns).find(|(_, c)| c.len() != labels.len()) {
            return Err(TabularError::Schema(format!(
                "column `{name}` has {} rows, labels have {}",
                col.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(TabularError::Schema("labels must be 0 or 1".into()));
        }
        Ok(Self {
            column_names,
            columns,
            labels,
        })
    }

    /// Table from a dense numeric matrix (row-major).
    pub fn from_numeric(column_names: Vec<String>, rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let n = column_names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); n];
        for row in rows {
            if row.len() != n {
                return Err(TabularError::Schema(format!("row of width {} for {n} columns", row.len())));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(Cell::Number(v));
            }
        }
        Self::new(column_names, columns, labels)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, j: usize) -> &[Cell] {
        &self.columns[j]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            column_names: self.column_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i].clone()).collect())
                .collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Table {
        Table {
            column_names: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Loads a comma-separated file whose first row is the header.
    pub fn from_csv_path(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, schema)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, schema: &DatasetSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let label_idx = match &schema.label {
            Some(name) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| TabularError::Schema(format!("label column `{name}` not found")))?,
            None => header
                .len()
                .checked_sub(1)
                .ok_or_else(|| TabularError::Schema("empty header".into()))?,
        };
        let feature_idx: Vec<usize> = (0..header.len())
            .filter(|&j| j != label_idx && !schema.drop.contains(&header[j]))
            .collect();
        let mut columns = vec![Vec::new(); feature_idx.len()];
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(TabularError::Schema(format!(
                    "row {} has {} fields, header has {}",
                    line + 2,
                    rec.len(),
                    header.len()
                )));
            }
            let raw_label = rec[label_idx].trim();
            if matches!(Cell::parse(raw_label), Cell::Missing) {
                return Err(TabularError::Schema(format!("row {} has a missing label", line + 2)));
            }
            labels.push(u8::from(raw_label == schema.positive));
            for (col, &j) in columns.iter_mut().zip(&feature_idx) {
                col.push(Cell::parse(&rec[j]));
            }
        }
        let names = feature_idx.iter().map(|&j| header[j].clone()).collect();
        Self::new(names, columns, labels)
    }
}

/// Dataset description: which column is the label, which value is positive,
/// and optional per-column kind overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    /// Defaults to the last column.
    pub label: Option<String>,
    pub positive: String,
    pub kinds: BTreeMap<String, ColumnKind>,
    pub drop: Vec<String>,
}

impl DatasetSchema {
    /// Parses the `key = value` schema format:
    ///
    /// ```text
    /// label = class
    /// positive = good
    /// kind.num_dependents = categorical
    /// drop = id, row_number
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        let mut schema = DatasetSchema::default();
        let mut positive = None;
        for (key, value) in map {
            match key.as_str() {
                "label" => schema.label = Some(value),
                "positive" => positive = Some(value),
                "drop" => {
                    schema.drop = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
                }
                k if k.starts_with("kind.") => {
                    let kind = value.parse()?;
                    schema.kinds.insert(k["kind.".len()..].to_string(), kind);
                }
                other => return Err(TabularError::Config(format!("unknown schema key `{other}`"))),
            }
        }
        schema.positive = positive.ok_or_else(|| TabularError::Config("schema is missing `positive`".into()))?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TabularError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numerical,
}

impl std::str::FromStr for ColumnKind {
    type Err = TabularError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(ColumnKind::Categorical),
            "numerical" => Ok(ColumnKind::Numerical),
            other => Err(TabularError::Config(format!("unknown column kind `{other}`"))),
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Categorical => "categorical",
            ColumnKind::Numerical => "numerical",
        })
    }
}

/// A column whose observed values all parse as numbers is numerical;
/// anything else is categorical.
pub fn infer_column_kind(name: &str, cells: &[Cell]) -> Result<ColumnKind> {
    if cells.is_empty() {
        return Err(TabularError::EmptyColumn(name.to_string()));
    }
    let numeric = cells.iter().all(|c| matches!(c, Cell::Missing) || c.as_number().is_some());
    Ok(if numeric {
        ColumnKind::Numerical
    } else {
        ColumnKind::Categorical
    })
}

pub fn infer_column_kinds(table: &Table) -> Result<Vec<ColumnKind>> {
    table
        .column_names
        .iter()
        .zip(&table.columns)
        .map(|(n, c)| infer_column_kind(n, c))
        .collect()
}

/// Fitted per-column state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub kind: ColumnKind,
    /// Sorted, duplicate-free (categorical columns only).
    pub categories: Vec<String>,
    /// Imputation value after encoding (category index or raw number).
    pub mode: f64,
    pub min: f64,
    pub max: f64,
}

impl ColumnStats {
    /// `min == max`: every value scales to 0.
    pub fn is_constant(&self) -> bool {
        self.min == self.max
    }

    fn encode(&self, cell: &Cell) -> f64 {
        match self.kind {
            ColumnKind::Numerical => cell.as_number().unwrap_or(self.mode),
            ColumnKind::Categorical => match cell.as_category() {
                Some(c) => self.categories.binary_search(&c).map(|i| i as f64).unwrap_or(self.mode),
                None => self.mode,
            },
        }
    }

    fn scale(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

/// Encoder, imputer and scaler fitted on a training table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    columns: Vec<ColumnStats>,
}

/// Most frequent value; ties go to the smallest.
fn mode_by<T: Clone + Ord>(values: impl Iterator<Item = T>) -> Option<T> {
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(v, _)| v)
}

impl Preprocessor {
    pub fn fit(table: &Table) -> Result<Self> {
        Self::fit_with_kinds(table, &BTreeMap::new())
    }

    /// Fit with forced kinds for the named columns.
    pub fn fit_with_kinds(table: &Table, overrides: &BTreeMap<String, ColumnKind>) -> Result<Self> {
        if let Some(unknown) = overrides.keys().find(|k| !table.column_names.contains(k)) {
            return Err(TabularError::Schema(format!("kind override for unknown column `{unknown}`")));
        }
        let mut columns = Vec::with_capacity(table.n_cols());
        for (name, cells) in table.column_names.iter().zip(&table.columns) {
            let kind = match overrides.get(name) {
                Some(&k) => {
                    if cells.is_empty() {
                        return Err(TabularError::EmptyColumn(name.clone()));
                    }
                    if k == ColumnKind::Numerical && cells.iter().any(|c| !matches!(c, Cell::Missing) && c.as_number().is_none()) {
                        return Err(TabularError::Schema(format!("column `{name}` forced numerical but has text values")));
                    }
                    k
                }
                None => infer_column_kind(name, cells)?,
            };
            columns.push(Self::fit_column(name, kind, cells)?);
        }
        Ok(Self { columns })
    }

    fn fit_column(name: &str, kind: ColumnKind, cells: &[Cell]) -> Result<ColumnStats> {
        let all_missing = || TabularError::AllMissing(name.to_string());
        let (categories, mode, encoded): (Vec<String>, f64, Vec<f64>) = match kind {
            ColumnKind::Numerical => {
                let observed: Vec<f64> = cells.iter().filter_map(Cell::as_number).collect();
                let mode = mode_by(observed.iter().map(|&v| OrdF64(v))).ok_or_else(all_missing)?;
                (Vec::new(), mode.0, observed)
            }
            ColumnKind::Categorical => {
                let observed: Vec<String> = cells.iter().filter_map(Cell::as_category).collect();
                let mode = mode_by(observed.iter().cloned()).ok_or_else(all_missing)?;
                let mut cats = observed.clone();
                cats.sort();
                cats.dedup();
                let idx = |c: &String| cats.binary_search(c).unwrap() as f64;
                let encoded = observed.iter().map(idx).collect();
                (cats.clone(), idx(&mode), encoded)
            }
        };
        // imputed cells take the mode, which already lies in the observed range
        let min = encoded.iter().copied().fold(f64::INFINITY, f64::min);
        let max = encoded.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(ColumnStats {
            name: name.to_string(),
            kind,
            categories,
            mode,
            min,
            max,
        })
    }

    pub fn columns(&self) -> &[ColumnStats] {
        &self.columns
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Encodes `table` column by column, in the table's own column order.
    pub fn transform(&self, table: &Table, split: Split) -> Result<EncodedMatrix> {
        let index: HashMap<&str, &ColumnStats> = self.columns.iter().map(|c| (c.name.as_str(), c)).collect();
        let stats: Vec<&ColumnStats> = table
            .column_names
            .iter()
            .map(|n| {
                index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| TabularError::Schema(format!("unknown column `{n}`")))
            })
            .collect::<Result<_>>()?;
        let (m, n) = (table.n_rows(), table.n_cols());
        let mut values = vec![0.0; m * n];
        for (j, (st, cells)) in stats.iter().zip(&table.columns).enumerate() {
            for (i, cell) in cells.iter().enumerate() {
                values[i * n + j] = st.scale(st.encode(cell));
            }
        }
        Ok(EncodedMatrix {
            rows: m,
            cols: n,
            values,
            labels: table.labels.clone(),
            column_names: table.column_names.clone(),
            split,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

/// Fully numeric feature matrix with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
    pub column_names: Vec<String>,
    pub split: Split,
}

impl EncodedMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> EncodedMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        EncodedMatrix {
            rows: rows.len(),
            cols: self.cols,
            values,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            column_names: self.column_names.clone(),
            split: self.split,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> EncodedMatrix {
        let mut values = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let row = self.row(i);
            values.extend(cols.iter().map(|&j| row[j]));
        }
        EncodedMatrix {
            rows: self.rows,
            cols: cols.len(),
            values,
            labels: self.labels.clone(),
            column_names: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
            split: self.split,
        }
    }
}

/// Row indices of a 70/10/20 split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Seeded shuffle into `floor(m/10)` validation rows, `ceil(m/5)` test
    /// rows and the remainder for training.
    pub fn new(m: usize, seed: u64) -> Result<Self> {
        if m < 10 {
            return Err(TabularError::TooFewRows(m));
        }
        let n_val = m / 10;
        let n_test = m.div_ceil(5);
        let n_train = m - n_val - n_test;
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            train: perm[..n_train].to_vec(),
            val: perm[n_train..n_train + n_val].to_vec(),
            test: perm[n_train + n_val..].to_vec(),
        })
    }
}

/// `(train, val, test)` tables.
pub fn split(table: &Table, seed: u64) -> Result<(Table, Table, Table)> {
    let idx = SplitIndices::new(table.n_rows(), seed)?;
    Ok((
        table.select_rows(&idx.train),
        table.select_rows(&idx.val),
        table.select_rows(&idx.test),
    ))
}

/// Three disjoint feature subsets and their cumulative unions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubsetPlan {
    pub subsets: [Vec<usize>; 3],
}

impl FeatureSubsetPlan {
    /// Seeded near-equal partition; earlier subsets absorb the remainder.
    pub fn new(n_features: usize, seed: u64) -> Result<Self> {
        if n_features < 3 {
            return Err(TabularError::TooFewFeatures(n_features));
        }
        let mut perm: Vec<usize> = (0..n_features).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (base, rem) = (n_features / 3, n_features % 3);
        let mut subsets: [Vec<usize>; 3] = Default::default();
        let mut start = 0;
        for (k, s) in subsets.iter_mut().enumerate() {
            let size = base + usize::from(k < rem);
            *s = perm[start..start + size].to_vec();
            s.sort_unstable();
            start += size;
        }
        Ok(Self { subsets })
    }

    /// Builds a plan from explicit subsets, validating the partition.
    pub fn from_subsets(n_features: usize, subsets: [Vec<usize>; 3]) -> Result<Self> {
        let mut seen = vec![false; n_features];
        for &j in subsets.iter().flatten() {
            if j >= n_features || std::mem::replace(&mut seen[j], true) {
                return Err(TabularError::Schema(format!("feature {j} repeated or out of range")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(TabularError::Schema("subsets do not cover every feature".into()));
        }
        Ok(Self { subsets })
    }

    pub fn n_features(&self) -> usize {
        self.subsets.iter().map(Vec::len).sum()
    }

    /// Columns of cumulative set `stage` (0-based): `s1 ++ ... ++ s(stage+1)`.
    /// Earlier stages' columns are always a prefix of later stages'.
    pub fn cumulative(&self, stage: usize) -> Vec<usize> {
        self.subsets[..=stage].iter().flatten().copied().collect()
    }
}
