//! Heterogeneous, partially observed data tables.
//!
//! A [`DataTable`] stores one optional [`Value`] per cell; a cell is observed
//! exactly when it holds a value. Every column carries a [`FeatureKind`] that
//! fixes which values are legal in it, plus an optional token dictionary used
//! to map textual CSV tokens onto levels.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GlrmError, Result};

/// Largest integer range inferred as ordinal.
pub const MAX_INFERRED_ORDINAL_LEVELS: usize = 20;
/// Largest number of distinct tokens inferred as categorical.
pub const MAX_INFERRED_CATEGORICAL_LEVELS: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Real,
    /// Stored as `Value::Bool`, read numerically as -1 / +1.
    Boolean,
    /// Levels `1..=d`.
    Ordinal(usize),
    /// Labels `1..=d`.
    Categorical(usize),
    /// Closed interval `[lo, hi]`.
    Interval,
    /// A full ordering of the items `1..=d`, best first.
    Permutation(usize),
    /// A set of observed pairwise preferences `(p, q)`: item `p` beat item `q`.
    Comparisons(usize),
}

impl FeatureKind {
    /// Number of levels for finite kinds.
    pub fn levels(&self) -> Option<usize> {
        match self {
            FeatureKind::Boolean => Some(2),
            FeatureKind::Ordinal(d) | FeatureKind::Categorical(d) => Some(*d),
            _ => None,
        }
    }

    /// Enumerates every value of a finite domain, smallest level first.
    pub fn domain(&self) -> Option<Vec<Value>> {
        match self {
            FeatureKind::Boolean => Some(vec![Value::Bool(false), Value::Bool(true)]),
            FeatureKind::Ordinal(d) | FeatureKind::Categorical(d) => {
                Some((1..=*d).map(Value::Level).collect())
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FeatureKind::Ordinal(d) | FeatureKind::Categorical(d) if *d < 2 => Err(
                GlrmError::Table(format!("{self} needs at least 2 levels")),
            ),
            FeatureKind::Permutation(d) | FeatureKind::Comparisons(d) if *d < 2 => Err(
                GlrmError::Table(format!("{self} needs at least 2 items")),
            ),
            _ => Ok(()),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let levels = || -> Result<usize> {
            arg.ok_or_else(|| GlrmError::Parse(format!("kind `{s}` needs a level count")))?
                .parse::<usize>()
                .map_err(|e| GlrmError::Parse(format!("kind `{s}`: {e}")))
        };
        let kind = match name {
            "real" => FeatureKind::Real,
            "boolean" => FeatureKind::Boolean,
            "ordinal" => FeatureKind::Ordinal(levels()?),
            "categorical" => FeatureKind::Categorical(levels()?),
            "interval" => FeatureKind::Interval,
            "permutation" => FeatureKind::Permutation(levels()?),
            "comparisons" => FeatureKind::Comparisons(levels()?),
            _ => return Err(GlrmError::Parse(format!("unknown feature kind `{s}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Real => write!(f, "real"),
            FeatureKind::Boolean => write!(f, "boolean"),
            FeatureKind::Ordinal(d) => write!(f, "ordinal:{d}"),
            FeatureKind::Categorical(d) => write!(f, "categorical:{d}"),
            FeatureKind::Interval => write!(f, "interval"),
            FeatureKind::Permutation(d) => write!(f, "permutation:{d}"),
            FeatureKind::Comparisons(d) => write!(f, "comparisons:{d}"),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = GlrmError;
    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::parse(s)
    }
}

/// A single observed cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Real(f64),
    Bool(bool),
    /// 1-based level of an ordinal or categorical feature.
    Level(usize),
    Interval(f64, f64),
    /// 1-based item indices, best first.
    Perm(Vec<usize>),
    /// 1-based `(winner, loser)` pairs.
    Pairs(Vec<(usize, usize)>),
}

impl Value {
    /// Numeric reading of scalar values: booleans as -1/+1, levels as integers.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(*x),
            Value::Bool(b) => Some(if *b { 1.0 } else { -1.0 }),
            Value::Level(l) => Some(*l as f64),
            _ => None,
        }
    }

    pub fn from_sign(x: f64) -> Value {
        Value::Bool(x >= 0.0)
    }

    fn conforms_to(&self, kind: &FeatureKind) -> std::result::Result<(), String> {
        match (kind, self) {
            (FeatureKind::Real, Value::Real(x)) if x.is_finite() => Ok(()),
            (FeatureKind::Real, Value::Real(x)) => Err(format!("non-finite real {x}")),
            (FeatureKind::Boolean, Value::Bool(_)) => Ok(()),
            (FeatureKind::Ordinal(d) | FeatureKind::Categorical(d), Value::Level(l)) => {
                if (1..=*d).contains(l) {
                    Ok(())
                } else {
                    Err(format!("level {l} outside 1..={d}"))
                }
            }
            (FeatureKind::Interval, Value::Interval(lo, hi)) => {
                if lo <= hi {
                    Ok(())
                } else {
                    Err(format!("interval {lo}:{hi} has lo > hi"))
                }
            }
            (FeatureKind::Permutation(d), Value::Perm(p)) => {
                let mut seen = vec![false; *d];
                if p.len() != *d {
                    return Err(format!("permutation has {} items, expected {d}", p.len()));
                }
                for &item in p {
                    if item == 0 || item > *d || seen[item - 1] {
                        return Err(format!("{p:?} is not a permutation of 1..={d}"));
                    }
                    seen[item - 1] = true;
                }
                Ok(())
            }
            (FeatureKind::Comparisons(d), Value::Pairs(pairs)) => {
                for &(p, q) in pairs {
                    if p == 0 || q == 0 || p > *d || q > *d || p == q {
                        return Err(format!("invalid comparison {p}>{q} for {d} items"));
                    }
                }
                Ok(())
            }
            (kind, value) => Err(format!("value {value:?} does not match kind {kind}")),
        }
    }
}

/// Column schema: header name, kind, and the token dictionary used for I/O.
///
/// For `Boolean` the dictionary is `[negative, positive]`; for ordinal and
/// categorical columns entry `l - 1` spells level `l`. Without a dictionary
/// values are written numerically.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: FeatureKind,
    pub tokens: Option<Vec<String>>,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        Column {
            name: name.into(),
            kind,
            tokens: None,
        }
    }

    fn format_value(&self, value: &Value) -> String {
        match value {
            Value::Real(x) => format!("{x}"),
            Value::Bool(b) => match &self.tokens {
                Some(t) => t[*b as usize].clone(),
                None => if *b { "1" } else { "-1" }.to_string(),
            },
            Value::Level(l) => match &self.tokens {
                Some(t) => t[*l - 1].clone(),
                None => l.to_string(),
            },
            Value::Interval(lo, hi) => format!("{lo}:{hi}"),
            Value::Perm(p) => p
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("|"),
            Value::Pairs(pairs) => pairs
                .iter()
                .map(|(p, q)| format!("{p}>{q}"))
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    fn parse_token(&self, token: &str) -> std::result::Result<Value, String> {
        let bad = |what: &str| format!("cannot parse `{token}` as {what}");
        let value = match &self.kind {
            FeatureKind::Real => Value::Real(token.parse::<f64>().map_err(|_| bad("real"))?),
            FeatureKind::Boolean => match &self.tokens {
                Some(t) if t[1] == token => Value::Bool(true),
                Some(t) if t[0] == token => Value::Bool(false),
                Some(_) => return Err(bad("boolean")),
                None => match token.parse::<f64>() {
                    Ok(x) if x == 1.0 => Value::Bool(true),
                    Ok(x) if x == -1.0 => Value::Bool(false),
                    _ => return Err(bad("boolean (-1/1)")),
                },
            },
            FeatureKind::Ordinal(_) | FeatureKind::Categorical(_) => match &self.tokens {
                Some(t) => match t.iter().position(|s| s == token) {
                    Some(p) => Value::Level(p + 1),
                    None => return Err(bad("level")),
                },
                None => Value::Level(parse_level(token).ok_or_else(|| bad("integer level"))?),
            },
            FeatureKind::Interval => {
                let (lo, hi) = token.split_once(':').ok_or_else(|| bad("interval lo:hi"))?;
                let lo = lo.trim().parse::<f64>().map_err(|_| bad("interval lo:hi"))?;
                let hi = hi.trim().parse::<f64>().map_err(|_| bad("interval lo:hi"))?;
                Value::Interval(lo, hi)
            }
            FeatureKind::Permutation(_) => Value::Perm(
                token
                    .split('|')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("permutation a|b|c"))?,
            ),
            FeatureKind::Comparisons(_) => {
                let mut pairs = Vec::new();
                for part in token.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                    let (p, q) = part.split_once('>').ok_or_else(|| bad("comparisons p>q;r>s"))?;
                    let p = p.trim().parse::<usize>().map_err(|_| bad("comparisons"))?;
                    let q = q.trim().parse::<usize>().map_err(|_| bad("comparisons"))?;
                    pairs.push((p, q));
                }
                Value::Pairs(pairs)
            }
        };
        value.conforms_to(&self.kind)?;
        Ok(value)
    }
}

fn parse_level(token: &str) -> Option<usize> {
    let x = token.parse::<f64>().ok()?;
    if x.fract() == 0.0 && x >= 1.0 && x < 1e9 {
        Some(x as usize)
    } else {
        None
    }
}

/// An `m x n` table of optionally observed, typed cells.
#[derive(Clone, Debug, PartialEq)]
pub struct DataTable {
    m: usize,
    columns: Vec<Column>,
    cells: Vec<Option<Value>>,
}

impl DataTable {
    /// Builds a table from row-major cells, validating every observed value
    /// against its column kind.
    pub fn new(columns: Vec<Column>, m: usize, cells: Vec<Option<Value>>) -> Result<Self> {
        let n = columns.len();
        if m == 0 || n == 0 {
            return Err(GlrmError::Table(format!("table must be non-empty, got {m}x{n}")));
        }
        if cells.len() != m * n {
            return Err(GlrmError::Shape(format!(
                "{} cells for a {m}x{n} table",
                cells.len()
            )));
        }
        for c in &columns {
            c.kind.validate()?;
        }
        for (idx, cell) in cells.iter().enumerate() {
            if let Some(v) = cell {
                let (row, column) = (idx / n, idx % n);
                v.conforms_to(&columns[column].kind)
                    .map_err(|message| GlrmError::Cell { row, column, message })?;
            }
        }
        Ok(DataTable { m, columns, cells })
    }

    /// Convenience constructor with generated column names `c1, c2, ...`.
    pub fn from_kinds(kinds: Vec<FeatureKind>, m: usize, cells: Vec<Option<Value>>) -> Result<Self> {
        let columns = kinds
            .into_iter()
            .enumerate()
            .map(|(j, k)| Column::new(format!("c{}", j + 1), k))
            .collect();
        DataTable::new(columns, m, cells)
    }

    /// A fully observed real table.
    pub fn from_real_matrix(a: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        let cells = (0..m * n)
            .map(|idx| Some(Value::Real(a[(idx / n, idx % n)])))
            .collect();
        DataTable::from_kinds(vec![FeatureKind::Real; n], m, cells)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn kind(&self, j: usize) -> &FeatureKind {
        &self.columns[j].kind
    }

    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.columns.iter().map(|c| c.kind.clone()).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Value> {
        self.cells[i * self.n() + j].as_ref()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_some()
    }

    /// |Ω|.
    pub fn n_observed(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Observed index pairs in row-major order.
    pub fn observed(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_some())
            .map(|(idx, _)| (idx / n, idx % n))
            .collect()
    }

    /// Column indices observed in row `i`.
    pub fn row_observed(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.is_observed(i, j)).collect()
    }

    /// Row indices observed in column `j`.
    pub fn column_observed(&self, j: usize) -> Vec<usize> {
        (0..self.m).filter(|&i| self.is_observed(i, j)).collect()
    }

    /// Observed values of column `j`.
    pub fn column_values(&self, j: usize) -> Vec<&Value> {
        (0..self.m).filter_map(|i| self.get(i, j)).collect()
    }

    /// A copy of the table with the listed cells marked unobserved.
    pub fn without(&self, removed: &[(usize, usize)]) -> DataTable {
        let mut out = self.clone();
        let n = self.n();
        for &(i, j) in removed {
            out.cells[i * n + j] = None;
        }
        out
    }

    /// Replaces cell `(i, j)`; the value must conform to the column kind.
    pub fn set(&mut self, i: usize, j: usize, value: Option<Value>) -> Result<()> {
        if let Some(v) = &value {
            v.conforms_to(self.kind(j)).map_err(|message| GlrmError::Cell {
                row: i,
                column: j,
                message,
            })?;
        }
        let n = self.n();
        self.cells[i * n + j] = value;
        Ok(())
    }
}

/// Reads a CSV file with a header row.
///
/// Cells equal to `na_token` (after trimming) are unobserved. Columns with a
/// `Some` hint are parsed as that kind; the rest are inferred:
///
/// 1. numeric with a fractional value: `Real`
/// 2. numeric values within {-1, 1}: `Boolean`
/// 3. exactly two distinct tokens: `Boolean`, lexicographically later token is +1
/// 4. integers in `1..=d`, `d <= 20`: `Ordinal(d)`
/// 5. other numeric columns: `Real`
/// 6. at most 50 distinct tokens: `Categorical` with a sorted dictionary
///
/// `Interval`, `Permutation` and `Comparisons` columns are never inferred.
pub fn read_csv(
    path: impl AsRef<Path>,
    na_token: &str,
    kind_hints: Option<&[Option<FeatureKind>]>,
) -> Result<DataTable> {
    let (header, rows) = read_raw(path.as_ref())?;
    let n = header.len();
    if let Some(h) = kind_hints {
        if h.len() != n {
            return Err(GlrmError::Shape(format!("{} kind hints for {n} columns", h.len())));
        }
    }
    let mut columns = Vec::with_capacity(n);
    for (j, name) in header.iter().enumerate() {
        let tokens: Vec<(usize, &str)> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r[j] != na_token)
            .map(|(i, r)| (i, r[j].as_str()))
            .collect();
        let column = match kind_hints.and_then(|h| h[j].clone()) {
            Some(kind) => hinted_column(name, kind, &tokens, j)?,
            None => infer_column(name, &tokens, j)?,
        };
        columns.push(column);
    }
    parse_rows(columns, &rows, na_token)
}

/// Reads a CSV file using an exact schema (kinds and token dictionaries),
/// as stored with a fitted model.
pub fn read_csv_with_schema(path: impl AsRef<Path>, na_token: &str, schema: &[Column]) -> Result<DataTable> {
    let (header, rows) = read_raw(path.as_ref())?;
    if header.len() != schema.len() {
        return Err(GlrmError::Shape(format!(
            "file has {} columns, schema has {}",
            header.len(),
            schema.len()
        )));
    }
    parse_rows(schema.to_vec(), &rows, na_token)
}

/// Writes the table as CSV; unobserved cells become `na_token`.
pub fn write_csv(table: &DataTable, path: impl AsRef<Path>, na_token: &str) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(table.columns.iter().map(|c| c.name.as_str()))?;
    for i in 0..table.m() {
        let record: Vec<String> = table
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| match table.get(i, j) {
                Some(v) => c.format_value(v),
                None => na_token.to_string(),
            })
            .collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_raw(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(GlrmError::Table("empty header".into()));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(GlrmError::Cell {
                row: i,
                column: record.len().min(header.len()),
                message: format!("ragged row: {} fields, header has {}", record.len(), header.len()),
            });
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(GlrmError::Table("no data rows".into()));
    }
    Ok((header, rows))
}

fn parse_rows(columns: Vec<Column>, rows: &[Vec<String>], na_token: &str) -> Result<DataTable> {
    let m = rows.len();
    let n = columns.len();
    let mut cells = Vec::with_capacity(m * n);
    for (i, row) in rows.iter().enumerate() {
        for (j, token) in row.iter().enumerate() {
            if token == na_token {
                cells.push(None);
            } else {
                let value = columns[j]
                    .parse_token(token)
                    .map_err(|message| GlrmError::Cell { row: i, column: j, message })?;
                cells.push(Some(value));
            }
        }
    }
    DataTable::new(columns, m, cells)
}

fn distinct<'a>(tokens: &[(usize, &'a str)]) -> BTreeSet<&'a str> {
    tokens.iter().map(|(_, t)| *t).collect()
}

fn hinted_column(name: &str, kind: FeatureKind, tokens: &[(usize, &str)], j: usize) -> Result<Column> {
    kind.validate()?;
    let mut column = Column::new(name, kind.clone());
    match kind {
        FeatureKind::Boolean => {
            let numeric_pm1 = tokens
                .iter()
                .all(|(_, t)| matches!(t.parse::<f64>(), Ok(x) if x == 1.0 || x == -1.0));
            if !numeric_pm1 {
                let set = distinct(tokens);
                if set.len() > 2 {
                    let third = set.iter().nth(2).unwrap();
                    let (row, _) = tokens.iter().find(|(_, t)| t == third).unwrap();
                    return Err(GlrmError::Cell {
                        row: *row,
                        column: j,
                        message: format!("boolean column has a third distinct token `{third}`"),
                    });
                }
                let mut dict: Vec<String> = set.iter().map(|s| s.to_string()).collect();
                if dict.len() == 1 {
                    dict.insert(0, "-1".to_string());
                }
                column.tokens = Some(dict);
            }
        }
        FeatureKind::Categorical(d) => {
            let all_levels = tokens
                .iter()
                .all(|(_, t)| parse_level(t).is_some_and(|l| l <= d));
            if !all_levels {
                let set = distinct(tokens);
                if set.len() > d {
                    let extra = set.iter().nth(d).unwrap();
                    let (row, _) = tokens.iter().find(|(_, t)| t == extra).unwrap();
                    return Err(GlrmError::Cell {
                        row: *row,
                        column: j,
                        message: format!("more than {d} distinct categories"),
                    });
                }
                let mut dict: Vec<String> = set.iter().map(|s| s.to_string()).collect();
                let mut filler = dict.len();
                while dict.len() < d {
                    filler += 1;
                    let candidate = format!("level{filler}");
                    if !dict.contains(&candidate) {
                        dict.push(candidate);
                    }
                }
                column.tokens = Some(dict);
            }
        }
        _ => {}
    }
    Ok(column)
}

fn infer_column(name: &str, tokens: &[(usize, &str)], j: usize) -> Result<Column> {
    if tokens.is_empty() {
        return Ok(Column::new(name, FeatureKind::Real));
    }
    let numbers: Option<Vec<f64>> = tokens.iter().map(|(_, t)| t.parse::<f64>().ok()).collect();
    let set = distinct(tokens);
    if let Some(xs) = &numbers {
        if xs.iter().any(|x| x.fract() != 0.0) {
            return Ok(Column::new(name, FeatureKind::Real));
        }
        if xs.iter().all(|&x| x == 1.0 || x == -1.0) {
            return Ok(Column::new(name, FeatureKind::Boolean));
        }
    }
    if set.len() == 2 {
        let mut column = Column::new(name, FeatureKind::Boolean);
        column.tokens = Some(set.iter().map(|s| s.to_string()).collect());
        return Ok(column);
    }
    if let Some(xs) = &numbers {
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        // Levels must also read back identically, so "2.0" style tokens stay real.
        let canonical = tokens.iter().all(|(_, t)| parse_level(t).is_some_and(|l| l.to_string() == *t));
        if min >= 1.0 && max >= 2.0 && max <= MAX_INFERRED_ORDINAL_LEVELS as f64 && canonical {
            return Ok(Column::new(name, FeatureKind::Ordinal(max as usize)));
        }
        return Ok(Column::new(name, FeatureKind::Real));
    }
    if set.len() <= MAX_INFERRED_CATEGORICAL_LEVELS && set.len() >= 2 {
        let mut column = Column::new(name, FeatureKind::Categorical(set.len()));
        column.tokens = Some(set.iter().map(|s| s.to_string()).collect());
        return Ok(column);
    }
    let row = tokens[0].0;
    Err(GlrmError::Cell {
        row,
        column: j,
        message: format!(
            "cannot infer a kind for column `{name}` ({} distinct tokens); pass a kind hint",
            set.len()
        ),
    })
}

/// Splits Ω into a training table and a held-out set of size
/// `round(fraction * |Ω|)`, drawn uniformly without replacement.
pub fn split_holdout(table: &DataTable, fraction: f64, seed: u64) -> Result<(DataTable, Vec<(usize, usize)>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(GlrmError::Config(format!("holdout fraction {fraction} not in (0, 1)")));
    }
    let observed = table.observed();
    let total = observed.len();
    if total < 2 {
        return Err(GlrmError::DegenerateSplit(format!("only {total} observed entries")));
    }
    let held = (fraction * total as f64).round() as usize;
    if held == 0 || held == total {
        return Err(GlrmError::DegenerateSplit(format!(
            "fraction {fraction} of {total} observed entries rounds to {held}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, total, held).into_vec();
    picked.sort_unstable();
    let heldout: Vec<(usize, usize)> = picked.into_iter().map(|p| observed[p]).collect();
    Ok((table.without(&heldout), heldout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn na_cells_are_unobserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "a.csv", "x,y\n1.5,2.5\nNA,3.5\n4.5,5.5\n");
        let t = read_csv(&p, "NA", None).unwrap();
        assert_eq!((t.m(), t.n()), (3, 2));
        assert_eq!(t.n_observed(), 5);
        assert!(!t.is_observed(1, 0));
    }

    #[test]
    fn two_tokens_become_boolean_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "b.csv", "ans\nyes\nno\nyes\n");
        let t = read_csv(&p, "NA", None).unwrap();
        assert_eq!(t.kind(0), &FeatureKind::Boolean);
        assert_eq!(t.get(0, 0), Some(&Value::Bool(true)));
        assert_eq!(t.get(1, 0), Some(&Value::Bool(false)));
        assert_eq!(t.columns()[0].tokens.as_deref(), Some(&["no".to_string(), "yes".to_string()][..]));
    }

    #[test]
    fn ordinal_hint_keeps_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "o.csv", "lvl\n1\n2\n3\n2\n1\n");
        let t = read_csv(&p, "NA", Some(&[Some(FeatureKind::Ordinal(3))])).unwrap();
        let levels: Vec<_> = (0..5).map(|i| t.get(i, 0).cloned().unwrap()).collect();
        assert_eq!(
            levels,
            [1, 2, 3, 2, 1].iter().map(|&l| Value::Level(l)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn inference_rules() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            &dir,
            "mix.csv",
            "r,pm,ord,big,cat\n0.5,1,1,100,red\n1,-1,4,200,green\n2,1,2,300,blue\n",
        );
        let t = read_csv(&p, "NA", None).unwrap();
        assert_eq!(
            t.kinds(),
            vec![
                FeatureKind::Real,
                FeatureKind::Boolean,
                FeatureKind::Ordinal(4),
                FeatureKind::Real,
                FeatureKind::Categorical(3)
            ]
        );
        assert_eq!(t.get(0, 4), Some(&Value::Level(3)));
    }

    #[test]
    fn hinted_parse_error_names_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "e.csv", "a,b\n1,2\n3,x\n");
        let err = read_csv(&p, "NA", Some(&[None, Some(FeatureKind::Real)])).unwrap_err();
        match err {
            GlrmError::Cell { row, column, .. } => assert_eq!((row, column), (1, 1)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "r.csv", "a,b\n1,2\n3\n");
        assert!(matches!(read_csv(&p, "NA", None), Err(GlrmError::Cell { row: 1, .. })));
    }

    #[test]
    fn interval_and_structured_hints() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "s.csv", "iv,perm,cmp\n0:1,2|1|3,1>2;3>1\n2:2,NA,NA\n");
        let hints = [
            Some(FeatureKind::Interval),
            Some(FeatureKind::Permutation(3)),
            Some(FeatureKind::Comparisons(3)),
        ];
        let t = read_csv(&p, "NA", Some(&hints)).unwrap();
        assert_eq!(t.get(0, 0), Some(&Value::Interval(0.0, 1.0)));
        assert_eq!(t.get(0, 1), Some(&Value::Perm(vec![2, 1, 3])));
        assert_eq!(t.get(0, 2), Some(&Value::Pairs(vec![(1, 2), (3, 1)])));
        let bad = write_file(&dir, "bad.csv", "iv\n3:1\n");
        assert!(read_csv(&bad, "NA", Some(&[Some(FeatureKind::Interval)])).is_err());
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            &dir,
            "rt.csv",
            "r,b,o,c\n0.25,yes,3,red\nNA,no,NA,blue\n-1.5,NA,1,NA\n1e-3,yes,2,green\n",
        );
        let t = read_csv(&p, "NA", None).unwrap();
        let out = dir.path().join("out.csv");
        write_csv(&t, &out, "NA").unwrap();
        assert_eq!(read_csv(&out, "NA", None).unwrap(), t);
        assert_eq!(read_csv_with_schema(&out, "NA", t.columns()).unwrap(), t);
    }

    fn table_with(n_obs: usize) -> DataTable {
        let cells = (0..n_obs).map(|i| Some(Value::Real(i as f64))).collect();
        DataTable::from_kinds(vec![FeatureKind::Real; 1], n_obs, cells).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let t = table_with(100);
        let (train, held) = split_holdout(&t, 0.1, 3).unwrap();
        assert_eq!(held.len(), 10);
        assert_eq!(train.n_observed(), 90);
        let (_, again) = split_holdout(&t, 0.1, 3).unwrap();
        assert_eq!(held, again);
    }

    #[test]
    fn split_is_partition() {
        let t = table_with(4);
        let (train, held) = split_holdout(&t, 0.5, 11).unwrap();
        assert_eq!(held.len(), 2);
        let mut all: Vec<_> = train.observed().into_iter().chain(held.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, t.observed());
    }

    #[test]
    fn degenerate_split_errors() {
        let t = table_with(4);
        assert!(matches!(split_holdout(&t, 0.01, 0), Err(GlrmError::DegenerateSplit(_))));
        assert!(matches!(split_holdout(&t, 0.99, 0), Err(GlrmError::DegenerateSplit(_))));
    }

    #[test]
    fn invalid_cells_rejected_at_construction() {
        let err = DataTable::from_kinds(vec![FeatureKind::Ordinal(3)], 1, vec![Some(Value::Level(4))]);
        assert!(err.is_err());
        let err = DataTable::from_kinds(vec![FeatureKind::Categorical(1)], 1, vec![None]);
        assert!(err.is_err());
    }
}
