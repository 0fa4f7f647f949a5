//! Text model files.
//!
//! Layout (`glrm-model v1`), one record per line, fields separated by tabs:
//!
//! ```text
//! glrm-model v1
//! dims      m  n  k  k_eff  d
//! offset    true|false
//! scaling   true|false
//! row_regs  count          followed by `count` regularizer lines
//! col_regs  count          followed by `count` regularizer lines
//! columns   n              followed by n lines: name kind loss sigma2 ntokens tokens...
//! x                        followed by m rows of k_eff numbers
//! y                        followed by k_eff rows of d numbers
//! end
//! ```
//!
//! Names and tokens escape backslash, tab, newline and carriage return as
//! `\\`, `\t`, `\n`, `\r`. Numbers are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::{Column, FeatureKind};
use crate::error::{GlrmError, Result};
use crate::losses::LossSpec;
use crate::model::{Factors, GlrmProblem, ModelSpec, embedding_offsets};
use crate::regularizers::RegSpec;

pub const MAGIC: &str = "glrm-model v1";

/// Everything needed to rebuild a fitted problem on new data.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub spec: ModelSpec,
    pub columns: Vec<Column>,
    pub factors: Factors,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(GlrmError::ModelFormat(format!("bad escape `\\{}` in `{s}`", other.unwrap_or(' ')))),
        }
    }
    Ok(out)
}

fn write_matrix(out: &mut String, mat: &DMatrix<f64>) {
    for r in 0..mat.nrows() {
        let row: Vec<String> = mat.row(r).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
}

/// Serializes a fitted model.
pub fn model_to_string(problem: &GlrmProblem, f: &Factors) -> Result<String> {
    problem.check_shapes(f)?;
    let spec = problem.spec();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(
        out,
        "dims\t{}\t{}\t{}\t{}\t{}",
        problem.m(),
        problem.n(),
        problem.k(),
        problem.k_eff(),
        problem.d()
    );
    let _ = writeln!(out, "offset\t{}", spec.offset);
    let _ = writeln!(out, "scaling\t{}", spec.scaling);
    for (label, regs) in [("row_regs", &spec.row_regs), ("col_regs", &spec.col_regs)] {
        let _ = writeln!(out, "{label}\t{}", regs.len());
        for r in regs {
            let _ = writeln!(out, "{r}");
        }
    }
    let _ = writeln!(out, "columns\t{}", problem.n());
    for (j, col) in problem.table().columns().iter().enumerate() {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{:e}",
            escape(&col.name),
            col.kind,
            problem.loss(j),
            f.sigma2[j]
        );
        match &col.tokens {
            Some(tokens) => {
                let _ = write!(out, "\t{}", tokens.len());
                for t in tokens {
                    let _ = write!(out, "\t{}", escape(t));
                }
            }
            None => out.push_str("\t-"),
        }
        out.push('\n');
    }
    out.push_str("x\n");
    write_matrix(&mut out, &f.x);
    out.push_str("y\n");
    write_matrix(&mut out, &f.y);
    out.push_str("end\n");
    Ok(out)
}

pub fn save_model(problem: &GlrmProblem, f: &Factors, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_string(problem, f)?)?;
    Ok(())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| GlrmError::ModelFormat(format!("file ends before {what}")))
    }

    fn record(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next(key)?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] != key {
            return Err(GlrmError::ModelFormat(format!("line {n}: expected `{key}`, found `{}`", fields[0])));
        }
        Ok((n, fields[1..].to_vec()))
    }
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| GlrmError::ModelFormat(format!("line {line}: `{s}`: {e}")))
}

fn one<'a>(line: usize, fields: &[&'a str]) -> Result<&'a str> {
    match fields {
        [v] => Ok(v),
        _ => Err(GlrmError::ModelFormat(format!("line {line}: expected one field, found {}", fields.len()))),
    }
}

fn read_matrix(lines: &mut Lines<'_>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut mat = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let (n, line) = lines.next("the end of a factor matrix")?;
        let fields: Vec<&str> = if cols == 0 && line.is_empty() { vec![] } else { line.split('\t').collect() };
        if fields.len() != cols {
            return Err(GlrmError::ModelFormat(format!("line {n}: expected {cols} numbers, found {}", fields.len())));
        }
        for (c, v) in fields.iter().enumerate() {
            mat[(r, c)] = num(n, v)?;
        }
    }
    Ok(mat)
}

/// Parses a model file body.
pub fn model_from_str(text: &str) -> Result<SavedModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, magic) = lines.next("the header")?;
    if magic != MAGIC {
        return Err(GlrmError::ModelFormat(format!("unsupported header `{magic}`, expected `{MAGIC}`")));
    }
    let (n0, dims) = lines.record("dims")?;
    if dims.len() != 5 {
        return Err(GlrmError::ModelFormat(format!("line {n0}: dims needs 5 fields")));
    }
    let [m, n, k, k_eff, d] = [0, 1, 2, 3, 4].map(|i| num::<usize>(n0, dims[i]));
    let (m, n, k, k_eff, d) = (m?, n?, k?, k_eff?, d?);
    let (ln, f) = lines.record("offset")?;
    let offset: bool = num(ln, one(ln, &f)?)?;
    let (ln, f) = lines.record("scaling")?;
    let scaling: bool = num(ln, one(ln, &f)?)?;
    let mut regs = Vec::new();
    for key in ["row_regs", "col_regs"] {
        let (ln, f) = lines.record(key)?;
        let count: usize = num(ln, one(ln, &f)?)?;
        let mut list = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, line) = lines.next(key)?;
            list.push(RegSpec::parse(line, 0.0).map_err(|e| GlrmError::ModelFormat(format!("line {ln}: {e}")))?);
        }
        regs.push(list);
    }
    let col_regs = regs.pop().unwrap();
    let row_regs = regs.pop().unwrap();
    let (ln, f) = lines.record("columns")?;
    let ncols: usize = num(ln, one(ln, &f)?)?;
    if ncols != n {
        return Err(GlrmError::ModelFormat(format!("line {ln}: {ncols} columns but dims say {n}")));
    }
    let mut columns = Vec::with_capacity(n);
    let mut losses = Vec::with_capacity(n);
    let mut sigma2 = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, line) = lines.next("a column record")?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 5 {
            return Err(GlrmError::ModelFormat(format!("line {ln}: column record needs at least 5 fields")));
        }
        let wrap = |e: GlrmError| GlrmError::ModelFormat(format!("line {ln}: {e}"));
        let kind = FeatureKind::parse(fields[1]).map_err(wrap)?;
        let loss = LossSpec::parse(fields[2], Some(&kind)).map_err(wrap)?;
        sigma2.push(num::<f64>(ln, fields[3])?);
        let tokens = if fields[4] == "-" {
            if fields.len() != 5 {
                return Err(GlrmError::ModelFormat(format!("line {ln}: tokens after `-`")));
            }
            None
        } else {
            let count: usize = num(ln, fields[4])?;
            if fields.len() != 5 + count {
                return Err(GlrmError::ModelFormat(format!("line {ln}: expected {count} tokens")));
            }
            Some(fields[5..].iter().map(|t| unescape(t)).collect::<Result<Vec<_>>>()?)
        };
        columns.push(Column {
            name: unescape(fields[0])?,
            kind,
            tokens,
        });
        losses.push(loss);
    }
    let expect_d = *embedding_offsets(&losses).last().unwrap();
    if expect_d != d {
        return Err(GlrmError::ModelFormat(format!("losses embed in {expect_d} columns but dims say {d}")));
    }
    if k_eff != k + usize::from(offset) {
        return Err(GlrmError::ModelFormat(format!("k_eff {k_eff} inconsistent with k {k} and offset {offset}")));
    }
    lines.record("x")?;
    let x = read_matrix(&mut lines, m, k_eff)?;
    lines.record("y")?;
    let y = read_matrix(&mut lines, k_eff, d)?;
    lines.record("end")?;
    let spec = ModelSpec {
        losses,
        row_regs,
        col_regs,
        k,
        offset,
        scaling,
    };
    Ok(SavedModel {
        spec,
        columns,
        factors: Factors { x, y, sigma2 },
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DataTable, Value};
    use crate::init::init_random;

    fn problem() -> GlrmProblem {
        let mut cols = vec![
            Column::new("a\tb", FeatureKind::Real),
            Column::new("flag", FeatureKind::Boolean),
            Column::new("colour", FeatureKind::Categorical(3)),
        ];
        cols[1].tokens = Some(vec!["no".into(), "yes".into()]);
        cols[2].tokens = Some(vec!["red".into(), "gre\\en".into(), "blue".into()]);
        let cells = vec![
            Some(Value::Real(1.5)),
            Some(Value::Bool(true)),
            Some(Value::Level(2)),
            Some(Value::Real(-0.5)),
            None,
            Some(Value::Level(3)),
            Some(Value::Real(2.0)),
            Some(Value::Bool(false)),
            Some(Value::Level(1)),
        ];
        let table = DataTable::new(cols, 3, cells).unwrap();
        let spec = ModelSpec::new(
            vec![LossSpec::Huber, LossSpec::Logistic, LossSpec::OneVsAll(3)],
            2,
        )
        .with_regs(RegSpec::Quadratic(0.25), RegSpec::L1(1e-7))
        .with_offset(true);
        GlrmProblem::new(table, spec).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = problem();
        for seed in 0..3 {
            let f = init_random(&p, seed);
            let text = model_to_string(&p, &f).unwrap();
            let back = model_from_str(&text).unwrap();
            assert_eq!(back.factors, f);
            assert_eq!(&back.spec, p.spec());
            assert_eq!(back.columns, p.table().columns());
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let p = problem();
        let text = model_to_string(&p, &init_random(&p, 1)).unwrap();
        for cut in [0, 10, text.len() / 2, text.len() - 5] {
            assert!(matches!(model_from_str(&text[..cut]), Err(GlrmError::ModelFormat(_))), "{cut}");
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let p = problem();
        let text = model_to_string(&p, &init_random(&p, 1)).unwrap().replacen("v1", "v2", 1);
        assert!(model_from_str(&text).is_err());
    }

    #[test]
    fn metadata_names_catalog_entries() {
        let p = problem();
        let text = model_to_string(&p, &init_random(&p, 1)).unwrap();
        assert!(text.contains("\tlogistic\t"));
        assert!(text.contains("quadreg:0.25"));
        assert!(text.contains("dims\t3\t3\t2\t3\t5"));
    }
}
