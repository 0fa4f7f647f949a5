//! Problem statement, fitted factors, objective and imputation.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{Column, DataTable, FeatureKind, Value};
use crate::error::{GlrmError, Result};
use crate::losses::LossSpec;
use crate::regularizers::RegSpec;

/// Declarative model description: losses, regularizers, rank and flags.
///
/// `row_regs` and `col_regs` hold either one shared regularizer or one per
/// row / column.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub losses: Vec<LossSpec>,
    pub row_regs: Vec<RegSpec>,
    pub col_regs: Vec<RegSpec>,
    pub k: usize,
    pub offset: bool,
    pub scaling: bool,
}

impl ModelSpec {
    /// Unregularized, unscaled, no offset.
    pub fn new(losses: Vec<LossSpec>, k: usize) -> Self {
        ModelSpec {
            losses,
            row_regs: vec![RegSpec::Zero],
            col_regs: vec![RegSpec::Zero],
            k,
            offset: false,
            scaling: false,
        }
    }

    /// Quadratic loss on `n` columns with `gamma ||.||^2` on both factors.
    pub fn quadratic_pca(n: usize, k: usize, gamma: f64) -> Self {
        ModelSpec::new(vec![LossSpec::Quadratic; n], k).with_regs(RegSpec::Quadratic(gamma), RegSpec::Quadratic(gamma))
    }

    pub fn with_regs(mut self, row: RegSpec, col: RegSpec) -> Self {
        self.row_regs = vec![row];
        self.col_regs = vec![col];
        self
    }

    pub fn with_offset(mut self, on: bool) -> Self {
        self.offset = on;
        self
    }

    pub fn with_scaling(mut self, on: bool) -> Self {
        self.scaling = on;
        self
    }

    /// Replaces the strength of every parametric regularizer.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.row_regs = self.row_regs.iter().map(|r| r.with_gamma(gamma)).collect();
        self.col_regs = self.col_regs.iter().map(|r| r.with_gamma(gamma)).collect();
        self
    }
}

/// Low rank factors. With an offset, the last column of `x` is all ones and
/// the last row of `y` holds per-column intercepts.
#[derive(Clone, Debug, PartialEq)]
pub struct Factors {
    /// m × k_eff.
    pub x: DMatrix<f64>,
    /// k_eff × d.
    pub y: DMatrix<f64>,
    pub sigma2: Vec<f64>,
}

impl Factors {
    pub fn zeros(problem: &GlrmProblem) -> Self {
        let mut f = Factors {
            x: DMatrix::zeros(problem.m(), problem.k_eff()),
            y: DMatrix::zeros(problem.k_eff(), problem.d()),
            sigma2: problem.sigma2().to_vec(),
        };
        problem.pin_offset(&mut f);
        f
    }

    /// `X Y`.
    pub fn product(&self) -> DMatrix<f64> {
        &self.x * &self.y
    }
}

/// A data table together with its model: the full optimization problem.
#[derive(Clone, Debug)]
pub struct GlrmProblem {
    table: DataTable,
    spec: ModelSpec,
    embed: Vec<usize>,
    sigma2: Vec<f64>,
    mu: Vec<Vec<f64>>,
    row_obs: Vec<Vec<usize>>,
    col_obs: Vec<Vec<usize>>,
    row_regs: Vec<RegSpec>,
    col_regs: Vec<RegSpec>,
}

impl GlrmProblem {
    pub fn new(table: DataTable, spec: ModelSpec) -> Result<Self> {
        let (m, n) = (table.m(), table.n());
        if spec.losses.len() != n {
            return Err(GlrmError::Shape(format!("{} losses for {n} columns", spec.losses.len())));
        }
        if spec.k == 0 {
            return Err(GlrmError::Config("rank k must be at least 1".into()));
        }
        for (j, (loss, col)) in spec.losses.iter().zip(table.columns()).enumerate() {
            loss.validate()?;
            if !loss.accepts(&col.kind) {
                return Err(GlrmError::Config(format!(
                    "loss {loss} cannot model column {} `{}` of kind {}",
                    j + 1,
                    col.name,
                    col.kind
                )));
            }
        }
        if spec.row_regs.len() != 1 && spec.row_regs.len() != m {
            return Err(GlrmError::Shape(format!("{} row regularizers for {m} rows", spec.row_regs.len())));
        }
        if spec.col_regs.len() != 1 && spec.col_regs.len() != n {
            return Err(GlrmError::Shape(format!(
                "{} column regularizers for {n} columns",
                spec.col_regs.len()
            )));
        }
        for r in spec.row_regs.iter().chain(&spec.col_regs) {
            r.validate()?;
        }
        let embed = embedding_offsets(&spec.losses);
        let row_obs: Vec<Vec<usize>> = (0..m).map(|i| table.row_observed(i)).collect();
        let col_obs: Vec<Vec<usize>> = (0..n).map(|j| table.column_observed(j)).collect();

        let stats: Vec<Result<_>> = (0..n)
            .into_par_iter()
            .map(|j| spec.losses[j].column_stats(&table.column_values(j)))
            .collect();
        let mut sigma2 = vec![1.0; n];
        let mut mu = Vec::with_capacity(n);
        for (j, s) in stats.into_iter().enumerate() {
            match s {
                Ok(s) => {
                    if spec.scaling {
                        sigma2[j] = s.sigma2;
                    }
                    mu.push(s.mu);
                }
                Err(e) if spec.scaling => {
                    return Err(GlrmError::Config(format!(
                        "cannot scale column {} `{}`: {e}",
                        j + 1,
                        table.columns()[j].name
                    )))
                }
                Err(_) => mu.push(vec![0.0; spec.losses[j].embed_dim()]),
            }
        }

        let row_regs = spec
            .row_regs
            .iter()
            .map(|r| {
                if spec.offset {
                    RegSpec::FixedLast {
                        inner: Box::new(r.clone()),
                        value: 1.0,
                    }
                } else {
                    r.clone()
                }
            })
            .collect();
        let col_regs = spec
            .col_regs
            .iter()
            .map(|r| {
                if spec.offset {
                    RegSpec::FreeLast { inner: Box::new(r.clone()) }
                } else {
                    r.clone()
                }
            })
            .collect();
        Ok(GlrmProblem {
            table,
            spec,
            embed,
            sigma2,
            mu,
            row_obs,
            col_obs,
            row_regs,
            col_regs,
        })
    }

    /// Same data and losses, regularizer strengths set to `gamma`.
    pub fn with_gamma(&self, gamma: f64) -> GlrmProblem {
        let mut p = self.clone();
        p.spec = p.spec.with_gamma(gamma);
        p.row_regs = p.row_regs.iter().map(|r| r.with_gamma(gamma)).collect();
        p.col_regs = p.col_regs.iter().map(|r| r.with_gamma(gamma)).collect();
        p
    }

    /// Same model on a different table with identical columns (for example a
    /// training split). Column statistics are recomputed.
    pub fn with_table(&self, table: DataTable) -> Result<GlrmProblem> {
        GlrmProblem::new(table, self.spec.clone())
    }

    pub fn table(&self) -> &DataTable {
        &self.table
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.table.m()
    }

    pub fn n(&self) -> usize {
        self.table.n()
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn k_eff(&self) -> usize {
        self.spec.k + self.spec.offset as usize
    }

    pub fn offset(&self) -> bool {
        self.spec.offset
    }

    pub fn scaling(&self) -> bool {
        self.spec.scaling
    }

    /// Total embedding dimension `d`.
    pub fn d(&self) -> usize {
        *self.embed.last().unwrap()
    }

    /// Embedded columns of feature `j`.
    pub fn block(&self, j: usize) -> std::ops::Range<usize> {
        self.embed[j]..self.embed[j + 1]
    }

    pub fn loss(&self, j: usize) -> &LossSpec {
        &self.spec.losses[j]
    }

    pub fn losses(&self) -> &[LossSpec] {
        &self.spec.losses
    }

    /// Effective regularizer of row `i` (offset wrapper included).
    pub fn row_reg(&self, i: usize) -> &RegSpec {
        if self.row_regs.len() == 1 {
            &self.row_regs[0]
        } else {
            &self.row_regs[i]
        }
    }

    /// Effective regularizer of each embedded column of feature `j`.
    pub fn col_reg(&self, j: usize) -> &RegSpec {
        if self.col_regs.len() == 1 {
            &self.col_regs[0]
        } else {
            &self.col_regs[j]
        }
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    /// Generalized column means (zeros for columns with fewer than two
    /// observations).
    pub fn mu(&self) -> &[Vec<f64>] {
        &self.mu
    }

    pub fn row_obs(&self, i: usize) -> &[usize] {
        &self.row_obs[i]
    }

    pub fn col_obs(&self, j: usize) -> &[usize] {
        &self.col_obs[j]
    }

    pub fn value(&self, i: usize, j: usize) -> Option<&Value> {
        self.table.get(i, j)
    }

    /// Feature index owning embedded column `c`.
    pub fn feature_of(&self, c: usize) -> usize {
        match self.embed.binary_search(&c) {
            Ok(j) => j,
            Err(j) => j - 1,
        }
    }

    pub(crate) fn pin_offset(&self, f: &mut Factors) {
        if self.offset() {
            let last = self.k_eff() - 1;
            f.x.column_mut(last).fill(1.0);
        }
    }

    pub fn check_shapes(&self, f: &Factors) -> Result<()> {
        if f.x.shape() != (self.m(), self.k_eff()) || f.y.shape() != (self.k_eff(), self.d()) {
            return Err(GlrmError::Shape(format!(
                "factors are {:?} and {:?}, problem needs {}x{} and {}x{}",
                f.x.shape(),
                f.y.shape(),
                self.m(),
                self.k_eff(),
                self.k_eff(),
                self.d()
            )));
        }
        Ok(())
    }

    /// `u = x_i Y_j`.
    pub fn embedded(&self, f: &Factors, i: usize, j: usize) -> Vec<f64> {
        self.block(j).map(|c| f.x.row(i).dot(&f.y.column(c).transpose())).collect()
    }

    /// Scaled loss over the observed entries of row `i`.
    fn row_loss(&self, f: &Factors, i: usize) -> f64 {
        self.row_obs[i]
            .iter()
            .map(|&j| {
                let u = self.embedded(f, i, j);
                let a = self.table.get(i, j).unwrap();
                self.loss(j).value(&u, a).unwrap_or(f64::INFINITY) / self.sigma2[j]
            })
            .sum()
    }

    /// Full objective: scaled losses over Ω plus all regularizers.
    pub fn objective(&self, f: &Factors) -> f64 {
        let rows: Vec<f64> = (0..self.m())
            .into_par_iter()
            .map(|i| {
                let x: Vec<f64> = f.x.row(i).iter().copied().collect();
                self.row_loss(f, i) + self.row_reg(i).value(&x)
            })
            .collect();
        let cols: Vec<f64> = (0..self.d())
            .into_par_iter()
            .map(|c| {
                let y: Vec<f64> = f.y.column(c).iter().copied().collect();
                self.col_reg(self.feature_of(c)).value(&y)
            })
            .collect();
        rows.iter().sum::<f64>() + cols.iter().sum::<f64>()
    }

    /// Scaled loss summed over the given entries (which need not be observed
    /// in this problem's table; values come from `truth`).
    pub fn loss_on(&self, f: &Factors, truth: &DataTable, entries: &[(usize, usize)]) -> f64 {
        entries
            .iter()
            .map(|&(i, j)| {
                let a = truth.get(i, j).expect("entry must be observed in truth");
                let u = self.embedded(f, i, j);
                self.loss(j).value(&u, a).unwrap_or(f64::INFINITY) / self.sigma2[j]
            })
            .sum()
    }

    /// Every cell replaced by `argmin_a L_j(x_i Y_j, a)`.
    pub fn impute_table(&self, f: &Factors) -> DataTable {
        impute_cells(self.table.columns(), self.losses(), &self.embed, f)
    }

    /// Nonzeros of the model minus the dimension of its symmetry group.
    pub fn degrees_of_freedom(&self, f: &Factors) -> usize {
        let k = self.k();
        let nnz_x = f.x.columns(0, k).iter().filter(|&&v| v != 0.0).count();
        let nnz_y = f.y.iter().filter(|&&v| v != 0.0).count();
        let invariant = self.row_regs.iter().all(|r| r.is_orthogonally_invariant())
            && self.col_regs.iter().all(|r| r.is_orthogonally_invariant());
        let nnz = nnz_x + nnz_y;
        if invariant {
            nnz.saturating_sub(k * k)
        } else {
            nnz
        }
    }
}

/// Embedded column offsets for a list of losses.
pub fn embedding_offsets(losses: &[LossSpec]) -> Vec<usize> {
    let mut embed = vec![0];
    for loss in losses {
        embed.push(embed.last().unwrap() + loss.embed_dim());
    }
    embed
}

/// Imputes a full table from factors, given only the column schema.
pub fn impute_cells(columns: &[Column], losses: &[LossSpec], embed: &[usize], f: &Factors) -> DataTable {
    let m = f.x.nrows();
    let n = columns.len();
    let product = f.product();
    let cells: Vec<Option<Value>> = (0..m * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let u: Vec<f64> = (embed[j]..embed[j + 1]).map(|c| product[(i, c)]).collect();
            Some(sanitize(losses[j].impute(&u, &columns[j].kind), &columns[j].kind))
        })
        .collect();
    DataTable::new(columns.to_vec(), m, cells).expect("imputed values conform to their kinds")
}

fn sanitize(v: Value, kind: &FeatureKind) -> Value {
    match (v, kind) {
        (Value::Real(x), FeatureKind::Real) if !x.is_finite() => Value::Real(0.0),
        (Value::Interval(lo, hi), _) if !(lo <= hi) => Value::Interval(0.0, 0.0),
        (v, _) => v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn real_table(a: &DMatrix<f64>) -> DataTable {
        DataTable::from_real_matrix(a).unwrap()
    }

    #[test]
    fn zero_factors_quadratic_objective() {
        let a = dmatrix![1.0, -2.0; 3.0, 0.5];
        let p = GlrmProblem::new(real_table(&a), ModelSpec::new(vec![LossSpec::Quadratic; 2], 1)).unwrap();
        let f = Factors::zeros(&p);
        assert_eq!(p.objective(&f), a.iter().map(|x| x * x).sum::<f64>());
    }

    #[test]
    fn hand_evaluated_objective() {
        let a = dmatrix![1.0, 0.0; 0.0, 1.0];
        let p = GlrmProblem::new(real_table(&a), ModelSpec::quadratic_pca(2, 1, 0.0)).unwrap();
        let f = Factors {
            x: dmatrix![1.0; 0.0],
            y: dmatrix![1.0, 0.0],
            sigma2: vec![1.0; 2],
        };
        // XY = [[1,0],[0,0]]: only the (2,2) entry misses, by 1.
        let brute: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| {
                let z = f.x[(i, 0)] * f.y[(0, j)];
                (z - a[(i, j)]).powi(2)
            })
            .sum();
        assert_eq!(p.objective(&f), 1.0);
        assert_eq!(brute, 1.0);
    }

    #[test]
    fn indicator_violation_is_infinite() {
        let a = dmatrix![1.0, 0.0; 0.0, 1.0];
        let spec = ModelSpec::new(vec![LossSpec::Quadratic; 2], 1).with_regs(RegSpec::Nonneg, RegSpec::Zero);
        let p = GlrmProblem::new(real_table(&a), spec).unwrap();
        let mut f = Factors::zeros(&p);
        assert!(p.objective(&f).is_finite());
        f.x[(0, 0)] = -1.0;
        assert_eq!(p.objective(&f), f64::INFINITY);
    }

    #[test]
    fn impute_examples() {
        let cols = vec![
            Column::new("b", FeatureKind::Boolean),
            Column::new("r", FeatureKind::Real),
            Column::new("c", FeatureKind::Categorical(3)),
        ];
        let cells = vec![Some(Value::Bool(true)), Some(Value::Real(1.0)), Some(Value::Level(1))];
        let table = DataTable::new(cols, 1, cells).unwrap();
        let spec = ModelSpec::new(vec![LossSpec::Hinge, LossSpec::Quadratic, LossSpec::OneVsAll(3)], 1);
        let p = GlrmProblem::new(table, spec).unwrap();
        let f = Factors {
            x: dmatrix![1.0],
            y: dmatrix![-0.2, 0.37, 0.1, 0.9, 0.3],
            sigma2: vec![1.0; 3],
        };
        let imp = p.impute_table(&f);
        assert_eq!(imp.get(0, 0), Some(&Value::Bool(false)));
        assert_eq!(imp.get(0, 1), Some(&Value::Real(0.37)));
        assert_eq!(imp.get(0, 2), Some(&Value::Level(2)));
    }

    #[test]
    fn offset_wraps_regularizers() {
        let a = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 7.0];
        let spec = ModelSpec::quadratic_pca(2, 1, 1.0).with_offset(true);
        let p = GlrmProblem::new(real_table(&a), spec).unwrap();
        assert_eq!(p.k_eff(), 2);
        let f = Factors::zeros(&p);
        assert!(f.x.column(1).iter().all(|&v| v == 1.0));
        // The ones column and the intercept row are not penalized.
        let mut g = f.clone();
        g.y[(1, 0)] = 10.0;
        let base = p.objective(&f);
        let lhs = p.objective(&g);
        let direct: f64 = (0..3).map(|i| (10.0 - a[(i, 0)]).powi(2) - a[(i, 0)].powi(2)).sum();
        assert!((lhs - base - direct).abs() < 1e-9);
    }

    #[test]
    fn dof_examples() {
        let a = DMatrix::from_fn(10, 8, |i, j| (i * 8 + j) as f64 + 1.0);
        let p = GlrmProblem::new(real_table(&a), ModelSpec::quadratic_pca(8, 2, 0.1)).unwrap();
        let f = Factors {
            x: DMatrix::from_element(10, 2, 1.0),
            y: DMatrix::from_element(2, 8, 1.0),
            sigma2: vec![1.0; 8],
        };
        assert_eq!(p.degrees_of_freedom(&f), 32);
        assert_eq!(p.degrees_of_freedom(&Factors::zeros(&p)), 0);

        let km = ModelSpec::new(vec![LossSpec::Quadratic; 8], 2).with_regs(RegSpec::UnitOneSparse, RegSpec::Zero);
        let p = GlrmProblem::new(real_table(&a), km).unwrap();
        let x = DMatrix::from_fn(10, 2, |i, c| if i % 2 == c { 1.0 } else { 0.0 });
        let mut y = DMatrix::from_element(2, 8, 2.0);
        y[(0, 3)] = 0.0;
        let f = Factors { x, y, sigma2: vec![1.0; 8] };
        assert_eq!(p.degrees_of_freedom(&f), 10 + 15);
    }

    #[test]
    fn rejects_mismatched_loss() {
        let a = dmatrix![1.0, 2.0];
        let spec = ModelSpec::new(vec![LossSpec::Hinge, LossSpec::Quadratic], 1);
        assert!(GlrmProblem::new(real_table(&a), spec).is_err());
    }
}
