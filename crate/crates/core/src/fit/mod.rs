//! Alternating solvers.
//!
//! [`fit`] is alternating proximal gradient with per-row and per-column
//! adaptive steps. [`fit_exact_quadratic`] solves each row and column
//! subproblem exactly when every loss is quadratic, reusing Cholesky factors
//! of the Gram matrix. [`fit_stochastic`] replaces the gradients with
//! unbiased sampled estimates.

mod engine;
mod exact;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GlrmError, Result};
use crate::model::{Factors, GlrmProblem};

pub use engine::{row_gradient, stochastic_row_gradient};

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop when `(f_{t-1} - f_t) / max(|f_t|, 1)` falls below this.
    pub rel_tol: f64,
    /// Initial `alpha` for every row and column; the step is `alpha / n_i`.
    pub step_init: f64,
    /// Multiplies `alpha` after a rejected update.
    pub step_decrease: f64,
    /// Multiplies `alpha` after an update that lowered the objective.
    pub step_increase: f64,
    /// Prox-prox iterations per subproblem in quadratic mode.
    pub inner_iters: usize,
    /// Fraction of each row's (column's) entries sampled by [`fit_stochastic`].
    pub sample_fraction: Option<f64>,
    /// Keep the accept/reject rule in [`fit_stochastic`].
    pub stochastic_acceptance: bool,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 200,
            rel_tol: 1e-4,
            step_init: 1.0,
            step_decrease: 0.7,
            step_increase: 1.05,
            inner_iters: 1,
            sample_fraction: None,
            stochastic_acceptance: false,
            seed: 0,
            threads: None,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_decrease > 0.0 && self.step_decrease < 1.0) {
            return Err(GlrmError::Config(format!(
                "step decrease factor {} not in (0, 1)",
                self.step_decrease
            )));
        }
        if !(self.step_increase > 1.0) {
            return Err(GlrmError::Config(format!(
                "step increase factor {} must exceed 1",
                self.step_increase
            )));
        }
        if !(self.step_init > 0.0) {
            return Err(GlrmError::Config(format!("initial step {} must be positive", self.step_init)));
        }
        if self.rel_tol < 0.0 || self.rel_tol.is_nan() {
            return Err(GlrmError::Config(format!("tolerance {} must be >= 0", self.rel_tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
}

/// Convergence history of one fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Objective at the starting point followed by one value per iteration.
    pub objective: Vec<f64>,
    /// Wall time of each iteration, in seconds.
    pub seconds: Vec<f64>,
    pub termination: Termination,
    /// Final `alpha` per row.
    pub row_steps: Vec<f64>,
    /// Final `alpha` per feature.
    pub col_steps: Vec<f64>,
}

impl FitReport {
    pub fn iterations(&self) -> usize {
        self.seconds.len()
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().unwrap()
    }

    /// Tab-separated `iteration objective seconds`, iteration 0 being the
    /// starting point.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration\tobjective\tseconds")?;
        for (t, obj) in self.objective.iter().enumerate() {
            let secs = if t == 0 { 0.0 } else { self.seconds[t - 1] };
            writeln!(w, "{t}\t{obj}\t{secs}")?;
        }
        Ok(())
    }

    /// Like [`write_tsv`](Self::write_tsv) without the timing column, so the
    /// output depends only on the inputs and the seed.
    pub fn write_objective_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration\tobjective")?;
        for (t, obj) in self.objective.iter().enumerate() {
            writeln!(w, "{t}\t{obj}")?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Rule {
    ProxGrad,
    Stochastic { fraction: f64, acceptance: bool },
    Exact,
}

fn run(problem: &GlrmProblem, init: Factors, config: &FitConfig, rule: Rule) -> Result<(Factors, FitReport)> {
    config.validate()?;
    problem.check_shapes(&init)?;
    let body = || engine::Engine::new(problem, init, config, rule).and_then(|e| e.run());
    match config.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| GlrmError::Config(format!("thread pool: {e}")))?;
            pool.install(body)
        }
        None => body(),
    }
}

/// Alternating proximal gradient.
///
/// Each pass updates every row of `X` and then every column block of `Y` by
/// one proximal gradient step of length `alpha / n`. An update is kept only if
/// it does not increase that row's (column's) share of the objective; `alpha`
/// then grows, otherwise it shrinks and the old value is kept.
pub fn fit(problem: &GlrmProblem, init: Factors, config: &FitConfig) -> Result<(Factors, FitReport)> {
    run(problem, init, config, Rule::ProxGrad)
}

/// Alternating minimization for all-quadratic losses. Zero and quadratic
/// regularizers (with or without an offset), and the one-sparse families,
/// are solved exactly; other regularizers use `inner_iters` prox-prox steps.
pub fn fit_exact_quadratic(problem: &GlrmProblem, init: Factors, config: &FitConfig) -> Result<(Factors, FitReport)> {
    if let Some(j) = (0..problem.n()).find(|&j| *problem.loss(j) != crate::losses::LossSpec::Quadratic) {
        return Err(GlrmError::Config(format!(
            "exact quadratic mode needs quadratic losses; column {} uses {}",
            j + 1,
            problem.loss(j)
        )));
    }
    run(problem, init, config, Rule::Exact)
}

/// Stochastic proximal gradient: each row (column) gradient is estimated from
/// a uniform sample of its observed entries, rescaled to be unbiased. Steps
/// follow `alpha / (n sqrt(t))` with no acceptance test unless
/// `stochastic_acceptance` is set.
pub fn fit_stochastic(problem: &GlrmProblem, init: Factors, config: &FitConfig) -> Result<(Factors, FitReport)> {
    let fraction = config.sample_fraction.unwrap_or(0.5);
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GlrmError::Config(format!("sample fraction {fraction} not in (0, 1]")));
    }
    run(
        problem,
        init,
        config,
        Rule::Stochastic {
            fraction,
            acceptance: config.stochastic_acceptance,
        },
    )
}

/// Minimizes row `i`'s share of the objective over `x` with `Y` held fixed,
/// starting from `x0`. Rows without observations return the minimizer of the
/// regularizer.
pub fn solve_row(problem: &GlrmProblem, factors: &Factors, i: usize, x0: &[f64], config: &FitConfig) -> Result<Vec<f64>> {
    config.validate()?;
    problem.check_shapes(factors)?;
    if x0.len() != problem.k_eff() {
        return Err(GlrmError::Shape(format!("x0 has length {}, expected {}", x0.len(), problem.k_eff())));
    }
    engine::solve_row(problem, factors, i, x0, config)
}

pub(crate) fn rng_for(seed: u64, t: usize, idx: usize, side: u64) -> ChaCha8Rng {
    let mix = seed
        ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (idx as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ side.wrapping_mul(0x1656_67b1_9e37_79f9);
    ChaCha8Rng::seed_from_u64(mix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{qrpca_objective, qrpca_solve};
    use crate::data::DataTable;
    use crate::init::{init_random, init_svd};
    use crate::linalg::gaussian_matrix;
    use crate::losses::LossSpec;
    use crate::model::ModelSpec;
    use crate::regularizers::RegSpec;
    use nalgebra::DMatrix;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        gaussian_matrix(m, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn qrpca(a: &DMatrix<f64>, k: usize, gamma: f64) -> GlrmProblem {
        GlrmProblem::new(DataTable::from_real_matrix(a).unwrap(), ModelSpec::quadratic_pca(a.ncols(), k, gamma)).unwrap()
    }

    fn tight() -> FitConfig {
        FitConfig {
            max_iters: 20_000,
            rel_tol: 1e-12,
            ..FitConfig::default()
        }
    }

    #[test]
    fn prox_gradient_reaches_analytic_optimum() {
        let a = random(20, 20, 11);
        let p = qrpca(&a, 3, 0.1);
        let (f, report) = fit(&p, init_svd(&p).unwrap(), &tight()).unwrap();
        let best = qrpca_objective(&a, &qrpca_solve(&a, 3, 0.1).unwrap(), 0.1);
        let got = qrpca_objective(&a, &f, 0.1);
        assert!((got - best) / best < 1e-4, "{got} vs {best}");
        assert!((report.final_objective() - got).abs() < 1e-9 * got);
        assert!(report.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn zero_data_converges_at_once() {
        let a = DMatrix::zeros(5, 4);
        let p = qrpca(&a, 2, 1.0);
        let (_, report) = fit(&p, Factors::zeros(&p), &FitConfig::default()).unwrap();
        assert_eq!(report.iterations(), 1);
        assert_eq!(report.final_objective(), 0.0);
        assert_eq!(report.termination, Termination::Converged);
    }

    #[test]
    fn exact_pass_matches_closed_form() {
        let a = random(12, 7, 3);
        let gamma = 0.3;
        let p = qrpca(&a, 2, gamma);
        let init = init_random(&p, 5);
        let cfg = FitConfig {
            max_iters: 1,
            ..FitConfig::default()
        };
        let (f, _) = fit_exact_quadratic(&p, init.clone(), &cfg).unwrap();
        let y0 = &init.y;
        let gram = y0 * y0.transpose() + DMatrix::identity(2, 2) * gamma;
        let x1 = &a * y0.transpose() * gram.try_inverse().unwrap();
        assert!((&f.x - &x1).norm() < 1e-10 * x1.norm());
        let gram = x1.transpose() * &x1 + DMatrix::identity(2, 2) * gamma;
        let y1 = gram.try_inverse().unwrap() * x1.transpose() * &a;
        assert!((&f.y - &y1).norm() < 1e-10 * y1.norm());
    }

    #[test]
    fn scalar_least_squares_row() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let p = GlrmProblem::new(
            DataTable::from_real_matrix(&a).unwrap(),
            ModelSpec::new(vec![LossSpec::Quadratic; 3], 1),
        )
        .unwrap();
        let mut f = Factors::zeros(&p);
        f.y = DMatrix::from_row_slice(1, 3, &[0.5, 1.0, 2.0]);
        let expect = (0.5 + 2.0 - 2.0) / (0.25 + 1.0 + 4.0);
        let x = solve_row(&p, &f, 0, &[0.0], &tight()).unwrap();
        assert!((x[0] - expect).abs() < 1e-8);
    }

    #[test]
    fn ridge_row_solve() {
        let a = random(6, 9, 21);
        let p = qrpca(&a, 3, 0.7);
        let f = init_random(&p, 2);
        let x = solve_row(&p, &f, 4, &[0.0; 3], &tight()).unwrap();
        let y = &f.y;
        let gram = y * y.transpose() + DMatrix::identity(3, 3) * 0.7;
        let rhs = y * a.row(4).transpose();
        let direct = gram.lu().solve(&rhs).unwrap();
        for c in 0..3 {
            assert!((x[c] - direct[c]).abs() < 1e-8, "{c}: {} vs {}", x[c], direct[c]);
        }
    }

    #[test]
    fn empty_row_goes_to_regularizer_minimum() {
        let mut t = DataTable::from_real_matrix(&random(4, 3, 1)).unwrap();
        t = t.without(&[(2, 0), (2, 1), (2, 2)]);
        let spec = ModelSpec::new(vec![LossSpec::Quadratic; 3], 2).with_regs(RegSpec::UnitOneSparse, RegSpec::Zero);
        let p = GlrmProblem::new(t, spec).unwrap();
        let f = Factors::zeros(&p);
        let x = solve_row(&p, &f, 2, &[0.0, 0.0], &FitConfig::default()).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
    }

    #[test]
    fn nonneg_iterates_stay_feasible() {
        let a = random(15, 10, 8).map(|v| v.abs());
        let spec = ModelSpec::new(vec![LossSpec::Quadratic; 10], 3).with_regs(RegSpec::Nonneg, RegSpec::Nonneg);
        let p = GlrmProblem::new(DataTable::from_real_matrix(&a).unwrap(), spec).unwrap();
        let mut init = init_random(&p, 1);
        init.x = init.x.abs();
        init.y = init.y.abs();
        let cfg = FitConfig {
            max_iters: 50,
            inner_iters: 3,
            ..FitConfig::default()
        };
        for (f, r) in [fit(&p, init.clone(), &cfg).unwrap(), fit_exact_quadratic(&p, init, &cfg).unwrap()] {
            assert!(f.x.iter().chain(f.y.iter()).all(|&v| v >= 0.0));
            assert!(r.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn infeasible_start_is_an_error() {
        let a = random(4, 3, 9);
        let spec = ModelSpec::new(vec![LossSpec::Quadratic; 3], 2).with_regs(RegSpec::Nonneg, RegSpec::Zero);
        let p = GlrmProblem::new(DataTable::from_real_matrix(&a).unwrap(), spec).unwrap();
        let mut f = Factors::zeros(&p);
        f.x[(0, 0)] = -1.0;
        assert!(matches!(fit(&p, f, &FitConfig::default()), Err(GlrmError::Infeasible(_))));
    }

    #[test]
    fn full_sample_with_acceptance_matches_fit() {
        let a = random(10, 8, 4);
        let p = qrpca(&a, 2, 0.2);
        let init = init_random(&p, 3);
        let cfg = FitConfig {
            max_iters: 30,
            sample_fraction: Some(1.0),
            stochastic_acceptance: true,
            ..FitConfig::default()
        };
        let (f1, r1) = fit(&p, init.clone(), &cfg).unwrap();
        let (f2, r2) = fit_stochastic(&p, init, &cfg).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(r1.objective, r2.objective);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let a = random(40, 30, 6);
        let p = qrpca(&a, 4, 0.5);
        let init = init_random(&p, 1);
        let one = FitConfig {
            max_iters: 25,
            threads: Some(1),
            ..FitConfig::default()
        };
        let four = FitConfig {
            threads: Some(4),
            ..one.clone()
        };
        let (f1, r1) = fit(&p, init.clone(), &one).unwrap();
        let (f4, r4) = fit(&p, init, &four).unwrap();
        assert_eq!(f1, f4);
        assert_eq!(r1.objective, r4.objective);
    }

    #[test]
    fn bad_fraction_rejected() {
        let a = random(4, 3, 1);
        let p = qrpca(&a, 1, 0.1);
        let cfg = FitConfig {
            sample_fraction: Some(1.5),
            ..FitConfig::default()
        };
        assert!(fit_stochastic(&p, Factors::zeros(&p), &cfg).is_err());
    }

    #[test]
    fn history_tsv() {
        let report = FitReport {
            objective: vec![3.0, 2.0],
            seconds: vec![0.5],
            termination: Termination::MaxIters,
            row_steps: vec![],
            col_steps: vec![],
        };
        let mut buf = Vec::new();
        report.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration\tobjective\tseconds\n0\t3\t0\n1\t2\t0.5\n");
    }
}
