//! Regularization paths, cross-validation and error metrics.

use std::io::Write;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{DataTable, FeatureKind, Value, split_holdout};
use crate::error::{GlrmError, Result};
use crate::fit::{FitConfig, FitReport, fit};
use crate::init::{InitMethod, initialize};
use crate::model::{Factors, GlrmProblem};

/// One point of a regularization path.
#[derive(Clone, Debug)]
pub struct PathPoint {
    pub gamma: f64,
    pub factors: Factors,
    pub report: FitReport,
    pub objective: f64,
    /// Mean scaled loss over the training entries.
    pub train_error: f64,
    /// Mean scaled loss over the held-out entries, when given.
    pub test_error: Option<f64>,
}

/// Held-out entries together with the table holding their true values.
#[derive(Clone, Copy, Debug)]
pub struct Holdout<'a> {
    pub truth: &'a DataTable,
    pub entries: &'a [(usize, usize)],
}

/// Mean scaled loss of `f` on the observed entries of `problem`.
pub fn train_error(problem: &GlrmProblem, f: &Factors) -> f64 {
    let observed = problem.table().observed();
    if observed.is_empty() {
        return 0.0;
    }
    problem.loss_on(f, problem.table(), &observed) / observed.len() as f64
}

/// Mean scaled loss of `f` on held-out entries.
pub fn test_error(problem: &GlrmProblem, f: &Factors, holdout: Holdout<'_>) -> f64 {
    if holdout.entries.is_empty() {
        return f64::NAN;
    }
    problem.loss_on(f, holdout.truth, holdout.entries) / holdout.entries.len() as f64
}

/// Fits `problem` at each `gamma` in turn (strictly decreasing), starting each
/// fit from the previous solution.
pub fn reg_path(
    problem: &GlrmProblem,
    gammas: &[f64],
    init: Factors,
    config: &FitConfig,
    holdout: Option<Holdout<'_>>,
) -> Result<Vec<PathPoint>> {
    if gammas.is_empty() {
        return Err(GlrmError::Config("empty gamma list".into()));
    }
    if gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(GlrmError::Config("gammas must be finite and nonnegative".into()));
    }
    if gammas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(GlrmError::Config("gammas must be strictly decreasing".into()));
    }
    let mut start = init;
    let mut points = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let p = problem.with_gamma(gamma);
        let (f, report) = fit(&p, start, config)?;
        log::info!("gamma {gamma}: objective {:.6e} after {} iterations", report.final_objective(), report.iterations());
        start = f.clone();
        points.push(PathPoint {
            gamma,
            objective: report.final_objective(),
            train_error: train_error(&p, &f),
            test_error: holdout.map(|h| test_error(&p, &f, h)),
            factors: f,
            report,
        });
    }
    Ok(points)
}

/// Differences between successive path objectives; small changes as
/// the penalty relaxes mark the elbow.
pub fn objective_deltas(points: &[PathPoint]) -> Vec<f64> {
    points.windows(2).map(|w| w[0].objective - w[1].objective).collect()
}

/// Tab-separated `gamma objective train_error test_error iterations`.
pub fn write_path_tsv(points: &[PathPoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "gamma\tobjective\ttrain_error\ttest_error\titerations\tobjective_delta")?;
    let deltas = objective_deltas(points);
    for (t, p) in points.iter().enumerate() {
        let test = p.test_error.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let delta = if t == 0 { "NA".to_string() } else { deltas[t - 1].to_string() };
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.gamma,
            p.objective,
            p.train_error,
            test,
            p.report.iterations(),
            delta
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CvOptions {
    pub ranks: Vec<usize>,
    pub gammas: Vec<f64>,
    /// Fraction of observed entries held out per fold.
    pub fraction: f64,
    pub folds: usize,
    pub seed: u64,
    pub init: InitMethod,
    pub config: FitConfig,
}

/// Result of one (k, gamma, fold) fit.
#[derive(Clone, Debug, PartialEq)]
pub struct CvFold {
    pub k: usize,
    pub gamma: f64,
    pub fold: usize,
    pub train_error: f64,
    pub test_error: f64,
}

/// Fold-averaged errors for one (k, gamma).
#[derive(Clone, Debug, PartialEq)]
pub struct CvCell {
    pub k: usize,
    pub gamma: f64,
    pub mean_train: f64,
    pub mean_test: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub folds: Vec<CvFold>,
    pub cells: Vec<CvCell>,
}

impl CvResult {
    /// Cell with the smallest mean test error (first on ties).
    pub fn best(&self) -> &CvCell {
        let mut best = &self.cells[0];
        for c in &self.cells[1..] {
            if c.mean_test < best.mean_test {
                best = c;
            }
        }
        best
    }

    /// The rank with the smallest mean test error at each gamma.
    pub fn best_rank_per_gamma(&self) -> Vec<(f64, usize)> {
        let mut gammas: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !gammas.contains(&c.gamma) {
                gammas.push(c.gamma);
            }
        }
        gammas
            .into_iter()
            .map(|g| {
                let mut best: Option<&CvCell> = None;
                for c in self.cells.iter().filter(|c| c.gamma == g) {
                    if best.is_none_or(|b| c.mean_test < b.mean_test) {
                        best = Some(c);
                    }
                }
                (g, best.unwrap().k)
            })
            .collect()
    }

    /// Tab-separated, one row per (k, gamma, fold), then the fold means with
    /// fold `mean`.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "k\tgamma\tfold\ttrain_error\ttest_error")?;
        for f in &self.folds {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", f.k, f.gamma, f.fold, f.train_error, f.test_error)?;
        }
        for c in &self.cells {
            writeln!(w, "{}\t{}\tmean\t{}\t{}", c.k, c.gamma, c.mean_train, c.mean_test)?;
        }
        Ok(())
    }
}

/// Cross-validation over ranks and penalties. Each fold holds out a random
/// `fraction` of the observed entries (fold `f` uses seed `seed + f`), fits on
/// the rest and scores the mean scaled loss on the held-out entries.
pub fn cross_validate(problem: &GlrmProblem, opts: &CvOptions) -> Result<CvResult> {
    if opts.ranks.is_empty() || opts.gammas.is_empty() || opts.folds == 0 {
        return Err(GlrmError::Config("cross-validation needs ranks, gammas and at least one fold".into()));
    }
    if opts.ranks.contains(&0) {
        return Err(GlrmError::Config("rank 0 in cross-validation grid".into()));
    }
    let splits: Vec<(DataTable, Vec<(usize, usize)>)> = (0..opts.folds)
        .map(|f| split_holdout(problem.table(), opts.fraction, opts.seed.wrapping_add(f as u64)))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &k in &opts.ranks {
        for &g in &opts.gammas {
            for fold in 0..opts.folds {
                cells.push((k, g, fold));
            }
        }
    }
    let truth = problem.table();
    let folds: Vec<CvFold> = cells
        .par_iter()
        .map(|&(k, gamma, fold)| {
            let (train, heldout) = &splits[fold];
            let mut spec = problem.spec().clone().with_gamma(gamma);
            spec.k = k;
            let p = GlrmProblem::new(train.clone(), spec)?;
            let init = initialize(&p, opts.init, opts.seed.wrapping_add(fold as u64))?;
            let (f, _) = fit(&p, init, &opts.config)?;
            Ok(CvFold {
                k,
                gamma,
                fold,
                train_error: train_error(&p, &f),
                test_error: test_error(&p, &f, Holdout { truth, entries: heldout }),
            })
        })
        .collect::<Result<_>>()?;
    let mut summary = Vec::new();
    for chunk in folds.chunks(opts.folds) {
        let nf = chunk.len() as f64;
        summary.push(CvCell {
            k: chunk[0].k,
            gamma: chunk[0].gamma,
            mean_train: chunk.iter().map(|c| c.train_error).sum::<f64>() / nf,
            mean_test: chunk.iter().map(|c| c.test_error).sum::<f64>() / nf,
        });
    }
    Ok(CvResult { folds, cells: summary })
}

/// Error summaries on a set of entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Mean scaled loss.
    pub normalized_loss: f64,
    /// Root mean square of `a - u` over scalar numeric entries.
    pub rms: Option<f64>,
    /// Fraction of Boolean, ordinal and categorical entries whose imputed
    /// value differs from the truth.
    pub misclassification: Option<f64>,
}

/// Metrics of `f` against the true values in `truth` on `entries`.
pub fn metrics(problem: &GlrmProblem, f: &Factors, truth: &DataTable, entries: &[(usize, usize)]) -> Metrics {
    let normalized_loss = if entries.is_empty() {
        f64::NAN
    } else {
        problem.loss_on(f, truth, entries) / entries.len() as f64
    };
    let mut sq = 0.0;
    let mut n_sq = 0usize;
    let mut wrong = 0usize;
    let mut n_cls = 0usize;
    for &(i, j) in entries {
        let Some(a) = truth.get(i, j) else { continue };
        let u = problem.embedded(f, i, j);
        let kind = truth.kind(j);
        if u.len() == 1 {
            if let Some(v) = a.as_f64() {
                sq += (v - u[0]) * (v - u[0]);
                n_sq += 1;
            }
        }
        if matches!(kind, FeatureKind::Boolean | FeatureKind::Ordinal(_) | FeatureKind::Categorical(_)) {
            n_cls += 1;
            if problem.loss(j).impute(&u, kind) != *a {
                wrong += 1;
            }
        }
    }
    Metrics {
        normalized_loss,
        rms: (n_sq > 0).then(|| (sq / n_sq as f64).sqrt()),
        misclassification: (n_cls > 0).then(|| wrong as f64 / n_cls as f64),
    }
}

/// Fraction of the `t` highest-scoring `candidates` (by `x_i . y_j`) whose true
/// value is positive. Candidates must sit in Boolean columns.
pub fn precision_at(problem: &GlrmProblem, f: &Factors, truth: &DataTable, candidates: &[(usize, usize)], t: usize) -> Result<f64> {
    if !truth.kinds().iter().any(|k| *k == FeatureKind::Boolean) {
        return Err(GlrmError::Config("precision at T needs Boolean columns".into()));
    }
    if t == 0 {
        return Err(GlrmError::Config("precision at T needs T >= 1".into()));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for &(i, j) in candidates {
        if *truth.kind(j) != FeatureKind::Boolean {
            return Err(GlrmError::Config(format!("column {} is not Boolean", j + 1)));
        }
        let Some(a) = truth.get(i, j) else {
            return Err(GlrmError::Config(format!("no true value at ({}, {})", i + 1, j + 1)));
        };
        scored.push((problem.embedded(f, i, j)[0], *a == Value::Bool(true)));
    }
    if scored.is_empty() {
        return Err(GlrmError::Config("no candidate entries".into()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = t.min(scored.len());
    Ok(scored[..top].iter().filter(|s| s.1).count() as f64 / top as f64)
}

/// Objective of a fit at each rank, on the data and on a copy whose observed
/// values are shuffled within each column.
#[derive(Clone, Debug, PartialEq)]
pub struct HornRow {
    pub k: usize,
    pub objective: f64,
    pub noise_objective: f64,
}

/// Rank scan with a parallel-analysis baseline: the same model is fit to
/// column-wise permuted data, which keeps the marginals and destroys the low
/// rank structure. [`horn_rank`] reads off a suggested rank.
pub fn horn_parallel(problem: &GlrmProblem, ranks: &[usize], init: InitMethod, config: &FitConfig, seed: u64) -> Result<Vec<HornRow>> {
    let noise = permuted_table(problem.table(), seed);
    ranks
        .iter()
        .map(|&k| {
            let mut spec = problem.spec().clone();
            spec.k = k;
            let p = GlrmProblem::new(problem.table().clone(), spec.clone())?;
            let (_, r) = fit(&p, initialize(&p, init, seed)?, config)?;
            let q = GlrmProblem::new(noise.clone(), spec)?;
            let (_, rn) = fit(&q, initialize(&q, init, seed)?, config)?;
            Ok(HornRow {
                k,
                objective: r.final_objective(),
                noise_objective: rn.final_objective(),
            })
        })
        .collect()
}

/// Largest rank in the scan whose relative objective drop over the previous
/// rank beats the drop on the permuted data.
pub fn horn_rank(rows: &[HornRow]) -> Option<usize> {
    let mut best = rows.first().map(|r| r.k);
    for w in rows.windows(2) {
        let gain = (w[0].objective - w[1].objective) / w[0].objective.abs().max(f64::MIN_POSITIVE);
        let noise_gain = (w[0].noise_objective - w[1].noise_objective) / w[0].noise_objective.abs().max(f64::MIN_POSITIVE);
        if gain > noise_gain {
            best = Some(w[1].k);
        } else {
            break;
        }
    }
    best
}

fn permuted_table(table: &DataTable, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = table.clone();
    for j in 0..table.n() {
        let rows: Vec<usize> = (0..table.m()).filter(|&i| table.is_observed(i, j)).collect();
        let mut values: Vec<Value> = rows.iter().map(|&i| table.get(i, j).unwrap().clone()).collect();
        values.shuffle(&mut rng);
        for (&i, v) in rows.iter().zip(values) {
            out.set(i, j, Some(v)).expect("value taken from the same column");
        }
    }
    out
}
