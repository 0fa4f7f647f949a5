//! Synthetic data sets with known low rank structure.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{DataTable, FeatureKind, Value};
use crate::error::{GlrmError, Result};

/// A generated table: `observed` is what a model gets to see, `truth` holds
/// every entry.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub observed: DataTable,
    pub truth: DataTable,
    pub k_true: usize,
}

impl Synthetic {
    /// Entries present in `truth` but missing from `observed`.
    pub fn hidden(&self) -> Vec<(usize, usize)> {
        self.truth
            .observed()
            .into_iter()
            .filter(|&(i, j)| !self.observed.is_observed(i, j))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Boolean,
    Censored,
    Mixed,
    Missing,
    Path,
    Cv,
    Qrpca,
}

impl std::str::FromStr for Preset {
    type Err = GlrmError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "boolean" => Preset::Boolean,
            "censored" => Preset::Censored,
            "mixed" => Preset::Mixed,
            "missing" => Preset::Missing,
            "path" | "huber" => Preset::Path,
            "cv" => Preset::Cv,
            "qrpca" => Preset::Qrpca,
            other => {
                return Err(GlrmError::Parse(format!(
                    "unknown preset `{other}` (boolean, censored, mixed, missing, path, cv, qrpca)"
                )));
            }
        })
    }
}

/// Generates a preset at its documented size:
///
/// | preset   | shape            | content |
/// |----------|------------------|---------|
/// | boolean  | 50 × 50, rank 10 | `sign(XY)`, fully observed |
/// | censored | 300 × 300, rank 3 | ±1 with `P(+1) ∝ XY`, 10% of positives observed |
/// | mixed    | 100 × (40+30+30), rank 10 | real, Boolean, 7-level ordinal |
/// | missing  | as mixed | a 50-row block over the last 3 real and all other columns removed |
/// | path     | 300 × 300, rank 3 | `XY + S`, `S ~ U[0,1]` w.p. 0.05, 10% observed |
/// | cv       | 300 × 300, rank 3 | `XY + S`, `S ~ U[0,3]` w.p. 0.05, 50% observed |
/// | qrpca    | 30 × 30, rank 3 | `XY + 0.1 N`, fully observed |
pub fn generate(preset: Preset, seed: u64) -> Synthetic {
    match preset {
        Preset::Boolean => boolean(50, 50, 10, seed),
        Preset::Censored => censored(300, 300, 3, 0.1, seed),
        Preset::Mixed => mixed(100, 40, 30, 30, 10, seed),
        Preset::Missing => missing_block(mixed(100, 40, 30, 30, 10, seed)),
        Preset::Path => huber_outliers(300, 300, 3, 1.0, 0.05, 0.1, seed),
        Preset::Cv => huber_outliers(300, 300, 3, 3.0, 0.05, 0.5, seed),
        Preset::Qrpca => low_rank_gaussian(30, 30, 3, 0.1, seed),
    }
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn table(kinds: Vec<FeatureKind>, m: usize, cells: Vec<Option<Value>>) -> DataTable {
    DataTable::from_kinds(kinds, m, cells).expect("generated cells conform to their kinds")
}

/// Hides each entry independently unless it is drawn with probability `keep`.
fn subsample(t: &DataTable, keep: f64, rng: &mut ChaCha8Rng) -> DataTable {
    if keep >= 1.0 {
        return t.clone();
    }
    let dropped: Vec<(usize, usize)> = t.observed().into_iter().filter(|_| rng.random::<f64>() >= keep).collect();
    t.without(&dropped)
}

/// `sign(XY)` with standard normal `X` (m × k) and `Y` (k × n).
pub fn boolean(m: usize, n: usize, k: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = normal(m, k, &mut rng) * normal(k, n, &mut rng);
    let cells = (0..m * n).map(|idx| Some(Value::Bool(z[(idx / n, idx % n)] >= 0.0))).collect();
    let t = table(vec![FeatureKind::Boolean; n], m, cells);
    Synthetic {
        observed: t.clone(),
        truth: t,
        k_true: k,
    }
}

/// ±1 data with `P(A_ij = +1)` proportional to `B = XY`, `X, Y ~ U[0,1]`,
/// scaled so half the entries are positive in expectation. Only a uniform
/// `fraction` of the positive entries is observed.
pub fn censored(m: usize, n: usize, k: usize, fraction: f64, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(m, k, |_, _| rng.random::<f64>());
    let y = DMatrix::from_fn(k, n, |_, _| rng.random::<f64>());
    let b = x * y;
    let scale = 0.5 / b.mean();
    let mut truth = Vec::with_capacity(m * n);
    let mut observed = Vec::with_capacity(m * n);
    for idx in 0..m * n {
        let p = (scale * b[(idx / n, idx % n)]).min(1.0);
        let positive = rng.random::<f64>() < p;
        truth.push(Some(Value::Bool(positive)));
        let seen = positive && rng.random::<f64>() < fraction;
        observed.push(seen.then_some(Value::Bool(true)));
    }
    Synthetic {
        observed: table(vec![FeatureKind::Boolean; n], m, observed),
        truth: table(vec![FeatureKind::Boolean; n], m, truth),
        k_true: k,
    }
}

/// Real, Boolean and 7-level ordinal columns from one normal low rank matrix:
/// `z`, `sign(z)` and `round(3z + 1)` clamped to 1..=7.
pub fn mixed(m: usize, n_real: usize, n_bool: usize, n_ord: usize, k: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_real + n_bool + n_ord;
    let z = normal(m, k, &mut rng) * normal(k, n, &mut rng);
    let mut kinds = vec![FeatureKind::Real; n_real];
    kinds.extend(vec![FeatureKind::Boolean; n_bool]);
    kinds.extend(vec![FeatureKind::Ordinal(7); n_ord]);
    let cells = (0..m * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let v = z[(i, j)];
            Some(if j < n_real {
                Value::Real(v)
            } else if j < n_real + n_bool {
                Value::Bool(v >= 0.0)
            } else {
                Value::Level((3.0 * v + 1.0).round().clamp(1.0, 7.0) as usize)
            })
        })
        .collect();
    let t = table(kinds, m, cells);
    Synthetic {
        observed: t.clone(),
        truth: t,
        k_true: k,
    }
}

/// Removes the bottom half of the rows over the last 3 real columns and every
/// Boolean and ordinal column of a [`mixed`] table.
pub fn missing_block(s: Synthetic) -> Synthetic {
    let t = &s.observed;
    let first_real = t.kinds().iter().take_while(|k| **k == FeatureKind::Real).count();
    let start_col = first_real.saturating_sub(3);
    let hidden: Vec<(usize, usize)> = (t.m() / 2..t.m())
        .flat_map(|i| (start_col..t.n()).map(move |j| (i, j)))
        .collect();
    Synthetic {
        observed: t.without(&hidden),
        ..s
    }
}

/// `XY + S` with standard normal factors and sparse outliers
/// `S_ij ~ U[0, outlier_max]` with probability `outlier_prob`; each entry is
/// observed with probability `fraction`.
pub fn huber_outliers(m: usize, n: usize, k: usize, outlier_max: f64, outlier_prob: f64, fraction: f64, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = normal(m, k, &mut rng) * normal(k, n, &mut rng);
    let cells = (0..m * n)
        .map(|idx| {
            let outlier = if rng.random::<f64>() < outlier_prob {
                outlier_max * rng.random::<f64>()
            } else {
                0.0
            };
            Some(Value::Real(z[(idx / n, idx % n)] + outlier))
        })
        .collect();
    let truth = table(vec![FeatureKind::Real; n], m, cells);
    let observed = subsample(&truth, fraction, &mut rng);
    Synthetic {
        observed,
        truth,
        k_true: k,
    }
}

/// Rank-`k` normal matrix plus `noise * N(0, 1)`, fully observed.
pub fn low_rank_gaussian(m: usize, n: usize, k: usize, noise: f64, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = normal(m, k, &mut rng) * normal(k, n, &mut rng) + normal(m, n, &mut rng) * noise;
    let t = DataTable::from_real_matrix(&z).expect("finite");
    Synthetic {
        observed: t.clone(),
        truth: t,
        k_true: k,
    }
}
