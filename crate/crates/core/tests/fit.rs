use glrm::analysis::nuclear_norm_split;
use glrm::data::split_holdout;
use glrm::fit::{FitConfig, fit, fit_exact_quadratic, row_gradient, stochastic_row_gradient};
use glrm::init::{init_random, init_svd};
use glrm::persist::{load_model, save_model};
use glrm::synth;
use glrm::{DataTable, FeatureKind, Factors, GlrmProblem, LossSpec, ModelSpec, RegSpec, Value};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

fn nuclear(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.iter().sum()
}

/// A mixed table with a few holes.
fn mixed_problem(seed: u64, reg: RegSpec, offset: bool, scaling: bool) -> GlrmProblem {
    let s = synth::mixed(24, 4, 3, 3, 2, seed);
    let (observed, _) = split_holdout(&s.observed, 0.2, seed).unwrap();
    let losses = observed
        .kinds()
        .iter()
        .map(|k| match k {
            FeatureKind::Real => LossSpec::Huber,
            FeatureKind::Boolean => LossSpec::Logistic,
            FeatureKind::Ordinal(d) => LossSpec::OrdinalHinge(*d),
            other => panic!("{other}"),
        })
        .collect();
    let spec = ModelSpec::new(losses, 3)
        .with_regs(reg.clone(), reg)
        .with_offset(offset)
        .with_scaling(scaling);
    GlrmProblem::new(observed, spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn objective_never_increases(seed in 0u64..1000, which in 0usize..4, offset: bool, scaling: bool) {
        let reg = [RegSpec::Quadratic(0.1), RegSpec::L1(0.1), RegSpec::Nonneg, RegSpec::Zero][which].clone();
        let p = mixed_problem(seed, reg, offset, scaling);
        let init = init_random(&p, seed);
        let init = if p.objective(&init).is_finite() {
            init
        } else {
            let mut f = init;
            f.x.iter_mut().for_each(|v| *v = v.abs());
            f.y.iter_mut().for_each(|v| *v = v.abs());
            f
        };
        let cfg = FitConfig { max_iters: 40, ..FitConfig::default() };
        let (f, report) = fit(&p, init, &cfg).unwrap();
        for w in report.objective.windows(2) {
            prop_assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
        prop_assert!((p.objective(&f) - report.final_objective()).abs() <= 1e-9 * report.final_objective().abs().max(1.0));
        if offset {
            let last = p.k_eff() - 1;
            prop_assert!(f.x.column(last).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn objective_is_orthogonally_invariant(seed in 0u64..1000) {
        let p = mixed_problem(seed, RegSpec::Quadratic(0.3), false, true);
        let f = init_random(&p, seed + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = normal_matrix(p.k(), p.k(), &mut rng).qr().q();
        let rotated = Factors { x: &f.x * &q, y: q.transpose() * &f.y, sigma2: f.sigma2.clone() };
        let (a, b) = (p.objective(&f), p.objective(&rotated));
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn factored_penalty_bounds_nuclear_norm(seed in any::<u64>(), m in 1usize..8, n in 1usize..8, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal_matrix(m, k, &mut rng);
        let y = normal_matrix(k, n, &mut rng);
        let lhs = nuclear(&(&x * &y));
        let rhs = 0.5 * (x.norm_squared() + y.norm_squared());
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "{lhs} > {rhs}");
    }

    #[test]
    fn balanced_split_attains_nuclear_norm(seed in any::<u64>(), m in 1usize..8, n in 1usize..8, r in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = normal_matrix(m, r, &mut rng) * normal_matrix(r, n, &mut rng);
        let (x, y) = nuclear_norm_split(&z);
        prop_assert!((&x * &y - &z).norm() <= 1e-8 * z.norm().max(1.0));
        let half = 0.5 * (x.norm_squared() + y.norm_squared());
        prop_assert!((half - nuclear(&z)).abs() <= 1e-8 * nuclear(&z).max(1.0));
    }
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let p = mixed_problem(3, RegSpec::Quadratic(0.1), true, true);
    let f = init_random(&p, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in [0, 5, 17] {
        // Direct sum over the row's observed entries.
        let mut expected = vec![0.0; p.k_eff()];
        for &j in p.row_obs(i) {
            let block = p.block(j);
            let u: Vec<f64> = block.clone().map(|c| (0..p.k_eff()).map(|l| f.x[(i, l)] * f.y[(l, c)]).sum()).collect();
            let g = p.loss(j).grad(&u, p.value(i, j).unwrap()).unwrap();
            for (gc, c) in g.iter().zip(block) {
                for (l, e) in expected.iter_mut().enumerate() {
                    *e += gc * f.y[(l, c)] / p.sigma2()[j];
                }
            }
        }
        let full = row_gradient(&p, &f, i);
        for (a, b) in full.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
        let draws = 40_000;
        let mut mean = vec![0.0; p.k_eff()];
        let mut sq = vec![0.0; p.k_eff()];
        for _ in 0..draws {
            let g = stochastic_row_gradient(&p, &f, i, 0.4, &mut rng);
            for l in 0..g.len() {
                mean[l] += g[l] / draws as f64;
                sq[l] += g[l] * g[l] / draws as f64;
            }
        }
        for l in 0..mean.len() {
            let se = ((sq[l] - mean[l] * mean[l]).max(0.0) / draws as f64).sqrt();
            assert!((mean[l] - expected[l]).abs() <= 5.0 * se + 1e-12, "row {i}, coord {l}: {} vs {}", mean[l], expected[l]);
        }
    }
}

#[test]
fn exact_and_proximal_fits_agree_on_ridge_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = normal_matrix(20, 3, &mut rng) * normal_matrix(3, 15, &mut rng);
    let table = DataTable::from_real_matrix(&a).unwrap();
    let (table, _) = split_holdout(&table, 0.3, 2).unwrap();
    let p = GlrmProblem::new(table, ModelSpec::quadratic_pca(15, 3, 0.5)).unwrap();
    let init = init_svd(&p).unwrap();
    let tight = FitConfig { max_iters: 5000, rel_tol: 1e-12, ..FitConfig::default() };
    let (fe, re) = fit_exact_quadratic(&p, init.clone(), &tight).unwrap();
    let (fp, rp) = fit(&p, init, &tight).unwrap();
    let (oe, op) = (re.final_objective(), rp.final_objective());
    assert!((oe - op).abs() <= 1e-5 * oe, "{oe} vs {op}");
    assert!((p.objective(&fe) - oe).abs() <= 1e-9 * oe);
    assert!((p.objective(&fp) - op).abs() <= 1e-9 * op);
}

#[test]
fn saved_model_reproduces_imputation() {
    let p = mixed_problem(8, RegSpec::Quadratic(0.1), true, true);
    let (f, _) = fit(&p, init_random(&p, 2), &FitConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.glrm");
    save_model(&p, &f, &path).unwrap();
    let saved = load_model(&path).unwrap();
    assert_eq!(saved.factors, f);
    let rebuilt = GlrmProblem::new(p.table().clone(), saved.spec).unwrap();
    assert_eq!(rebuilt.impute_table(&saved.factors), p.impute_table(&f));
}

#[test]
fn imputed_tables_keep_kinds_and_fill_everything() {
    let p = mixed_problem(5, RegSpec::Quadratic(0.1), true, true);
    let (f, _) = fit(&p, init_random(&p, 1), &FitConfig::default()).unwrap();
    let imputed = p.impute_table(&f);
    assert_eq!(imputed.kinds(), p.table().kinds());
    assert_eq!(imputed.n_observed(), p.m() * p.n());
    for j in 0..p.n() {
        for i in 0..p.m() {
            let ok = match (imputed.kind(j), imputed.get(i, j).unwrap()) {
                (FeatureKind::Real, Value::Real(v)) => v.is_finite(),
                (FeatureKind::Boolean, Value::Bool(_)) => true,
                (FeatureKind::Ordinal(d), Value::Level(l)) => (1..=*d).contains(l),
                _ => false,
            };
            assert!(ok, "cell ({i}, {j})");
        }
    }
}
