mod common;

use common::{convex, nonconvex, prox_objective, random_vec, structured_candidates};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn convex_prox_beats_sampled_candidates(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in convex() {
            let v = random_vec(&mut rng, 3.0);
            let alpha = 0.05 + 2.0 * rng.random::<f64>();
            let p = r.prox(&v, alpha);
            let best = prox_objective(&r, &p, &v, alpha);
            prop_assert!(best.is_finite(), "{r}: prox infeasible {p:?}");
            for t in 0..1000 {
                // Half the candidates are nearby, half are other feasible points.
                let q: Vec<f64> = if t % 2 == 0 {
                    let step = 10f64.powi(-(t % 6) as i32);
                    p.iter().map(|x| x + step * (2.0 * rng.random::<f64>() - 1.0)).collect()
                } else {
                    r.prox(&random_vec(&mut rng, 3.0), alpha)
                };
                let other = prox_objective(&r, &q, &v, alpha);
                prop_assert!(best <= other + 1e-10 * other.abs().max(1.0), "{r}: {best} > {other} at {q:?}");
            }
        }
    }

    #[test]
    fn nonconvex_prox_matches_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in nonconvex() {
            let v = random_vec(&mut rng, 3.0);
            let alpha = 0.05 + 2.0 * rng.random::<f64>();
            let p = r.prox(&v, alpha);
            let got = prox_objective(&r, &p, &v, alpha);
            let best = structured_candidates(&r, &v)
                .iter()
                .map(|q| prox_objective(&r, q, &v, alpha))
                .fold(f64::INFINITY, f64::min);
            prop_assert!((got - best).abs() <= 1e-12 * best.max(1.0), "{r} at {v:?}: {p:?} costs {got}, best {best}");
        }
    }

    #[test]
    fn projections_are_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in convex().into_iter().chain(nonconvex()).filter(|r| r.is_indicator()) {
            let v = random_vec(&mut rng, 3.0);
            let alpha = 0.05 + 2.0 * rng.random::<f64>();
            let p = r.prox(&v, alpha);
            let pp = r.prox(&p, alpha);
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() <= 1e-12, "{r}: {p:?} then {pp:?}");
            }
        }
    }

    #[test]
    fn convex_prox_is_nonexpansive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in convex() {
            let u = random_vec(&mut rng, 3.0);
            let v = random_vec(&mut rng, 3.0);
            let alpha = 0.05 + 2.0 * rng.random::<f64>();
            let (pu, pv) = (r.prox(&u, alpha), r.prox(&v, alpha));
            let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            prop_assert!(d(&pu, &pv) <= d(&u, &v) + 1e-12, "{r}");
        }
    }
}
