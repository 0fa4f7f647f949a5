//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Top singular triples, largest first: `U` is m×k, `V` is n×k.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn orthonormal_columns(m: DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    let q = m.qr().q();
    q.columns(0, cols).into_owned()
}

/// Full thin SVD with singular values sorted in decreasing order.
pub fn dense_svd(a: &DMatrix<f64>) -> Svd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    Svd { u, s, v }
}

/// Top-`k` singular triples by block power iteration with re-orthogonalization.
///
/// Iterates until the leading `k` singular value estimates change by less than
/// `tol` (relative) or `max_iter` sweeps. Directions beyond the numerical rank
/// come back with zero singular values.
pub fn top_k_svd(a: &DMatrix<f64>, k: usize, tol: f64, max_iter: usize, seed: u64) -> Svd {
    let (m, n) = a.shape();
    let r = m.min(n);
    let k_eff = k.min(r);
    let block = (k_eff + 5).min(r).max(k_eff);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = Svd {
        u: DMatrix::zeros(m, k),
        s: vec![0.0; k],
        v: DMatrix::zeros(n, k),
    };
    if k_eff == 0 || a.iter().all(|&x| x == 0.0) {
        return result;
    }
    let mut v = orthonormal_columns(gaussian_matrix(n, block, &mut rng));
    let mut prev = vec![f64::INFINITY; k_eff];
    for _ in 0..max_iter {
        let u = orthonormal_columns(a * &v);
        v = orthonormal_columns(a.transpose() * &u);
        let est = dense_svd(&(a * &v)).s;
        let done = (0..k_eff).all(|i| (est[i] - prev[i]).abs() <= tol * est[0].max(f64::MIN_POSITIVE));
        prev = est[..k_eff].to_vec();
        if done {
            break;
        }
    }
    // Rayleigh-Ritz on the converged subspace.
    let w = a * &v;
    let small = dense_svd(&w);
    for c in 0..k_eff {
        result.s[c] = small.s[c];
        result.u.set_column(c, &small.u.column(c));
        result.v.set_column(c, &(&v * small.v.column(c)));
    }
    let scale = result.s[0];
    for c in 0..k_eff {
        if result.s[c] <= 1e-12 * scale {
            result.s[c] = 0.0;
        }
    }
    result
}

/// Spectral norm by power iteration on the symmetric dilation `[0 M; M' 0]`.
pub fn spectral_norm(mat: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let (m, n) = mat.shape();
    if m == 0 || n == 0 || mat.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    let mut y: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut sigma = 0.0;
    for _ in 0..max_iter {
        let nx = mat * &y;
        let ny = mat.transpose() * &x;
        let norm = (nx.norm_squared() + ny.norm_squared()).sqrt();
        let before = (x.norm_squared() + y.norm_squared()).sqrt();
        let est = norm / before;
        x = nx / norm;
        y = ny / norm;
        if (est - sigma).abs() <= tol * est {
            sigma = est;
            break;
        }
        sigma = est;
    }
    // The iterate mixes the +sigma and -sigma eigenvectors; a final two-step
    // Rayleigh quotient removes the oscillation.
    let yy = mat.transpose() * (mat * &y);
    let ry = if y.norm_squared() > 0.0 {
        (y.dot(&yy) / y.norm_squared()).sqrt()
    } else {
        0.0
    };
    sigma.max(ry)
}

/// Cholesky factor of `g`, adding a `1e-10` ridge (with a warning) if needed.
pub fn cholesky_with_jitter(g: &DMatrix<f64>) -> Cholesky<f64, Dyn> {
    if let Some(c) = Cholesky::new(g.clone()) {
        return c;
    }
    let k = g.nrows();
    let mut jitter = 1e-10;
    loop {
        log::warn!("singular Gram matrix; adding ridge {jitter:e}");
        let jittered = g + DMatrix::identity(k, k) * jitter;
        if let Some(c) = Cholesky::new(jittered) {
            return c;
        }
        jitter *= 100.0;
    }
}

/// Nuclear norm.
pub fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        gaussian_matrix(m, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn dense_svd_sorted_and_reconstructs() {
        let a = random(7, 5, 1);
        let svd = dense_svd(&a);
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        let rec = &svd.u * DMatrix::from_diagonal(&DVector::from_vec(svd.s.clone())) * svd.v.transpose();
        assert!((rec - a).norm() < 1e-12);
    }

    #[test]
    fn block_power_matches_dense() {
        let a = random(30, 20, 2);
        let dense = dense_svd(&a);
        let top = top_k_svd(&a, 4, 1e-12, 2000, 3);
        for i in 0..4 {
            assert!((dense.s[i] - top.s[i]).abs() < 1e-8 * dense.s[0], "{i}");
        }
    }

    #[test]
    fn rank_one_singular_value() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let v = DVector::from_vec(vec![0.5, -1.0]);
        let a = &u * v.transpose();
        let top = top_k_svd(&a, 1, 1e-8, 300, 0);
        let exact = u.norm() * v.norm();
        assert!((top.s[0] - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn rank_deficient_pads_with_zeros() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let v = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let a = &u * v.transpose();
        let top = top_k_svd(&a, 3, 1e-8, 300, 0);
        assert!(top.s[0] > 0.0);
        assert_eq!(&top.s[1..], &[0.0, 0.0]);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = random(12, 9, 4);
        let s = dense_svd(&a).s[0];
        assert!((spectral_norm(&a, 1e-9, 1000) - s).abs() < 1e-6 * s);
    }
}
