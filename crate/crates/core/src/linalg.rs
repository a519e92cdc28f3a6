//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Largest eigenvalue of a symmetric matrix (0 for the empty matrix).
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).0.last().copied().unwrap_or(0.0)
}

/// Operator norm of a symmetric matrix.
pub fn op_norm_sym(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Principal square root of a positive semidefinite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0).sqrt()));
    &vecs * DMatrix::from_diagonal(&d) * vecs.transpose()
}

/// Haar-random orthogonal matrix via QR of a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Random symmetric positive definite matrix with top eigenvalue exactly `norm`.
pub fn random_pd_with_norm<R: Rng>(n: usize, norm: f64, rng: &mut R) -> DMatrix<f64> {
    let q = random_orthogonal(n, rng);
    let mut lam: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    lam[0] = 1.0;
    let d = DMatrix::from_diagonal(&DVector::from_iterator(n, lam.iter().map(|l| l * norm)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Maximum absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Binomial coefficient as a float; exact below 2^53.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// All `k`-subsets of `0..n` as bitmasks, in increasing mask order.
pub fn subsets_of_size(n: usize, k: usize) -> Vec<u32> {
    (0u32..(1u32 << n)).filter(|m| m.count_ones() as usize == k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_count_matches_binomial() {
        for n in 0..8 {
            for k in 0..=n {
                let s = subsets_of_size(n, k);
                assert_eq!(s.len() as f64, binomial(n, k), "n={n} k={k}");
                assert!(s.iter().all(|m| m.count_ones() as usize == k));
                let mut d = s.clone();
                d.dedup();
                assert_eq!(d.len(), s.len());
            }
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = sqrt_psd(&m);
        assert!(max_abs_diff(&(&r * &r), &m) < 1e-12);
    }

    #[test]
    fn random_pd_has_requested_norm() {
        let mut rng = crate::rng::stream(1, 0);
        let m = random_pd_with_norm(5, 0.25, &mut rng);
        assert!((op_norm_sym(&m) - 0.25).abs() < 1e-12);
        assert!(sym_eigen(&m).0[0] > 0.0);
    }
}
