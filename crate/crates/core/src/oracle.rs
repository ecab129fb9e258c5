//! Brute-force reference constructions used to check the fast paths.
//!
//! Compiled only for tests or with the `oracles` feature. Nothing here calls
//! the FWHT: the Hadamard matrix is built from its closed form
//! `H[i][j] = (-1)^popcount(i & j)` and every factor is multiplied densely.

use nalgebra::{DMatrix, DVector};

use crate::projection::FastfoodMatrix;

pub fn hadamard(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    })
}

/// Dense `D×d` matrix equal to `c · Unpad · B · H · Π · G · H · Pad`.
pub fn dense_fastfood(a: &FastfoodMatrix) -> DMatrix<f64> {
    use crate::projection::Projection;

    let n = a.padded_dim();
    let (big, small) = (a.big_dim(), a.small_dim());
    let h = hadamard(n);
    let b = DMatrix::from_diagonal(&DVector::from_column_slice(a.signs()));
    let g = DMatrix::from_diagonal(&DVector::from_column_slice(a.gauss()));
    let mut pi = DMatrix::zeros(n, n);
    for (i, &p) in a.permutation().iter().enumerate() {
        pi[(i, p)] = 1.0;
    }
    let pad = DMatrix::from_fn(n, small, |i, j| if i == j { 1.0 } else { 0.0 });
    let unpad = DMatrix::from_fn(big, n, |i, j| if i == j { 1.0 } else { 0.0 });
    unpad * b * &h * pi * g * &h * pad * a.scale()
}

/// `‖(I − P)v‖∞` where `P` projects onto the column span of `basis`.
pub fn orthogonal_residual(basis: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    let svd = basis.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let tol = svd.singular_values.max() * 1e-10;
    let mut proj = DVector::zeros(v.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let col = u.column(k);
            proj += col * col.dot(&v);
        }
    }
    (v - proj).amax()
}

/// Max deviation of the analytic gradient from central differences with step
/// `h`, relative to the largest gradient entry.
pub fn finite_difference_error(
    oracle: &dyn crate::models::GradientOracle,
    theta: &[f64],
    batch: &[usize],
    h: f64,
) -> f64 {
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let analytic = oracle.loss_and_grad(theta, batch, &mut rng).grad;
    let mut probe = theta.to_vec();
    let mut numeric = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = oracle.loss(&probe, batch);
        probe[i] = orig - h;
        let down = oracle.loss(&probe, batch);
        probe[i] = orig;
        numeric[i] = (up - down) / (2.0 * h);
    }
    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}
