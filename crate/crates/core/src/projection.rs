//! Seeded random projections `A ∈ R^{D×d}` with fast `A·s` and `Aᵀ·y`.
//!
//! The workhorse is [`FastfoodMatrix`], the structured product
//! `c · Unpad_D · B · H · Π · G · H · Pad` where `H` is the unnormalized
//! Walsh-Hadamard matrix of size `2^ell ≥ D`, `B` random signs, `Π` a random
//! permutation and `G` standard normals. Nothing of size `D×d` is ever
//! stored; both products cost `O(2^ell · ell)`.
//!
//! With `c = 1/√(d·2^ell)` the matrix satisfies `E[AAᵀ] = I_D`: averaging
//! over `G` alone gives `H·Pad·Padᵀ·H → d·I`, and the Hadamard and sign
//! factors contribute `2^ell`.
//!
//! [`DenseProjection`] holds an explicit orthonormalized Gaussian basis, for
//! small problems that want a subspace drawn exactly uniformly.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{stream_rng, STREAM_GAUSS, STREAM_PERMUTATION, STREAM_SIGNS};

/// In-place unnormalized fast Walsh-Hadamard transform, `v ← H·v`.
pub fn fwht_inplace(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if !n.is_power_of_two() {
        return Err(Error::invalid(format!(
            "FWHT length must be a power of two, got {n}"
        )));
    }
    let mut half = 1;
    while half < n {
        for block in v.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
    Ok(())
}

/// A linear map between the intrinsic space `R^d` and parameter space `R^D`.
pub trait Projection: Send + Sync + fmt::Debug {
    /// `D`, the parameter count.
    fn big_dim(&self) -> usize;

    /// `d`, the intrinsic dimension.
    fn small_dim(&self) -> usize;

    /// `A·s` for `s ∈ R^d`.
    fn forward(&self, s: &[f64]) -> Result<Vec<f64>>;

    /// `Aᵀ·y` for `y ∈ R^D`.
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>>;

    /// `out += A·s`.
    fn forward_add(&self, s: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.big_dim(), out.len())?;
        let v = self.forward(s)?;
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
        Ok(())
    }
}

/// Implicit Fastfood projection, fully determined by `(seed, D, d)`.
#[derive(Clone, PartialEq)]
pub struct FastfoodMatrix {
    seed: u64,
    big_dim: usize,
    small_dim: usize,
    ell: u32,
    signs: Vec<f64>,
    perm: Vec<usize>,
    gauss: Vec<f64>,
    scale: f64,
}

impl FastfoodMatrix {
    pub fn new(seed: u64, big_dim: usize, small_dim: usize) -> Result<Self> {
        if big_dim == 0 || small_dim == 0 {
            return Err(Error::invalid(format!(
                "Fastfood dimensions must be positive, got D={big_dim}, d={small_dim}"
            )));
        }
        let n = big_dim.next_power_of_two();
        let ell = n.trailing_zeros();
        if small_dim > n {
            return Err(Error::invalid(format!(
                "intrinsic dimension {small_dim} exceeds padded size {n}"
            )));
        }

        let mut rng = stream_rng(seed, STREAM_SIGNS);
        let signs = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();

        // Fisher-Yates
        let mut rng = stream_rng(seed, STREAM_PERMUTATION);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }

        let mut rng = stream_rng(seed, STREAM_GAUSS);
        let gauss = (0..n).map(|_| rng.sample(StandardNormal)).collect();

        Ok(Self {
            seed,
            big_dim,
            small_dim,
            ell,
            signs,
            perm,
            gauss,
            scale: 1.0 / ((small_dim * n) as f64).sqrt(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Exponent of the padded size `2^ell`.
    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn padded_dim(&self) -> usize {
        1 << self.ell
    }

    /// Diagonal of `B`, entries ±1.
    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// `Π` as an index map: `(Π·v)[i] = v[perm[i]]`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Diagonal of `G`.
    pub fn gauss(&self) -> &[f64] {
        &self.gauss
    }

    /// The normalization constant `c`.
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl fmt::Debug for FastfoodMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FastfoodMatrix")
            .field("seed", &self.seed)
            .field("big_dim", &self.big_dim)
            .field("small_dim", &self.small_dim)
            .field("ell", &self.ell)
            .finish_non_exhaustive()
    }
}

impl Projection for FastfoodMatrix {
    fn big_dim(&self) -> usize {
        self.big_dim
    }

    fn small_dim(&self) -> usize {
        self.small_dim
    }

    fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len(self.small_dim, s.len())?;
        let n = self.padded_dim();
        let mut v = vec![0.0; n];
        v[..self.small_dim].copy_from_slice(s);
        fwht_inplace(&mut v)?;
        for (x, g) in v.iter_mut().zip(&self.gauss) {
            *x *= g;
        }
        let mut w: Vec<f64> = self.perm.iter().map(|&p| v[p]).collect();
        fwht_inplace(&mut w)?;
        w.truncate(self.big_dim);
        for (x, b) in w.iter_mut().zip(&self.signs) {
            *x *= b * self.scale;
        }
        Ok(w)
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.big_dim, y.len())?;
        let n = self.padded_dim();
        let mut w = vec![0.0; n];
        for ((w, &y), b) in w.iter_mut().zip(y).zip(&self.signs) {
            *w = y * b;
        }
        fwht_inplace(&mut w)?;
        let mut v = vec![0.0; n];
        for (&p, &x) in self.perm.iter().zip(&w) {
            v[p] = x;
        }
        for (x, g) in v.iter_mut().zip(&self.gauss) {
            *x *= g;
        }
        fwht_inplace(&mut v)?;
        v.truncate(self.small_dim);
        for x in v.iter_mut() {
            *x *= self.scale;
        }
        Ok(v)
    }
}

/// Explicit `D×d` basis.
#[derive(Clone, PartialEq)]
pub struct DenseProjection {
    matrix: DMatrix<f64>,
}

impl DenseProjection {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid("dense projection must be non-empty"));
        }
        Ok(Self { matrix })
    }

    /// Orthonormalized Gaussian basis of a uniformly random `d`-dimensional
    /// subspace, scaled by `√(D/d)` so that `E[AAᵀ] = I_D`. With `d = D` the
    /// result is an exactly orthogonal matrix.
    pub fn orthonormal(seed: u64, big_dim: usize, small_dim: usize) -> Result<Self> {
        if big_dim == 0 || small_dim == 0 || small_dim > big_dim {
            return Err(Error::invalid(format!(
                "orthonormal subspace needs 1 <= d <= D, got D={big_dim}, d={small_dim}"
            )));
        }
        let mut rng = stream_rng(seed, STREAM_GAUSS);
        let gaussian =
            DMatrix::<f64>::from_fn(big_dim, small_dim, |_, _| rng.sample(StandardNormal));
        let q = gaussian.qr().q();
        let scale = (big_dim as f64 / small_dim as f64).sqrt();
        Self::from_matrix(q.columns(0, small_dim).into_owned() * scale)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl fmt::Debug for DenseProjection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseProjection")
            .field("big_dim", &self.matrix.nrows())
            .field("small_dim", &self.matrix.ncols())
            .finish_non_exhaustive()
    }
}

impl Projection for DenseProjection {
    fn big_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn small_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len(self.small_dim(), s.len())?;
        let out = &self.matrix * DVector::from_column_slice(s);
        Ok(out.as_slice().to_vec())
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.big_dim(), y.len())?;
        let out = self.matrix.tr_mul(&DVector::from_column_slice(y));
        Ok(out.as_slice().to_vec())
    }
}

/// Which family of matrices a run draws its subspaces from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubspaceKind {
    #[default]
    Fastfood,
    /// Orthonormalized Gaussian basis, stored densely.
    Dense,
    /// Dense when `D <= AUTO_DENSE_LIMIT`, Fastfood otherwise.
    Auto,
}

/// Largest `D` at which [`SubspaceKind::Auto`] picks an exact dense subspace.
pub const AUTO_DENSE_LIMIT: usize = 64;

pub type SharedProjection = Arc<dyn Projection>;

impl SubspaceKind {
    pub fn build(self, seed: u64, big_dim: usize, small_dim: usize) -> Result<SharedProjection> {
        match self.resolve(big_dim) {
            SubspaceKind::Dense => Ok(Arc::new(DenseProjection::orthonormal(
                seed, big_dim, small_dim,
            )?)),
            _ => Ok(Arc::new(FastfoodMatrix::new(seed, big_dim, small_dim)?)),
        }
    }

    pub fn resolve(self, big_dim: usize) -> SubspaceKind {
        match self {
            SubspaceKind::Auto if big_dim <= AUTO_DENSE_LIMIT => SubspaceKind::Dense,
            SubspaceKind::Auto => SubspaceKind::Fastfood,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SubspaceKind::Fastfood => "fastfood",
            SubspaceKind::Dense => "dense",
            SubspaceKind::Auto => "auto",
        }
    }
}

impl std::str::FromStr for SubspaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fastfood" => Ok(SubspaceKind::Fastfood),
            "dense" => Ok(SubspaceKind::Dense),
            "auto" => Ok(SubspaceKind::Auto),
            other => Err(Error::config(
                "projection",
                format!("unknown projection `{other}` (expected fastfood, dense or auto)"),
            )),
        }
    }
}

/// Materializes `A` column by column through `forward`.
pub fn materialize(a: &dyn Projection) -> Result<DMatrix<f64>> {
    let (big, small) = (a.big_dim(), a.small_dim());
    let mut out = DMatrix::zeros(big, small);
    let mut e = vec![0.0; small];
    for j in 0..small {
        e[j] = 1.0;
        out.set_column(j, &DVector::from_vec(a.forward(&e)?));
        e[j] = 0.0;
    }
    Ok(out)
}
