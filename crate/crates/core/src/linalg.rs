//! Small-matrix linear algebra: SVD, symmetric eigendecomposition, polar
//! projection and orthogonal sampling. Backed by nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Thin singular value decomposition `m = U diag(s) V^T` with singular
/// values sorted non-increasing and non-negative.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("svd", "non-finite entry in input"));
    }
    let dec = m.clone().svd(true, true);
    let u = dec
        .u
        .ok_or_else(|| Error::numeric("svd", "U factor unavailable"))?;
    let v_t = dec
        .v_t
        .ok_or_else(|| Error::numeric("svd", "V factor unavailable"))?;
    Ok(Svd {
        u,
        singular_values: dec.singular_values,
        v: v_t.transpose(),
    })
}

/// Symmetric eigendecomposition `m = Q diag(vals) Q^T`. The input is
/// symmetrized first to shed round-off asymmetry.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim("sym_eig", "matrix must be square"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("sym_eig", "non-finite entry in input"));
    }
    let sym = (m + m.transpose()) * 0.5;
    let dec = sym.symmetric_eigen();
    Ok((dec.eigenvalues, dec.eigenvectors))
}

/// Orthogonal polar factor of a wide matrix (`rows <= cols`): for
/// `m = U S V^T` returns `(U V^T, sigma_min)`. `U V^T` has orthonormal rows
/// and is the closest row-orthonormal matrix to `m` in Frobenius norm.
pub fn polar_rows(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let dec = svd(m)?;
    let sigma_min = dec
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok((dec.u * dec.v.transpose(), sigma_min))
}

/// Samples a `k x d` matrix with orthonormal rows (`k <= d`) by taking the
/// polar factor of a Gaussian matrix; for `k == d` this is Haar-uniform.
pub fn random_orthogonal_rows<R: Rng>(k: usize, d: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if k > d {
        return Err(Error::dim(
            "random_orthogonal_rows",
            format!("k {k} > d {d}"),
        ));
    }
    loop {
        let g = DMatrix::from_fn(k, d, |_, _| StandardNormal.sample(rng));
        let (q, sigma_min) = polar_rows(&g)?;
        // A singular Gaussian draw has probability zero; retry to be safe.
        if sigma_min > 1e-10 {
            return Ok(q);
        }
    }
}

/// Solves `a x = b` for symmetric positive (semi-)definite `a`, falling back
/// to LU when the Cholesky factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::numeric("solve_spd", "singular system"))
}

/// Max-abs deviation of `q q^T` from the identity.
pub fn row_orthonormality_deviation(q: &DMatrix<f64>) -> f64 {
    let gram = q * q.transpose();
    let mut dev: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev
}
