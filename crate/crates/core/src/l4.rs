//! l4-norm maximization over the orthogonal group via MSP
//! (matching, stretching, projection).
//!
//! Maximizing the element-wise l4-norm of `A * Y` over row-orthonormal `A`
//! promotes sparsity: on the unit l2 sphere, `||v||_4^4 <= 1` with equality
//! exactly at one-hot vectors. The MSP fixed-point iteration
//!
//! ```text
//! delta = (A Y)^{o3} Y^T,   A' = polar(delta)
//! ```
//!
//! (elementwise cube, then the orthogonal polar factor) is monotone in the
//! l4 objective because `x -> x^4` is convex: the polar factor maximizes the
//! linearization over the orthogonal set.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{polar_rows, random_orthogonal_rows, row_orthonormality_deviation};
use crate::tensor::{assemble_patches, extract_patches_t3, PatchGeometry, Tensor3};

pub const ORTHO_TOL: f64 = 1e-8;
pub const ASCENT_SLACK: f64 = 1e-10;
const RANK_DEFICIENCY_EPS: f64 = 1e-12;

/// Sum of fourth powers of all entries.
pub fn l4_norm4(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v * v * v).sum()
}

/// Slice variant of [`l4_norm4`] for tensor payloads.
pub fn l4_norm4_slice(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x * x * x).sum()
}

/// An l4 maximization instance over vectorized patches.
#[derive(Debug, Clone)]
pub struct L4Problem {
    /// `d x n` matrix whose columns are vectorized patches.
    pub patches: DMatrix<f64>,
    /// Number of dictionary rows `K`, with `K <= d`.
    pub code_dim: usize,
    pub max_iter: usize,
    /// Convergence tolerance on the Frobenius change of the iterate.
    pub tol: f64,
}

impl L4Problem {
    pub fn new(patches: DMatrix<f64>, code_dim: usize) -> Result<Self> {
        if patches.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("L4Problem::new", "non-finite patch entry"));
        }
        let d = patches.nrows();
        if code_dim == 0 || code_dim > d {
            return Err(Error::dim(
                "L4Problem::new",
                format!("code dim {code_dim} outside 1..={d}"),
            ));
        }
        if patches.ncols() < d {
            log::warn!(
                "l4 problem has fewer patches ({}) than the patch dimension ({}); \
                 recovery may be unreliable",
                patches.ncols(),
                d
            );
        }
        Ok(L4Problem {
            patches,
            code_dim,
            max_iter: 500,
            tol: 1e-6,
        })
    }

    pub fn with_schedule(mut self, max_iter: usize, tol: f64) -> Self {
        self.max_iter = max_iter;
        self.tol = tol;
        self
    }
}

/// A row-orthonormal iterate together with its objective value.
#[derive(Debug, Clone)]
pub struct OrthogonalIterate {
    basis: DMatrix<f64>,
    pub iteration: usize,
    pub l4_value: f64,
}

impl OrthogonalIterate {
    pub fn new(basis: DMatrix<f64>, patches: &DMatrix<f64>) -> Result<Self> {
        let dev = row_orthonormality_deviation(&basis);
        if dev > ORTHO_TOL {
            return Err(Error::numeric(
                "OrthogonalIterate::new",
                format!("row-Gram deviation {dev:.3e} exceeds {ORTHO_TOL:.0e}"),
            ));
        }
        let l4_value = l4_norm4(&(&basis * patches));
        Ok(OrthogonalIterate {
            basis,
            iteration: 0,
            l4_value,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
}

/// One matching/stretching/projection step.
///
/// A rank-deficient update direction (sigma_min below 1e-12) is perturbed
/// once by 1e-10-scale noise; a second failure is a solver error.
pub fn msp_step(iterate: &OrthogonalIterate, patches: &DMatrix<f64>) -> Result<OrthogonalIterate> {
    if patches.nrows() != iterate.basis.ncols() {
        return Err(Error::dim(
            "msp_step",
            format!(
                "patch dim {} vs basis columns {}",
                patches.nrows(),
                iterate.basis.ncols()
            ),
        ));
    }
    let mut codes = &iterate.basis * patches;
    for v in codes.iter_mut() {
        *v = *v * *v * *v;
    }
    let delta = codes * patches.transpose();
    let (mut projected, mut sigma_min) = polar_rows(&delta)?;
    if sigma_min < RANK_DEFICIENCY_EPS {
        // Deterministic retry: tiny seeded perturbation breaks the tie.
        let mut rng = ChaCha8Rng::seed_from_u64(iterate.iteration as u64);
        let noise = DMatrix::from_fn(delta.nrows(), delta.ncols(), |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * 1e-10
        });
        let (p2, s2) = polar_rows(&(&delta + noise))?;
        if s2 < RANK_DEFICIENCY_EPS {
            return Err(Error::solver(
                "msp_step",
                format!("update direction rank-deficient (sigma_min {s2:.3e}) after retry"),
            ));
        }
        projected = p2;
        sigma_min = s2;
    }
    let _ = sigma_min;
    let next = OrthogonalIterate {
        l4_value: l4_norm4(&(&projected * patches)),
        basis: projected,
        iteration: iterate.iteration + 1,
    };
    if next.l4_value < iterate.l4_value - ASCENT_SLACK {
        return Err(Error::solver(
            "msp_step",
            format!(
                "l4 objective decreased: {} -> {}",
                iterate.l4_value, next.l4_value
            ),
        ));
    }
    Ok(next)
}

/// Solver output: the dictionary, the codes `A * Y`, the per-iteration l4
/// trace and whether the iterate-change tolerance was reached.
#[derive(Debug, Clone)]
pub struct L4Solution {
    pub basis: DMatrix<f64>,
    pub codes: DMatrix<f64>,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn solve_from(problem: &L4Problem, init: DMatrix<f64>) -> Result<L4Solution> {
    if problem.patches.iter().all(|&v| v == 0.0) {
        return Err(Error::degenerate("solve_l4", "patch matrix is all zero"));
    }
    let mut current = OrthogonalIterate::new(init, &problem.patches)?;
    let mut trace = vec![current.l4_value];
    let mut converged = false;
    for _ in 0..problem.max_iter {
        let next = msp_step(&current, &problem.patches)?;
        let change = (&next.basis - &current.basis).norm();
        trace.push(next.l4_value);
        let done = change < problem.tol;
        current = next;
        if done {
            converged = true;
            break;
        }
    }
    let codes = &current.basis * &problem.patches;
    Ok(L4Solution {
        basis: current.basis,
        codes,
        trace,
        converged,
        iterations: current.iteration,
    })
}

/// Runs MSP from a uniformly random row-orthonormal initialization.
/// Hitting `max_iter` without meeting the tolerance is reported through
/// [`L4Solution::converged`], not as an error.
pub fn solve_l4(problem: &L4Problem, seed: u64) -> Result<L4Solution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = random_orthogonal_rows(problem.code_dim, problem.patches.nrows(), &mut rng)?;
    solve_from(problem, init)
}

/// Runs MSP from a caller-supplied iterate (used to warm-start across
/// training epochs).
pub fn solve_l4_warm(problem: &L4Problem, init: &DMatrix<f64>) -> Result<L4Solution> {
    if init.nrows() != problem.code_dim || init.ncols() != problem.patches.nrows() {
        return Err(Error::dim(
            "solve_l4_warm",
            format!(
                "init {}x{} inconsistent with problem ({}x{})",
                init.nrows(),
                init.ncols(),
                problem.code_dim,
                problem.patches.nrows()
            ),
        ));
    }
    solve_from(problem, init.clone())
}

/// Patch-domain analysis: extracts patches on the given grid and stacks the
/// per-position codes `A * patch` into a `K`-channel tensor.
pub fn encode_l4(input: &Tensor3, basis: &DMatrix<f64>, geom: &PatchGeometry) -> Result<Tensor3> {
    if basis.ncols() != geom.patch_dim() {
        return Err(Error::dim(
            "encode_l4",
            format!(
                "basis has {} columns but geometry patch dim is {}",
                basis.ncols(),
                geom.patch_dim()
            ),
        ));
    }
    let patches = extract_patches_t3(input, geom)?;
    let codes = basis * patches;
    let k = basis.nrows();
    let mut data = Vec::with_capacity(k * geom.grid_len());
    for c in 0..k {
        for p in 0..geom.grid_len() {
            data.push(codes[(c, p)]);
        }
    }
    Tensor3::new(k, geom.grid_h, geom.grid_w, data)
}

/// Adjoint of [`encode_l4`]: `A^T * codes` per grid position, reassembled
/// with coverage averaging. Exact inverse of the encoder when `K == d`.
pub fn decode_l4(codes: &Tensor3, basis: &DMatrix<f64>, geom: &PatchGeometry) -> Result<Tensor3> {
    if codes.channels() != basis.nrows()
        || codes.height() != geom.grid_h
        || codes.width() != geom.grid_w
    {
        return Err(Error::dim(
            "decode_l4",
            format!(
                "codes {}x{}x{} inconsistent with basis rows {} and grid {}x{}",
                codes.channels(),
                codes.height(),
                codes.width(),
                basis.nrows(),
                geom.grid_h,
                geom.grid_w
            ),
        ));
    }
    let code_matrix = codes.as_channel_matrix();
    let patches = basis.transpose() * code_matrix;
    assemble_patches(&patches, geom)
}

/// Greedy signed-permutation alignment between two row dictionaries
/// (test oracle for planted-recovery checks): rows are matched by absolute
/// correlation, largest first, signs chosen to make correlations positive.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    /// `assignment[i]` is the reference row matched to estimate row `i`.
    pub assignment: Vec<usize>,
    pub signs: Vec<f64>,
    pub min_correlation: f64,
    pub mean_correlation: f64,
}

pub fn align_signed_permutation(
    estimate: &DMatrix<f64>,
    reference: &DMatrix<f64>,
) -> Result<AlignmentReport> {
    if estimate.shape() != reference.shape() {
        return Err(Error::dim(
            "align_signed_permutation",
            format!("shapes {:?} vs {:?}", estimate.shape(), reference.shape()),
        ));
    }
    let k = estimate.nrows();
    let mut corr = DMatrix::zeros(k, k);
    for i in 0..k {
        let ei = estimate.row(i);
        let ni = ei.norm();
        for j in 0..k {
            let rj = reference.row(j);
            let nj = rj.norm();
            if ni == 0.0 || nj == 0.0 {
                return Err(Error::degenerate(
                    "align_signed_permutation",
                    format!("zero row (estimate {i} / reference {j})"),
                ));
            }
            corr[(i, j)] = ei.dot(&rj) / (ni * nj);
        }
    }
    let mut assignment = vec![usize::MAX; k];
    let mut signs = vec![0.0; k];
    let mut row_used = vec![false; k];
    let mut col_used = vec![false; k];
    let mut correlations = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best = (0usize, 0usize, -1.0f64);
        for i in 0..k {
            if row_used[i] {
                continue;
            }
            for j in 0..k {
                if col_used[j] {
                    continue;
                }
                if corr[(i, j)].abs() > best.2 {
                    best = (i, j, corr[(i, j)].abs());
                }
            }
        }
        let (i, j, c) = best;
        row_used[i] = true;
        col_used[j] = true;
        assignment[i] = j;
        signs[i] = if corr[(i, j)] >= 0.0 { 1.0 } else { -1.0 };
        correlations.push(c);
    }
    let min_correlation = correlations.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_correlation = correlations.iter().sum::<f64>() / k as f64;
    Ok(AlignmentReport {
        assignment,
        signs,
        min_correlation,
        mean_correlation,
    })
}
