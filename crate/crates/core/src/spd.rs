//! SPD embeddings of feature maps and the affine-invariant Riemannian
//! machinery behind the manifold data-fidelity loss.
//!
//! A feature map is summarized by its channel covariance plus a ridge,
//! which lands on the symmetric positive-definite cone; distances between
//! embeddings are measured with the affine-invariant metric
//! `d(A, B) = ||logm(A^{-1/2} B A^{-1/2})||_F`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::sym_eig;
use crate::tensor::Tensor3;

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const MIN_EIGENVALUE: f64 = 1e-12;

/// A validated symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    data: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry (max-abs deviation at most 1e-10) and positive
    /// definiteness (min eigenvalue at least 1e-12).
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != data.ncols() || data.nrows() == 0 {
            return Err(Error::dim("SpdMatrix::new", "matrix must be square"));
        }
        let mut asym: f64 = 0.0;
        for i in 0..data.nrows() {
            for j in 0..data.ncols() {
                asym = asym.max((data[(i, j)] - data[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(Error::numeric(
                "SpdMatrix::new",
                format!("symmetry deviation {asym:.3e} exceeds {SYMMETRY_TOL:.0e}"),
            ));
        }
        let (vals, _) = sym_eig(&data)?;
        let min_eig = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if min_eig < MIN_EIGENVALUE {
            return Err(Error::numeric(
                "SpdMatrix::new",
                format!("min eigenvalue {min_eig:.3e} below {MIN_EIGENVALUE:.0e}"),
            ));
        }
        Ok(SpdMatrix { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Distance flavor.
///
/// * `AffineInvariant` (default): the geodesic SPD distance
///   `||logm(A^{-1/2} B A^{-1/2})||_F`.
/// * `Verbatim`: `||(logm B)^{-1/2} A (logm B)^{-1/2}||_F`, defined only
///   when `logm B` is itself positive definite (all eigenvalues of `B`
///   above 1). Kept for comparison only; it is not a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    #[default]
    AffineInvariant,
    Verbatim,
}

#[derive(Debug, Clone, Copy)]
pub struct ManifoldParams {
    /// Ridge added to embedding diagonals to secure positive definiteness.
    pub ridge: f64,
    pub distance_mode: DistanceMode,
}

impl Default for ManifoldParams {
    fn default() -> Self {
        ManifoldParams {
            ridge: 1e-6,
            distance_mode: DistanceMode::AffineInvariant,
        }
    }
}

impl ManifoldParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!(
                "manifold ridge {} must be positive",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Embeds a feature map as `C + ridge*I`, where `C` is the channel
/// covariance over spatial positions (sample covariance, `P - 1`
/// normalization). A single spatial position leaves the covariance
/// undefined.
pub fn spd_embed(code: &Tensor3, params: &ManifoldParams) -> Result<SpdMatrix> {
    params.validate()?;
    let c = code.channels();
    let positions = code.height() * code.width();
    if c == 0 || positions == 0 {
        return Err(Error::dim("spd_embed", "empty code"));
    }
    if positions < 2 {
        return Err(Error::degenerate(
            "spd_embed",
            "covariance undefined for a single spatial position",
        ));
    }
    let mut means = vec![0.0f64; c];
    for (ch, mean) in means.iter_mut().enumerate() {
        *mean = code.channel(ch).iter().sum::<f64>() / positions as f64;
    }
    let mut cov = DMatrix::zeros(c, c);
    let norm = 1.0 / (positions as f64 - 1.0);
    for a in 0..c {
        let ca = code.channel(a);
        for b in a..c {
            let cb = code.channel(b);
            let mut acc = 0.0;
            for p in 0..positions {
                acc += (ca[p] - means[a]) * (cb[p] - means[b]);
            }
            let v = acc * norm;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    for i in 0..c {
        cov[(i, i)] += params.ridge;
    }
    SpdMatrix::new(cov)
}

fn eig_checked(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (vals, vecs) = sym_eig(m)?;
    let vals: Vec<f64> = vals.iter().copied().collect();
    if vals.iter().any(|&v| v < MIN_EIGENVALUE) {
        return Err(Error::numeric(
            "spd_logm",
            format!(
                "eigenvalue below {MIN_EIGENVALUE:.0e}; increase the embedding ridge epsilon"
            ),
        ));
    }
    Ok((vals, vecs))
}

fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = eig_checked(m)?;
    let mapped = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| f(v)),
    ));
    let out = &vecs * mapped * vecs.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Matrix logarithm of an SPD matrix via eigendecomposition.
pub fn spd_logm(m: &SpdMatrix) -> Result<DMatrix<f64>> {
    spectral_map(m.matrix(), f64::ln)
}

/// Matrix exponential of a symmetric matrix (inverse of [`spd_logm`]).
pub fn spd_expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim("spd_expm", "matrix must be square"));
    }
    let (vals, vecs) = sym_eig(m)?;
    let mapped = DMatrix::from_diagonal(&vals.map(f64::exp));
    let out = &vecs * mapped * vecs.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

fn inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spectral_map(m, |v| 1.0 / v.sqrt())
}

/// Distance between two SPD matrices under `params.distance_mode`.
pub fn spd_dist(a: &SpdMatrix, b: &SpdMatrix, params: &ManifoldParams) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(
            "spd_dist",
            format!("dims {} vs {}", a.dim(), b.dim()),
        ));
    }
    match params.distance_mode {
        DistanceMode::AffineInvariant => {
            let w = inv_sqrt(a.matrix())?;
            let inner = &w * b.matrix() * &w;
            let log = spectral_map(&inner, f64::ln)?;
            Ok(log.norm())
        }
        DistanceMode::Verbatim => {
            let log_b = spd_logm(b)?;
            let (vals, _) = sym_eig(&log_b)?;
            if vals.iter().any(|&v| v < MIN_EIGENVALUE) {
                return Err(Error::numeric(
                    "spd_dist",
                    "verbatim mode requires logm of the second argument to be positive definite",
                ));
            }
            let w = inv_sqrt(&log_b)?;
            let inner = &w * a.matrix() * &w;
            Ok(inner.norm())
        }
    }
}

/// Per-pair products of per-layer manifold distances:
/// `out[(i, j)] = prod_l d( embed(stack_y[l][j]), embed(P_l stack_x[l][i]) )`.
///
/// `stack_x[l]` / `stack_y[l]` hold the layer-`l` codes of every source /
/// target sample; `associators[l]` is the layer's channel map.
pub fn manifold_pair_distances(
    stack_x: &[Vec<Tensor3>],
    stack_y: &[Vec<Tensor3>],
    associators: &[DMatrix<f64>],
    params: &ManifoldParams,
) -> Result<DMatrix<f64>> {
    if stack_x.len() != stack_y.len() || stack_x.len() != associators.len() {
        return Err(Error::dim(
            "manifold_pair_distances",
            format!(
                "layer counts differ: x {}, y {}, P {}",
                stack_x.len(),
                stack_y.len(),
                associators.len()
            ),
        ));
    }
    if stack_x.is_empty() {
        return Err(Error::dim("manifold_pair_distances", "no layers"));
    }
    let s = stack_x[0].len();
    let t = stack_y[0].len();
    if s == 0 || t == 0 {
        return Err(Error::dim("manifold_pair_distances", "empty batch"));
    }
    let mut out = DMatrix::from_element(s, t, 1.0);
    for (l, p) in associators.iter().enumerate() {
        if stack_x[l].len() != s || stack_y[l].len() != t {
            return Err(Error::dim(
                "manifold_pair_distances",
                format!("layer {l} batch sizes inconsistent"),
            ));
        }
        let embeds_y: Vec<SpdMatrix> = stack_y[l]
            .iter()
            .map(|code| spd_embed(code, params))
            .collect::<Result<_>>()?;
        let embeds_px: Vec<SpdMatrix> = stack_x[l]
            .iter()
            .map(|code| spd_embed(&code.map_channels(p)?, params))
            .collect::<Result<_>>()?;
        for i in 0..s {
            for j in 0..t {
                out[(i, j)] *= spd_dist(&embeds_y[j], &embeds_px[i], params)?;
            }
        }
    }
    Ok(out)
}

/// Weighted multi-layer manifold data-fidelity loss:
/// `sum_{i,j} w[(i,j)] * prod_l d_l(i, j)`.
pub fn manifold_loss(
    stack_x: &[Vec<Tensor3>],
    stack_y: &[Vec<Tensor3>],
    associators: &[DMatrix<f64>],
    weights: &DMatrix<f64>,
    params: &ManifoldParams,
) -> Result<f64> {
    let dists = manifold_pair_distances(stack_x, stack_y, associators, params)?;
    if weights.shape() != dists.shape() {
        return Err(Error::dim(
            "manifold_loss",
            format!(
                "weight matrix {:?} inconsistent with pair grid {:?}",
                weights.shape(),
                dists.shape()
            ),
        ));
    }
    let mut loss = 0.0;
    for i in 0..dists.nrows() {
        for j in 0..dists.ncols() {
            loss += weights[(i, j)] * dists[(i, j)];
        }
    }
    if !loss.is_finite() {
        return Err(Error::numeric("manifold_loss", "non-finite loss"));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let m = &g * g.transpose() + DMatrix::identity(n, n) * 0.5;
        SpdMatrix::new(m).unwrap()
    }

    fn random_code(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
        Tensor3::new(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap()
    }

    #[test]
    fn embed_constant_code_is_ridge_identity() {
        let code = Tensor3::new(2, 2, 2, vec![0.3; 8]).unwrap();
        let params = ManifoldParams::default();
        let m = spd_embed(&code, &params).unwrap();
        let want = DMatrix::identity(2, 2) * params.ridge;
        assert!((m.matrix() - want).amax() <= 1e-15);
    }

    #[test]
    fn embed_identical_channels_rank_one() {
        // Direct covariance oracle: identical channels of variance v give
        // C = [[v, v], [v, v]], eigenvalues {2v + eps, eps}.
        let vals = vec![0.1, 0.9, 0.4, 0.2, 0.1, 0.9, 0.4, 0.2];
        let code = Tensor3::new(2, 2, 2, vals.clone()).unwrap();
        let params = ManifoldParams::default();
        let m = spd_embed(&code, &params).unwrap();
        let chan = &vals[0..4];
        let mean = chan.iter().sum::<f64>() / 4.0;
        let v = chan.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        let (eigs, _) = sym_eig(m.matrix()).unwrap();
        let mut got: Vec<f64> = eigs.iter().copied().collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((got[0] - params.ridge).abs() <= 1e-12);
        assert!((got[1] - (2.0 * v + params.ridge)).abs() <= 1e-12);
    }

    #[test]
    fn embed_scaling_is_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let code = random_code(&mut rng, 3, 4, 4);
        let params = ManifoldParams::default();
        let base = spd_embed(&code, &params).unwrap();
        let scaled = spd_embed(&code.scaled(2.0), &params).unwrap();
        let eye = DMatrix::identity(3, 3);
        let c_base = base.matrix() - &eye * params.ridge;
        let c_scaled = scaled.matrix() - &eye * params.ridge;
        assert!((c_scaled - c_base * 4.0).amax() <= 1e-10);
    }

    #[test]
    fn embed_single_position_is_degenerate() {
        let code = Tensor3::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            spd_embed(&code, &ManifoldParams::default()).unwrap_err(),
            Error::Degenerate { .. }
        ));
    }

    #[test]
    fn embed_invariants_hold_on_random_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let params = ManifoldParams::default();
        for _ in 0..500 {
            let c = rng.random_range(1..5);
            let h = rng.random_range(2..6);
            let w = rng.random_range(2..6);
            let code = random_code(&mut rng, c, h, w);
            // SpdMatrix::new re-validates symmetry and min eigenvalue.
            spd_embed(&code, &params).unwrap();
        }
    }

    #[test]
    fn logm_identity_is_zero() {
        let m = SpdMatrix::new(DMatrix::identity(3, 3)).unwrap();
        assert!(spd_logm(&m).unwrap().amax() <= 1e-14);
    }

    #[test]
    fn logm_diagonal() {
        let e = std::f64::consts::E;
        let m = SpdMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            e,
            e * e,
        ])))
        .unwrap();
        let log = spd_logm(&m).unwrap();
        assert!((log[(0, 0)] - 1.0).abs() <= 1e-12);
        assert!((log[(1, 1)] - 2.0).abs() <= 1e-12);
        assert!(log[(0, 1)].abs() <= 1e-12);
    }

    #[test]
    fn logm_expm_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let m = random_spd(&mut rng, 5);
        let back = spd_expm(&spd_logm(&m).unwrap()).unwrap();
        let rel = (&back - m.matrix()).norm() / m.matrix().norm();
        assert!(rel <= 1e-8);
    }

    #[test]
    fn logm_expm_round_trip_high_condition() {
        // Condition number 1e6.
        let diag = nalgebra::DVector::from_vec(vec![1e-3, 1.0, 1e3]);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let q = crate::linalg::random_orthogonal_rows(3, 3, &mut rng).unwrap();
        let m_raw = &q.transpose() * DMatrix::from_diagonal(&diag) * &q;
        let m = SpdMatrix::new((&m_raw + m_raw.transpose()) * 0.5).unwrap();
        let back = spd_expm(&spd_logm(&m).unwrap()).unwrap();
        let rel = (&back - m.matrix()).norm() / m.matrix().norm();
        assert!(rel <= 1e-8, "rel {rel}");
    }

    #[test]
    fn dist_identical_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let m = random_spd(&mut rng, 4);
        let d = spd_dist(&m, &m, &ManifoldParams::default()).unwrap();
        assert!(d <= 1e-10);
    }

    #[test]
    fn dist_identity_to_scaled_identity() {
        let n = 4;
        let c = 3.7;
        let a = SpdMatrix::new(DMatrix::identity(n, n)).unwrap();
        let b = SpdMatrix::new(DMatrix::identity(n, n) * c).unwrap();
        let d = spd_dist(&a, &b, &ManifoldParams::default()).unwrap();
        let want = (n as f64).sqrt() * c.ln().abs();
        assert!((d - want).abs() <= 1e-10);
    }

    #[test]
    fn dist_congruence_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let params = ManifoldParams::default();
        for _ in 0..20 {
            let a = random_spd(&mut rng, 4);
            let b = random_spd(&mut rng, 4);
            let m = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0)
                + DMatrix::identity(4, 4) * 2.0;
            let ca = SpdMatrix::new({
                let t = &m * a.matrix() * m.transpose();
                (&t + t.transpose()) * 0.5
            })
            .unwrap();
            let cb = SpdMatrix::new({
                let t = &m * b.matrix() * m.transpose();
                (&t + t.transpose()) * 0.5
            })
            .unwrap();
            let d1 = spd_dist(&a, &b, &params).unwrap();
            let d2 = spd_dist(&ca, &cb, &params).unwrap();
            assert!((d1 - d2).abs() <= 1e-8, "d1 {d1} d2 {d2}");
        }
    }

    #[test]
    fn dist_symmetry_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let params = ManifoldParams::default();
        for _ in 0..50 {
            let a = random_spd(&mut rng, 3);
            let b = random_spd(&mut rng, 3);
            let c = random_spd(&mut rng, 3);
            let dab = spd_dist(&a, &b, &params).unwrap();
            let dba = spd_dist(&b, &a, &params).unwrap();
            assert!((dab - dba).abs() <= 1e-10);
            let dac = spd_dist(&a, &c, &params).unwrap();
            let dcb = spd_dist(&c, &b, &params).unwrap();
            assert!(dab <= dac + dcb + 1e-8);
        }
    }

    #[test]
    fn verbatim_mode_requires_log_pd() {
        let params = ManifoldParams {
            ridge: 1e-6,
            distance_mode: DistanceMode::Verbatim,
        };
        let a = SpdMatrix::new(DMatrix::identity(2, 2) * 2.0).unwrap();
        // logm(B) with B = 4I is ln(4) I, positive definite: fine.
        let b = SpdMatrix::new(DMatrix::identity(2, 2) * 4.0).unwrap();
        assert!(spd_dist(&a, &b, &params).is_ok());
        // logm(B) with B = 0.5 I is negative definite: rejected.
        let bad = SpdMatrix::new(DMatrix::identity(2, 2) * 0.5).unwrap();
        assert!(spd_dist(&a, &bad, &params).is_err());
    }

    #[test]
    fn manifold_loss_zero_for_exact_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let p = DMatrix::from_fn(2, 2, |i, j| if i == j { 1.5 } else { 0.25 });
        let codes_x: Vec<Tensor3> = (0..3).map(|_| random_code(&mut rng, 2, 3, 3)).collect();
        let codes_y: Vec<Tensor3> = codes_x
            .iter()
            .map(|c| c.map_channels(&p).unwrap())
            .collect();
        let weights = DMatrix::identity(3, 3);
        let loss = manifold_loss(
            &[codes_x],
            &[codes_y],
            std::slice::from_ref(&p),
            &weights,
            &ManifoldParams::default(),
        )
        .unwrap();
        assert!(loss <= 1e-6, "loss {loss}");
    }

    #[test]
    fn manifold_loss_single_pair_reduces_to_dist() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let p = DMatrix::identity(2, 2);
        let cx = random_code(&mut rng, 2, 4, 4);
        let cy = random_code(&mut rng, 2, 4, 4);
        let params = ManifoldParams::default();
        let loss = manifold_loss(
            &[vec![cx.clone()]],
            &[vec![cy.clone()]],
            std::slice::from_ref(&p),
            &DMatrix::from_element(1, 1, 1.0),
            &params,
        )
        .unwrap();
        let want = spd_dist(
            &spd_embed(&cy, &params).unwrap(),
            &spd_embed(&cx, &params).unwrap(),
            &params,
        )
        .unwrap();
        assert!((loss - want).abs() <= 1e-12);
    }

    #[test]
    fn manifold_loss_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let p1 = DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>());
        let p2 = DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>());
        let x1: Vec<Tensor3> = (0..2).map(|_| random_code(&mut rng, 2, 3, 3)).collect();
        let x2: Vec<Tensor3> = (0..2).map(|_| random_code(&mut rng, 2, 3, 3)).collect();
        let y1: Vec<Tensor3> = (0..2).map(|_| random_code(&mut rng, 2, 3, 3)).collect();
        let y2: Vec<Tensor3> = (0..2).map(|_| random_code(&mut rng, 2, 3, 3)).collect();
        let weights = DMatrix::from_fn(2, 2, |_, _| 0.25);
        let params = ManifoldParams::default();
        let got = manifold_loss(
            &[x1.clone(), x2.clone()],
            &[y1.clone(), y2.clone()],
            &[p1.clone(), p2.clone()],
            &weights,
            &params,
        )
        .unwrap();
        // Brute-force double loop.
        let mut want = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let d1 = spd_dist(
                    &spd_embed(&y1[j], &params).unwrap(),
                    &spd_embed(&x1[i].map_channels(&p1).unwrap(), &params).unwrap(),
                    &params,
                )
                .unwrap();
                let d2 = spd_dist(
                    &spd_embed(&y2[j], &params).unwrap(),
                    &spd_embed(&x2[i].map_channels(&p2).unwrap(), &params).unwrap(),
                    &params,
                )
                .unwrap();
                want += 0.25 * d1 * d2;
            }
        }
        assert!((got - want).abs() <= 1e-10);
    }
}
