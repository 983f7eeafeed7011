//! Gaussian-kernel maximum mean discrepancy and its multilayer
//! product-kernel extension.
//!
//! The estimator is the biased V-statistic with `1/S^2`, `1/T^2`, `2/ST`
//! weights; for a PSD kernel it is non-negative up to round-off. Codes are
//! compared after per-sample vectorization.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// How the per-layer bandwidth is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandwidthPolicy {
    /// Median of pairwise squared distances over the pooled source+target
    /// batch, recomputed at every evaluation.
    #[default]
    MedianHeuristic,
    /// Use [`KernelParams::bandwidth`] as-is.
    Fixed,
}

#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    /// Squared-distance scale of the Gaussian kernel; must be positive.
    /// Ignored (recomputed) under [`BandwidthPolicy::MedianHeuristic`].
    pub bandwidth: f64,
    pub policy: BandwidthPolicy,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            bandwidth: 1.0,
            policy: BandwidthPolicy::MedianHeuristic,
        }
    }
}

impl KernelParams {
    pub fn fixed(bandwidth: f64) -> Self {
        KernelParams {
            bandwidth,
            policy: BandwidthPolicy::Fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "kernel bandwidth {} must be positive",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

/// Three-term MMD value with diagnostics.
#[derive(Debug, Clone)]
pub struct MmdReport {
    pub value: f64,
    pub term_xx: f64,
    pub term_yy: f64,
    pub term_xy: f64,
    /// Bandwidths actually used, one per layer.
    pub per_layer_bandwidths: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// `exp(-||a-b||^2 / p)`; symmetric, equals 1 at `a == b`.
pub fn gauss_kernel(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(
            "gauss_kernel",
            format!("lengths {} vs {}", a.len(), b.len()),
        ));
    }
    if !(p > 0.0) {
        return Err(Error::Config(format!("bandwidth {p} must be positive")));
    }
    Ok((-sq_dist(a, b) / p).exp())
}

/// Median of pairwise squared distances over all unordered sample pairs.
/// Even pair counts take the mean of the two middle values. All-identical
/// samples leave no scale to work with and are rejected.
pub fn median_bandwidth(samples: &[&[f64]]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::degenerate(
            "median_bandwidth",
            "need at least 2 samples",
        ));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::dim("median_bandwidth", "inconsistent sample lengths"));
    }
    let mut dists = Vec::with_capacity(samples.len() * (samples.len() - 1) / 2);
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            dists.push(sq_dist(samples[i], samples[j]));
        }
    }
    if dists.iter().all(|&d| d == 0.0) {
        return Err(Error::degenerate(
            "median_bandwidth",
            "all samples identical",
        ));
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    Ok(median)
}

/// Per-layer batch view: `stack[l][i]` is sample `i`'s vectorized code at
/// layer `l`.
type Stack<'a> = &'a [Vec<Vec<f64>>];

fn resolve_bandwidths(
    stack_x: Stack<'_>,
    stack_y: Stack<'_>,
    params: &[KernelParams],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(params.len());
    for (l, kp) in params.iter().enumerate() {
        kp.validate()?;
        let bw = match kp.policy {
            BandwidthPolicy::Fixed => kp.bandwidth,
            BandwidthPolicy::MedianHeuristic => {
                let pooled: Vec<&[f64]> = stack_x[l]
                    .iter()
                    .map(Vec::as_slice)
                    .chain(stack_y[l].iter().map(Vec::as_slice))
                    .collect();
                median_bandwidth(&pooled)?
            }
        };
        out.push(bw);
    }
    Ok(out)
}

fn product_kernel(
    a: &[Vec<Vec<f64>>],
    i: usize,
    b: &[Vec<Vec<f64>>],
    j: usize,
    bandwidths: &[f64],
) -> Result<f64> {
    let mut k = 1.0;
    for (l, bw) in bandwidths.iter().enumerate() {
        k *= gauss_kernel(&a[l][i], &b[l][j], *bw)?;
    }
    Ok(k)
}

fn validate_stack(context: &'static str, stack: Stack<'_>) -> Result<usize> {
    if stack.is_empty() {
        return Err(Error::dim(context, "no layers"));
    }
    let n = stack[0].len();
    if n == 0 {
        return Err(Error::dim(context, "empty batch"));
    }
    for (l, layer) in stack.iter().enumerate() {
        if layer.len() != n {
            return Err(Error::dim(
                context,
                format!("layer {l} has {} samples, expected {n}", layer.len()),
            ));
        }
    }
    Ok(n)
}

/// Multilayer MMD: the pairwise kernel is the product over layers of
/// per-layer Gaussian kernels, combined with the biased three-term weights.
pub fn multilayer_mmd(
    stack_x: Stack<'_>,
    stack_y: Stack<'_>,
    params: &[KernelParams],
) -> Result<MmdReport> {
    if stack_x.len() != stack_y.len() || stack_x.len() != params.len() {
        return Err(Error::dim(
            "multilayer_mmd",
            format!(
                "layer counts differ: x {}, y {}, params {}",
                stack_x.len(),
                stack_y.len(),
                params.len()
            ),
        ));
    }
    let s = validate_stack("multilayer_mmd", stack_x)?;
    let t = validate_stack("multilayer_mmd", stack_y)?;
    let bandwidths = resolve_bandwidths(stack_x, stack_y, params)?;

    let mut term_xx = 0.0;
    for i in 0..s {
        for j in 0..s {
            term_xx += product_kernel(stack_x, i, stack_x, j, &bandwidths)?;
        }
    }
    term_xx /= (s * s) as f64;

    let mut term_yy = 0.0;
    for i in 0..t {
        for j in 0..t {
            term_yy += product_kernel(stack_y, i, stack_y, j, &bandwidths)?;
        }
    }
    term_yy /= (t * t) as f64;

    let mut term_xy = 0.0;
    for i in 0..s {
        for j in 0..t {
            term_xy += product_kernel(stack_x, i, stack_y, j, &bandwidths)?;
        }
    }
    term_xy /= (s * t) as f64;

    Ok(MmdReport {
        value: term_xx + term_yy - 2.0 * term_xy,
        term_xx,
        term_yy,
        term_xy,
        per_layer_bandwidths: bandwidths,
    })
}

/// Single-layer MMD between two batches of vectorized codes.
pub fn mmd(batch_x: &[Vec<f64>], batch_y: &[Vec<f64>], params: &KernelParams) -> Result<MmdReport> {
    let sx = [batch_x.to_vec()];
    let sy = [batch_y.to_vec()];
    multilayer_mmd(&sx, &sy, std::slice::from_ref(params))
}

/// Flattens per-sample tensors into the vectorized batch the kernels expect.
pub fn vectorize_batch(codes: &[Tensor3]) -> Vec<Vec<f64>> {
    codes.iter().map(|t| t.data().to_vec()).collect()
}
