//! Intra-modal unit normalization (IUN).
//!
//! Feature maps of one modality acquired under heterogeneous measurements
//! carry arbitrary per-sample scale. IUN removes that ambiguity by
//! multiplying each code by a single positive scalar before any
//! cross-modal processing.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Normalization mode.
///
/// * `StrictUnit` (default): each code is scaled onto the unit l2 sphere,
///   honoring the stated postcondition `||Z_i||_2 = 1` for all `i`.
/// * `Verbatim`: the literal scaling `Z_i / (max_j ||Z_j||_2 *
///   sqrt(1 - ||Z_i||^2))`. The radicand is undefined for `||Z_i|| >= 1`,
///   so it is clamped to `[epsilon, 1]`; this mode exists for comparison
///   only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IunMode {
    #[default]
    StrictUnit,
    Verbatim,
}

#[derive(Debug, Clone, Copy)]
pub struct IunParams {
    /// Guard for divisions; must lie in `(0, 1e-3]`.
    pub epsilon: f64,
    pub mode: IunMode,
}

impl Default for IunParams {
    fn default() -> Self {
        IunParams {
            epsilon: 1e-6,
            mode: IunMode::StrictUnit,
        }
    }
}

impl IunParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(Error::Config(format!(
                "IUN epsilon {} outside (0, 1e-3]",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-code multipliers such that `iun(codes)[i] = scalar_i * codes[i]`
/// exactly. An all-zero code is a degenerate input (it signals an upstream
/// solver failure) and is reported with its sample index.
pub fn iun_scalars(codes: &[Tensor3], params: &IunParams) -> Result<Vec<f64>> {
    params.validate()?;
    if codes.is_empty() {
        return Err(Error::degenerate("iun", "empty batch"));
    }
    let norms: Vec<f64> = codes.iter().map(Tensor3::norm_l2).collect();
    for (i, n) in norms.iter().enumerate() {
        if *n == 0.0 {
            return Err(Error::degenerate(
                "iun",
                format!("all-zero code at sample index {i}"),
            ));
        }
    }
    let scalars = match params.mode {
        IunMode::StrictUnit => norms.iter().map(|n| 1.0 / n).collect(),
        IunMode::Verbatim => {
            let max_norm = norms.iter().copied().fold(0.0, f64::max);
            norms
                .iter()
                .map(|n| {
                    let radicand = (1.0 - n * n).clamp(params.epsilon, 1.0);
                    1.0 / (max_norm * radicand.sqrt())
                })
                .collect()
        }
    };
    Ok(scalars)
}

/// Applies IUN to a batch of codes of one modality.
pub fn iun(codes: &[Tensor3], params: &IunParams) -> Result<Vec<Tensor3>> {
    let scalars = iun_scalars(codes, params)?;
    Ok(codes
        .iter()
        .zip(&scalars)
        .map(|(code, &s)| code.scaled(s))
        .collect())
}
