//! Sample-size and accuracy calculators for Monte-Carlo safety estimation.
//!
//! All logarithms are natural. Sample counts are rounded up; a relative
//! slack of [`CEIL_SLACK`] absorbs floating-point noise so that values that
//! are integral by construction are not bumped to the next integer.

use thiserror::Error;

pub const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("alpha must be positive and finite, got {0}")]
    Alpha(f64),
    #[error("horizon must be at least 1")]
    Horizon,
    #[error("state and action counts must be positive")]
    Dimensions,
}

/// Parameters shared by the calculators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PacParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, BoundsError> {
        check_epsilon(epsilon)?;
        check_delta(delta)?;
        Ok(PacParams { epsilon, delta })
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), BoundsError> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(BoundsError::Epsilon(epsilon))
    }
}

fn check_delta(delta: f64) -> Result<(), BoundsError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(BoundsError::Delta(delta))
    }
}

fn check_alpha(alpha: f64) -> Result<(), BoundsError> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(BoundsError::Alpha(alpha))
    }
}

fn ceil_count(x: f64) -> u64 {
    let shaved = x - CEIL_SLACK * x.abs().max(1.0);
    shaved.ceil().max(1.0) as u64
}

/// Traces needed for an epsilon-accurate estimate with probability 1 - delta
/// when sampling from the true transition system:
/// `m >= ln(2/delta) / (2 eps^2)`.
pub fn sample_size_exact_model(epsilon: f64, delta: f64) -> Result<u64, BoundsError> {
    let p = PacParams::new(epsilon, delta)?;
    Ok(ceil_count((2.0 / p.delta).ln() / (2.0 * p.epsilon * p.epsilon)))
}

/// Traces needed when sampling from a learned model whose per-state TV error
/// is at most `epsilon / n`: `m >= 2 ln(2/delta) / eps^2`.
pub fn sample_size_learned_model(epsilon: f64, delta: f64) -> Result<u64, BoundsError> {
    let p = PacParams::new(epsilon, delta)?;
    Ok(ceil_count(2.0 * (2.0 / p.delta).ln() / (p.epsilon * p.epsilon)))
}

/// Per-state TV accuracy the learned model needs for a horizon-`n` check.
pub fn required_alpha(epsilon: f64, horizon: usize) -> Result<f64, BoundsError> {
    check_epsilon(epsilon)?;
    if horizon == 0 {
        return Err(BoundsError::Horizon);
    }
    Ok(epsilon / horizon as f64)
}

/// Visits per state-action pair after which every estimated transition row
/// is within TV `alpha` of the truth with probability 1 - delta:
/// `m >= (|S|^2 / alpha^2) ln(2 |S| |A| / delta)`.
///
/// `num_states` may be replaced by an effective branching factor when the
/// transition rows are known to have small support.
pub fn visit_count_bound(alpha: f64, delta: f64, num_states: usize, num_actions: usize) -> Result<u64, BoundsError> {
    check_alpha(alpha)?;
    check_delta(delta)?;
    if num_states == 0 || num_actions == 0 {
        return Err(BoundsError::Dimensions);
    }
    let s = num_states as f64;
    let a = num_actions as f64;
    Ok(ceil_count((s * s) / (alpha * alpha) * (2.0 * s * a / delta).ln()))
}

/// Probability below which an action counts as negligible: `alpha / (|A| |S|)`.
pub fn negligibility_threshold(alpha: f64, num_states: usize, num_actions: usize) -> Result<f64, BoundsError> {
    check_alpha(alpha)?;
    if num_states == 0 || num_actions == 0 {
        return Err(BoundsError::Dimensions);
    }
    Ok(alpha / (num_actions as f64 * num_states as f64))
}

/// Everything the `bounds` command reports.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub m_exact: u64,
    pub m_learned: u64,
    pub required_alpha: f64,
    pub visit_count: u64,
    pub negligibility: f64,
}

/// Computes all quantities. `alpha` defaults to `required_alpha(eps, horizon)`.
pub fn bounds_report(
    epsilon: f64,
    delta: f64,
    alpha: Option<f64>,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
) -> Result<BoundsReport, BoundsError> {
    let required = required_alpha(epsilon, horizon)?;
    let alpha = alpha.unwrap_or(required);
    Ok(BoundsReport {
        m_exact: sample_size_exact_model(epsilon, delta)?,
        m_learned: sample_size_learned_model(epsilon, delta)?,
        required_alpha: required,
        visit_count: visit_count_bound(alpha, delta, num_states, num_actions)?,
        negligibility: negligibility_threshold(alpha, num_states, num_actions)?,
    })
}
