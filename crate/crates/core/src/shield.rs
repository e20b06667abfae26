//! Monte-Carlo bounded-safety estimation through a learned model, and the
//! accept/override decision built on it.
//!
//! A trace from a real state `s_0` is the sequence `s_1, ..., s_H` of
//! imagined states after the proposed action is played in `s_0`. Its cost
//! is `sum_t w_t c_t` with `w_1 = 1` and `w_{t+1} = w_t * gamma_safe(s_t)`,
//! so everything after the first violation is weighted by zero.

use rand::Rng;
use thiserror::Error;

use crate::agents::{CostModel, SafetyCriticPair};
use crate::markov::{ActionId, Dynamics, StateId, TabularPolicy, TransitionSystem};
use crate::rng::{Purpose, SeedStreams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShieldError {
    #[error("invalid shield configuration: {0}")]
    Config(String),
    #[error("cost sequence has {costs} entries but discount sequence has {discounts}")]
    LengthMismatch { costs: usize, discounts: usize },
    #[error("critic bootstrapping is enabled but no critics were supplied")]
    MissingCritics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldConfig {
    pub delta: f64,
    pub epsilon: f64,
    pub num_samples: usize,
    pub imagination_horizon: usize,
    pub lookahead_horizon: usize,
    pub cost_value: f64,
    pub use_critic_bootstrap: bool,
    pub gamma: f64,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        ShieldConfig {
            delta: 0.1,
            epsilon: 0.09,
            num_samples: 512,
            imagination_horizon: 15,
            lookahead_horizon: 30,
            cost_value: 10.0,
            use_critic_bootstrap: true,
            gamma: 0.99,
        }
    }
}

impl ShieldConfig {
    /// Every violated constraint, in a fixed order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < self.delta && self.delta <= 1.0) {
            out.push(format!(
                "need 0 < epsilon < delta <= 1, got epsilon = {}, delta = {}",
                self.epsilon, self.delta
            ));
        }
        if self.num_samples == 0 {
            out.push("num_samples must be at least 1".to_string());
        }
        if self.imagination_horizon == 0 {
            out.push("imagination_horizon must be at least 1".to_string());
        }
        if self.use_critic_bootstrap && self.imagination_horizon < 2 {
            out.push("critic bootstrapping needs imagination_horizon >= 2".to_string());
        }
        if self.lookahead_horizon < self.imagination_horizon {
            out.push(format!(
                "lookahead_horizon {} is shorter than imagination_horizon {}",
                self.lookahead_horizon, self.imagination_horizon
            ));
        }
        if !(self.cost_value > 0.0 && self.cost_value.is_finite()) {
            out.push(format!("cost_value must be positive, got {}", self.cost_value));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            out.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ShieldError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ShieldError::Config(v.join("; ")))
        }
    }

    /// Lower end of the acceptance interval, `1 - delta + epsilon`.
    pub fn acceptance_lower(&self) -> f64 {
        1.0 - self.delta + self.epsilon
    }

    pub fn accepts(&self, estimate: f64) -> bool {
        estimate >= self.acceptance_lower() && estimate <= 1.0
    }

    /// `gamma^k * C` with `k = T - 1` under critic bootstrapping and `H - 1`
    /// otherwise. Built by repeated multiplication so that it equals the
    /// weight a trace cost gives a violation at step `k + 1` bit for bit.
    pub fn cost_threshold(&self) -> f64 {
        let horizon = if self.use_critic_bootstrap {
            self.lookahead_horizon
        } else {
            self.imagination_horizon
        };
        let mut w = 1.0;
        for _ in 1..horizon {
            w *= self.gamma;
        }
        w * self.cost_value
    }
}

/// `sum_t w_t c_t` with `w_1 = 1`, `w_{t+1} = w_t * gammas[t]`.
pub fn trace_cost(costs: &[f64], gammas: &[f64]) -> Result<f64, ShieldError> {
    if costs.len() != gammas.len() {
        return Err(ShieldError::LengthMismatch {
            costs: costs.len(),
            discounts: gammas.len(),
        });
    }
    let mut w = 1.0;
    let mut total = 0.0;
    for (c, g) in costs.iter().zip(gammas) {
        total += w * c;
        w *= g;
    }
    Ok(total)
}

/// Trace cost over the first `H - 1` steps plus the smaller critic value at
/// `s_H`, weighted by the accumulated discount.
pub fn trace_cost_with_critic(costs: &[f64], gammas: &[f64], v1: f64, v2: f64) -> Result<f64, ShieldError> {
    if costs.len() != gammas.len() {
        return Err(ShieldError::LengthMismatch {
            costs: costs.len(),
            discounts: gammas.len(),
        });
    }
    let mut w = 1.0;
    let mut total = 0.0;
    for (c, g) in costs.iter().zip(gammas) {
        total += w * c;
        w *= g;
    }
    Ok(total + w * v1.min(v2))
}

/// Strict comparison against the configured cost threshold.
pub fn trace_satisfies(cost: f64, config: &ShieldConfig) -> bool {
    cost < config.cost_threshold()
}

/// Everything a trace estimate reads.
#[derive(Debug, Clone, Copy)]
pub struct ShieldModel<'a> {
    /// Learned dynamics, used for the proposed first action.
    pub dynamics: &'a Dynamics,
    /// Learned chain under the task policy, used after the first step.
    pub task_chain: &'a TransitionSystem,
    pub costs: &'a CostModel,
    pub critics: Option<&'a SafetyCriticPair>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyEstimate {
    pub estimate: f64,
    pub satisfying_count: usize,
}

fn sample_trace_cost<R: Rng + ?Sized>(
    model: &ShieldModel<'_>,
    config: &ShieldConfig,
    start: StateId,
    first_action: Option<ActionId>,
    rng: &mut R,
) -> f64 {
    let horizon = config.imagination_horizon;
    let mut s = start;
    let mut w = 1.0;
    let mut total = 0.0;
    for t in 1..=horizon {
        s = match (t, first_action) {
            (1, Some(a)) => model.dynamics.sample(s, a, rng),
            _ => model.task_chain.step(s, rng),
        };
        if t == horizon && config.use_critic_bootstrap {
            let (v1, v2) = model
                .critics
                .expect("checked by the caller")
                .bootstrap_values(s, model.costs);
            return total + w * v1.min(v2);
        }
        total += w * model.costs.cost(s);
        if model.costs.is_violating(s) {
            // all later weights are zero
            break;
        }
        w *= model.costs.safety_discount(s);
    }
    total
}

/// Draws `m` traces from `start`, sample `i` on stream
/// `(ShieldSample, iteration, i)`, and returns the satisfying fraction.
///
/// With `first_action` the first imagined step plays that action; without
/// it every step follows the task chain.
pub fn estimate_bounded_safety(
    model: &ShieldModel<'_>,
    config: &ShieldConfig,
    start: StateId,
    first_action: Option<ActionId>,
    streams: &SeedStreams,
    iteration: u64,
) -> Result<SafetyEstimate, ShieldError> {
    config.validate()?;
    if config.use_critic_bootstrap && model.critics.is_none() {
        return Err(ShieldError::MissingCritics);
    }
    let threshold = config.cost_threshold();
    let satisfying_count = (0..config.num_samples)
        .filter(|&i| {
            let mut rng = streams.stream(Purpose::ShieldSample, iteration, i as u64);
            sample_trace_cost(model, config, start, first_action, &mut rng) < threshold
        })
        .count();
    Ok(SafetyEstimate {
        estimate: satisfying_count as f64 / config.num_samples as f64,
        satisfying_count,
    })
}

/// Plain Monte-Carlo estimate of `P(s_0, ..., s_horizon all satisfy psi)`
/// along a chain, sample `i` on stream `(Estimate, iteration, i)`.
pub fn estimate_chain_safety(
    ts: &TransitionSystem,
    safe: &[bool],
    start: StateId,
    horizon: usize,
    num_samples: usize,
    streams: &SeedStreams,
    iteration: u64,
) -> Result<SafetyEstimate, ShieldError> {
    if num_samples == 0 {
        return Err(ShieldError::Config("num_samples must be at least 1".to_string()));
    }
    let satisfying_count = if safe[start] {
        (0..num_samples)
            .filter(|&i| {
                let mut rng = streams.stream(Purpose::Estimate, iteration, i as u64);
                let mut s = start;
                (0..horizon).all(|_| {
                    s = ts.step(s, &mut rng);
                    safe[s]
                })
            })
            .count()
    } else {
        0
    };
    Ok(SafetyEstimate {
        estimate: satisfying_count as f64 / num_samples as f64,
        satisfying_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldDecision {
    pub action_taken: ActionId,
    pub overridden: bool,
    pub estimate: f64,
    pub satisfying_count: usize,
}

pub const DECISION_LOG_HEADER: &str = "step,state,proposed,taken,overridden,estimate,satisfying_count";

impl ShieldDecision {
    pub fn log_line(&self, step: u64, state: StateId, proposed: ActionId) -> String {
        format!(
            "{step},{state},{proposed},{},{},{},{}",
            self.action_taken, self.overridden as u8, self.estimate, self.satisfying_count
        )
    }
}

/// Accepts `proposed` when the estimate lies in `[1 - delta + epsilon, 1]`,
/// otherwise samples the safe policy on stream `(SafeAction, iteration, 0)`.
pub fn shield_action(
    proposed: ActionId,
    start: StateId,
    model: &ShieldModel<'_>,
    safe_policy: &TabularPolicy,
    config: &ShieldConfig,
    streams: &SeedStreams,
    iteration: u64,
) -> Result<ShieldDecision, ShieldError> {
    let SafetyEstimate {
        estimate,
        satisfying_count,
    } = estimate_bounded_safety(model, config, start, Some(proposed), streams, iteration)?;
    let (action_taken, overridden) = if config.accepts(estimate) {
        (proposed, false)
    } else {
        let mut rng = streams.stream(Purpose::SafeAction, iteration, 0);
        (safe_policy.sample(start, &mut rng), true)
    };
    Ok(ShieldDecision {
        action_taken,
        overridden,
        estimate,
        satisfying_count,
    })
}
