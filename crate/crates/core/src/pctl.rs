//! Exact bounded-safety model checking for `P>=1-delta [ G<=n psi ]`.

use thiserror::Error;

use crate::formula::{LabelSet, SafetyFormula};
use crate::markov::{ActionId, Dynamics, StateId, TransitionSystem};

/// Largest number of traces `enumerate_measure` will walk.
pub const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PctlError {
    #[error("delta {0} outside [0, 1]")]
    Delta(f64),
    #[error("{states}^{horizon} traces exceed the enumeration limit")]
    TooLarge { states: usize, horizon: usize },
    #[error("{labels} label sets for {states} states")]
    Labels { labels: usize, states: usize },
}

/// The state property "with probability at least 1 - delta, psi holds in
/// every state over the next `horizon` transitions".
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedSafetyQuery {
    pub formula: SafetyFormula,
    pub horizon: usize,
    pub delta: f64,
}

impl BoundedSafetyQuery {
    pub fn new(formula: SafetyFormula, horizon: usize, delta: f64) -> Result<Self, PctlError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(PctlError::Delta(delta));
        }
        Ok(BoundedSafetyQuery {
            formula,
            horizon,
            delta,
        })
    }
}

/// Per-state satisfaction of the propositional formula.
pub fn satisfying_states(formula: &SafetyFormula, labels: &[LabelSet]) -> Vec<bool> {
    labels.iter().map(|l| formula.eval(l)).collect()
}

/// Probability of bounded safety from every state, for horizons `0..=n`
/// collapsed to the final one.
///
/// `P_0(s) = [s |= psi]`, `P_k(s) = [s |= psi] * sum_s' T(s'|s) P_{k-1}(s')`.
pub fn bounded_safety_vector(ts: &TransitionSystem, safe: &[bool], horizon: usize) -> Vec<f64> {
    let n = ts.num_states();
    assert_eq!(safe.len(), n, "one satisfaction flag per state");
    let mut current: Vec<f64> = safe.iter().map(|&ok| if ok { 1.0 } else { 0.0 }).collect();
    let mut next = vec![0.0; n];
    for _ in 0..horizon {
        for (s, slot) in next.iter_mut().enumerate() {
            *slot = if safe[s] {
                ts.row(s).iter().zip(&current).map(|(p, v)| p * v).sum()
            } else {
                0.0
            };
        }
        std::mem::swap(&mut current, &mut next);
    }
    current
}

fn check_labels(ts: &TransitionSystem, labels: &[LabelSet]) -> Result<(), PctlError> {
    if labels.len() != ts.num_states() {
        return Err(PctlError::Labels {
            labels: labels.len(),
            states: ts.num_states(),
        });
    }
    Ok(())
}

/// Exact measure of traces from `start` that satisfy psi for `horizon` steps.
pub fn exact_measure(
    ts: &TransitionSystem,
    labels: &[LabelSet],
    query: &BoundedSafetyQuery,
    start: StateId,
) -> Result<f64, PctlError> {
    check_labels(ts, labels)?;
    let safe = satisfying_states(&query.formula, labels);
    Ok(bounded_safety_vector(ts, &safe, query.horizon)[start])
}

/// Closed-interval membership of the measure in `[1 - delta, 1]`.
pub fn satisfies_delta_bound(measure: f64, delta: f64) -> bool {
    measure >= 1.0 - delta
}

pub fn check_delta_bounded_safety(
    ts: &TransitionSystem,
    labels: &[LabelSet],
    query: &BoundedSafetyQuery,
    start: StateId,
) -> Result<bool, PctlError> {
    Ok(satisfies_delta_bound(
        exact_measure(ts, labels, query, start)?,
        query.delta,
    ))
}

/// Probability that `s_1, ..., s_horizon` all satisfy psi when `action` is
/// played in `start` and `ts` drives the remaining `horizon - 1` transitions.
/// `start` itself is not checked.
pub fn action_safety_measure(
    dynamics: &Dynamics,
    ts: &TransitionSystem,
    safe: &[bool],
    start: StateId,
    action: ActionId,
    horizon: usize,
) -> f64 {
    if horizon == 0 {
        return 1.0;
    }
    let tail = bounded_safety_vector(ts, safe, horizon - 1);
    dynamics.row(start, action).iter().zip(&tail).map(|(p, v)| p * v).sum()
}

/// The same measure by brute-force enumeration of every length-`horizon`
/// trace. Only meant as a test oracle.
pub fn enumerate_measure(
    ts: &TransitionSystem,
    labels: &[LabelSet],
    query: &BoundedSafetyQuery,
    start: StateId,
) -> Result<f64, PctlError> {
    check_labels(ts, labels)?;
    let n = ts.num_states();
    if (n as f64).powi(query.horizon as i32) > ENUMERATION_LIMIT {
        return Err(PctlError::TooLarge {
            states: n,
            horizon: query.horizon,
        });
    }
    let safe = satisfying_states(&query.formula, labels);
    // iterate over all index sequences with an odometer, multiplying probabilities
    let mut total = 0.0;
    let mut path = vec![0usize; query.horizon];
    loop {
        let mut prob = 1.0;
        let mut prev = start;
        let mut all_safe = safe[start];
        for &s in &path {
            prob *= ts.prob(prev, s);
            all_safe &= safe[s];
            prev = s;
        }
        if all_safe {
            total += prob;
        }
        let mut i = 0;
        loop {
            if i == path.len() {
                return Ok(total);
            }
            path[i] += 1;
            if path[i] < n {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
