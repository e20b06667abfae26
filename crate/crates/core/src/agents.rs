//! Tabular task and backup policies, and the twin safety critics.
//!
//! All three are trained on trajectories imagined in a [`ModelSnapshot`].
//! Values follow the state-signal convention: a critic's value at `s`
//! includes what happens *at* `s`. For the cost side this means
//! `V(s) = c(s) + gamma_safe(s) * E[V(s')]`, so a violating state is worth
//! exactly `C` and every cost value lies in `[0, C]`.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::formula::{LabelSet, SafetyFormula};
use crate::learner::ModelSnapshot;
use crate::markov::{sample_categorical, ActionId, MarkovError, StateId, TabularPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("cost value must be positive and finite, got {0}")]
    CostValue(f64),
    #[error("invalid agent parameter: {0}")]
    Parameter(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Cost of a state's labels: 0 when the formula holds, `cost_value` otherwise.
pub fn cost_target(labels: &LabelSet, formula: &SafetyFormula, cost_value: f64) -> f64 {
    if formula.eval(labels) {
        0.0
    } else {
        cost_value
    }
}

/// Per-state costs and safety discounts derived from the labels.
///
/// `c(s) = C` iff `s` violates the formula iff `gamma_safe(s) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    cost_value: f64,
    gamma: f64,
    violating: Vec<bool>,
}

impl CostModel {
    pub fn new(formula: &SafetyFormula, labels: &[LabelSet], cost_value: f64, gamma: f64) -> Result<Self, AgentError> {
        Self::from_violations(labels.iter().map(|l| !formula.eval(l)).collect(), cost_value, gamma)
    }

    pub fn from_violations(violating: Vec<bool>, cost_value: f64, gamma: f64) -> Result<Self, AgentError> {
        if !(cost_value > 0.0 && cost_value.is_finite()) {
            return Err(AgentError::CostValue(cost_value));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(AgentError::Parameter(format!("gamma {gamma} outside (0, 1]")));
        }
        Ok(CostModel {
            cost_value,
            gamma,
            violating,
        })
    }

    pub fn cost_value(&self) -> f64 {
        self.cost_value
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_states(&self) -> usize {
        self.violating.len()
    }

    pub fn is_violating(&self, s: StateId) -> bool {
        self.violating[s]
    }

    pub fn cost(&self, s: StateId) -> f64 {
        if self.violating[s] {
            self.cost_value
        } else {
            0.0
        }
    }

    pub fn safety_discount(&self, s: StateId) -> f64 {
        if self.violating[s] {
            0.0
        } else {
            self.gamma
        }
    }
}

/// Hyperparameters of the tabular actor-critic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub entropy_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            actor_lr: 0.05,
            critic_lr: 0.1,
            lambda: 0.95,
            gamma: 0.99,
            entropy_scale: 3e-4,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |what: &str, v: f64| Err(AgentError::Parameter(format!("{what} = {v}")));
        if !(self.actor_lr >= 0.0 && self.actor_lr.is_finite()) {
            return bad("actor_lr", self.actor_lr);
        }
        if !(self.critic_lr > 0.0 && self.critic_lr <= 1.0) {
            return bad("critic_lr", self.critic_lr);
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", self.lambda);
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", self.gamma);
        }
        if !(self.entropy_scale >= 0.0 && self.entropy_scale.is_finite()) {
            return bad("entropy_scale", self.entropy_scale);
        }
        Ok(())
    }
}

/// What an imagined trajectory is scored by.
trait RolloutSignal {
    /// Value of a state that ends the rollout, if it does.
    fn terminal_value(&self, s: StateId) -> Option<f64>;
    fn reward(&self, s: StateId, a: ActionId) -> f64;
}

struct TaskSignal<'a> {
    model: &'a ModelSnapshot,
}

impl RolloutSignal for TaskSignal<'_> {
    fn terminal_value(&self, _s: StateId) -> Option<f64> {
        None
    }

    fn reward(&self, s: StateId, a: ActionId) -> f64 {
        self.model.reward(s, a)
    }
}

struct SafeSignal<'a> {
    costs: &'a CostModel,
}

impl RolloutSignal for SafeSignal<'_> {
    fn terminal_value(&self, s: StateId) -> Option<f64> {
        self.costs.is_violating(s).then(|| -self.costs.cost_value())
    }

    fn reward(&self, _s: StateId, _a: ActionId) -> f64 {
        0.0
    }
}

fn softmax_into(prefs: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = prefs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.extend(prefs.iter().map(|p| (p - max).exp()));
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
}

/// Softmax actor over per-(s, a) preferences with a per-state critic,
/// trained by TD(lambda) on imagined trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticAgent {
    num_states: usize,
    num_actions: usize,
    prefs: Vec<f64>,
    values: Vec<f64>,
    config: AgentConfig,
}

impl ActorCriticAgent {
    pub fn new(num_states: usize, num_actions: usize, config: AgentConfig) -> Result<Self, AgentError> {
        config.validate()?;
        if num_states == 0 || num_actions == 0 {
            return Err(AgentError::Parameter("agent needs states and actions".into()));
        }
        Ok(ActorCriticAgent {
            num_states,
            num_actions,
            prefs: vec![0.0; num_states * num_actions],
            values: vec![0.0; num_states],
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn value(&self, s: StateId) -> f64 {
        self.values[s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn preferences(&self, s: StateId) -> &[f64] {
        &self.prefs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Overwrites the preferences of one state, e.g. to pin a fixed policy.
    pub fn set_preferences(&mut self, s: StateId, prefs: &[f64]) {
        self.prefs[s * self.num_actions..(s + 1) * self.num_actions].copy_from_slice(prefs);
    }

    pub fn action_probs(&self, s: StateId) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_actions);
        softmax_into(self.preferences(s), &mut out);
        out
    }

    pub fn policy(&self) -> TabularPolicy {
        let mut probs = Vec::with_capacity(self.prefs.len());
        let mut buf = Vec::with_capacity(self.num_actions);
        for s in 0..self.num_states {
            softmax_into(self.preferences(s), &mut buf);
            probs.extend_from_slice(&buf);
        }
        TabularPolicy::new(self.num_states, self.num_actions, probs).expect("softmax rows are distributions")
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> ActionId {
        sample_categorical(&self.action_probs(s), rng)
    }

    /// Reward-maximizing updates from one imagined rollout per start state.
    pub fn train_task_policy<R: Rng + ?Sized>(
        &mut self,
        model: &ModelSnapshot,
        starts: &[StateId],
        horizon: usize,
        rng: &mut R,
    ) {
        let signal = TaskSignal { model };
        for &s in starts {
            self.learn_from_rollout(model, &signal, s, horizon, rng);
        }
    }

    /// Cost-minimizing updates: reward is `-cost`, violating states are
    /// terminal with value `-C`.
    pub fn train_safe_policy<R: Rng + ?Sized>(
        &mut self,
        model: &ModelSnapshot,
        costs: &CostModel,
        starts: &[StateId],
        horizon: usize,
        rng: &mut R,
    ) {
        let signal = SafeSignal { costs };
        for &s in starts {
            self.learn_from_rollout(model, &signal, s, horizon, rng);
        }
    }

    fn learn_from_rollout<R: Rng + ?Sized>(
        &mut self,
        model: &ModelSnapshot,
        signal: &dyn RolloutSignal,
        start: StateId,
        horizon: usize,
        rng: &mut R,
    ) {
        let mut states = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        let mut probs = Vec::with_capacity(self.num_actions);
        states.push(start);
        let mut terminal = signal.terminal_value(start);
        while actions.len() < horizon && terminal.is_none() {
            let s = *states.last().expect("non-empty");
            softmax_into(self.preferences(s), &mut probs);
            let a = sample_categorical(&probs, rng);
            let next = model.dynamics().sample(s, a, rng);
            rewards.push(signal.reward(s, a));
            actions.push(a);
            states.push(next);
            terminal = signal.terminal_value(next);
        }

        let steps = actions.len();
        let last = states[steps];
        let value_of = |s: StateId, v: &[f64]| signal.terminal_value(s).unwrap_or(v[s]);
        let (gamma, lambda) = (self.config.gamma, self.config.lambda);
        let mut returns = vec![0.0; steps + 1];
        returns[steps] = value_of(last, &self.values);
        for t in (0..steps).rev() {
            let next_v = value_of(states[t + 1], &self.values);
            returns[t] = rewards[t] + gamma * ((1.0 - lambda) * next_v + lambda * returns[t + 1]);
        }

        for t in 0..steps {
            let s = states[t];
            let advantage = returns[t] - self.values[s];
            self.values[s] += self.config.critic_lr * advantage;
            self.actor_step(s, actions[t], advantage, &mut probs);
        }
        if let Some(v) = terminal {
            self.values[last] = v;
        }
    }

    fn actor_step(&mut self, s: StateId, a: ActionId, advantage: f64, probs: &mut Vec<f64>) {
        let (lr, eta) = (self.config.actor_lr, self.config.entropy_scale);
        if lr == 0.0 {
            return;
        }
        softmax_into(self.preferences(s), probs);
        let entropy: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        let base = s * self.num_actions;
        for (b, &p) in probs.iter().enumerate() {
            let indicator = if b == a { 1.0 } else { 0.0 };
            let log_p = if p > 0.0 { p.ln() } else { 0.0 };
            let entropy_grad = -p * (log_p + entropy);
            self.prefs[base + b] += lr * (advantage * (indicator - p) + eta * entropy_grad);
        }
    }

    /// Checkpoint text with `value S V` and `pref S A X` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {}", self.num_states);
        let _ = writeln!(out, "actions {}", self.num_actions);
        for (s, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "value {s} {v}");
        }
        for s in 0..self.num_states {
            for (a, x) in self.preferences(s).iter().enumerate() {
                let _ = writeln!(out, "pref {s} {a} {x}");
            }
        }
        out
    }

    pub fn from_text(text: &str, config: AgentConfig) -> Result<Self, AgentError> {
        let table = CheckpointTable::parse(text)?;
        let (n, m) = table.dims()?;
        let mut agent = ActorCriticAgent::new(n, m, config)?;
        for (line, s, v) in table.values {
            *agent
                .values
                .get_mut(s)
                .ok_or_else(|| format_err(line, "state out of range"))? = v;
        }
        for (line, s, a, x) in table.prefs {
            if s >= n || a >= m {
                return Err(format_err(line, "index out of range"));
            }
            agent.prefs[s * m + a] = x;
        }
        Ok(agent)
    }
}

fn format_err(line: usize, message: impl Into<String>) -> AgentError {
    AgentError::Format {
        line,
        message: message.into(),
    }
}

/// Parsed `states` / `actions` / `value` / `pref` / `prob` lines.
#[derive(Debug, Default)]
pub(crate) struct CheckpointTable {
    pub states: Option<usize>,
    pub actions: Option<usize>,
    pub values: Vec<(usize, StateId, f64)>,
    pub prefs: Vec<(usize, StateId, ActionId, f64)>,
    pub probs: Vec<(usize, StateId, ActionId, f64)>,
}

impl CheckpointTable {
    pub fn parse(text: &str) -> Result<Self, AgentError> {
        let mut table = CheckpointTable::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let toks: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let int = |k: usize| -> Result<usize, AgentError> {
                toks.get(k)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| format_err(line, format!("expected an integer in field {k}")))
            };
            let real = |k: usize| -> Result<f64, AgentError> {
                toks.get(k)
                    .and_then(|t| t.parse::<f64>().ok())
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| format_err(line, format!("expected a number in field {k}")))
            };
            let arity = |k: usize| {
                if toks.len() == k {
                    Ok(())
                } else {
                    Err(format_err(line, format!("`{}` expects {} fields", toks[0], k - 1)))
                }
            };
            match toks[0] {
                "states" => {
                    arity(2)?;
                    table.states = Some(int(1)?);
                }
                "actions" => {
                    arity(2)?;
                    table.actions = Some(int(1)?);
                }
                "value" => {
                    arity(3)?;
                    table.values.push((line, int(1)?, real(2)?));
                }
                "pref" => {
                    arity(4)?;
                    table.prefs.push((line, int(1)?, int(2)?, real(3)?));
                }
                "prob" => {
                    arity(4)?;
                    table.probs.push((line, int(1)?, int(2)?, real(3)?));
                }
                other => return Err(format_err(line, format!("unknown directive `{other}`"))),
            }
        }
        Ok(table)
    }

    pub fn dims(&self) -> Result<(usize, usize), AgentError> {
        match (self.states, self.actions) {
            (Some(n), Some(m)) if n > 0 && m > 0 => Ok((n, m)),
            _ => Err(format_err(0, "missing or zero `states` / `actions` header")),
        }
    }
}

/// Reads a policy file: either explicit `prob S A P` lines or softmax
/// `pref S A X` lines, after `states N` and `actions M` headers.
pub fn parse_policy(text: &str) -> Result<TabularPolicy, AgentError> {
    let table = CheckpointTable::parse(text)?;
    let (n, m) = table.dims()?;
    match (table.probs.is_empty(), table.prefs.is_empty()) {
        (false, true) => {
            let mut probs = vec![0.0; n * m];
            for (line, s, a, p) in table.probs {
                if s >= n || a >= m {
                    return Err(format_err(line, "index out of range"));
                }
                probs[s * m + a] = p;
            }
            Ok(TabularPolicy::new(n, m, probs)?)
        }
        (true, false) => {
            let mut agent = ActorCriticAgent::new(n, m, AgentConfig::default())?;
            for (line, s, a, x) in table.prefs {
                if s >= n || a >= m {
                    return Err(format_err(line, "index out of range"));
                }
                agent.prefs[s * m + a] = x;
            }
            Ok(agent.policy())
        }
        (true, true) => Err(format_err(0, "policy file has no `prob` or `pref` lines")),
        (false, false) => Err(format_err(0, "policy file mixes `prob` and `pref` lines")),
    }
}

/// Writes a policy as `prob S A P` lines.
pub fn policy_to_text(policy: &TabularPolicy) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "states {}", policy.num_states());
    let _ = writeln!(out, "actions {}", policy.num_actions());
    for s in 0..policy.num_states() {
        for (a, p) in policy.probs(s).iter().enumerate() {
            let _ = writeln!(out, "prob {s} {a} {p}");
        }
    }
    out
}

/// Hyperparameters of the safety critics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticConfig {
    pub lr: f64,
    pub lambda: f64,
    /// Blend fraction for the slow target tables after each update.
    pub update_fraction: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            lr: 0.1,
            lambda: 0.95,
            update_fraction: 0.02,
        }
    }
}

/// Two cost critics with slow-moving targets; bootstraps use the minimum of
/// the two targets to counter overestimation.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyCriticPair {
    critics: [Vec<f64>; 2],
    targets: [Vec<f64>; 2],
    cost_value: f64,
    config: CriticConfig,
}

impl SafetyCriticPair {
    pub fn new(num_states: usize, cost_value: f64, config: CriticConfig) -> Result<Self, AgentError> {
        if !(cost_value > 0.0 && cost_value.is_finite()) {
            return Err(AgentError::CostValue(cost_value));
        }
        if !(config.lr > 0.0 && config.lr <= 1.0)
            || !(0.0..=1.0).contains(&config.lambda)
            || !(config.update_fraction > 0.0 && config.update_fraction <= 1.0)
        {
            return Err(AgentError::Parameter(format!("critic config {config:?}")));
        }
        let zeros = vec![0.0; num_states];
        Ok(SafetyCriticPair {
            critics: [zeros.clone(), zeros.clone()],
            targets: [zeros.clone(), zeros],
            cost_value,
            config,
        })
    }

    pub fn cost_value(&self) -> f64 {
        self.cost_value
    }

    pub fn critic(&self, which: usize) -> &[f64] {
        &self.critics[which]
    }

    pub fn target(&self, which: usize) -> &[f64] {
        &self.targets[which]
    }

    /// `min(v1(s), v2(s))`.
    pub fn value(&self, s: StateId) -> f64 {
        self.critics[0][s].min(self.critics[1][s])
    }

    /// Critic values to bootstrap a trace from `s`: `(C, C)` at violating
    /// states, the two critic values otherwise.
    pub fn bootstrap_values(&self, s: StateId, costs: &CostModel) -> (f64, f64) {
        if costs.is_violating(s) {
            (self.cost_value, self.cost_value)
        } else {
            (self.critics[0][s], self.critics[1][s])
        }
    }

    /// True when every entry of both critics and targets lies in `[0, C]`.
    pub fn within_bounds(&self) -> bool {
        self.critics
            .iter()
            .chain(&self.targets)
            .flatten()
            .all(|v| (0.0..=self.cost_value).contains(v))
    }

    fn target_value(&self, s: StateId, costs: &CostModel) -> f64 {
        if costs.is_violating(s) {
            self.cost_value
        } else {
            self.targets[0][s].min(self.targets[1][s])
        }
    }

    /// One rollout per start under the task policy. Rollouts alternate
    /// between the two critics so they see different data.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        model: &ModelSnapshot,
        costs: &CostModel,
        task_policy: &TabularPolicy,
        starts: &[StateId],
        horizon: usize,
        rng: &mut R,
    ) {
        let c = self.cost_value;
        let (lr, lambda, tau) = (self.config.lr, self.config.lambda, self.config.update_fraction);
        let mut states = Vec::with_capacity(horizon + 1);
        let mut returns = vec![0.0; horizon + 1];
        for (i, &start) in starts.iter().enumerate() {
            let which = i % 2;
            states.clear();
            states.push(start);
            let mut s = start;
            while states.len() <= horizon && !costs.is_violating(s) {
                let a = task_policy.sample(s, rng);
                s = model.dynamics().sample(s, a, rng);
                states.push(s);
            }
            let steps = states.len() - 1;
            returns[steps] = self.target_value(states[steps], costs);
            for t in (0..steps).rev() {
                let st = states[t];
                let next_v = self.target_value(states[t + 1], costs);
                returns[t] =
                    costs.cost(st) + costs.safety_discount(st) * ((1.0 - lambda) * next_v + lambda * returns[t + 1]);
            }
            let table = &mut self.critics[which];
            for t in 0..steps {
                let st = states[t];
                table[st] = (table[st] + lr * (returns[t] - table[st])).clamp(0.0, c);
            }
            if costs.is_violating(states[steps]) {
                table[states[steps]] = c;
            }
            for k in 0..2 {
                for (tgt, v) in self.targets[k].iter_mut().zip(&self.critics[k]) {
                    *tgt = ((1.0 - tau) * *tgt + tau * v).clamp(0.0, c);
                }
            }
            assert!(self.within_bounds(), "safety critics left [0, C]");
        }
    }

    /// Checkpoint text of one critic as `value S V` lines.
    pub fn critic_to_text(&self, which: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {}", self.critics[which].len());
        for (s, v) in self.critics[which].iter().enumerate() {
            let _ = writeln!(out, "value {s} {v}");
        }
        out
    }

    /// Restores both critics (targets start equal to the critics).
    pub fn from_text(first: &str, second: &str, cost_value: f64, config: CriticConfig) -> Result<Self, AgentError> {
        let read = |text: &str| -> Result<Vec<f64>, AgentError> {
            let table = CheckpointTable::parse(text)?;
            let n = table.states.ok_or_else(|| format_err(0, "missing `states` header"))?;
            let mut values = vec![0.0; n];
            for (line, s, v) in table.values {
                if s >= n || !(0.0..=cost_value).contains(&v) {
                    return Err(format_err(line, "state out of range or value outside [0, C]"));
                }
                values[s] = v;
            }
            Ok(values)
        };
        let (a, b) = (read(first)?, read(second)?);
        if a.len() != b.len() {
            return Err(format_err(0, "critic tables differ in size"));
        }
        let mut pair = SafetyCriticPair::new(a.len(), cost_value, config)?;
        pair.targets = [a.clone(), b.clone()];
        pair.critics = [a, b];
        Ok(pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{label_set, parse_formula};
    use crate::gridworld::{build_gridworld, Cell, Direction, GridworldSpec};
    use crate::markov::{Dynamics, LabeledMdp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn snapshot(n: usize, m: usize, probs: Vec<f64>, reward: Vec<f64>) -> ModelSnapshot {
        ModelSnapshot::new(Dynamics::new(n, m, probs).unwrap(), reward).unwrap()
    }

    /// Exact policy evaluation `V = (I - gamma P_pi)^{-1} r_pi` by Gaussian elimination.
    fn policy_evaluation(model: &ModelSnapshot, policy: &TabularPolicy, gamma: f64) -> Vec<f64> {
        let n = model.num_states();
        let mut a = vec![vec![0.0; n + 1]; n];
        for s in 0..n {
            a[s][s] += 1.0;
            for act in 0..model.num_actions() {
                let pa = policy.prob(s, act);
                a[s][n] += pa * model.reward(s, act);
                for next in 0..n {
                    a[s][next] -= gamma * pa * model.dynamics().prob(s, act, next);
                }
            }
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..=n {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..n).map(|s| a[s][n] / a[s][s]).collect()
    }

    #[test]
    fn cost_target_examples() {
        let f = parse_formula("!hazard").unwrap();
        assert_eq!(cost_target(&LabelSet::new(), &f, 10.0), 0.0);
        assert_eq!(cost_target(&label_set(["hazard"]).unwrap(), &f, 10.0), 10.0);
        let g = parse_formula("!collision & (red_light -> stop)").unwrap();
        let names = ["collision", "red_light", "stop"];
        for mask in 0..8u32 {
            let labels = label_set(
                names
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, n)| *n),
            )
            .unwrap();
            let expected = if g.eval(&labels) { 0.0 } else { 3.5 };
            assert_eq!(cost_target(&labels, &g, 3.5), expected);
        }
    }

    #[test]
    fn cost_model_invariant() {
        let f = parse_formula("!hazard").unwrap();
        let labels = vec![LabelSet::new(), label_set(["hazard"]).unwrap()];
        let costs = CostModel::new(&f, &labels, 10.0, 0.99).unwrap();
        for s in 0..2 {
            assert_eq!(costs.cost(s) == 10.0, costs.is_violating(s));
            assert_eq!(costs.safety_discount(s) == 0.0, costs.is_violating(s));
        }
        assert!(CostModel::new(&f, &labels, 0.0, 0.99).is_err());
    }

    #[test]
    fn zero_reward_keeps_critic_at_zero_and_policy_uniform() {
        let model = snapshot(2, 2, vec![0.5, 0.5, 0.1, 0.9, 1.0, 0.0, 0.3, 0.7], vec![0.0; 4]);
        let mut agent = ActorCriticAgent::new(2, 2, AgentConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            agent.train_task_policy(&model, &[0, 1], 15, &mut rng);
        }
        assert!(agent.values().iter().all(|v| v.abs() < 1e-6));
        for s in 0..2 {
            for p in agent.action_probs(s) {
                assert!((p - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn learns_the_rewarding_action_of_a_two_state_bandit() {
        // action 1 pays 1 and both actions return to state 0; state 1 is unused
        let model = snapshot(
            2,
            2,
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0, 0.0],
        );
        let mut agent = ActorCriticAgent::new(2, 2, AgentConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5000 {
            agent.train_task_policy(&model, &[0], 1, &mut rng);
        }
        assert!(agent.action_probs(0)[1] > 0.95, "{:?}", agent.action_probs(0));
    }

    #[test]
    fn critic_matches_exact_policy_evaluation_for_a_fixed_policy() {
        // deterministic ring with state rewards; near-deterministic fixed policy
        let n = 4;
        let mut probs = vec![0.0; n * 2 * n];
        let mut reward = vec![0.0; n * 2];
        for s in 0..n {
            probs[(s * 2) * n + (s + 1) % n] = 1.0;
            probs[(s * 2 + 1) * n + s] = 1.0;
            reward[s * 2] = s as f64 * 0.25;
            reward[s * 2 + 1] = -1.0;
        }
        let model = snapshot(n, 2, probs, reward);
        let config = AgentConfig {
            actor_lr: 0.0,
            ..AgentConfig::default()
        };
        let mut agent = ActorCriticAgent::new(n, 2, config).unwrap();
        for s in 0..n {
            agent.set_preferences(s, &[40.0, -40.0]);
        }
        let policy = agent.policy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let starts: Vec<usize> = (0..n).collect();
        for _ in 0..3000 {
            agent.train_task_policy(&model, &starts, 15, &mut rng);
        }
        let exact = policy_evaluation(&model, &policy, config.gamma);
        for s in 0..n {
            assert!(
                (agent.value(s) - exact[s]).abs() < 1e-3,
                "state {s}: {} vs {}",
                agent.value(s),
                exact[s]
            );
        }
        assert_eq!(agent.policy(), policy);
    }

    #[test]
    fn safe_policy_without_violations_stays_uniform() {
        let model = snapshot(
            2,
            2,
            vec![0.5, 0.5, 0.1, 0.9, 1.0, 0.0, 0.3, 0.7],
            vec![1.0, 0.0, 0.0, 2.0],
        );
        let costs = CostModel::from_violations(vec![false, false], 10.0, 0.99).unwrap();
        let mut agent = ActorCriticAgent::new(2, 2, AgentConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            agent.train_safe_policy(&model, &costs, &[0, 1], 15, &mut rng);
        }
        for s in 0..2 {
            for p in agent.action_probs(s) {
                assert!((p - 0.5).abs() < 1e-6);
            }
        }
    }

    fn corridor() -> (LabeledMdp, GridworldSpec) {
        // 4x1 corridor: start left, goal at the far left is impossible, so the
        // goal sits at cell 0 and the hazard at cell 3
        let mut spec = GridworldSpec::new(4, 1, Cell::new(1, 0), Cell::new(0, 0));
        spec.hazards.insert(Cell::new(3, 0));
        (build_gridworld(&spec).unwrap(), spec)
    }

    #[test]
    fn safe_policy_avoids_the_hazard_in_a_corridor() {
        let (mdp, spec) = corridor();
        let f = parse_formula("!hazard").unwrap();
        let costs = CostModel::new(&f, mdp.all_labels(), 10.0, 0.99).unwrap();
        let model = ModelSnapshot::from_mdp(&mdp);
        let mut agent = ActorCriticAgent::new(mdp.num_states(), 4, AgentConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4000 {
            agent.train_safe_policy(&model, &costs, &[1, 2, 3], 15, &mut rng);
        }
        let adjacent = spec.state(Cell::new(2, 0));
        let p_right = agent.action_probs(adjacent)[Direction::Right.index()];
        assert!(p_right < 0.05, "p(right) = {p_right}");
        let hazard = spec.state(Cell::new(3, 0));
        assert_eq!(-agent.value(hazard), 10.0);
    }

    #[test]
    fn critics_stay_zero_without_violations() {
        let model = snapshot(2, 1, vec![0.3, 0.7, 0.6, 0.4], vec![0.0; 2]);
        let costs = CostModel::from_violations(vec![false, false], 10.0, 0.99).unwrap();
        let mut pair = SafetyCriticPair::new(2, 10.0, CriticConfig::default()).unwrap();
        let policy = TabularPolicy::uniform(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            pair.train(&model, &costs, &policy, &[0, 1], 15, &mut rng);
        }
        for s in 0..2 {
            assert!(pair.critic(0)[s].abs() < 1e-6 && pair.critic(1)[s].abs() < 1e-6);
        }
    }

    #[test]
    fn critics_converge_to_discounted_cost_on_a_deterministic_chain() {
        // 0 -> 1 -> 2 -> 3 (violating, absorbing): violation after k = 4 states
        let n = 4;
        let mut probs = vec![0.0; n * n];
        for s in 0..3 {
            probs[s * n + s + 1] = 1.0;
        }
        probs[3 * n + 3] = 1.0;
        let model = snapshot(n, 1, probs, vec![0.0; n]);
        let costs = CostModel::from_violations(vec![false, false, false, true], 10.0, 0.99).unwrap();
        let mut pair = SafetyCriticPair::new(n, 10.0, CriticConfig::default()).unwrap();
        let policy = TabularPolicy::uniform(n, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3000 {
            pair.train(&model, &costs, &policy, &[0, 1, 2, 0], 15, &mut rng);
            assert!(pair.within_bounds());
        }
        let k = 4;
        let expected = 0.99f64.powi(k - 1) * 10.0;
        for which in 0..2 {
            assert!(
                (pair.critic(which)[0] - expected).abs() < 1e-3,
                "{:?}",
                pair.critic(which)
            );
        }
        assert_eq!(pair.critic(0)[3], 10.0);
        for s in 0..n {
            assert!(pair.value(s) <= pair.critic(0)[s] && pair.value(s) <= pair.critic(1)[s]);
        }
    }

    #[test]
    fn checkpoints_round_trip() {
        let mut agent = ActorCriticAgent::new(3, 2, AgentConfig::default()).unwrap();
        agent.set_preferences(1, &[0.25, -1.5]);
        agent.values[2] = 0.125;
        let restored = ActorCriticAgent::from_text(&agent.to_text(), AgentConfig::default()).unwrap();
        assert_eq!(restored, agent);

        let policy = parse_policy(&policy_to_text(&agent.policy())).unwrap();
        for (a, b) in policy.as_slice().iter().zip(agent.policy().as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let from_prefs = parse_policy(&agent.to_text().replace("value", "# value")).unwrap();
        assert_eq!(from_prefs, agent.policy());
        assert!(parse_policy("states 1\nactions 2\nprob 0 0 0.5\n").is_err());
        assert!(parse_policy("states 1\nactions 2\nprob 0 0 1\npref 0 1 0\n").is_err());
        assert!(matches!(
            parse_policy("states 1\nactions 2\nbogus\n"),
            Err(AgentError::Format { line: 3, .. })
        ));

        let mut pair = SafetyCriticPair::new(2, 10.0, CriticConfig::default()).unwrap();
        pair.critics[1][0] = 4.0;
        let restored = SafetyCriticPair::from_text(
            &pair.critic_to_text(0),
            &pair.critic_to_text(1),
            10.0,
            CriticConfig::default(),
        )
        .unwrap();
        assert_eq!(restored.critic(1), pair.critic(1));
        assert!(
            SafetyCriticPair::from_text("states 1\nvalue 0 11\n", "states 1\n", 10.0, CriticConfig::default()).is_err()
        );
    }
}
