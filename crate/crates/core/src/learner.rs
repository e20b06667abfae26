//! Maximum-likelihood tabular dynamics from visit counts.

use std::fmt::Write as _;

use thiserror::Error;

use crate::formula::LabelSet;
use crate::markov::{ActionId, Dynamics, LabeledMdp, Provenance, StateId, TabularPolicy, TransitionSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("transition ({state}, {action}, {next}) out of range for {num_states} states and {num_actions} actions")]
    OutOfRange {
        state: StateId,
        action: ActionId,
        next: StateId,
        num_states: usize,
        num_actions: usize,
    },
    #[error("policy is {0}x{1}, model is {2}x{3}")]
    Dimension(usize, usize, usize, usize),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// One real environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateId,
    pub action: ActionId,
    pub next_state: StateId,
    pub reward: f64,
    pub labels_next: LabelSet,
}

/// How to fill rows for state-action pairs that were never tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnvisitedFallback {
    #[default]
    Uniform,
    SelfLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MleOptions {
    pub fallback: UnvisitedFallback,
    /// Pseudo-count added to every cell of a visited row. Zero is pure MLE.
    pub smoothing: f64,
}

/// Visit counts `c(s', s, a)` and `v(s, a)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountsModel {
    num_states: usize,
    num_actions: usize,
    triple: Vec<u64>,
    pair: Vec<u64>,
}

impl CountsModel {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        CountsModel {
            num_states,
            num_actions,
            triple: vec![0; num_states * num_actions * num_states],
            pair: vec![0; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn count(&self, state: StateId, action: ActionId, next: StateId) -> u64 {
        self.triple[(state * self.num_actions + action) * self.num_states + next]
    }

    pub fn visits(&self, state: StateId, action: ActionId) -> u64 {
        self.pair[state * self.num_actions + action]
    }

    pub fn total_visits(&self) -> u64 {
        self.pair.iter().sum()
    }

    pub fn observe(&mut self, state: StateId, action: ActionId, next: StateId) -> Result<(), LearnerError> {
        self.observe_n(state, action, next, 1)
    }

    fn observe_n(&mut self, state: StateId, action: ActionId, next: StateId, times: u64) -> Result<(), LearnerError> {
        if state >= self.num_states || next >= self.num_states || action >= self.num_actions {
            return Err(LearnerError::OutOfRange {
                state,
                action,
                next,
                num_states: self.num_states,
                num_actions: self.num_actions,
            });
        }
        self.triple[(state * self.num_actions + action) * self.num_states + next] += times;
        self.pair[state * self.num_actions + action] += times;
        Ok(())
    }

    pub fn update(&mut self, transition: &Transition) -> Result<(), LearnerError> {
        self.observe(transition.state, transition.action, transition.next_state)
    }

    /// Estimated dynamics `c / v`, with the fallback for unvisited pairs.
    pub fn mle_dynamics(&self) -> Dynamics {
        self.mle_dynamics_with(MleOptions::default())
    }

    pub fn mle_dynamics_with(&self, options: MleOptions) -> Dynamics {
        let (n, m) = (self.num_states, self.num_actions);
        let mut probs = vec![0.0; n * m * n];
        for s in 0..n {
            for a in 0..m {
                let idx = s * m + a;
                let row = &mut probs[idx * n..(idx + 1) * n];
                let visits = self.pair[idx];
                if visits == 0 {
                    match options.fallback {
                        UnvisitedFallback::Uniform => row.iter_mut().for_each(|p| *p = 1.0 / n as f64),
                        UnvisitedFallback::SelfLoop => row[s] = 1.0,
                    }
                    continue;
                }
                let counts = &self.triple[idx * n..(idx + 1) * n];
                let denom = visits as f64 + options.smoothing * n as f64;
                for (p, &c) in row.iter_mut().zip(counts) {
                    *p = (c as f64 + options.smoothing) / denom;
                }
            }
        }
        Dynamics::new(n, m, probs).expect("count ratios form distributions")
    }

    /// `T^(s'|s) = sum_a pi(a|s) p^(s'|s,a)`.
    pub fn learned_transition_system(&self, policy: &TabularPolicy) -> Result<TransitionSystem, LearnerError> {
        self.learned_transition_system_with(policy, MleOptions::default())
    }

    pub fn learned_transition_system_with(
        &self,
        policy: &TabularPolicy,
        options: MleOptions,
    ) -> Result<TransitionSystem, LearnerError> {
        if policy.num_states() != self.num_states || policy.num_actions() != self.num_actions {
            return Err(LearnerError::Dimension(
                policy.num_states(),
                policy.num_actions(),
                self.num_states,
                self.num_actions,
            ));
        }
        let dynamics = self.mle_dynamics_with(options);
        Ok(
            TransitionSystem::from_dynamics(&dynamics, policy, Provenance::LearnedFromCounts)
                .expect("dimensions checked"),
        )
    }

    /// Checkpoint text: `states N`, `actions M`, then `count S A S' N` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {}", self.num_states);
        let _ = writeln!(out, "actions {}", self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for next in 0..self.num_states {
                    let c = self.count(s, a, next);
                    if c > 0 {
                        let _ = writeln!(out, "count {s} {a} {next} {c}");
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LearnerError> {
        let err = |line: usize, message: String| LearnerError::Format { line, message };
        let mut dims = (None, None);
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let toks: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let nums: Result<Vec<u64>, _> = toks[1..].iter().map(|t| t.parse::<u64>()).collect();
            let nums = nums.map_err(|_| err(line, format!("non-integer field in `{raw}`")))?;
            match (toks[0], nums.as_slice()) {
                ("states", [n]) => dims.0 = Some(*n as usize),
                ("actions", [m]) => dims.1 = Some(*m as usize),
                ("count", [s, a, next, c]) => entries.push((line, *s as usize, *a as usize, *next as usize, *c)),
                _ => return Err(err(line, format!("unrecognized line `{raw}`"))),
            }
        }
        let (Some(n), Some(m)) = dims else {
            return Err(err(0, "missing `states` or `actions` header".into()));
        };
        let mut model = CountsModel::new(n, m);
        for (line, s, a, next, c) in entries {
            model.observe_n(s, a, next, c).map_err(|e| err(line, e.to_string()))?;
        }
        Ok(model)
    }
}

/// Frozen view of a dynamics model and its expected rewards.
///
/// Imagination rollouts and the shield only ever read a snapshot, so the
/// model can keep learning while a snapshot is in use.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    dynamics: Dynamics,
    reward: Vec<f64>,
}

impl ModelSnapshot {
    pub fn new(dynamics: Dynamics, reward: Vec<f64>) -> Result<Self, LearnerError> {
        let (n, m) = (dynamics.num_states(), dynamics.num_actions());
        if reward.len() != n * m {
            return Err(LearnerError::Dimension(reward.len(), 1, n, m));
        }
        Ok(ModelSnapshot { dynamics, reward })
    }

    /// The true model of an MDP, for tests and oracle runs.
    pub fn from_mdp(mdp: &LabeledMdp) -> Self {
        ModelSnapshot {
            dynamics: mdp.dynamics().clone(),
            reward: mdp.rewards().to_vec(),
        }
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn num_states(&self) -> usize {
        self.dynamics.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.dynamics.num_actions()
    }

    pub fn reward(&self, state: StateId, action: ActionId) -> f64 {
        self.reward[state * self.num_actions() + action]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_system(&self, policy: &TabularPolicy) -> Result<TransitionSystem, LearnerError> {
        if policy.num_states() != self.num_states() || policy.num_actions() != self.num_actions() {
            return Err(LearnerError::Dimension(
                policy.num_states(),
                policy.num_actions(),
                self.num_states(),
                self.num_actions(),
            ));
        }
        Ok(
            TransitionSystem::from_dynamics(&self.dynamics, policy, Provenance::LearnedFromCounts)
                .expect("dimensions checked"),
        )
    }
}

/// Counts model plus running mean rewards and observed episode ends.
///
/// States in which a real episode terminated are treated as absorbing in
/// snapshots, taking precedence over the unvisited fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedModel {
    counts: CountsModel,
    reward_sum: Vec<f64>,
    terminal: Vec<bool>,
    options: MleOptions,
}

impl LearnedModel {
    pub fn new(num_states: usize, num_actions: usize, options: MleOptions) -> Self {
        LearnedModel {
            counts: CountsModel::new(num_states, num_actions),
            reward_sum: vec![0.0; num_states * num_actions],
            terminal: vec![false; num_states],
            options,
        }
    }

    pub fn counts(&self) -> &CountsModel {
        &self.counts
    }

    pub fn is_terminal(&self, state: StateId) -> bool {
        self.terminal[state]
    }

    /// Records a real transition; `terminal` marks that the episode ended in
    /// an absorbing state.
    pub fn observe(&mut self, transition: &Transition, terminal: bool) -> Result<(), LearnerError> {
        self.counts.update(transition)?;
        self.reward_sum[transition.state * self.counts.num_actions() + transition.action] += transition.reward;
        if terminal {
            self.terminal[transition.next_state] = true;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        let (n, m) = (self.counts.num_states(), self.counts.num_actions());
        let mut probs = self.counts.mle_dynamics_with(self.options).as_slice().to_vec();
        let mut reward = vec![0.0; n * m];
        for s in 0..n {
            for a in 0..m {
                let idx = s * m + a;
                if self.terminal[s] {
                    let row = &mut probs[idx * n..(idx + 1) * n];
                    row.iter_mut().for_each(|p| *p = 0.0);
                    row[s] = 1.0;
                    continue;
                }
                let visits = self.counts.visits(s, a);
                if visits > 0 {
                    reward[idx] = self.reward_sum[idx] / visits as f64;
                }
            }
        }
        ModelSnapshot {
            dynamics: Dynamics::new(n, m, probs).expect("rows remain stochastic"),
            reward,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{sample_categorical, tv_distance};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(state: usize, action: usize, next_state: usize) -> Transition {
        Transition {
            state,
            action,
            next_state,
            reward: 0.0,
            labels_next: LabelSet::new(),
        }
    }

    #[test]
    fn single_update() {
        let mut model = CountsModel::new(3, 2);
        model.update(&t(0, 1, 2)).unwrap();
        assert_eq!(model.count(0, 1, 2), 1);
        assert_eq!(model.visits(0, 1), 1);
        model.update(&t(0, 1, 2)).unwrap();
        assert_eq!(model.count(0, 1, 2), 2);
        assert_eq!(model.visits(0, 1), 2);
        assert!(matches!(
            model.update(&t(0, 2, 0)),
            Err(LearnerError::OutOfRange { .. })
        ));
        assert!(matches!(
            model.update(&t(3, 0, 0)),
            Err(LearnerError::OutOfRange { .. })
        ));
    }

    #[test]
    fn mle_ratios_and_fallbacks() {
        let mut model = CountsModel::new(3, 2);
        for next in [0, 0, 0, 1] {
            model.observe(1, 0, next).unwrap();
        }
        let p = model.mle_dynamics();
        assert_eq!(p.row(1, 0), &[0.75, 0.25, 0.0]);
        let third = 1.0 / 3.0;
        assert_eq!(p.row(2, 1), &[third, third, third]);
        let looped = model.mle_dynamics_with(MleOptions {
            fallback: UnvisitedFallback::SelfLoop,
            smoothing: 0.0,
        });
        assert_eq!(looped.row(2, 1), &[0.0, 0.0, 1.0]);
        let smoothed = model.mle_dynamics_with(MleOptions {
            fallback: UnvisitedFallback::Uniform,
            smoothing: 1.0,
        });
        assert!((smoothed.prob(1, 0, 2) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_data_gives_zero_one_rows() {
        let mut model = CountsModel::new(4, 1);
        for s in 0..4 {
            for _ in 0..5 {
                model.observe(s, 0, (s + 1) % 4).unwrap();
            }
        }
        let p = model.mle_dynamics();
        for s in 0..4 {
            for next in 0..4 {
                assert_eq!(p.prob(s, 0, next), if next == (s + 1) % 4 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn empirical_ratios_concentrate() {
        let truth = [0.5, 0.3, 0.15, 0.05];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = CountsModel::new(4, 1);
        for _ in 0..10_000 {
            model.observe(0, 0, sample_categorical(&truth, &mut rng)).unwrap();
        }
        let p = model.mle_dynamics();
        for (next, &q) in truth.iter().enumerate() {
            let bound = 3.0 * (q * (1.0 - q) / 10_000.0).sqrt();
            assert!((p.prob(0, 0, next) - q).abs() <= bound);
        }
    }

    #[test]
    fn learned_chain_examples() {
        // counts replicating p exactly: p(.|s,a) = (0.25, 0.75) and (1, 0)
        let mut model = CountsModel::new(2, 2);
        for (s, a, next, c) in [(0, 0, 0, 1), (0, 0, 1, 3), (0, 1, 0, 4), (1, 0, 1, 2), (1, 1, 0, 2)] {
            model.observe_n(s, a, next, c).unwrap();
        }
        let policy = TabularPolicy::new(2, 2, vec![0.5, 0.5, 0.2, 0.8]).unwrap();
        let ts = model.learned_transition_system(&policy).unwrap();
        assert_eq!(ts.source(), Provenance::LearnedFromCounts);
        let expected = [0.5 * 0.25 + 0.5, 0.5 * 0.75, 0.8, 0.2];
        for (got, want) in ts.as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }

        let empty = CountsModel::new(3, 2);
        let ts = empty.learned_transition_system(&TabularPolicy::uniform(3, 2)).unwrap();
        assert!(ts.as_slice().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(matches!(
            empty.learned_transition_system(&TabularPolicy::uniform(2, 2)),
            Err(LearnerError::Dimension(..))
        ));
    }

    #[test]
    fn more_data_shrinks_tv_error() {
        let truth = [0.6, 0.25, 0.1, 0.05];
        let mut shrank = 0;
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let tv_after = |samples: usize, rng: &mut ChaCha8Rng| {
                let mut model = CountsModel::new(4, 1);
                for _ in 0..samples {
                    model.observe(0, 0, sample_categorical(&truth, rng)).unwrap();
                }
                tv_distance(model.mle_dynamics().row(0, 0), &truth).unwrap()
            };
            let small = tv_after(100, &mut rng);
            let large = tv_after(10_000, &mut rng);
            if large < small {
                shrank += 1;
            }
        }
        assert!(shrank >= 95, "only {shrank} of 100 trials improved");
    }

    #[test]
    fn snapshot_uses_mean_rewards_and_absorbs_terminals() {
        let mut model = LearnedModel::new(3, 2, MleOptions::default());
        let mut tr = t(0, 1, 2);
        tr.reward = 1.0;
        model.observe(&tr, true).unwrap();
        tr.reward = 0.0;
        tr.next_state = 1;
        model.observe(&tr, false).unwrap();
        let snap = model.snapshot();
        assert_eq!(snap.reward(0, 1), 0.5);
        assert_eq!(snap.dynamics().row(0, 1), &[0.0, 0.5, 0.5]);
        assert!(model.is_terminal(2));
        assert_eq!(snap.dynamics().row(2, 0), &[0.0, 0.0, 1.0]);
        assert_eq!(snap.reward(2, 0), 0.0);
        let third = 1.0 / 3.0;
        assert_eq!(snap.dynamics().row(1, 1), &[third, third, third]);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let mut model = CountsModel::new(3, 2);
        model.observe(0, 1, 2).unwrap();
        model.observe_n(2, 0, 0, 7).unwrap();
        let text = model.to_text();
        assert!(text.contains("count 2 0 0 7"));
        assert_eq!(CountsModel::from_text(&text).unwrap(), model);
        assert!(CountsModel::from_text("states 2\ncount 0 0 0 1\n").is_err());
        let err = CountsModel::from_text("states 2\nactions 1\ncount 0 0 5 1\n").unwrap_err();
        assert!(matches!(err, LearnerError::Format { line: 3, .. }));
    }

    proptest! {
        #[test]
        fn updates_commute_and_rows_stay_stochastic(
            batch in proptest::collection::vec((0usize..3, 0usize..2, 0usize..3), 0..60),
            seed in any::<u64>(),
        ) {
            let mut forward = CountsModel::new(3, 2);
            for &(s, a, n) in &batch {
                forward.observe(s, a, n).unwrap();
            }
            let mut shuffled = batch.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let mut backward = CountsModel::new(3, 2);
            for &(s, a, n) in &shuffled {
                backward.observe(s, a, n).unwrap();
            }
            prop_assert_eq!(&forward, &backward);
            for s in 0..3 {
                for a in 0..2 {
                    let total: u64 = (0..3).map(|n| forward.count(s, a, n)).sum();
                    prop_assert_eq!(total, forward.visits(s, a));
                }
            }
            let p = forward.mle_dynamics();
            for s in 0..3 {
                for a in 0..2 {
                    prop_assert!((p.row(s, a).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
