//! The interleaved learn / imagine / act loop, its metrics, and the
//! multi-variant comparison.

use std::collections::VecDeque;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::agents::{ActorCriticAgent, AgentConfig, AgentError, CostModel, CriticConfig, SafetyCriticPair};
use crate::formula::{Atom, SafetyFormula};
use crate::learner::{LearnedModel, LearnerError, MleOptions, ModelSnapshot, Transition};
use crate::markov::{ActionId, LabeledMdp, StateId, TabularPolicy, TransitionSystem};
use crate::rng::{Purpose, SeedStreams};
use crate::shield::{shield_action, ShieldConfig, ShieldDecision, ShieldError, ShieldModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("formula uses atoms the environment does not declare: {}", .0.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", "))]
    UndeclaredAtoms(Vec<Atom>),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
}

/// A real transition with the cost signal derived from the next state's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub transition: Transition,
    pub cost: f64,
    pub safety_discount: f64,
}

/// Bounded FIFO of real transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer needs capacity");
        ReplayBuffer {
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, entry: BufferEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn get(&self, i: usize) -> Option<&BufferEntry> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    /// Start states of `count` uniformly drawn entries.
    pub fn sample_states<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<StateId> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..count)
            .map(|_| self.entries[rng.gen_range(0..self.entries.len())].transition.state)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Shielded,
    Unshielded,
    SafeOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Shielded, Variant::Unshielded, Variant::SafeOnly];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Shielded => "shielded",
            Variant::Unshielded => "unshielded",
            Variant::SafeOnly => "safe-only",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shielded" => Ok(Variant::Shielded),
            "unshielded" => Ok(Variant::Unshielded),
            "safe-only" | "safe_only" => Ok(Variant::SafeOnly),
            other => Err(format!(
                "unknown variant `{other}` (expected shielded, unshielded or safe-only)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub total_steps: u64,
    pub steps_per_iter: usize,
    /// Imagined rollouts per training phase.
    pub rollouts: usize,
    /// Steps during which the shield is bypassed.
    pub warmup: u64,
    pub max_episode_len: usize,
    pub buffer_capacity: usize,
    /// Steps between metric rows.
    pub log_every: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            total_steps: 50_000,
            steps_per_iter: 16,
            rollouts: 16,
            warmup: 1000,
            max_episode_len: 100,
            buffer_capacity: 100_000,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub shield: ShieldConfig,
    pub task_agent: AgentConfig,
    pub safe_agent: AgentConfig,
    pub critic: CriticConfig,
    pub model: MleOptions,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            variant: Variant::Shielded,
            shield: ShieldConfig::default(),
            task_agent: AgentConfig::default(),
            safe_agent: AgentConfig::default(),
            critic: CriticConfig::default(),
            model: MleOptions::default(),
            schedule: Schedule::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Every violated constraint across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .shield
            .violations()
            .into_iter()
            .map(|v| format!("shield: {v}"))
            .collect();
        for (name, agent) in [("task_agent", &self.task_agent), ("safe_agent", &self.safe_agent)] {
            if let Err(e) = agent.validate() {
                out.push(format!("{name}: {e}"));
            }
        }
        let c = &self.critic;
        if !(c.lr > 0.0 && c.lr <= 1.0) {
            out.push(format!("critic: lr must lie in (0, 1], got {}", c.lr));
        }
        if !(0.0..=1.0).contains(&c.lambda) {
            out.push(format!("critic: lambda must lie in [0, 1], got {}", c.lambda));
        }
        if !(c.update_fraction > 0.0 && c.update_fraction <= 1.0) {
            out.push(format!(
                "critic: update_fraction must lie in (0, 1], got {}",
                c.update_fraction
            ));
        }
        if !(self.model.smoothing >= 0.0 && self.model.smoothing.is_finite()) {
            out.push(format!(
                "model: smoothing must be non-negative, got {}",
                self.model.smoothing
            ));
        }
        let s = &self.schedule;
        for (name, v) in [
            ("steps_per_iter", s.steps_per_iter),
            ("rollouts", s.rollouts),
            ("max_episode_len", s.max_episode_len),
            ("buffer_capacity", s.buffer_capacity),
        ] {
            if v == 0 {
                out.push(format!("schedule: {name} must be at least 1"));
            }
        }
        if s.log_every == 0 {
            out.push("schedule: log_every must be at least 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TrainingError::Config(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub return_: f64,
    pub length: usize,
    pub violations: u64,
}

/// One metrics CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    /// Return accumulated so far in the current episode.
    pub return_: f64,
    pub cum_violations: u64,
    pub cum_overrides: u64,
    /// Mean shield estimate over decisions since the previous row.
    pub estimate_mean: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,episode,return,cum_violations,cum_overrides,estimate_mean";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeRecord>,
    pub cum_violations: u64,
    pub cum_overrides: u64,
    pub shield_decisions: u64,
    pub steps: u64,
}

impl RunMetrics {
    /// Mean return of completed episodes, 0 when there are none.
    pub fn mean_episode_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.return_).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn best_episode_return(&self) -> Option<f64> {
        self.episodes.iter().map(|e| e.return_).reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let est = r.estimate_mean.map(|e| format!("{e:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{}",
                r.step, r.episode, r.return_, r.cum_violations, r.cum_overrides, est
            );
        }
        out
    }
}

/// What an observer sees at each shield decision.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub step: u64,
    pub iteration: u64,
    pub state: StateId,
    pub proposed: ActionId,
    pub snapshot: &'a ModelSnapshot,
    pub task_policy: &'a TabularPolicy,
    pub config: &'a ShieldConfig,
}

/// Hooks into a training run, for instrumentation and test oracles.
pub trait TrainingObserver {
    fn on_critic_update(&mut self, _iteration: u64, _critics: &SafetyCriticPair) {}
    fn on_shield_decision(&mut self, _ctx: &DecisionContext<'_>, _decision: &ShieldDecision) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TrainingObserver for NoObserver {}

/// Final learned state of a run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub metrics: RunMetrics,
    pub model: LearnedModel,
    pub task_agent: ActorCriticAgent,
    pub safe_agent: ActorCriticAgent,
    pub critics: SafetyCriticPair,
}

impl TrainingOutcome {
    /// `(file name, contents)` pairs in the module line formats.
    pub fn checkpoint_bundle(&self) -> Vec<(&'static str, String)> {
        vec![
            ("counts.txt", self.model.counts().to_text()),
            ("task_policy.txt", self.task_agent.to_text()),
            ("safe_policy.txt", self.safe_agent.to_text()),
            ("critic1.txt", self.critics.critic_to_text(0)),
            ("critic2.txt", self.critics.critic_to_text(1)),
        ]
    }
}

pub fn check_formula_atoms(env: &LabeledMdp, formula: &SafetyFormula) -> Result<(), TrainingError> {
    let missing = formula.undeclared_atoms(env.atoms());
    if missing.is_empty() {
        Ok(())
    } else {
        Err(TrainingError::UndeclaredAtoms(missing))
    }
}

struct EpisodeState {
    state: StateId,
    return_: f64,
    length: usize,
    violations: u64,
}

fn reset(env: &LabeledMdp, streams: &SeedStreams, episode: u64) -> EpisodeState {
    let mut rng = streams.stream(Purpose::Reset, episode, 0);
    EpisodeState {
        state: env.sample_initial(&mut rng),
        return_: 0.0,
        length: 0,
        violations: 0,
    }
}

pub fn run_training(
    env: &LabeledMdp,
    formula: &SafetyFormula,
    config: &TrainingConfig,
) -> Result<TrainingOutcome, TrainingError> {
    run_training_observed(env, formula, config, &mut NoObserver)
}

/// The full loop. Each iteration trains on a fresh model snapshot (task
/// policy, safety critics, safe policy, all from replay start states) and
/// then takes `steps_per_iter` real steps.
pub fn run_training_observed(
    env: &LabeledMdp,
    formula: &SafetyFormula,
    config: &TrainingConfig,
    observer: &mut dyn TrainingObserver,
) -> Result<TrainingOutcome, TrainingError> {
    config.validate()?;
    check_formula_atoms(env, formula)?;
    let (n, m) = (env.num_states(), env.num_actions());
    let shield = &config.shield;
    let sched = &config.schedule;
    let horizon = shield.imagination_horizon;
    let streams = SeedStreams::new(config.seed);
    let costs = CostModel::new(formula, env.all_labels(), shield.cost_value, shield.gamma)?;
    let mut model = LearnedModel::new(n, m, config.model);
    let mut buffer = ReplayBuffer::new(sched.buffer_capacity);
    let mut task = ActorCriticAgent::new(n, m, config.task_agent)?;
    let mut safe = ActorCriticAgent::new(n, m, config.safe_agent)?;
    let mut critics = SafetyCriticPair::new(n, shield.cost_value, config.critic)?;
    let mut metrics = RunMetrics::default();

    let mut episode = 0u64;
    let mut current = reset(env, &streams, episode);
    let mut estimate_sum = 0.0;
    let mut estimate_count = 0u64;
    let mut step = 0u64;
    let mut iteration = 0u64;
    while step < sched.total_steps {
        let snapshot = model.snapshot();
        if !buffer.is_empty() {
            let mut rng = streams.stream(Purpose::Imagination, iteration, 0);
            let starts = buffer.sample_states(sched.rollouts, &mut rng);
            task.train_task_policy(&snapshot, &starts, horizon, &mut rng);
            let task_policy = task.policy();
            critics.train(&snapshot, &costs, &task_policy, &starts, horizon, &mut rng);
            observer.on_critic_update(iteration, &critics);
            safe.train_safe_policy(&snapshot, &costs, &starts, horizon, &mut rng);
        }
        let task_policy = task.policy();
        let safe_policy = safe.policy();
        let shielding = config.variant == Variant::Shielded;
        let task_chain: Option<TransitionSystem> = if shielding && step + sched.steps_per_iter as u64 > sched.warmup {
            Some(snapshot.transition_system(&task_policy)?)
        } else {
            None
        };

        for _ in 0..sched.steps_per_iter {
            if step >= sched.total_steps {
                break;
            }
            let s = current.state;
            let mut rng = streams.stream(Purpose::TaskAction, step, 0);
            let proposed = task_policy.sample(s, &mut rng);
            let taken = match config.variant {
                Variant::Unshielded => proposed,
                Variant::SafeOnly => {
                    let mut rng = streams.stream(Purpose::SafeAction, step, 0);
                    safe_policy.sample(s, &mut rng)
                }
                Variant::Shielded if step < sched.warmup => proposed,
                Variant::Shielded => {
                    let chain = task_chain.as_ref().expect("built once warm-up ends");
                    let view = ShieldModel {
                        dynamics: snapshot.dynamics(),
                        task_chain: chain,
                        costs: &costs,
                        critics: shield.use_critic_bootstrap.then_some(&critics),
                    };
                    let decision = shield_action(proposed, s, &view, &safe_policy, shield, &streams, step)?;
                    observer.on_shield_decision(
                        &DecisionContext {
                            step,
                            iteration,
                            state: s,
                            proposed,
                            snapshot: &snapshot,
                            task_policy: &task_policy,
                            config: shield,
                        },
                        &decision,
                    );
                    metrics.shield_decisions += 1;
                    estimate_sum += decision.estimate;
                    estimate_count += 1;
                    if decision.overridden {
                        metrics.cum_overrides += 1;
                    }
                    decision.action_taken
                }
            };

            let mut rng = streams.stream(Purpose::Environment, step, 0);
            let next = env.dynamics().sample(s, taken, &mut rng);
            let reward = env.reward(s, taken);
            if costs.is_violating(next) {
                metrics.cum_violations += 1;
                current.violations += 1;
            }
            let terminal = env.is_absorbing(next);
            let transition = Transition {
                state: s,
                action: taken,
                next_state: next,
                reward,
                labels_next: env.labels(next).clone(),
            };
            model.observe(&transition, terminal)?;
            buffer.push(BufferEntry {
                transition,
                cost: costs.cost(next),
                safety_discount: costs.safety_discount(next),
            });
            current.return_ += reward;
            current.length += 1;
            current.state = next;
            step += 1;

            if terminal || current.length >= sched.max_episode_len {
                metrics.episodes.push(EpisodeRecord {
                    return_: current.return_,
                    length: current.length,
                    violations: current.violations,
                });
                episode += 1;
                current = reset(env, &streams, episode);
            }
            if step.is_multiple_of(sched.log_every) || step == sched.total_steps {
                metrics.rows.push(MetricsRow {
                    step,
                    episode,
                    return_: current.return_,
                    cum_violations: metrics.cum_violations,
                    cum_overrides: metrics.cum_overrides,
                    estimate_mean: (estimate_count > 0).then(|| estimate_sum / estimate_count as f64),
                });
                estimate_sum = 0.0;
                estimate_count = 0;
            }
        }
        iteration += 1;
    }
    metrics.steps = step;
    Ok(TrainingOutcome {
        metrics,
        model,
        task_agent: task,
        safe_agent: safe,
        critics,
    })
}

/// Summary of one run in a comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub cum_violations: u64,
    pub cum_overrides: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub best_return: f64,
}

impl RunSummary {
    pub fn from_metrics(variant: Variant, seed: u64, metrics: &RunMetrics) -> Self {
        RunSummary {
            variant,
            seed,
            cum_violations: metrics.cum_violations,
            cum_overrides: metrics.cum_overrides,
            episodes: metrics.episodes.len(),
            mean_return: metrics.mean_episode_return(),
            best_return: metrics.best_episode_return().unwrap_or(0.0),
        }
    }
}

pub const COMPARISON_HEADER: &str = "variant,seed,cum_violations,cum_overrides,episodes,mean_return,best_return";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
}

impl Comparison {
    pub fn variants(&self) -> Vec<Variant> {
        let mut out: Vec<Variant> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.variant) {
                out.push(r.variant);
            }
        }
        out
    }

    pub fn runs_of(&self, variant: Variant) -> impl Iterator<Item = &RunSummary> {
        self.runs.iter().filter(move |r| r.variant == variant)
    }

    /// Per-run rows, then `mean`, `min` and `max` rows per variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARISON_HEADER);
        out.push('\n');
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6}",
                r.variant, r.seed, r.cum_violations, r.cum_overrides, r.episodes, r.mean_return, r.best_return
            );
        }
        for v in self.variants() {
            let cols: Vec<[f64; 5]> = self
                .runs_of(v)
                .map(|r| {
                    [
                        r.cum_violations as f64,
                        r.cum_overrides as f64,
                        r.episodes as f64,
                        r.mean_return,
                        r.best_return,
                    ]
                })
                .collect();
            let k = cols.len() as f64;
            let fold = |f: &dyn Fn(f64, f64) -> f64, init: f64| {
                let mut acc = [init; 5];
                for c in &cols {
                    for i in 0..5 {
                        acc[i] = f(acc[i], c[i]);
                    }
                }
                acc
            };
            let sum = fold(&|a, b| a + b, 0.0);
            let mean = sum.map(|x| x / k);
            let min = fold(&f64::min, f64::INFINITY);
            let max = fold(&f64::max, f64::NEG_INFINITY);
            for (name, row) in [("mean", mean), ("min", min), ("max", max)] {
                let _ = writeln!(
                    out,
                    "{v},{name},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    row[0], row[1], row[2], row[3], row[4]
                );
            }
        }
        out
    }
}

/// Full metrics of one run in a comparison.
pub type RunRecord = (Variant, u64, RunMetrics);

/// Runs every variant at every seed. `base.variant` and `base.seed` are
/// overridden per run.
pub fn run_comparison(
    env: &LabeledMdp,
    formula: &SafetyFormula,
    base: &TrainingConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<(Comparison, Vec<RunRecord>), TrainingError> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(TrainingError::Config(vec![
            "need at least one seed and one variant".to_string()
        ]));
    }
    let mut comparison = Comparison::default();
    let mut all = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let config = TrainingConfig {
                variant,
                seed,
                ..base.clone()
            };
            let outcome = run_training(env, formula, &config)?;
            comparison
                .runs
                .push(RunSummary::from_metrics(variant, seed, &outcome.metrics));
            all.push((variant, seed, outcome.metrics));
        }
    }
    Ok((comparison, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::gridworld::{build_gridworld, Cell, GridworldSpec};

    fn entry(state: StateId) -> BufferEntry {
        BufferEntry {
            transition: Transition {
                state,
                action: 0,
                next_state: state,
                reward: 0.0,
                labels_next: Default::default(),
            },
            cost: 0.0,
            safety_discount: 0.99,
        }
    }

    #[test]
    fn buffer_evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for s in 0..5 {
            b.push(entry(s));
            assert!(b.len() <= 3);
        }
        let states: Vec<_> = b.iter().map(|e| e.transition.state).collect();
        assert_eq!(states, vec![2, 3, 4]);
    }

    fn short_config(variant: Variant) -> TrainingConfig {
        TrainingConfig {
            variant,
            shield: ShieldConfig {
                num_samples: 32,
                ..ShieldConfig::default()
            },
            schedule: Schedule {
                total_steps: 1500,
                warmup: 200,
                ..Schedule::default()
            },
            seed: 4,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn hazard_free_grid_has_no_violations() {
        let spec = GridworldSpec::new(4, 4, Cell::new(0, 0), Cell::new(3, 3));
        let env = build_gridworld(&spec).unwrap();
        let f = parse_formula("!hazard").unwrap();
        for v in Variant::ALL {
            let out = run_training(&env, &f, &short_config(v)).unwrap();
            assert_eq!(out.metrics.cum_violations, 0);
            assert_eq!(out.metrics.steps, 1500);
        }
    }

    #[test]
    fn unshielded_runs_never_override() {
        let env = build_gridworld(&GridworldSpec::conveyor_example()).unwrap();
        let f = parse_formula("!hazard").unwrap();
        let out = run_training(&env, &f, &short_config(Variant::Unshielded)).unwrap();
        assert_eq!(out.metrics.cum_overrides, 0);
        assert_eq!(out.metrics.shield_decisions, 0);
    }

    #[test]
    fn runs_are_reproducible_and_metrics_monotone() {
        let env = build_gridworld(&GridworldSpec::conveyor_example()).unwrap();
        let f = parse_formula("!hazard").unwrap();
        let a = run_training(&env, &f, &short_config(Variant::Shielded)).unwrap();
        let b = run_training(&env, &f, &short_config(Variant::Shielded)).unwrap();
        assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
        assert_eq!(a.metrics.shield_decisions, 1300);
        for w in a.metrics.rows.windows(2) {
            assert!(w[0].cum_violations <= w[1].cum_violations);
        }
        assert!(a.critics.within_bounds());
        assert_eq!(a.metrics.to_csv().lines().count(), 1 + 15);
    }

    #[test]
    fn variants_share_streams_until_the_first_override() {
        let env = build_gridworld(&GridworldSpec::conveyor_example()).unwrap();
        let f = parse_formula("!hazard").unwrap();
        let shielded = run_training(&env, &f, &short_config(Variant::Shielded)).unwrap();
        let plain = run_training(&env, &f, &short_config(Variant::Unshielded)).unwrap();
        // nothing differs during warm-up
        assert_eq!(shielded.metrics.rows[0], plain.metrics.rows[0]);
        assert_eq!(shielded.metrics.rows[1], plain.metrics.rows[1]);
    }

    #[test]
    fn atom_mismatch_and_bad_config_are_rejected() {
        let env = build_gridworld(&GridworldSpec::conveyor_example()).unwrap();
        let f = parse_formula("!lava").unwrap();
        assert!(matches!(
            run_training(&env, &f, &TrainingConfig::default()),
            Err(TrainingError::UndeclaredAtoms(_))
        ));
        let mut bad = TrainingConfig::default();
        bad.shield.epsilon = 0.5;
        bad.schedule.rollouts = 0;
        match bad.validate() {
            Err(TrainingError::Config(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comparison_csv_has_runs_plus_aggregates() {
        let spec = GridworldSpec::new(3, 3, Cell::new(0, 0), Cell::new(2, 2));
        let env = build_gridworld(&spec).unwrap();
        let f = parse_formula("!hazard").unwrap();
        let mut base = short_config(Variant::Shielded);
        base.schedule.total_steps = 300;
        let (cmp, runs) = run_comparison(&env, &f, &base, &Variant::ALL, &[1, 2]).unwrap();
        assert_eq!(runs.len(), 6);
        assert_eq!(cmp.to_csv().lines().count(), 1 + 6 + 9);
        assert!(run_comparison(&env, &f, &base, &Variant::ALL, &[]).is_err());
    }
}
