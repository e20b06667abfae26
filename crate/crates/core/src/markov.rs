//! Labeled MDPs, policy-induced transition systems and trace sampling.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::formula::{Atom, LabelSet};

pub type StateId = usize;
pub type ActionId = usize;

/// Tolerance for every stochasticity check on in-memory tables.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Tolerance for row sums in MDP text files.
pub const FILE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("probability {value} out of [0, 1] at {at}")]
    OutOfRange { at: String, value: f64 },
    #[error("row {at} sums to {sum}, expected 1")]
    NotStochastic { at: String, sum: f64 },
    #[error("discount {0} outside (0, 1]")]
    Gamma(f64),
    #[error("state {state} out of range for {num_states} states")]
    State { state: usize, num_states: usize },
    #[error("label `{atom}` on state {state} is not a declared atom")]
    UndeclaredLabel { state: StateId, atom: Atom },
}

fn check_row(row: &[f64], at: impl Fn() -> String, tol: f64) -> Result<(), MarkovError> {
    let mut sum = 0.0;
    for &p in row {
        if !(0.0..=1.0 + tol).contains(&p) || p.is_nan() {
            return Err(MarkovError::OutOfRange { at: at(), value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > tol {
        return Err(MarkovError::NotStochastic { at: at(), sum });
    }
    Ok(())
}

fn cumulative(probs: &[f64], width: usize) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(probs.len());
    for row in probs.chunks(width) {
        let mut acc = 0.0;
        for &p in row {
            acc += p;
            cdf.push(acc);
        }
    }
    cdf
}

/// Draws an index from a cumulative distribution using a uniform `u` in [0, 1).
///
/// Zero-probability entries are never returned: the first index whose
/// cumulative mass exceeds `u` is chosen, and rounding slack at the top of
/// the row falls back to the last index with positive mass.
pub fn sample_from_cdf(cdf: &[f64], u: f64) -> usize {
    let idx = cdf.partition_point(|&c| c <= u);
    if idx < cdf.len() {
        return idx;
    }
    let last = *cdf.last().expect("non-empty distribution");
    cdf.iter().position(|&c| c >= last).unwrap_or(cdf.len() - 1)
}

/// Draws an index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Transition probabilities p(s' | s, a).
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl Dynamics {
    /// `probs` is laid out as `[(s * num_actions + a) * num_states + s']`.
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self, MarkovError> {
        if num_states == 0 || num_actions == 0 {
            return Err(MarkovError::Dimension("need at least one state and one action".into()));
        }
        if probs.len() != num_states * num_actions * num_states {
            return Err(MarkovError::Dimension(format!(
                "transition table has {} entries, expected {}",
                probs.len(),
                num_states * num_actions * num_states
            )));
        }
        for (i, row) in probs.chunks(num_states).enumerate() {
            check_row(
                row,
                || format!("p(.|s={}, a={})", i / num_actions, i % num_actions),
                PROB_TOLERANCE,
            )?;
        }
        let cdf = cumulative(&probs, num_states);
        Ok(Dynamics {
            num_states,
            num_actions,
            probs,
            cdf,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: StateId, a: ActionId) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.probs[start..start + self.num_states]
    }

    pub fn prob(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        self.row(s, a)[next]
    }

    /// Samples s' ~ p(. | s, a) from a uniform draw `u`.
    pub fn sample_with(&self, s: StateId, a: ActionId, u: f64) -> StateId {
        let start = (s * self.num_actions + a) * self.num_states;
        sample_from_cdf(&self.cdf[start..start + self.num_states], u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> StateId {
        self.sample_with(s, a, rng.gen())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// A finite, fully observable, labeled MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMdp {
    dynamics: Dynamics,
    initial: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    atoms: Vec<Atom>,
    labels: Vec<LabelSet>,
}

impl LabeledMdp {
    pub fn new(
        dynamics: Dynamics,
        initial: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        atoms: Vec<Atom>,
        labels: Vec<LabelSet>,
    ) -> Result<Self, MarkovError> {
        let n = dynamics.num_states();
        if initial.len() != n {
            return Err(MarkovError::Dimension(format!(
                "initial distribution has {} entries for {n} states",
                initial.len()
            )));
        }
        check_row(&initial, || "initial distribution".into(), PROB_TOLERANCE)?;
        if reward.len() != n * dynamics.num_actions() {
            return Err(MarkovError::Dimension(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n * dynamics.num_actions()
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(MarkovError::Gamma(gamma));
        }
        if labels.len() != n {
            return Err(MarkovError::Dimension(format!(
                "{} label sets for {n} states",
                labels.len()
            )));
        }
        for (state, set) in labels.iter().enumerate() {
            if let Some(atom) = set.iter().find(|a| !atoms.contains(a)) {
                return Err(MarkovError::UndeclaredLabel {
                    state,
                    atom: atom.clone(),
                });
            }
        }
        Ok(LabeledMdp {
            dynamics,
            initial,
            reward,
            gamma,
            atoms,
            labels,
        })
    }

    pub fn num_states(&self) -> usize {
        self.dynamics.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.dynamics.num_actions()
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: StateId, a: ActionId) -> f64 {
        self.reward[s * self.num_actions() + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn labels(&self, s: StateId) -> &LabelSet {
        &self.labels[s]
    }

    pub fn all_labels(&self) -> &[LabelSet] {
        &self.labels
    }

    /// A state is absorbing when every action keeps it in place with certainty.
    pub fn is_absorbing(&self, s: StateId) -> bool {
        (0..self.num_actions()).all(|a| self.dynamics.prob(s, a, s) >= 1.0 - PROB_TOLERANCE)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        sample_categorical(&self.initial, rng)
    }

    /// Serializes to the line-oriented MDP text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let (n, m) = (self.num_states(), self.num_actions());
        let _ = writeln!(out, "states {n}");
        let _ = writeln!(out, "actions {m}");
        let _ = writeln!(out, "gamma {}", self.gamma);
        if !self.atoms.is_empty() {
            let names: Vec<&str> = self.atoms.iter().map(Atom::as_str).collect();
            let _ = writeln!(out, "atoms {}", names.join(" "));
        }
        for (s, set) in self.labels.iter().enumerate() {
            if !set.is_empty() {
                let names: Vec<&str> = set.iter().map(Atom::as_str).collect();
                let _ = writeln!(out, "label {s} {}", names.join(" "));
            }
        }
        for (s, &p) in self.initial.iter().enumerate() {
            if p > 0.0 {
                let _ = writeln!(out, "init {s} {p}");
            }
        }
        for s in 0..n {
            for a in 0..m {
                for (next, &p) in self.dynamics.row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        let _ = writeln!(out, "trans {s} {a} {next} {p}");
                    }
                }
            }
        }
        for s in 0..n {
            for a in 0..m {
                let r = self.reward(s, a);
                if r != 0.0 {
                    let _ = writeln!(out, "reward {s} {a} {r}");
                }
            }
        }
        out
    }
}

/// A stochastic policy pi(a | s).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self, MarkovError> {
        if num_states == 0 || num_actions == 0 {
            return Err(MarkovError::Dimension("empty policy".into()));
        }
        if probs.len() != num_states * num_actions {
            return Err(MarkovError::Dimension(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            check_row(row, || format!("pi(.|s={s})"), PROB_TOLERANCE)?;
        }
        Ok(TabularPolicy {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        TabularPolicy {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Puts all mass on `actions[s]` in each state.
    pub fn deterministic(num_actions: usize, actions: &[ActionId]) -> Result<Self, MarkovError> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(MarkovError::Dimension(format!("action {a} in state {s}")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        TabularPolicy::new(actions.len(), num_actions, probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn probs(&self, s: StateId) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> ActionId {
        sample_categorical(self.probs(s), rng)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Where a transition system came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ExactFromMdp,
    LearnedFromCounts,
}

/// Markov chain T(s' | s) induced by fixing a policy in an MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSystem {
    num_states: usize,
    probs: Vec<f64>,
    cdf: Vec<f64>,
    source: Provenance,
}

impl TransitionSystem {
    pub fn new(num_states: usize, probs: Vec<f64>, source: Provenance) -> Result<Self, MarkovError> {
        if num_states == 0 || probs.len() != num_states * num_states {
            return Err(MarkovError::Dimension(format!(
                "chain has {} entries for {num_states} states",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(num_states).enumerate() {
            check_row(row, || format!("T(.|s={s})"), PROB_TOLERANCE)?;
        }
        let cdf = cumulative(&probs, num_states);
        Ok(TransitionSystem {
            num_states,
            probs,
            cdf,
            source,
        })
    }

    /// T(s'|s) = sum_a pi(a|s) p(s'|s,a).
    pub fn from_dynamics(dynamics: &Dynamics, policy: &TabularPolicy, source: Provenance) -> Result<Self, MarkovError> {
        let n = dynamics.num_states();
        if policy.num_states() != n || policy.num_actions() != dynamics.num_actions() {
            return Err(MarkovError::Dimension(format!(
                "policy is {}x{}, dynamics are {}x{}",
                policy.num_states(),
                policy.num_actions(),
                n,
                dynamics.num_actions()
            )));
        }
        let mut probs = vec![0.0; n * n];
        for s in 0..n {
            let out = &mut probs[s * n..(s + 1) * n];
            for (a, &pa) in policy.probs(s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (o, &p) in out.iter_mut().zip(dynamics.row(s, a)) {
                    *o += pa * p;
                }
            }
        }
        TransitionSystem::new(n, probs, source)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn source(&self) -> Provenance {
        self.source
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.probs[s * self.num_states..(s + 1) * self.num_states]
    }

    pub fn prob(&self, s: StateId, next: StateId) -> f64 {
        self.probs[s * self.num_states + next]
    }

    pub fn step_with(&self, s: StateId, u: f64) -> StateId {
        sample_from_cdf(&self.cdf[s * self.num_states..(s + 1) * self.num_states], u)
    }

    pub fn step<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> StateId {
        self.step_with(s, rng.gen())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

pub fn induce_transition_system(mdp: &LabeledMdp, policy: &TabularPolicy) -> Result<TransitionSystem, MarkovError> {
    TransitionSystem::from_dynamics(mdp.dynamics(), policy, Provenance::ExactFromMdp)
}

/// A finite path through a transition system. `states[0]` is the start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub states: Vec<StateId>,
}

impl Trace {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn sample_trace<R: Rng + ?Sized>(ts: &TransitionSystem, start: StateId, n: usize, rng: &mut R) -> Trace {
    let mut states = Vec::with_capacity(n + 1);
    states.push(start);
    let mut s = start;
    for _ in 0..n {
        s = ts.step(s, rng);
        states.push(s);
    }
    Trace { states }
}

/// Distribution of the chain after `t` steps from `init`.
pub fn marginal_distribution(ts: &TransitionSystem, init: &[f64], t: usize) -> Vec<f64> {
    let n = ts.num_states();
    assert_eq!(init.len(), n, "initial distribution length");
    let mut current = init.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..t {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (s, &mass) in current.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (o, &p) in next.iter_mut().zip(ts.row(s)) {
                *o += mass * p;
            }
        }
        std::mem::swap(&mut current, &mut next);
    }
    current
}

/// Half the L1 distance between two distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, MarkovError> {
    if p.len() != q.len() {
        return Err(MarkovError::Dimension(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Error while reading the MDP text format.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct MdpFormatError {
    pub line: usize,
    pub message: String,
}

fn fmt_err(line: usize, message: impl Into<String>) -> MdpFormatError {
    MdpFormatError {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, MdpFormatError> {
    let tok = tok.ok_or_else(|| fmt_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| fmt_err(line, format!("invalid {what} `{tok}`")))
}

/// Parses the MDP text format.
///
/// Rows whose sums are within [`FILE_TOLERANCE`] of one are rescaled to sum
/// to one exactly; with `normalize` set, any row with positive mass is
/// rescaled. Rows that are still off are rejected.
pub fn parse_mdp(text: &str, normalize: bool) -> Result<LabeledMdp, MdpFormatError> {
    let lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            (
                i + 1,
                l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>(),
            )
        })
        .filter(|(_, toks)| !toks.is_empty())
        .collect();

    let mut num_states = None;
    let mut num_actions = None;
    for (line, toks) in &lines {
        match toks[0] {
            "states" => num_states = Some(parse_num::<usize>(toks.get(1).copied(), *line, "state count")?),
            "actions" => num_actions = Some(parse_num::<usize>(toks.get(1).copied(), *line, "action count")?),
            _ => {}
        }
    }
    let n = num_states
        .filter(|&n| n > 0)
        .ok_or_else(|| fmt_err(0, "missing or zero `states N`"))?;
    let m = num_actions
        .filter(|&m| m > 0)
        .ok_or_else(|| fmt_err(0, "missing or zero `actions M`"))?;

    let mut gamma = 0.99;
    let mut atoms: Vec<Atom> = Vec::new();
    let mut labels = vec![LabelSet::new(); n];
    let mut initial = vec![0.0; n];
    let mut trans = vec![0.0; n * m * n];
    let mut reward = vec![0.0; n * m];

    let state = |tok: Option<&str>, line: usize| -> Result<usize, MdpFormatError> {
        let s: usize = parse_num(tok, line, "state")?;
        if s >= n {
            return Err(fmt_err(line, format!("state {s} out of range (states {n})")));
        }
        Ok(s)
    };
    let action = |tok: Option<&str>, line: usize| -> Result<usize, MdpFormatError> {
        let a: usize = parse_num(tok, line, "action")?;
        if a >= m {
            return Err(fmt_err(line, format!("action {a} out of range (actions {m})")));
        }
        Ok(a)
    };
    let prob = |tok: Option<&str>, line: usize| -> Result<f64, MdpFormatError> {
        let p: f64 = parse_num(tok, line, "probability")?;
        if !(0.0..=1.0).contains(&p) {
            return Err(fmt_err(line, format!("probability {p} outside [0, 1]")));
        }
        Ok(p)
    };

    for (line, toks) in &lines {
        let line = *line;
        let arity = |k: usize| {
            if toks.len() != k {
                Err(fmt_err(
                    line,
                    format!("`{}` expects {} fields, got {}", toks[0], k - 1, toks.len() - 1),
                ))
            } else {
                Ok(())
            }
        };
        match toks[0] {
            "states" | "actions" => arity(2)?,
            "gamma" => {
                arity(2)?;
                gamma = parse_num(toks.get(1).copied(), line, "discount")?;
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(fmt_err(line, format!("gamma {gamma} outside (0, 1]")));
                }
            }
            "atoms" => {
                for name in &toks[1..] {
                    let atom = Atom::new(*name).map_err(|e| fmt_err(line, e.to_string()))?;
                    if atoms.contains(&atom) {
                        return Err(fmt_err(line, format!("atom `{name}` declared twice")));
                    }
                    atoms.push(atom);
                }
            }
            "label" => {
                let s = state(toks.get(1).copied(), line)?;
                for name in &toks[2..] {
                    let atom = Atom::new(*name).map_err(|e| fmt_err(line, e.to_string()))?;
                    labels[s].insert(atom);
                }
            }
            "init" => {
                arity(3)?;
                let s = state(toks.get(1).copied(), line)?;
                initial[s] = prob(toks.get(2).copied(), line)?;
            }
            "trans" => {
                arity(5)?;
                let s = state(toks.get(1).copied(), line)?;
                let a = action(toks.get(2).copied(), line)?;
                let next = state(toks.get(3).copied(), line)?;
                trans[(s * m + a) * n + next] = prob(toks.get(4).copied(), line)?;
            }
            "reward" => {
                arity(4)?;
                let s = state(toks.get(1).copied(), line)?;
                let a = action(toks.get(2).copied(), line)?;
                let r: f64 = parse_num(toks.get(3).copied(), line, "reward")?;
                if !r.is_finite() {
                    return Err(fmt_err(line, "reward must be finite"));
                }
                reward[s * m + a] = r;
            }
            other => return Err(fmt_err(line, format!("unknown directive `{other}`"))),
        }
    }

    for (s, set) in labels.iter().enumerate() {
        if let Some(atom) = set.iter().find(|a| !atoms.contains(a)) {
            let line = lines
                .iter()
                .find(|(_, t)| t[0] == "label" && t.get(1) == Some(&s.to_string().as_str()))
                .map_or(0, |(l, _)| *l);
            return Err(fmt_err(line, format!("label `{atom}` is not declared in `atoms`")));
        }
    }

    let fix_row = |row: &mut [f64], what: String| -> Result<(), MdpFormatError> {
        let sum: f64 = row.iter().sum();
        let within = (sum - 1.0).abs() <= FILE_TOLERANCE;
        if within || (normalize && sum > 0.0) {
            row.iter_mut().for_each(|p| *p /= sum);
            Ok(())
        } else {
            Err(fmt_err(
                0,
                format!("{what} sums to {sum}, expected 1 +/- {FILE_TOLERANCE}"),
            ))
        }
    };
    for s in 0..n {
        for a in 0..m {
            let start = (s * m + a) * n;
            fix_row(&mut trans[start..start + n], format!("transition row (s={s}, a={a})"))?;
        }
    }
    fix_row(&mut initial, "initial distribution".into())?;

    let dynamics = Dynamics::new(n, m, trans).map_err(|e| fmt_err(0, e.to_string()))?;
    LabeledMdp::new(dynamics, initial, reward, gamma, atoms, labels).map_err(|e| fmt_err(0, e.to_string()))
}
