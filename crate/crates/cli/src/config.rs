//! Experiment configuration: `key = value` lines grouped under `[section]`
//! headers. Every problem is collected before reporting; unknown keys are
//! errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ambs_core::gridworld::{build_gridworld, Cell, Direction, GridworldSpec};
use ambs_core::learner::UnvisitedFallback;
use ambs_core::markov::parse_mdp;
use ambs_core::trainer::{check_formula_atoms, TrainingConfig, Variant};
use ambs_core::{parse_formula, LabeledMdp, SafetyFormula};

#[derive(Debug, Clone, PartialEq)]
pub enum Environment {
    Mdp { path: PathBuf, normalize: bool },
    Grid(GridworldSpec),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub environment: Environment,
    pub mdp: LabeledMdp,
    pub formula: SafetyFormula,
    pub training: TrainingConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub decision_log: bool,
}

/// All problems found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} problem(s) in configuration:", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Raw {
    entries: BTreeMap<(String, String), Entry>,
    errors: Vec<String>,
}

const SECTIONS: [&str; 9] = [
    "environment",
    "shield",
    "task_agent",
    "safe_agent",
    "critic",
    "model",
    "schedule",
    "experiment",
    "",
];

impl Raw {
    fn parse(text: &str) -> Raw {
        let mut raw = Raw {
            entries: BTreeMap::new(),
            errors: Vec::new(),
        };
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if section.is_empty() || !SECTIONS.contains(&section.as_str()) {
                    raw.errors.push(format!("line {line_no}: unknown section [{section}]"));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                raw.errors.push(format!("line {line_no}: expected `key = value`"));
                continue;
            };
            let key = (section.clone(), key.trim().to_string());
            if let Some(prev) = raw.entries.get(&key) {
                raw.errors.push(format!(
                    "line {line_no}: `{}` already set on line {}",
                    display_key(&key),
                    prev.line
                ));
                continue;
            }
            raw.entries.insert(
                key,
                Entry {
                    line: line_no,
                    value: value.trim().to_string(),
                    used: false,
                },
            );
        }
        raw
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        let e = self.entries.get_mut(&(section.to_string(), key.to_string()))?;
        e.used = true;
        Some((e.line, e.value.clone()))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let (line, value) = self.take(section, key)?;
        match value.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors
                    .push(format!("line {line}: [{section}] {key} = `{value}`: {e}"));
                None
            }
        }
    }

    fn set<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut T)
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.get(section, key) {
            *slot = v;
        }
    }

    fn get_with<T>(&mut self, section: &str, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
        let (line, value) = self.take(section, key)?;
        match parse(&value) {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors
                    .push(format!("line {line}: [{section}] {key} = `{value}`: {e}"));
                None
            }
        }
    }

    fn unused(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.used)
            .map(|(k, e)| format!("line {}: unknown key `{}`", e.line, display_key(k)))
            .collect()
    }
}

fn display_key((section, key): &(String, String)) -> String {
    if section.is_empty() {
        key.clone()
    } else {
        format!("[{section}] {key}")
    }
}

fn parse_cell(text: &str) -> Result<Cell, String> {
    let (x, y) = text
        .split_once(',')
        .ok_or_else(|| format!("expected `x,y`, got `{text}`"))?;
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok(Cell::new(num(x)?, num(y)?))
}

fn parse_cells(text: &str) -> Result<Vec<Cell>, String> {
    text.split_whitespace().map(parse_cell).collect()
}

fn parse_conveyors(text: &str) -> Result<Vec<(Cell, Direction)>, String> {
    text.split_whitespace()
        .map(|item| {
            let (cell, dir) = item
                .split_once(':')
                .ok_or_else(|| format!("expected `x,y:direction`, got `{item}`"))?;
            Ok((parse_cell(cell)?, dir.parse::<Direction>().map_err(|e| e.to_string())?))
        })
        .collect()
}

fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    text.split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| t.trim().parse::<T>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

fn parse_fallback(text: &str) -> Result<UnvisitedFallback, String> {
    match text {
        "uniform" => Ok(UnvisitedFallback::Uniform),
        "self-loop" | "self_loop" => Ok(UnvisitedFallback::SelfLoop),
        other => Err(format!("unknown fallback `{other}` (expected uniform or self-loop)")),
    }
}

const GRID_KEYS: [&str; 10] = [
    "width",
    "height",
    "start",
    "goal",
    "hazards",
    "conveyors",
    "slip",
    "step_reward",
    "goal_reward",
    "gamma",
];

fn read_grid(raw: &mut Raw) -> GridworldSpec {
    let layout = raw.take("environment", "layout");
    let mut spec = match layout.as_ref().map(|(_, v)| v.as_str()) {
        None | Some("conveyor") => GridworldSpec::conveyor_example(),
        Some("open") => {
            let w = raw.get("environment", "width").unwrap_or(7);
            let h = raw.get("environment", "height").unwrap_or(7);
            GridworldSpec::new(
                w,
                h,
                Cell::new(0, 0),
                Cell::new(w.saturating_sub(1), h.saturating_sub(1)),
            )
        }
        Some(other) => {
            let line = layout.as_ref().map_or(0, |(l, _)| *l);
            raw.errors.push(format!(
                "line {line}: [environment] layout = `{other}`: expected conveyor or open"
            ));
            GridworldSpec::conveyor_example()
        }
    };
    raw.set("environment", "width", &mut spec.width);
    raw.set("environment", "height", &mut spec.height);
    if let Some(c) = raw.get_with("environment", "start", parse_cell) {
        spec.start = c;
    }
    if let Some(c) = raw.get_with("environment", "goal", parse_cell) {
        spec.goal = c;
    }
    if let Some(cells) = raw.get_with("environment", "hazards", parse_cells) {
        spec.hazards = cells.into_iter().collect();
    }
    if let Some(belts) = raw.get_with("environment", "conveyors", parse_conveyors) {
        spec.conveyors = belts.into_iter().collect();
    }
    raw.set("environment", "slip", &mut spec.slip_prob);
    raw.set("environment", "step_reward", &mut spec.step_reward);
    raw.set("environment", "goal_reward", &mut spec.goal_reward);
    raw.set("environment", "gamma", &mut spec.gamma);
    spec
}

fn read_training(raw: &mut Raw) -> TrainingConfig {
    let mut t = TrainingConfig::default();
    let s = &mut t.shield;
    raw.set("shield", "delta", &mut s.delta);
    raw.set("shield", "epsilon", &mut s.epsilon);
    raw.set("shield", "samples", &mut s.num_samples);
    raw.set("shield", "imagination_horizon", &mut s.imagination_horizon);
    raw.set("shield", "lookahead_horizon", &mut s.lookahead_horizon);
    raw.set("shield", "cost_value", &mut s.cost_value);
    raw.set("shield", "critic_bootstrap", &mut s.use_critic_bootstrap);
    raw.set("shield", "gamma", &mut s.gamma);
    for (section, agent) in [("task_agent", &mut t.task_agent), ("safe_agent", &mut t.safe_agent)] {
        raw.set(section, "actor_lr", &mut agent.actor_lr);
        raw.set(section, "critic_lr", &mut agent.critic_lr);
        raw.set(section, "lambda", &mut agent.lambda);
        raw.set(section, "gamma", &mut agent.gamma);
        raw.set(section, "entropy_scale", &mut agent.entropy_scale);
    }
    raw.set("critic", "lr", &mut t.critic.lr);
    raw.set("critic", "lambda", &mut t.critic.lambda);
    raw.set("critic", "update_fraction", &mut t.critic.update_fraction);
    if let Some(f) = raw.get_with("model", "fallback", parse_fallback) {
        t.model.fallback = f;
    }
    raw.set("model", "smoothing", &mut t.model.smoothing);
    let sc = &mut t.schedule;
    raw.set("schedule", "total_steps", &mut sc.total_steps);
    raw.set("schedule", "steps_per_iter", &mut sc.steps_per_iter);
    raw.set("schedule", "rollouts", &mut sc.rollouts);
    raw.set("schedule", "warmup", &mut sc.warmup);
    raw.set("schedule", "max_episode_len", &mut sc.max_episode_len);
    raw.set("schedule", "buffer_capacity", &mut sc.buffer_capacity);
    raw.set("schedule", "log_every", &mut sc.log_every);
    t
}

/// Parses and validates a config. Relative paths resolve against `base_dir`.
pub fn load_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let mut raw = Raw::parse(text);

    let mdp_path = raw.take("environment", "mdp");
    let environment = match mdp_path {
        Some((_, path)) => {
            let normalize = raw.get("environment", "normalize").unwrap_or(false);
            for key in GRID_KEYS.iter().chain(&["layout"]) {
                if let Some((line, _)) = raw.take("environment", key) {
                    raw.errors.push(format!(
                        "line {line}: [environment] {key} cannot be combined with `mdp`"
                    ));
                }
            }
            Environment::Mdp {
                path: base_dir.join(path),
                normalize,
            }
        }
        None => Environment::Grid(read_grid(&mut raw)),
    };
    let formula = raw.get_with("environment", "formula", |t| {
        parse_formula(t).map_err(|e| e.to_string())
    });
    if formula.is_none() && !raw.errors.iter().any(|e| e.contains("formula")) {
        raw.errors.push("[environment] formula is required".to_string());
    }
    let training = read_training(&mut raw);
    let seeds = raw
        .get_with("experiment", "seeds", parse_list::<u64>)
        .unwrap_or_else(|| vec![0]);
    let variants = raw
        .get_with("experiment", "variants", parse_list::<Variant>)
        .unwrap_or_else(|| vec![Variant::Shielded, Variant::Unshielded]);
    let output_dir = raw.take("experiment", "output_dir").map(|(_, p)| base_dir.join(p));
    let decision_log = raw.get("experiment", "decision_log").unwrap_or(false);

    let mut errors = std::mem::take(&mut raw.errors);
    errors.extend(raw.unused());
    errors.extend(training.violations());
    if seeds.is_empty() {
        errors.push("[experiment] seeds must list at least one seed".to_string());
    }
    if variants.is_empty() {
        errors.push("[experiment] variants must list at least one variant".to_string());
    }

    let mdp = match &environment {
        Environment::Grid(spec) => build_gridworld(spec).map_err(|e| format!("[environment] {e}")),
        Environment::Mdp { path, normalize } => std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))
            .and_then(|text| parse_mdp(&text, *normalize).map_err(|e| format!("{}: {e}", path.display()))),
    };
    let mdp = match mdp {
        Ok(m) => Some(m),
        Err(e) => {
            errors.push(e);
            None
        }
    };
    if let (Some(mdp), Some(formula)) = (&mdp, &formula) {
        if let Err(e) = check_formula_atoms(mdp, formula) {
            errors.push(format!("[environment] {e}"));
        }
    }
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    Ok(ExperimentConfig {
        environment,
        mdp: mdp.expect("no errors"),
        formula: formula.expect("no errors"),
        training,
        variants,
        seeds,
        output_dir,
        decision_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
[environment]
formula = !hazard
[shield]
samples = 64
critic_bootstrap = false
[schedule]
total_steps = 500
[experiment]
seeds = 1, 2
variants = shielded, unshielded
";

    #[test]
    fn good_config_loads() {
        let c = load_config(GOOD, Path::new(".")).unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.training.shield.num_samples, 64);
        assert!(!c.training.shield.use_critic_bootstrap);
        assert_eq!(c.environment, Environment::Grid(GridworldSpec::conveyor_example()));
    }

    #[test]
    fn every_problem_is_reported() {
        let text = "\
[environment]
formula = !lava
colour = blue
[shield]
epsilon = 0.5
samples = many
[bogus]
[schedule]
rollouts = 0
rollouts = 1
";
        let errs = load_config(text, Path::new(".")).unwrap_err().0;
        let joined = errs.join("\n");
        for needle in [
            "colour",
            "many",
            "[bogus]",
            "already set",
            "epsilon",
            "rollouts must be",
            "lava",
        ] {
            assert!(joined.contains(needle), "missing `{needle}` in\n{joined}");
        }
    }

    #[test]
    fn grid_keys_override_the_preset() {
        let text = "\
[environment]
formula = !hazard
layout = open
width = 4
height = 3
hazards = 1,1 2,1
conveyors = 1,0:down
";
        let c = load_config(text, Path::new(".")).unwrap();
        let Environment::Grid(spec) = c.environment else {
            panic!()
        };
        assert_eq!((spec.width, spec.height), (4, 3));
        assert_eq!(spec.goal, Cell::new(3, 2));
        assert_eq!(spec.hazards.len(), 2);
        assert_eq!(spec.conveyors.get(&Cell::new(1, 0)), Some(&Direction::Down));
    }

    #[test]
    fn mdp_and_grid_keys_conflict() {
        let text = "[environment]\nformula = true\nmdp = nowhere.mdp\nwidth = 3\n";
        let errs = load_config(text, Path::new("/nonexistent")).unwrap_err().0;
        assert!(errs.iter().any(|e| e.contains("cannot be combined")));
        assert!(errs.iter().any(|e| e.contains("nowhere.mdp")));
    }
}
