//! `ambs`: exact checks, Monte-Carlo estimates, sample-size bounds and
//! shielded training runs from the command line.
//!
//! Exit codes: 0 success or SAT, 1 UNSAT, 2 usage or input error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ambs_core::agents::parse_policy;
use ambs_core::bounds::bounds_report;
use ambs_core::markov::{parse_mdp, Provenance};
use ambs_core::pctl::{exact_measure, satisfies_delta_bound, satisfying_states, BoundedSafetyQuery};
use ambs_core::rng::SeedStreams;
use ambs_core::shield::{estimate_chain_safety, ShieldDecision, DECISION_LOG_HEADER};
use ambs_core::trainer::{
    run_comparison, run_training_observed, Comparison, DecisionContext, RunSummary, TrainingConfig, TrainingObserver,
    Variant,
};
use ambs_core::{parse_formula, LabeledMdp, SafetyFormula, TabularPolicy, TransitionSystem};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, Environment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ambs", version, about = "Approximate model-based shielding for tabular MDPs")]
struct Cli {
    /// Seed for every random stream; for train/compare it replaces the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV output and checkpoints.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact bounded-safety check of a policy on an MDP.
    Check {
        #[command(flatten)]
        chain: ChainArgs,
        /// Allowed violation probability.
        #[arg(long)]
        delta: f64,
    },
    /// Monte-Carlo estimate of bounded safety.
    Estimate {
        #[command(flatten)]
        chain: ChainArgs,
        /// Number of sampled traces.
        #[arg(long, default_value_t = 328)]
        samples: usize,
    },
    /// Sample-size and accuracy bounds.
    Bounds {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        /// Model accuracy for the visit-count bound; defaults to epsilon / horizon.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
    },
    /// Train the configured variants and seeds, writing metrics and checkpoints.
    Train {
        /// Experiment configuration file.
        config: PathBuf,
    },
    /// Run shielded, unshielded and safe-only variants and print the comparison table.
    Compare {
        /// Experiment configuration file.
        config: PathBuf,
    },
}

#[derive(Args)]
struct ChainArgs {
    /// MDP in the `states` / `trans` line format.
    #[arg(long)]
    mdp: PathBuf,
    /// Policy as `prob S A P` or `pref S A X` lines.
    #[arg(long)]
    policy: PathBuf,
    /// Propositional safety formula, e.g. `!hazard`.
    #[arg(long)]
    formula: String,
    /// Number of transitions the formula must hold for.
    #[arg(long)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Rescale MDP rows that do not sum to one.
    #[arg(long)]
    normalize: bool,
}

struct Chain {
    mdp: LabeledMdp,
    ts: TransitionSystem,
    formula: SafetyFormula,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_chain(args: &ChainArgs) -> Result<Chain> {
    let mdp = parse_mdp(&read(&args.mdp)?, args.normalize).with_context(|| args.mdp.display().to_string())?;
    let policy: TabularPolicy =
        parse_policy(&read(&args.policy)?).with_context(|| args.policy.display().to_string())?;
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        bail!(
            "policy is {}x{} but the MDP has {} states and {} actions",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        );
    }
    let formula = parse_formula(&args.formula).with_context(|| format!("formula `{}`", args.formula))?;
    let missing = formula.undeclared_atoms(mdp.atoms());
    if !missing.is_empty() {
        let names: Vec<&str> = missing.iter().map(|a| a.as_str()).collect();
        bail!("formula uses undeclared atoms: {}", names.join(", "));
    }
    if args.start >= mdp.num_states() {
        bail!("start state {} out of range ({} states)", args.start, mdp.num_states());
    }
    let ts = TransitionSystem::from_dynamics(mdp.dynamics(), &policy, Provenance::ExactFromMdp)?;
    Ok(Chain { mdp, ts, formula })
}

fn cmd_check(cli: &Cli, chain: &ChainArgs, delta: f64) -> Result<ExitCode> {
    let c = load_chain(chain)?;
    let query = BoundedSafetyQuery::new(c.formula, chain.horizon, delta)?;
    let mu = exact_measure(&c.ts, c.mdp.all_labels(), &query, chain.start)?;
    let sat = satisfies_delta_bound(mu, delta);
    if !cli.quiet {
        println!("mu={mu:.12}");
        println!("{}", if sat { "SAT" } else { "UNSAT" });
    }
    Ok(if sat { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_estimate(cli: &Cli, chain: &ChainArgs, samples: usize) -> Result<ExitCode> {
    let c = load_chain(chain)?;
    let safe = satisfying_states(&c.formula, c.mdp.all_labels());
    let streams = SeedStreams::new(cli.seed.unwrap_or(0));
    let e = estimate_chain_safety(&c.ts, &safe, chain.start, chain.horizon, samples, &streams, 0)?;
    if !cli.quiet {
        println!("mu_tilde={:.12}", e.estimate);
        println!("samples={samples}");
        println!("satisfying={}", e.satisfying_count);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bounds(cli: &Cli, eps: f64, delta: f64, alpha: Option<f64>, n: usize, m: usize, h: usize) -> Result<ExitCode> {
    let r = bounds_report(eps, delta, alpha, n, m, h)?;
    if !cli.quiet {
        println!("m_exact         {}", r.m_exact);
        println!("m_learned       {}", r.m_learned);
        println!("required_alpha  {}", r.required_alpha);
        println!("visit_count     {}", r.visit_count);
        println!("negligibility   {}", r.negligibility);
    }
    Ok(ExitCode::SUCCESS)
}

fn load_experiment(cli: &Cli, path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = load_config(&text, base).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    let out = cli
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    Ok((cfg, out))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Default)]
struct DecisionLog {
    lines: Vec<String>,
}

impl TrainingObserver for DecisionLog {
    fn on_shield_decision(&mut self, ctx: &DecisionContext<'_>, decision: &ShieldDecision) {
        self.lines.push(decision.log_line(ctx.step, ctx.state, ctx.proposed));
    }
}

fn print_summary(comparison: &Comparison) {
    for v in comparison.variants() {
        let runs: Vec<&RunSummary> = comparison.runs_of(v).collect();
        let k = runs.len() as f64;
        let violations = runs.iter().map(|r| r.cum_violations as f64).sum::<f64>() / k;
        let best = runs.iter().map(|r| r.best_return).fold(f64::NEG_INFINITY, f64::max);
        let mean = runs.iter().map(|r| r.mean_return).sum::<f64>() / k;
        println!(
            "{v}: mean cum_violations {violations:.1}, mean episode return {mean:.4}, best episode return {best:.4}"
        );
    }
}

fn cmd_train(cli: &Cli, path: &Path) -> Result<ExitCode> {
    let (cfg, out) = load_experiment(cli, path)?;
    let environment = match &cfg.environment {
        Environment::Grid(spec) => spec.render(),
        Environment::Mdp { .. } => cfg.mdp.to_text(),
    };
    write(&out.join("environment.txt"), &environment)?;
    let mut comparison = Comparison::default();
    for &variant in &cfg.variants {
        for &seed in &cfg.seeds {
            let run_cfg = TrainingConfig {
                variant,
                seed,
                ..cfg.training.clone()
            };
            let mut log = DecisionLog::default();
            let outcome = run_training_observed(&cfg.mdp, &cfg.formula, &run_cfg, &mut log)
                .with_context(|| format!("{variant} run with seed {seed}"))?;
            let stem = format!("{variant}_seed{seed}");
            write(&out.join(format!("{stem}.csv")), &outcome.metrics.to_csv())?;
            if cfg.decision_log && variant == Variant::Shielded {
                let mut text = String::from(DECISION_LOG_HEADER);
                text.push('\n');
                for line in &log.lines {
                    text.push_str(line);
                    text.push('\n');
                }
                write(&out.join(format!("{stem}_decisions.log")), &text)?;
            }
            let ckpt = out.join("checkpoints").join(&stem);
            fs::create_dir_all(&ckpt).with_context(|| format!("cannot create {}", ckpt.display()))?;
            for (name, text) in outcome.checkpoint_bundle() {
                write(&ckpt.join(name), &text)?;
            }
            comparison
                .runs
                .push(RunSummary::from_metrics(variant, seed, &outcome.metrics));
        }
    }
    write(&out.join("aggregate.csv"), &comparison.to_csv())?;
    if !cli.quiet {
        print_summary(&comparison);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(cli: &Cli, path: &Path) -> Result<ExitCode> {
    let (cfg, out) = load_experiment(cli, path)?;
    let (comparison, _) = run_comparison(&cfg.mdp, &cfg.formula, &cfg.training, &Variant::ALL, &cfg.seeds)?;
    let csv = comparison.to_csv();
    write(&out.join("comparison.csv"), &csv)?;
    if !cli.quiet {
        print!("{csv}");
        print_summary(&comparison);
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Check { chain, delta } => cmd_check(cli, chain, *delta),
        Command::Estimate { chain, samples } => cmd_estimate(cli, chain, *samples),
        Command::Bounds {
            epsilon,
            delta,
            alpha,
            states,
            actions,
            horizon,
        } => cmd_bounds(cli, *epsilon, *delta, *alpha, *states, *actions, *horizon),
        Command::Train { config } => cmd_train(cli, config),
        Command::Compare { config } => cmd_compare(cli, config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
