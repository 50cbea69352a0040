//! `eos` — energy-aware metaheuristic experiments from the command line.
//!
//! Subcommands: `generate-instance`, `profile`, `run`, `analyze`.
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use eos_core::analysis::{analyze, AnalysisKind};
use eos_core::bits::RngSeed;
use eos_core::energy::{MeterConfig, MeterKind};
use eos_core::harness::{
    default_energy_budget_j, profile_operators, run_experiment, ExperimentConfig, ProblemSpec,
    DEFAULT_TRIALS,
};
use eos_core::problems::{EccInstance, KpInstance, NkInstance, ProblemInstance, ProblemKind};
use eos_core::solvers::{Algorithm, Mode, StopCondition};

#[derive(Parser)]
#[command(
    name = "eos",
    about = "Energy-aware metaheuristic search with improvement-per-joule operator scheduling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark instance and write it as JSON
    GenerateInstance(GenerateArgs),
    /// Record per-operator energy samples under static execution
    Profile(ProfileArgs),
    /// Run a multi-trial experiment
    Run(RunArgs),
    /// Compute statistics over experiment output directories
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Kp,
    Nk,
    Ecc,
}

impl From<ProblemArg> for ProblemKind {
    fn from(p: ProblemArg) -> ProblemKind {
        match p {
            ProblemArg::Kp => ProblemKind::Kp,
            ProblemArg::Nk => ProblemKind::Nk,
            ProblemArg::Ecc => ProblemKind::Ecc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Ssga,
    Pso,
    Ils,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Algorithm {
        match a {
            AlgorithmArg::Ssga => Algorithm::Ssga,
            AlgorithmArg::Pso => Algorithm::Pso,
            AlgorithmArg::Ils => Algorithm::Ils,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MeterArg {
    Rapl,
    Simulated,
}

#[derive(Args)]
struct ProblemFlags {
    /// Problem kind
    #[arg(long, value_enum)]
    problem: Option<ProblemArg>,
    /// Problem size n (items for kp, variables for nk, codeword length for ecc)
    #[arg(long)]
    n: Option<usize>,
    /// Epistasis degree K (nk only)
    #[arg(long)]
    k: Option<usize>,
    /// Number of codewords M (ecc only)
    #[arg(long)]
    m: Option<usize>,
    /// Seed for instance generation
    #[arg(long)]
    instance_seed: Option<u64>,
}

impl ProblemFlags {
    /// Builds a problem spec from the flags, starting from `base` when given
    /// (config-file layering) or from per-problem defaults.
    fn resolve(&self, base: Option<ProblemSpec>) -> Result<ProblemSpec> {
        let spec = match (self.problem, base) {
            (Some(kind), Some(base)) if ProblemKind::from(kind) == base.kind() => base,
            (Some(kind), _) => ProblemSpec::defaults(kind.into()),
            (None, Some(base)) => base,
            (None, None) => bail!("--problem is required (kp, nk, or ecc)"),
        };
        Ok(match spec {
            ProblemSpec::Kp { n, instance_seed } => ProblemSpec::Kp {
                n: self.n.unwrap_or(n),
                instance_seed: self.instance_seed.unwrap_or(instance_seed),
            },
            ProblemSpec::Nk { n, k, instance_seed } => ProblemSpec::Nk {
                n: self.n.unwrap_or(n),
                k: self.k.unwrap_or(k),
                instance_seed: self.instance_seed.unwrap_or(instance_seed),
            },
            ProblemSpec::Ecc { m, n } => {
                ProblemSpec::Ecc { m: self.m.unwrap_or(m), n: self.n.unwrap_or(n) }
            }
        })
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    problem: ProblemFlags,
    /// Generation seed (alias of --instance-seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Output file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MeterFlags {
    /// Energy meter backend
    #[arg(long, value_enum)]
    meter: Option<MeterArg>,
    /// Log-space noise of the simulated meter
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Powercap root override for the rapl meter (testing)
    #[arg(long)]
    rapl_root: Option<PathBuf>,
}

impl MeterFlags {
    fn resolve(&self, base: MeterConfig) -> MeterConfig {
        let mut cfg = base;
        if let Some(meter) = self.meter {
            cfg.kind = match meter {
                MeterArg::Rapl => MeterKind::Rapl,
                MeterArg::Simulated => MeterKind::Simulated,
            };
        }
        if let Some(sigma) = self.noise_sigma {
            cfg.noise_sigma = sigma;
        }
        if let Some(root) = &self.rapl_root {
            cfg.rapl_root = Some(root.clone());
        }
        cfg
    }
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    problem: ProblemFlags,
    /// Algorithm whose operator variants to profile
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    /// Operator applications to record per variant
    #[arg(long, default_value_t = 100)]
    samples: u64,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    meter: MeterFlags,
    /// Output directory (receives profile.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemFlags,
    /// Algorithm to run
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    /// Operator selection mode: `eos` or `static:<variant>`
    #[arg(long)]
    mode: Option<String>,
    /// Stop after this much measured energy (joules)
    #[arg(long, conflicts_with = "eval_budget")]
    budget_joules: Option<f64>,
    /// Stop after this many fitness evaluations
    #[arg(long)]
    eval_budget: Option<u64>,
    /// Number of independent trials
    #[arg(long)]
    trials: Option<u32>,
    /// Master seed; trial seeds derive from it
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    meter: MeterFlags,
    /// EWMA smoothing factor
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeWhat {
    Summary,
    Fits,
    Ratios,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory containing experiment outputs (searched recursively)
    #[arg(long = "in")]
    in_dir: PathBuf,
    /// Which analysis to produce
    #[arg(long, value_enum)]
    what: AnalyzeWhat,
    /// Output directory (defaults to --in)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.kind() == ErrorKind::DisplayHelp || e.kind() == ErrorKind::DisplayVersion => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let line = e.to_string();
            eprintln!("{}", line.lines().next().unwrap_or("usage error"));
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateInstance(args) => generate_instance(args),
        Command::Profile(args) => profile(args),
        Command::Run(args) => run(args),
        Command::Analyze(args) => analyze_cmd(args),
    }
}

fn generate_instance(args: GenerateArgs) -> Result<()> {
    let mut flags = args.problem;
    if flags.instance_seed.is_none() {
        flags.instance_seed = args.seed;
    }
    let spec = flags.resolve(None).map_err(usage_error)?;
    let instance = match spec {
        ProblemSpec::Kp { n, instance_seed } => {
            ProblemInstance::Kp(KpInstance::generate(n, RngSeed(instance_seed)))
        }
        ProblemSpec::Nk { n, k, instance_seed } => {
            ProblemInstance::Nk(NkInstance::generate(n, k, RngSeed(instance_seed)))
        }
        ProblemSpec::Ecc { m, n } => ProblemInstance::Ecc(EccInstance::new(m, n)),
    };
    instance
        .save(&args.out)
        .with_context(|| format!("writing instance to {}", args.out.display()))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn profile(args: ProfileArgs) -> Result<()> {
    let spec = args.problem.resolve(None).map_err(usage_error)?;
    let config = ExperimentConfig {
        problem: spec,
        algorithm: args.algorithm.into(),
        mode: Mode::Eos,
        stop: StopCondition::EnergyBudgetJ(default_energy_budget_j(spec.kind())),
        trials: 1,
        master_seed: args.seed,
        meter: args.meter.resolve(MeterConfig::default()),
        alpha: 0.9,
    };
    let out_path = args.out.join("profile.csv");
    let profiles = profile_operators(&config, args.samples, &out_path)?;
    for p in &profiles {
        let mean = p.joules.iter().sum::<f64>() / p.joules.len() as f64;
        println!("{}: {} samples, mean {mean:.6} J", p.operator, p.joules.len());
    }
    println!("wrote {}", out_path.display());
    Ok(())
}

/// Marker for errors that should exit with the usage code.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn usage_error(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(UsageError(format!("{e}")))
}

fn run(args: RunArgs) -> Result<()> {
    let base: Option<ExperimentConfig> = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            Some(serde_json::from_str(&text).context("parsing config file")?)
        }
        None => None,
    };

    let problem = args
        .problem
        .resolve(base.as_ref().map(|c| c.problem))
        .map_err(usage_error)?;
    let algorithm: Algorithm = match (args.algorithm, base.as_ref()) {
        (Some(a), _) => a.into(),
        (None, Some(c)) => c.algorithm,
        (None, None) => return Err(usage_error(anyhow::anyhow!("--algorithm is required"))),
    };
    let mode: Mode = match (&args.mode, base.as_ref()) {
        (Some(s), _) => s.parse().map_err(|e: String| usage_error(anyhow::anyhow!(e)))?,
        (None, Some(c)) => c.mode,
        (None, None) => Mode::Eos,
    };
    let stop = match (args.budget_joules, args.eval_budget, base.as_ref()) {
        (Some(b), None, _) => StopCondition::EnergyBudgetJ(b),
        (None, Some(n), _) => StopCondition::EvalBudget(n),
        (None, None, Some(c)) => c.stop,
        (None, None, None) => StopCondition::EnergyBudgetJ(default_energy_budget_j(problem.kind())),
        (Some(_), Some(_), _) => unreachable!("clap rejects conflicting budgets"),
    };
    let config = ExperimentConfig {
        problem,
        algorithm,
        mode,
        stop,
        trials: args.trials.or(base.as_ref().map(|c| c.trials)).unwrap_or(DEFAULT_TRIALS),
        master_seed: args.seed.or(base.as_ref().map(|c| c.master_seed)).unwrap_or(0),
        meter: args
            .meter
            .resolve(base.as_ref().map(|c| c.meter.clone()).unwrap_or_default()),
        alpha: args.alpha.or(base.as_ref().map(|c| c.alpha)).unwrap_or(0.9),
    };
    if let Err(e) = config.validate() {
        return Err(usage_error(anyhow::anyhow!("{e}")));
    }
    let records = run_experiment(&config, &args.out)?;
    let mean_fitness =
        records.iter().map(|r| r.final_fitness.value()).sum::<f64>() / records.len() as f64;
    let mean_energy = records.iter().map(|r| r.total_energy_j).sum::<f64>() / records.len() as f64;
    println!(
        "{} trials done: mean final fitness {mean_fitness:.6}, mean energy {mean_energy:.3} J",
        records.len()
    );
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<()> {
    let what = match args.what {
        AnalyzeWhat::Summary => AnalysisKind::Summary,
        AnalyzeWhat::Fits => AnalysisKind::Fits,
        AnalyzeWhat::Ratios => AnalysisKind::Ratios,
    };
    let out_dir = args.out.clone().unwrap_or_else(|| args.in_dir.clone());
    let path = analyze(&args.in_dir, what, &out_dir)?;
    println!("wrote {}", path.display());
    Ok(())
}
