//! Experiment orchestration: multi-trial runs, operator profiling, and
//! structured CSV/JSON logging.
//!
//! Every experiment writes one CSV per trial plus a manifest that records the
//! canonical config, its hash (which prefixes the file names), and per-trial
//! summary statistics. Simulated-meter experiments run trials in parallel;
//! RAPL experiments run strictly sequentially because the hardware counters
//! are machine-global.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::RngSeed;
use crate::energy::{Meter, MeterConfig, MeterError, MeterKind};
use crate::format_sig17;
use crate::problems::{EccInstance, InstanceError, KpInstance, NkInstance, ProblemInstance, ProblemKind};
use crate::scheduler::SchedulerConfig;
use crate::solvers::{
    run_solver, Algorithm, Mode, OperatorVariant, RunRecord, SolverParams, SolverState,
    StopCondition,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Meter(#[from] MeterError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Which benchmark to generate and with what parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSpec {
    Kp { n: usize, instance_seed: u64 },
    Nk { n: usize, k: usize, instance_seed: u64 },
    Ecc { m: usize, n: usize },
}

impl ProblemSpec {
    pub fn kind(&self) -> ProblemKind {
        match self {
            ProblemSpec::Kp { .. } => ProblemKind::Kp,
            ProblemSpec::Nk { .. } => ProblemKind::Nk,
            ProblemSpec::Ecc { .. } => ProblemKind::Ecc,
        }
    }

    /// The standard configuration for each benchmark.
    pub fn defaults(kind: ProblemKind) -> ProblemSpec {
        match kind {
            ProblemKind::Kp => ProblemSpec::Kp { n: 100, instance_seed: 1 },
            ProblemKind::Nk => ProblemSpec::Nk { n: 100, k: 6, instance_seed: 1 },
            ProblemKind::Ecc => ProblemSpec::Ecc { m: 24, n: 12 },
        }
    }

    pub fn build(&self) -> ProblemInstance {
        match *self {
            ProblemSpec::Kp { n, instance_seed } => {
                ProblemInstance::Kp(KpInstance::generate(n, RngSeed(instance_seed)))
            }
            ProblemSpec::Nk { n, k, instance_seed } => {
                ProblemInstance::Nk(NkInstance::generate(n, k, RngSeed(instance_seed)))
            }
            ProblemSpec::Ecc { m, n } => ProblemInstance::Ecc(EccInstance::new(m, n)),
        }
    }
}

/// Default energy budget in joules for each benchmark.
pub fn default_energy_budget_j(kind: ProblemKind) -> f64 {
    match kind {
        ProblemKind::Kp | ProblemKind::Nk => 1000.0,
        ProblemKind::Ecc => 10_000.0,
    }
}

/// Default evaluation budget for each benchmark.
pub fn default_eval_budget(kind: ProblemKind) -> u64 {
    match kind {
        ProblemKind::Kp => 35_000,
        ProblemKind::Nk => 10_000,
        ProblemKind::Ecc => 15_000,
    }
}

pub const DEFAULT_TRIALS: u32 = 100;

/// Complete description of one experiment. Serializes canonically, so its
/// JSON form hashes stably.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub stop: StopCondition,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub meter: MeterConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_trials() -> u32 {
    DEFAULT_TRIALS
}

fn default_alpha() -> f64 {
    0.9
}

impl ExperimentConfig {
    /// Standard experiment for a benchmark: adaptive mode, the default energy
    /// budget, the default trial count.
    pub fn standard(kind: ProblemKind, algorithm: Algorithm) -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemSpec::defaults(kind),
            algorithm,
            mode: Mode::Eos,
            stop: StopCondition::EnergyBudgetJ(default_energy_budget_j(kind)),
            trials: DEFAULT_TRIALS,
            master_seed: 0,
            meter: MeterConfig::default(),
            alpha: 0.9,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if let Mode::Static(v) = self.mode {
            if v.algorithm() != self.algorithm {
                return Err(HarnessError::Config(format!(
                    "variant {} does not belong to algorithm {}",
                    v.name(),
                    self.algorithm
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HarnessError::Config("alpha must lie in (0,1)".into()));
        }
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be positive".into()));
        }
        match self.stop {
            StopCondition::EnergyBudgetJ(b) if b.is_nan() || b <= 0.0 => {
                Err(HarnessError::Config("energy budget must be positive".into()))
            }
            StopCondition::EvalBudget(0) => {
                Err(HarnessError::Config("evaluation budget must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Stable 12-hex-digit digest of the canonical JSON form of the config.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Per-trial summary entry in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial: u64,
    pub seed: u64,
    pub file: String,
    pub final_fitness: f64,
    pub total_energy_j: f64,
    pub total_evaluations: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feasible: Option<bool>,
}

/// Experiment manifest: the config, its hash, the operator column order, and
/// one entry per trial file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub operators: Vec<String>,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Runs every trial of `config`, writing one CSV per trial plus the manifest
/// into `out_dir`, and returns the records in trial order.
///
/// Trial seeds derive from `(master_seed, trial_index)`, so results do not
/// depend on execution order. Simulated-meter trials run on a worker pool;
/// RAPL forces sequential execution.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<RunRecord>, HarnessError> {
    config.validate()?;
    if config.meter.kind == MeterKind::Rapl {
        // Fail fast if the powercap tree is unusable.
        Meter::new(&config.meter)?;
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let problem = config.problem.build();
    let hash = config_hash(config);
    let params = SolverParams::default();
    let sched_cfg = SchedulerConfig::with_alpha(config.alpha);
    let master = RngSeed(config.master_seed);

    let run_one = |trial: u64| -> Result<(RunRecord, TrialEntry), HarnessError> {
        let trial_seed = master.for_trial(trial);
        let record = run_solver(
            &problem,
            config.algorithm,
            config.mode,
            config.stop,
            &config.meter,
            &sched_cfg,
            &params,
            trial,
            trial_seed,
        )?;
        let file = format!("{hash}_trial{trial:03}.csv");
        write_trial_csv(&record, &out_dir.join(&file))?;
        let entry = TrialEntry {
            trial,
            seed: trial_seed.0,
            file,
            final_fitness: record.final_fitness.value(),
            total_energy_j: record.total_energy_j,
            total_evaluations: record.total_evaluations,
            feasible: record.feasible,
        };
        Ok((record, entry))
    };

    let results: Vec<(RunRecord, TrialEntry)> = if config.meter.kind == MeterKind::Simulated {
        (0..u64::from(config.trials))
            .into_par_iter()
            .map(run_one)
            .collect::<Result<_, _>>()?
    } else {
        (0..u64::from(config.trials)).map(run_one).collect::<Result<_, _>>()?
    };

    let (records, trials): (Vec<RunRecord>, Vec<TrialEntry>) = results.into_iter().unzip();
    let manifest = Manifest {
        config_hash: hash,
        operators: OperatorVariant::portfolio(config.algorithm)
            .iter()
            .map(|v| v.name().to_string())
            .collect(),
        config: config.clone(),
        trials,
    };
    write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(records)
}

/// Energy samples recorded for one operator variant, in application order.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorProfile {
    pub operator: &'static str,
    pub joules: Vec<f64>,
}

/// Runs each variant of the configured algorithm statically for `n_samples`
/// operator applications and records every per-application energy sample.
/// Writes a long-format `profile.csv` (operator, sample_index, joules).
pub fn profile_operators(
    config: &ExperimentConfig,
    n_samples: u64,
    out_path: &Path,
) -> Result<Vec<OperatorProfile>, HarnessError> {
    config.validate()?;
    let problem = config.problem.build();
    let params = SolverParams::default();
    let master = RngSeed(config.master_seed);
    let mut profiles = Vec::new();
    for (i, &variant) in OperatorVariant::portfolio(config.algorithm).iter().enumerate() {
        let meter = Meter::new(&config.meter)?;
        let mut rng = master.for_trial(i as u64).rng();
        let mut state = SolverState::init(config.algorithm, &problem, &params, &mut rng);
        let mut joules = Vec::with_capacity(n_samples as usize);
        for _ in 0..n_samples {
            let outcome = state.step(variant, &problem, &meter, &mut rng)?;
            joules.push(outcome.energy.joules());
        }
        profiles.push(OperatorProfile { operator: variant.name(), joules });
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut out = String::from("operator,sample_index,joules\n");
    for profile in &profiles {
        for (i, j) in profile.joules.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", profile.operator, i, format_sig17(*j)));
        }
    }
    fs::write(out_path, out).map_err(io_err(out_path))?;
    Ok(profiles)
}

/// Writes one trial trace. Header:
/// `iter,cum_energy_j,cum_evals,best_fitness,op_id,` followed by
/// `mu_df_<op>,var_df_<op>,mu_lnE_<op>,var_lnE_<op>` per operator.
/// Floats carry 17 significant digits for exact round-trips.
pub fn write_trial_csv(record: &RunRecord, path: &Path) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::from("iter,cum_energy_j,cum_evals,best_fitness,op_id");
    for op in &record.op_names {
        header.push_str(&format!(",mu_df_{op},var_df_{op},mu_lnE_{op},var_lnE_{op}"));
    }
    writeln!(w, "{header}").map_err(io_err(path))?;
    for point in &record.trajectory {
        let mut row = format!(
            "{},{},{},{},{}",
            point.iteration,
            format_sig17(point.cum_energy_j),
            point.cum_evaluations,
            format_sig17(point.best_fitness.value()),
            record.op_names[point.op_index],
        );
        for s in &point.stats {
            row.push_str(&format!(
                ",{},{},{},{}",
                format_sig17(s.mu_df),
                format_sig17(s.var_df),
                format_sig17(s.mu_ln_e),
                format_sig17(s.var_ln_e)
            ));
        }
        writeln!(w, "{row}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text).map_err(io_err(path))
}
