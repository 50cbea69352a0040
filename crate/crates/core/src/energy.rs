//! Pluggable energy meters.
//!
//! Two implementations share one interface: a hardware reader over the Linux
//! powercap (RAPL) sysfs tree, summing CPU package and DRAM counters, and a
//! deterministic simulated meter whose cost model is linear in declared work
//! units with optional log-normal noise.
//!
//! Measurement protocol: call [`Meter::begin`] before the operator block and
//! [`Meter::end`] after it. Tokens are consumed by `end`, so a token cannot be
//! reused. Measured deltas are clamped to a configurable positive floor; the
//! scheduler's log-space model requires strictly positive energies.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::ProblemInstance;

/// Default powercap class directory on Linux.
pub const DEFAULT_POWERCAP_ROOT: &str = "/sys/class/powercap";

/// Joules attributed to one operator application. Strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    joules: f64,
}

impl EnergySample {
    pub fn new(joules: f64) -> EnergySample {
        assert!(
            joules.is_finite() && joules > 0.0,
            "energy sample must be strictly positive, got {joules}"
        );
        EnergySample { joules }
    }

    pub fn joules(self) -> f64 {
        self.joules
    }
}

#[derive(Debug, Error)]
pub enum MeterError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path} as an integer counter")]
    Parse { path: PathBuf },
    #[error("no readable RAPL package domains under {root}")]
    PowercapUnavailable { root: PathBuf },
    #[error("meter token does not match this meter")]
    TokenMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeterKind {
    Rapl,
    Simulated,
}

/// Meter settings. The simulated calibration defaults put one cheap operator
/// call in the 1e-2 J range so that desk-scale budgets behave like the real
/// protocol; nothing downstream depends on the absolute constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterConfig {
    pub kind: MeterKind,
    /// Log-space standard deviation of the multiplicative noise (simulated only).
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Joules per abstract work unit (simulated only).
    #[serde(default = "default_joules_per_work_unit")]
    pub joules_per_work_unit: f64,
    /// Fixed per-invocation cost in joules (simulated only).
    #[serde(default = "default_fixed_overhead_j")]
    pub fixed_overhead_j: f64,
    /// Lower clamp applied to every sample, in joules.
    #[serde(default = "default_energy_floor_j")]
    pub energy_floor_j: f64,
    /// Override of the powercap root, for tests against a fake sysfs tree.
    #[serde(default)]
    pub rapl_root: Option<PathBuf>,
}

fn default_noise_sigma() -> f64 {
    0.1
}

fn default_joules_per_work_unit() -> f64 {
    2e-4
}

fn default_fixed_overhead_j() -> f64 {
    2e-3
}

fn default_energy_floor_j() -> f64 {
    1e-9
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            kind: MeterKind::Simulated,
            noise_sigma: default_noise_sigma(),
            joules_per_work_unit: default_joules_per_work_unit(),
            fixed_overhead_j: default_fixed_overhead_j(),
            energy_floor_j: default_energy_floor_j(),
            rapl_root: None,
        }
    }
}

impl MeterConfig {
    pub fn simulated() -> MeterConfig {
        MeterConfig::default()
    }

    pub fn simulated_noise_free() -> MeterConfig {
        MeterConfig { noise_sigma: 0.0, ..MeterConfig::default() }
    }

    pub fn rapl() -> MeterConfig {
        MeterConfig { kind: MeterKind::Rapl, ..MeterConfig::default() }
    }
}

/// Opaque measurement-in-progress handle. Consumed by [`Meter::end`]; the move
/// makes token reuse a compile-time error.
#[derive(Debug)]
pub struct MeterToken {
    inner: TokenInner,
}

#[derive(Debug)]
enum TokenInner {
    Simulated,
    Rapl(Vec<u64>),
}

#[derive(Debug)]
pub enum Meter {
    Simulated(SimulatedMeter),
    Rapl(RaplMeter),
}

impl Meter {
    pub fn new(config: &MeterConfig) -> Result<Meter, MeterError> {
        assert!(config.energy_floor_j > 0.0, "energy floor must be positive");
        match config.kind {
            MeterKind::Simulated => {
                assert!(config.noise_sigma >= 0.0, "noise sigma must be nonnegative");
                assert!(
                    config.joules_per_work_unit > 0.0,
                    "joules_per_work_unit must be positive"
                );
                assert!(config.fixed_overhead_j >= 0.0, "fixed overhead must be nonnegative");
                Ok(Meter::Simulated(SimulatedMeter {
                    noise_sigma: config.noise_sigma,
                    joules_per_work_unit: config.joules_per_work_unit,
                    fixed_overhead_j: config.fixed_overhead_j,
                    energy_floor_j: config.energy_floor_j,
                }))
            }
            MeterKind::Rapl => {
                let root = config
                    .rapl_root
                    .clone()
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_POWERCAP_ROOT));
                Ok(Meter::Rapl(RaplMeter::probe(&root, config.energy_floor_j)?))
            }
        }
    }

    pub fn kind(&self) -> MeterKind {
        match self {
            Meter::Simulated(_) => MeterKind::Simulated,
            Meter::Rapl(_) => MeterKind::Rapl,
        }
    }

    /// Starts a measurement. RAPL snapshots every tracked counter; the
    /// simulated meter records nothing (cost is computed from declared work).
    pub fn begin(&self) -> Result<MeterToken, MeterError> {
        match self {
            Meter::Simulated(_) => Ok(MeterToken { inner: TokenInner::Simulated }),
            Meter::Rapl(m) => Ok(MeterToken { inner: TokenInner::Rapl(m.read_counters()?) }),
        }
    }

    /// Finishes a measurement started by [`Meter::begin`] on the same meter.
    /// RAPL sums wraparound-corrected counter deltas and ignores `work_units`;
    /// the simulated meter prices the declared work.
    pub fn end(
        &self,
        token: MeterToken,
        work_units: f64,
        rng: &mut impl Rng,
    ) -> Result<EnergySample, MeterError> {
        assert!(work_units >= 0.0 && work_units.is_finite(), "work units must be nonnegative");
        match (self, token.inner) {
            (Meter::Simulated(m), TokenInner::Simulated) => Ok(m.sample(work_units, rng)),
            (Meter::Rapl(m), TokenInner::Rapl(start)) => m.sample(&start),
            _ => Err(MeterError::TokenMismatch),
        }
    }
}

/// Deterministic cost model: `(overhead + jpw * work) * exp(sigma * z)`.
#[derive(Debug, Clone)]
pub struct SimulatedMeter {
    noise_sigma: f64,
    joules_per_work_unit: f64,
    fixed_overhead_j: f64,
    energy_floor_j: f64,
}

impl SimulatedMeter {
    fn sample(&self, work_units: f64, rng: &mut impl Rng) -> EnergySample {
        let mut joules = self.fixed_overhead_j + self.joules_per_work_unit * work_units;
        if self.noise_sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            joules *= (self.noise_sigma * z).exp();
        }
        EnergySample::new(joules.max(self.energy_floor_j))
    }
}

#[derive(Debug, Clone)]
struct RaplDomain {
    energy_path: PathBuf,
    max_range_uj: u64,
}

/// Reader over the powercap sysfs hierarchy. Tracks every `package-*` domain
/// plus every `dram` subdomain, summing their deltas per measurement.
///
/// Not attribution-safe under concurrent trials: the counters are
/// machine-global, so real-energy runs must execute trials sequentially.
#[derive(Debug)]
pub struct RaplMeter {
    domains: Vec<RaplDomain>,
    energy_floor_j: f64,
}

impl RaplMeter {
    fn probe(root: &Path, energy_floor_j: f64) -> Result<RaplMeter, MeterError> {
        let mut domains = Vec::new();
        let entries = fs::read_dir(root)
            .map_err(|e| MeterError::Io { path: root.to_path_buf(), source: e })?;
        let mut names: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(is_rapl_domain_dir)
            })
            .collect();
        names.sort();
        for dir in names {
            let id = dir.file_name().unwrap().to_str().unwrap().to_string();
            let domain_name = read_trimmed(&dir.join("name"))?;
            // `intel-rapl:<i>` is a package domain, `intel-rapl:<i>:<j>` a subdomain.
            let is_package = id.matches(':').count() == 1;
            let tracked = if is_package {
                domain_name.starts_with("package")
            } else {
                domain_name == "dram"
            };
            if tracked {
                let max_range_uj = read_counter(&dir.join("max_energy_range_uj"))?;
                domains.push(RaplDomain { energy_path: dir.join("energy_uj"), max_range_uj });
            }
            // Subdomains may live nested under the package directory instead
            // of flat in the class dir (fake trees, devices paths).
            if is_package && domain_name.starts_with("package") {
                let mut subdirs: Vec<PathBuf> = fs::read_dir(&dir)
                    .map_err(|e| MeterError::Io { path: dir.clone(), source: e })?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.is_dir()
                            && p.file_name()
                                .and_then(|n| n.to_str())
                                .is_some_and(is_rapl_domain_dir)
                    })
                    .collect();
                subdirs.sort();
                for sub in subdirs {
                    if read_trimmed(&sub.join("name"))? == "dram" {
                        let max_range_uj = read_counter(&sub.join("max_energy_range_uj"))?;
                        domains.push(RaplDomain {
                            energy_path: sub.join("energy_uj"),
                            max_range_uj,
                        });
                    }
                }
            }
        }
        domains.sort_by(|a, b| a.energy_path.cmp(&b.energy_path));
        domains.dedup_by(|a, b| a.energy_path == b.energy_path);
        if domains.is_empty() {
            return Err(MeterError::PowercapUnavailable { root: root.to_path_buf() });
        }
        Ok(RaplMeter { domains, energy_floor_j })
    }

    fn read_counters(&self) -> Result<Vec<u64>, MeterError> {
        self.domains.iter().map(|d| read_counter(&d.energy_path)).collect()
    }

    fn sample(&self, start: &[u64]) -> Result<EnergySample, MeterError> {
        if start.len() != self.domains.len() {
            return Err(MeterError::TokenMismatch);
        }
        let now = self.read_counters()?;
        let mut total_uj: u64 = 0;
        for (domain, (&prev, &cur)) in self.domains.iter().zip(start.iter().zip(&now)) {
            total_uj += rapl_counter_delta(prev, cur, domain.max_range_uj);
        }
        let joules = total_uj as f64 * 1e-6;
        Ok(EnergySample::new(joules.max(self.energy_floor_j)))
    }
}

fn is_rapl_domain_dir(name: &str) -> bool {
    name.strip_prefix("intel-rapl:")
        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit() || c == ':'))
}

fn read_trimmed(path: &Path) -> Result<String, MeterError> {
    fs::read_to_string(path)
        .map(|s| s.trim().to_string())
        .map_err(|e| MeterError::Io { path: path.to_path_buf(), source: e })
}

fn read_counter(path: &Path) -> Result<u64, MeterError> {
    read_trimmed(path)?
        .parse::<u64>()
        .map_err(|_| MeterError::Parse { path: path.to_path_buf() })
}

/// Wraparound-corrected counter difference. RAPL counters are cumulative and
/// wrap at `max_range_uj`.
pub fn rapl_counter_delta(prev_uj: u64, now_uj: u64, max_range_uj: u64) -> u64 {
    assert!(prev_uj <= max_range_uj && now_uj <= max_range_uj, "counter exceeds its range");
    if now_uj >= prev_uj {
        now_uj - prev_uj
    } else {
        (max_range_uj - prev_uj) + now_uj + 1
    }
}

/// Abstract work units consumed by `n_evaluations` fitness evaluations of the
/// given problem, following each problem's evaluation complexity.
pub fn work_units_for(problem: &ProblemInstance, n_evaluations: u64) -> f64 {
    n_evaluations as f64 * problem.work_units_per_eval()
}
