//! Benchmark problems: 0-1 knapsack with penalty constraint handling,
//! NK landscapes with random epistatic neighbourhoods, and minimum-distance
//! error-correcting code design. All three are maximised over fixed-length
//! bitstrings and evaluate deterministically.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{Bitstring, Fitness, RngSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Kp,
    Nk,
    Ecc,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Kp => "kp",
            ProblemKind::Nk => "nk",
            ProblemKind::Ecc => "ecc",
        })
    }
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kp" => Ok(ProblemKind::Kp),
            "nk" => Ok(ProblemKind::Nk),
            "ecc" => Ok(ProblemKind::Ecc),
            other => Err(format!("unknown problem kind {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse instance file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid field `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> InstanceError {
    InstanceError::Validation { field, reason: reason.into() }
}

/// 0-1 knapsack instance. Profits and weights are integers in [1, 1000],
/// capacity equals the maximum item weight, and infeasible solutions pay a
/// penalty of `K * rho` per unit of excess weight with `K = n` and
/// `rho = max_i(p_i / w_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KpInstance {
    pub seed: u64,
    pub n: usize,
    pub profits: Vec<u64>,
    pub weights: Vec<u64>,
    pub capacity: u64,
    pub penalty_k: f64,
    pub penalty_rho: f64,
}

impl KpInstance {
    pub fn generate(n: usize, seed: RngSeed) -> KpInstance {
        assert!(n >= 1, "knapsack needs at least one item");
        let mut rng = seed.rng();
        let profits: Vec<u64> = (0..n).map(|_| rng.random_range(1..=1000)).collect();
        let weights: Vec<u64> = (0..n).map(|_| rng.random_range(1..=1000)).collect();
        let capacity = *weights.iter().max().unwrap();
        let penalty_rho = max_profit_ratio(&profits, &weights);
        KpInstance {
            seed: seed.0,
            n,
            profits,
            weights,
            capacity,
            penalty_k: n as f64,
            penalty_rho,
        }
    }

    /// Total profit minus `K * rho * max(0, weight - capacity)`. Profit and
    /// weight sums are exact 64-bit integers; only the penalty term is real.
    pub fn fitness(&self, x: &Bitstring) -> Fitness {
        assert_eq!(x.len(), self.n, "genotype length must equal n");
        let mut profit: u64 = 0;
        let mut weight: u64 = 0;
        for i in 0..self.n {
            if x.get(i) {
                profit += self.profits[i];
                weight += self.weights[i];
            }
        }
        let excess = weight.saturating_sub(self.capacity);
        let value = profit as f64 - self.penalty_k * self.penalty_rho * excess as f64;
        Fitness::new(value)
    }

    pub fn total_weight(&self, x: &Bitstring) -> u64 {
        (0..self.n).filter(|&i| x.get(i)).map(|i| self.weights[i]).sum()
    }

    pub fn is_feasible(&self, x: &Bitstring) -> bool {
        self.total_weight(x) <= self.capacity
    }

    fn validate(&self) -> Result<(), InstanceError> {
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if self.profits.len() != self.n {
            return Err(invalid("profits", format!("expected {} entries", self.n)));
        }
        if self.weights.len() != self.n {
            return Err(invalid("weights", format!("expected {} entries", self.n)));
        }
        if self.profits.iter().any(|&p| !(1..=1000).contains(&p)) {
            return Err(invalid("profits", "entries must lie in [1, 1000]"));
        }
        if self.weights.iter().any(|&w| !(1..=1000).contains(&w)) {
            return Err(invalid("weights", "entries must lie in [1, 1000]"));
        }
        let max_w = *self.weights.iter().max().unwrap();
        if self.capacity != max_w {
            return Err(invalid("capacity", format!("must equal the maximum weight {max_w}")));
        }
        if self.penalty_k != self.n as f64 {
            return Err(invalid("penalty_k", format!("must equal n = {}", self.n)));
        }
        let rho = max_profit_ratio(&self.profits, &self.weights);
        if self.penalty_rho != rho {
            return Err(invalid("penalty_rho", format!("must equal max(p_i/w_i) = {rho}")));
        }
        Ok(())
    }
}

fn max_profit_ratio(profits: &[u64], weights: &[u64]) -> f64 {
    profits
        .iter()
        .zip(weights)
        .map(|(&p, &w)| p as f64 / w as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// NK landscape. Each variable `i` interacts with `K` distinct other
/// variables; its contribution table has `2^(K+1)` entries in [0, 1).
///
/// Table indexing packs `x_i` as the most significant bit followed by the
/// neighbour values in stored order.
#[derive(Debug, Clone, PartialEq)]
pub struct NkInstance {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub neighborhoods: Vec<Vec<usize>>,
    pub tables: Vec<Vec<f64>>,
}

impl NkInstance {
    pub fn generate(n: usize, k: usize, seed: RngSeed) -> NkInstance {
        assert!(n >= 1, "landscape needs at least one variable");
        assert!(k < n, "epistasis degree must satisfy K < n");
        let mut rng = seed.rng();
        let mut neighborhoods = Vec::with_capacity(n);
        for i in 0..n {
            let mut candidates: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            // Partial Fisher-Yates: the first k slots become the neighbourhood.
            for j in 0..k {
                let pick = j + rng.random_range(0..candidates.len() - j);
                candidates.swap(j, pick);
            }
            candidates.truncate(k);
            neighborhoods.push(candidates);
        }
        let table_len = 1usize << (k + 1);
        let tables: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..table_len).map(|_| rng.random::<f64>()).collect())
            .collect();
        NkInstance { seed: seed.0, n, k, neighborhoods, tables }
    }

    pub fn fitness(&self, x: &Bitstring) -> Fitness {
        assert_eq!(x.len(), self.n, "genotype length must equal n");
        let mut total = 0.0;
        for i in 0..self.n {
            let mut idx = usize::from(x.get(i));
            for &nb in &self.neighborhoods[i] {
                idx = (idx << 1) | usize::from(x.get(nb));
            }
            total += self.tables[i][idx];
        }
        Fitness::new(total / self.n as f64)
    }

    fn validate(&self) -> Result<(), InstanceError> {
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if self.k >= self.n {
            return Err(invalid("k", "must satisfy K < n"));
        }
        if self.neighborhoods.len() != self.n {
            return Err(invalid("neighborhoods", format!("expected {} entries", self.n)));
        }
        for (i, nb) in self.neighborhoods.iter().enumerate() {
            if nb.len() != self.k {
                return Err(invalid("neighborhoods", format!("entry {i} must have K members")));
            }
            let mut sorted = nb.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.k || nb.contains(&i) || nb.iter().any(|&j| j >= self.n) {
                return Err(invalid(
                    "neighborhoods",
                    format!("entry {i} must hold distinct indices != {i} below n"),
                ));
            }
        }
        if self.tables.len() != self.n {
            return Err(invalid("tables", format!("expected {} entries", self.n)));
        }
        let table_len = 1usize << (self.k + 1);
        for (i, table) in self.tables.iter().enumerate() {
            if table.len() != table_len {
                return Err(invalid("tables", format!("entry {i} must have {table_len} values")));
            }
            if table.iter().any(|&v| !(0.0..1.0).contains(&v)) {
                return Err(invalid("tables", format!("entry {i} has a value outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Error-correcting code design: `M` codewords of length `n`, genotype is the
/// row-major concatenation. Fitness is the reciprocal of the sum of inverse
/// squared pairwise Hamming distances over ordered pairs; any duplicate
/// codeword collapses the fitness to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EccInstance {
    pub m: usize,
    pub n: usize,
}

impl EccInstance {
    pub fn new(m: usize, n: usize) -> EccInstance {
        assert!(m >= 2, "a code needs at least two codewords");
        assert!(n >= 1, "codewords need positive length");
        EccInstance { m, n }
    }

    pub fn fitness(&self, x: &Bitstring) -> Fitness {
        assert_eq!(x.len(), self.m * self.n, "genotype length must equal M*n");
        let bits = x.as_slice();
        let mut denom = 0.0;
        for i in 0..self.m {
            let row_i = &bits[i * self.n..(i + 1) * self.n];
            for j in 0..self.m {
                if i == j {
                    continue;
                }
                let row_j = &bits[j * self.n..(j + 1) * self.n];
                let d = row_i.iter().zip(row_j).filter(|(a, b)| a != b).count();
                if d == 0 {
                    return Fitness::new(0.0);
                }
                denom += 1.0 / (d * d) as f64;
            }
        }
        Fitness::new(1.0 / denom)
    }

    fn validate(&self) -> Result<(), InstanceError> {
        if self.m < 2 {
            return Err(invalid("m", "must be at least 2"));
        }
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        Ok(())
    }
}

/// One of the three benchmark instances, with everything needed to evaluate
/// fitness deterministically. Immutable after construction; evaluation is
/// reentrant.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemInstance {
    Kp(KpInstance),
    Nk(NkInstance),
    Ecc(EccInstance),
}

impl ProblemInstance {
    pub fn kind(&self) -> ProblemKind {
        match self {
            ProblemInstance::Kp(_) => ProblemKind::Kp,
            ProblemInstance::Nk(_) => ProblemKind::Nk,
            ProblemInstance::Ecc(_) => ProblemKind::Ecc,
        }
    }

    /// Genotype length.
    pub fn dimension(&self) -> usize {
        match self {
            ProblemInstance::Kp(p) => p.n,
            ProblemInstance::Nk(p) => p.n,
            ProblemInstance::Ecc(p) => p.m * p.n,
        }
    }

    pub fn fitness(&self, x: &Bitstring) -> Fitness {
        match self {
            ProblemInstance::Kp(p) => p.fitness(x),
            ProblemInstance::Nk(p) => p.fitness(x),
            ProblemInstance::Ecc(p) => p.fitness(x),
        }
    }

    /// Cost-model weight of a single evaluation: KP is linear in `n`, NK costs
    /// `n*K` table contributions, ECC costs `M*n^2` pairwise distance work.
    pub fn work_units_per_eval(&self) -> f64 {
        match self {
            ProblemInstance::Kp(p) => p.n as f64,
            ProblemInstance::Nk(p) => (p.n * p.k) as f64,
            ProblemInstance::Ecc(p) => (p.m * p.n * p.n) as f64,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), InstanceError> {
        let file = schema::InstanceFile::from_instance(self);
        let text = serde_json::to_string_pretty(&file)?;
        fs::write(path, text).map_err(|e| InstanceError::Io { path: path.to_path_buf(), source: e })
    }

    pub fn load(path: &Path) -> Result<ProblemInstance, InstanceError> {
        let text = fs::read_to_string(path)
            .map_err(|e| InstanceError::Io { path: path.to_path_buf(), source: e })?;
        ProblemInstance::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&schema::InstanceFile::from_instance(self))
            .expect("instance serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<ProblemInstance, InstanceError> {
        let file: schema::InstanceFile = serde_json::from_str(text)?;
        let instance = file.into_instance();
        match &instance {
            ProblemInstance::Kp(p) => p.validate()?,
            ProblemInstance::Nk(p) => p.validate()?,
            ProblemInstance::Ecc(p) => p.validate()?,
        }
        Ok(instance)
    }
}

/// On-disk schema: `{"kind": ..., "seed": ..., "params": {...}, "data": {...}}`.
mod schema {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(tag = "kind", rename_all = "lowercase")]
    pub(super) enum InstanceFile {
        Kp { seed: u64, params: KpParams, data: KpData },
        Nk { seed: u64, params: NkParams, data: NkData },
        Ecc { seed: u64, params: EccParams, data: EccData },
    }

    #[derive(Serialize, Deserialize)]
    pub(super) struct KpParams {
        pub n: usize,
    }

    #[derive(Serialize, Deserialize)]
    pub(super) struct KpData {
        pub profits: Vec<u64>,
        pub weights: Vec<u64>,
        pub capacity: u64,
        pub penalty_k: f64,
        pub penalty_rho: f64,
    }

    #[derive(Serialize, Deserialize)]
    pub(super) struct NkParams {
        pub n: usize,
        pub k: usize,
    }

    #[derive(Serialize, Deserialize)]
    pub(super) struct NkData {
        pub neighborhoods: Vec<Vec<usize>>,
        pub tables: Vec<Vec<f64>>,
    }

    #[derive(Serialize, Deserialize)]
    pub(super) struct EccParams {
        pub m: usize,
        pub n: usize,
    }

    #[derive(Serialize, Deserialize)]
    pub(super) struct EccData {}

    impl InstanceFile {
        pub(super) fn from_instance(instance: &ProblemInstance) -> InstanceFile {
            match instance {
                ProblemInstance::Kp(p) => InstanceFile::Kp {
                    seed: p.seed,
                    params: KpParams { n: p.n },
                    data: KpData {
                        profits: p.profits.clone(),
                        weights: p.weights.clone(),
                        capacity: p.capacity,
                        penalty_k: p.penalty_k,
                        penalty_rho: p.penalty_rho,
                    },
                },
                ProblemInstance::Nk(p) => InstanceFile::Nk {
                    seed: p.seed,
                    params: NkParams { n: p.n, k: p.k },
                    data: NkData {
                        neighborhoods: p.neighborhoods.clone(),
                        tables: p.tables.clone(),
                    },
                },
                ProblemInstance::Ecc(p) => InstanceFile::Ecc {
                    seed: 0,
                    params: EccParams { m: p.m, n: p.n },
                    data: EccData {},
                },
            }
        }

        pub(super) fn into_instance(self) -> ProblemInstance {
            match self {
                InstanceFile::Kp { seed, params, data } => ProblemInstance::Kp(KpInstance {
                    seed,
                    n: params.n,
                    profits: data.profits,
                    weights: data.weights,
                    capacity: data.capacity,
                    penalty_k: data.penalty_k,
                    penalty_rho: data.penalty_rho,
                }),
                InstanceFile::Nk { seed, params, data } => ProblemInstance::Nk(NkInstance {
                    seed,
                    n: params.n,
                    k: params.k,
                    neighborhoods: data.neighborhoods,
                    tables: data.tables,
                }),
                InstanceFile::Ecc { params, .. } => {
                    ProblemInstance::Ecc(EccInstance { m: params.m, n: params.n })
                }
            }
        }
    }
}
