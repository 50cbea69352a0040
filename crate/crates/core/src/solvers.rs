//! Energy-aware solvers: steady-state GA, PSO, and ILS, each exposing exactly
//! two operator variants to the scheduler, plus the budgeted run loop shared
//! by adaptive and static modes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bits::{flip_distinct_bits, Bitstring, Fitness, RngSeed, SearchRng};
use crate::energy::{work_units_for, EnergySample, Meter, MeterConfig, MeterError};
use crate::problems::ProblemInstance;
use crate::scheduler::{Budget, OperatorStats, Scheduler, SchedulerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ssga,
    Pso,
    Ils,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ssga => "ssga",
            Algorithm::Pso => "pso",
            Algorithm::Ils => "ils",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ssga" => Ok(Algorithm::Ssga),
            "pso" => Ok(Algorithm::Pso),
            "ils" => Ok(Algorithm::Ils),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

/// One member of an algorithm's two-operator portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorVariant {
    /// ssGA producing one offspring per step.
    Replace1,
    /// ssGA producing five offspring per step.
    Replace5,
    /// Canonical velocity update (inertia + cognitive + social terms).
    PsoFull,
    /// Velocity update without the global-best term.
    PsoLight,
    /// ILS with one-bit perturbation and moves.
    Ils1,
    /// ILS with five-bit perturbation and moves.
    Ils5,
}

impl OperatorVariant {
    pub fn name(self) -> &'static str {
        match self {
            OperatorVariant::Replace1 => "replace1",
            OperatorVariant::Replace5 => "replace5",
            OperatorVariant::PsoFull => "full",
            OperatorVariant::PsoLight => "light",
            OperatorVariant::Ils1 => "ils1",
            OperatorVariant::Ils5 => "ils5",
        }
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            OperatorVariant::Replace1 | OperatorVariant::Replace5 => Algorithm::Ssga,
            OperatorVariant::PsoFull | OperatorVariant::PsoLight => Algorithm::Pso,
            OperatorVariant::Ils1 | OperatorVariant::Ils5 => Algorithm::Ils,
        }
    }

    /// The two variants registered for an algorithm, in logging order.
    pub fn portfolio(algorithm: Algorithm) -> [OperatorVariant; 2] {
        match algorithm {
            Algorithm::Ssga => [OperatorVariant::Replace1, OperatorVariant::Replace5],
            Algorithm::Pso => [OperatorVariant::PsoFull, OperatorVariant::PsoLight],
            Algorithm::Ils => [OperatorVariant::Ils1, OperatorVariant::Ils5],
        }
    }

    pub fn from_name(name: &str) -> Option<OperatorVariant> {
        match name {
            "replace1" => Some(OperatorVariant::Replace1),
            "replace5" => Some(OperatorVariant::Replace5),
            "full" => Some(OperatorVariant::PsoFull),
            "light" => Some(OperatorVariant::PsoLight),
            "ils1" => Some(OperatorVariant::Ils1),
            "ils5" => Some(OperatorVariant::Ils5),
            _ => None,
        }
    }
}

/// Operator selection policy: adaptive scheduling or a fixed variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Eos,
    Static(OperatorVariant),
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Eos => f.write_str("eos"),
            Mode::Static(v) => write!(f, "static:{}", v.name()),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "eos" {
            return Ok(Mode::Eos);
        }
        if let Some(name) = s.strip_prefix("static:") {
            return OperatorVariant::from_name(name)
                .map(Mode::Static)
                .ok_or_else(|| format!("unknown operator variant {name:?}"));
        }
        Err(format!("mode must be `eos` or `static:<variant>`, got {s:?}"))
    }
}

impl Serialize for Mode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Run termination: an energy budget in joules or an evaluation budget.
/// Either way the in-flight step completes, so the budget may be slightly
/// overshot by at most one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    EnergyBudgetJ(f64),
    EvalBudget(u64),
}

/// Search parameters. Defaults: population/swarm 100, crossover 0.8, per-bit
/// mutation 1/D, size-2 tournaments, inertia 0.729 with both acceleration
/// coefficients 2.05, 100 local-search iterations, first-improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub pop_size: usize,
    pub crossover_rate: f64,
    /// Per-bit mutation probability; `None` means 1/D.
    pub mutation_rate: Option<f64>,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Local improvement iterations per ILS step.
    pub ls_iterations: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            pop_size: 100,
            crossover_rate: 0.8,
            mutation_rate: None,
            inertia: 0.729,
            cognitive: 2.05,
            social: 2.05,
            ls_iterations: 100,
        }
    }
}

/// What one operator application produced: accumulated fitness change (may be
/// negative), the exact number of evaluations, and the metered energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub delta_f: f64,
    pub n_evaluations: u64,
    pub energy: EnergySample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Bitstring,
    pub fitness: Fitness,
}

/// Steady-state GA population, kept sorted by descending fitness.
#[derive(Debug, Clone)]
pub struct GaState {
    population: Vec<Individual>,
    crossover_rate: f64,
    mutation_rate: f64,
}

impl GaState {
    pub fn init(problem: &ProblemInstance, params: &SolverParams, rng: &mut SearchRng) -> GaState {
        assert!(params.pop_size >= 2, "population needs at least two individuals");
        let d = problem.dimension();
        let mut population: Vec<Individual> = (0..params.pop_size)
            .map(|_| {
                let genome = Bitstring::random(d, rng);
                let fitness = problem.fitness(&genome);
                Individual { genome, fitness }
            })
            .collect();
        population.sort_by_key(|ind| std::cmp::Reverse(ind.fitness));
        GaState {
            population,
            crossover_rate: params.crossover_rate,
            mutation_rate: params.mutation_rate.unwrap_or(1.0 / d as f64),
        }
    }

    pub fn best(&self) -> &Individual {
        &self.population[0]
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    fn tournament_index(&self, rng: &mut SearchRng) -> usize {
        let a = rng.random_range(0..self.population.len());
        let b = rng.random_range(0..self.population.len());
        if self.population[a].fitness >= self.population[b].fitness {
            a
        } else {
            b
        }
    }
}

fn one_point_crossover(first: &Bitstring, second: &Bitstring, rng: &mut SearchRng) -> Bitstring {
    let d = first.len();
    if d < 2 {
        return first.clone();
    }
    let cut = rng.random_range(1..d);
    let mut bits = Vec::with_capacity(d);
    bits.extend(first.iter().take(cut));
    bits.extend(second.iter().skip(cut));
    Bitstring::from_bits(bits)
}

/// One steady-state step: `offspring_count` children from size-2 tournaments,
/// one-point crossover, per-bit mutation, then truncation to the best `n` of
/// the union. Ties go to incumbents. The fitness change of each child is
/// measured against its fitter parent.
pub fn ssga_step(
    state: &mut GaState,
    offspring_count: u64,
    problem: &ProblemInstance,
    meter: &Meter,
    rng: &mut SearchRng,
) -> Result<StepOutcome, MeterError> {
    let token = meter.begin()?;
    let d = problem.dimension();
    let pop_size = state.population.len();
    let mut delta_f = 0.0;
    let mut offspring = Vec::with_capacity(offspring_count as usize);
    for _ in 0..offspring_count {
        let a = state.tournament_index(rng);
        let b = state.tournament_index(rng);
        let (better, other) =
            if state.population[a].fitness >= state.population[b].fitness { (a, b) } else { (b, a) };
        let reference_fitness = state.population[better].fitness;
        let mut child = if rng.random::<f64>() < state.crossover_rate {
            one_point_crossover(&state.population[better].genome, &state.population[other].genome, rng)
        } else {
            state.population[better].genome.clone()
        };
        for i in 0..d {
            if rng.random::<f64>() < state.mutation_rate {
                child.flip(i);
            }
        }
        let fitness = problem.fitness(&child);
        delta_f += fitness - reference_fitness;
        offspring.push(Individual { genome: child, fitness });
    }
    // Stable sort with incumbents listed first keeps them on ties.
    state.population.extend(offspring);
    state.population.sort_by_key(|ind| std::cmp::Reverse(ind.fitness));
    state.population.truncate(pop_size);
    let energy = meter.end(token, work_units_for(problem, offspring_count), rng)?;
    Ok(StepOutcome { delta_f, n_evaluations: offspring_count, energy })
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub fitness: Fitness,
    pub best_position: Vec<f64>,
    pub best_fitness: Fitness,
}

/// PSO swarm over [0,1]^D with deterministic 0.5-threshold binarization for
/// evaluation. Initial positions are uniform, initial velocities zero.
#[derive(Debug, Clone)]
pub struct PsoState {
    particles: Vec<Particle>,
    best_position: Vec<f64>,
    best_fitness: Fitness,
    inertia: f64,
    cognitive: f64,
    social: f64,
}

pub fn binarize(position: &[f64]) -> Bitstring {
    Bitstring::from_bits(position.iter().map(|&p| p >= 0.5).collect())
}

impl PsoState {
    pub fn init(problem: &ProblemInstance, params: &SolverParams, rng: &mut SearchRng) -> PsoState {
        assert!(params.pop_size >= 1, "swarm needs at least one particle");
        let d = problem.dimension();
        let particles: Vec<Particle> = (0..params.pop_size)
            .map(|_| {
                let position: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let fitness = problem.fitness(&binarize(&position));
                Particle {
                    velocity: vec![0.0; d],
                    best_position: position.clone(),
                    best_fitness: fitness,
                    position,
                    fitness,
                }
            })
            .collect();
        let best = particles
            .iter()
            .max_by(|a, b| a.best_fitness.cmp(&b.best_fitness))
            .expect("swarm is non-empty");
        PsoState {
            best_position: best.best_position.clone(),
            best_fitness: best.best_fitness,
            particles,
            inertia: params.inertia,
            cognitive: params.cognitive,
            social: params.social,
        }
    }

    pub fn swarm_best(&self) -> (&[f64], Fitness) {
        (&self.best_position, self.best_fitness)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }
}

/// One full-swarm sweep. With `with_social_term` the velocity update is the
/// canonical one; without it the global-best attraction is omitted entirely.
/// Personal bests update inside the sweep, the global best afterwards.
#[allow(clippy::needless_range_loop)] // indexes five arrays in lockstep
pub fn pso_step(
    state: &mut PsoState,
    with_social_term: bool,
    problem: &ProblemInstance,
    meter: &Meter,
    rng: &mut SearchRng,
) -> Result<StepOutcome, MeterError> {
    let token = meter.begin()?;
    let d = state.best_position.len();
    let mut delta_f = 0.0;
    let gbest = state.best_position.clone();
    for particle in &mut state.particles {
        for dim in 0..d {
            let r1: f64 = rng.random();
            let mut v = state.inertia * particle.velocity[dim]
                + state.cognitive * r1 * (particle.best_position[dim] - particle.position[dim]);
            if with_social_term {
                let r2: f64 = rng.random();
                v += state.social * r2 * (gbest[dim] - particle.position[dim]);
            }
            particle.velocity[dim] = v;
            particle.position[dim] = (particle.position[dim] + v).clamp(0.0, 1.0);
        }
        let fitness = problem.fitness(&binarize(&particle.position));
        delta_f += fitness - particle.fitness;
        particle.fitness = fitness;
        if fitness > particle.best_fitness {
            particle.best_fitness = fitness;
            particle.best_position.copy_from_slice(&particle.position);
        }
    }
    for particle in &state.particles {
        if particle.best_fitness > state.best_fitness {
            state.best_fitness = particle.best_fitness;
            state.best_position.copy_from_slice(&particle.best_position);
        }
    }
    let n_evaluations = state.particles.len() as u64;
    let energy = meter.end(token, work_units_for(problem, n_evaluations), rng)?;
    Ok(StepOutcome { delta_f, n_evaluations, energy })
}

/// ILS incumbent plus the local-search depth.
#[derive(Debug, Clone)]
pub struct IlsState {
    best: Bitstring,
    best_fitness: Fitness,
    ls_iterations: u64,
}

impl IlsState {
    pub fn init(problem: &ProblemInstance, params: &SolverParams, rng: &mut SearchRng) -> IlsState {
        let best = Bitstring::random(problem.dimension(), rng);
        let best_fitness = problem.fitness(&best);
        IlsState { best, best_fitness, ls_iterations: params.ls_iterations }
    }

    pub fn best(&self) -> (&Bitstring, Fitness) {
        (&self.best, self.best_fitness)
    }
}

/// One ILS step: perturb the incumbent by `flip_k` bits, then `ls_iterations`
/// rounds of flip-and-accept-if-strictly-better, then replace the incumbent
/// only on strict improvement. Evaluations: 1 + ls_iterations.
pub fn ils_step(
    state: &mut IlsState,
    flip_k: usize,
    problem: &ProblemInstance,
    meter: &Meter,
    rng: &mut SearchRng,
) -> Result<StepOutcome, MeterError> {
    let token = meter.begin()?;
    let mut x = flip_distinct_bits(&state.best, flip_k, rng);
    let mut fx = problem.fitness(&x);
    for _ in 0..state.ls_iterations {
        let candidate = flip_distinct_bits(&x, flip_k, rng);
        let fc = problem.fitness(&candidate);
        if fc > fx {
            x = candidate;
            fx = fc;
        }
    }
    let n_evaluations = 1 + state.ls_iterations;
    let energy = meter.end(token, work_units_for(problem, n_evaluations), rng)?;
    let delta_f = fx - state.best_fitness;
    if fx > state.best_fitness {
        state.best = x;
        state.best_fitness = fx;
    }
    Ok(StepOutcome { delta_f, n_evaluations, energy })
}

/// Solver state for any of the three algorithms.
#[derive(Debug, Clone)]
pub enum SolverState {
    Ga(GaState),
    Pso(PsoState),
    Ils(IlsState),
}

impl SolverState {
    pub fn init(
        algorithm: Algorithm,
        problem: &ProblemInstance,
        params: &SolverParams,
        rng: &mut SearchRng,
    ) -> SolverState {
        match algorithm {
            Algorithm::Ssga => SolverState::Ga(GaState::init(problem, params, rng)),
            Algorithm::Pso => SolverState::Pso(PsoState::init(problem, params, rng)),
            Algorithm::Ils => SolverState::Ils(IlsState::init(problem, params, rng)),
        }
    }

    pub fn best_fitness(&self) -> Fitness {
        match self {
            SolverState::Ga(s) => s.best().fitness,
            SolverState::Pso(s) => s.best_fitness,
            SolverState::Ils(s) => s.best_fitness,
        }
    }

    pub fn best_genotype(&self) -> Bitstring {
        match self {
            SolverState::Ga(s) => s.best().genome.clone(),
            SolverState::Pso(s) => binarize(&s.best_position),
            SolverState::Ils(s) => s.best.clone(),
        }
    }

    pub fn step(
        &mut self,
        variant: OperatorVariant,
        problem: &ProblemInstance,
        meter: &Meter,
        rng: &mut SearchRng,
    ) -> Result<StepOutcome, MeterError> {
        match (self, variant) {
            (SolverState::Ga(s), OperatorVariant::Replace1) => ssga_step(s, 1, problem, meter, rng),
            (SolverState::Ga(s), OperatorVariant::Replace5) => ssga_step(s, 5, problem, meter, rng),
            (SolverState::Pso(s), OperatorVariant::PsoFull) => {
                pso_step(s, true, problem, meter, rng)
            }
            (SolverState::Pso(s), OperatorVariant::PsoLight) => {
                pso_step(s, false, problem, meter, rng)
            }
            (SolverState::Ils(s), OperatorVariant::Ils1) => ils_step(s, 1, problem, meter, rng),
            (SolverState::Ils(s), OperatorVariant::Ils5) => ils_step(s, 5, problem, meter, rng),
            (_, v) => panic!("operator variant {} does not match the solver state", v.name()),
        }
    }
}

/// Per-iteration log entry: cumulative counters, best-so-far, the chosen
/// operator, and a snapshot of every operator's belief state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: u64,
    pub cum_energy_j: f64,
    pub cum_evaluations: u64,
    pub best_fitness: Fitness,
    pub op_index: usize,
    pub stats: Vec<OperatorStats>,
}

/// Full trace of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub trial_index: u64,
    pub trial_seed: RngSeed,
    pub op_names: Vec<&'static str>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_fitness: Fitness,
    pub total_energy_j: f64,
    pub total_evaluations: u64,
    /// KP only: whether the final best solution respects the capacity.
    pub feasible: Option<bool>,
}

/// Runs one trial to budget exhaustion and returns its full trace.
///
/// In `eos` mode the scheduler picks the operator each iteration and its
/// statistics are updated from the measured outcome; in static mode the fixed
/// variant is applied every iteration and the belief state stays untouched.
#[allow(clippy::too_many_arguments)]
pub fn run_solver(
    problem: &ProblemInstance,
    algorithm: Algorithm,
    mode: Mode,
    stop: StopCondition,
    meter_config: &MeterConfig,
    scheduler_config: &SchedulerConfig,
    params: &SolverParams,
    trial_index: u64,
    trial_seed: RngSeed,
) -> Result<RunRecord, MeterError> {
    if let Mode::Static(v) = mode {
        assert_eq!(v.algorithm(), algorithm, "static variant must belong to the algorithm");
    }
    let meter = Meter::new(meter_config)?;
    let mut rng = trial_seed.rng();
    let portfolio = OperatorVariant::portfolio(algorithm);
    let mut state = SolverState::init(algorithm, problem, params, &mut rng);
    let mut scheduler = Scheduler::new(*scheduler_config, portfolio.len());
    let mut budget = Budget::new(match stop {
        StopCondition::EnergyBudgetJ(b) => b,
        StopCondition::EvalBudget(n) => n as f64,
    });
    let mut trajectory = Vec::new();
    let mut cum_energy_j = 0.0;
    let mut cum_evaluations = 0u64;
    let mut iteration = 0u64;
    while !budget.is_exhausted() {
        iteration += 1;
        let op_index = match mode {
            Mode::Eos => scheduler.select(&budget, &mut rng),
            Mode::Static(v) => portfolio.iter().position(|&p| p == v).expect("variant in portfolio"),
        };
        let outcome = state.step(portfolio[op_index], problem, &meter, &mut rng)?;
        if mode == Mode::Eos {
            scheduler.record(op_index, outcome.delta_f, outcome.energy);
        }
        cum_energy_j += outcome.energy.joules();
        cum_evaluations += outcome.n_evaluations;
        budget.debit(match stop {
            StopCondition::EnergyBudgetJ(_) => outcome.energy.joules(),
            StopCondition::EvalBudget(_) => outcome.n_evaluations as f64,
        });
        trajectory.push(TrajectoryPoint {
            iteration,
            cum_energy_j,
            cum_evaluations,
            best_fitness: state.best_fitness(),
            op_index,
            stats: scheduler.stats().to_vec(),
        });
    }
    let best = state.best_genotype();
    let feasible = match problem {
        ProblemInstance::Kp(p) => Some(p.is_feasible(&best)),
        _ => None,
    };
    Ok(RunRecord {
        trial_index,
        trial_seed,
        op_names: portfolio.iter().map(|v| v.name()).collect(),
        trajectory,
        final_fitness: state.best_fitness(),
        total_energy_j: cum_energy_j,
        total_evaluations: cum_evaluations,
        feasible,
    })
}
