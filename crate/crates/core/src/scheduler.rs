//! Improvement-per-joule operator scheduling.
//!
//! Each operator carries an online belief state: EWMA mean/variance of its
//! observed fitness improvements and of the log of its energy cost. Selection
//! draws a stochastic improvement (normal) and energy (log-normal) per
//! operator, scores the ratio, multiplies by a budget-aware penalty
//! `B / (B + E[energy])`, and takes the argmax. Operators never applied
//! before are forced first, one at a time, in random order.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::EnergySample;

/// Online belief state for one operator. `n_samples == 0` exactly when the
/// operator has never been applied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorStats {
    /// EWMA mean of the per-application fitness improvement.
    pub mu_df: f64,
    /// EWMA variance of the fitness improvement.
    pub var_df: f64,
    /// EWMA mean of ln(energy in joules).
    pub mu_ln_e: f64,
    /// EWMA variance of ln(energy).
    pub var_ln_e: f64,
    pub n_samples: u64,
}

impl OperatorStats {
    /// Folds one observation into the EWMA state.
    ///
    /// The first observation seeds the means directly (variances zero) instead
    /// of blending against the zero-initialised state; later observations use
    /// the standard recurrences, with each variance computed against the
    /// already-updated mean.
    pub fn update(&mut self, delta_f: f64, energy: EnergySample, alpha: f64) {
        assert!(delta_f.is_finite(), "improvement must be finite");
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
        let ln_e = energy.joules().ln();
        if self.n_samples == 0 {
            self.mu_df = delta_f;
            self.var_df = 0.0;
            self.mu_ln_e = ln_e;
            self.var_ln_e = 0.0;
        } else {
            self.mu_df = alpha * self.mu_df + (1.0 - alpha) * delta_f;
            self.var_df = alpha * self.var_df + (1.0 - alpha) * (delta_f - self.mu_df).powi(2);
            self.mu_ln_e = alpha * self.mu_ln_e + (1.0 - alpha) * ln_e;
            self.var_ln_e = alpha * self.var_ln_e + (1.0 - alpha) * (ln_e - self.mu_ln_e).powi(2);
        }
        self.n_samples += 1;
    }

    /// Draws a stochastic improvement realization, `N(mu_df, var_df)`.
    /// Implemented as `mu + sqrt(var) * z` so that a shared `z` acts as a
    /// common random number across operators.
    pub fn sample_improvement(&self, rng: &mut impl Rng) -> f64 {
        assert!(self.n_samples >= 1, "operator was never applied");
        if self.var_df == 0.0 {
            return self.mu_df;
        }
        let z: f64 = rng.sample(StandardNormal);
        self.mu_df + self.var_df.sqrt() * z
    }

    /// Draws a stochastic energy realization, `LogNormal(mu_ln_e, var_ln_e)`.
    /// Strictly positive.
    pub fn sample_energy(&self, rng: &mut impl Rng) -> f64 {
        assert!(self.n_samples >= 1, "operator was never applied");
        if self.var_ln_e == 0.0 {
            return self.mu_ln_e.exp();
        }
        let z: f64 = rng.sample(StandardNormal);
        (self.mu_ln_e + self.var_ln_e.sqrt() * z).exp()
    }

    /// Mean of the log-normal energy model: `exp(mu + var/2)`.
    pub fn expected_energy(&self) -> f64 {
        assert!(self.n_samples >= 1, "operator was never applied");
        (self.mu_ln_e + self.var_ln_e / 2.0).exp()
    }

    /// `B / (B + E[energy])`, in (0, 1). Shrinks expensive operators' scores
    /// as the remaining budget runs down.
    pub fn budget_penalty(&self, budget: &Budget) -> f64 {
        let b = budget.remaining();
        assert!(b > 0.0, "penalty requires positive remaining budget");
        b / (b + self.expected_energy())
    }

    /// One Thompson draw of the budget-penalised improvement-per-joule score.
    pub fn priority(&self, budget: &Budget, rng: &mut impl Rng) -> f64 {
        let df = self.sample_improvement(rng);
        let e = self.sample_energy(rng);
        improvement_per_joule(df, e) * self.budget_penalty(budget)
    }
}

/// Sampled improvement-per-joule ratio. Negative improvements stay negative;
/// with every score negative the least-bad operator still wins the argmax.
pub fn improvement_per_joule(delta_f_sample: f64, energy_sample: f64) -> f64 {
    assert!(energy_sample > 0.0, "energy sample must be positive");
    delta_f_sample / energy_sample
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// EWMA smoothing factor, in (0,1).
    pub alpha: f64,
    /// Monte Carlo draws used by [`selection_probability`].
    pub mc_samples: u32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { alpha: 0.9, mc_samples: 1000 }
    }
}

impl SchedulerConfig {
    pub fn with_alpha(alpha: f64) -> SchedulerConfig {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
        SchedulerConfig { alpha, ..SchedulerConfig::default() }
    }
}

/// Remaining/initial stop-condition budget. Denominated in joules for
/// energy-bounded runs and in evaluations for evaluation-bounded ones; the
/// penalty formula is the same either way. May go slightly negative on the
/// final debit: the application that exhausts the budget completes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    remaining: f64,
    initial: f64,
}

impl Budget {
    pub fn new(initial: f64) -> Budget {
        assert!(initial > 0.0 && initial.is_finite(), "budget must be positive");
        Budget { remaining: initial, initial }
    }

    pub fn remaining(&self) -> f64 {
        self.remaining
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn debit(&mut self, amount: f64) {
        assert!(amount >= 0.0, "debit must be nonnegative");
        self.remaining -= amount;
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining <= 0.0
    }

    /// Fraction of the budget consumed so far, clamped to [0, 1].
    pub fn consumed_fraction(&self) -> f64 {
        ((self.initial - self.remaining) / self.initial).clamp(0.0, 1.0)
    }
}

/// The operator scheduler owned by one trial: a belief state per registered
/// operator plus the selection rule.
#[derive(Debug, Clone)]
pub struct Scheduler {
    config: SchedulerConfig,
    stats: Vec<OperatorStats>,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig, n_operators: usize) -> Scheduler {
        assert!(n_operators >= 1, "at least one operator must be registered");
        Scheduler { config, stats: vec![OperatorStats::default(); n_operators] }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn stats(&self) -> &[OperatorStats] {
        &self.stats
    }

    /// Records the outcome of one application of operator `op`.
    pub fn record(&mut self, op: usize, delta_f: f64, energy: EnergySample) {
        self.stats[op].update(delta_f, energy, self.config.alpha);
    }

    /// Picks the next operator: a uniformly random never-applied operator if
    /// any exists, otherwise the priority argmax with uniform tie-breaking.
    pub fn select(&self, budget: &Budget, rng: &mut impl Rng) -> usize {
        assert!(!self.stats.is_empty(), "operator set is empty");
        assert!(budget.remaining() > 0.0, "selection requires remaining budget");
        let unseen: Vec<usize> = (0..self.stats.len())
            .filter(|&i| self.stats[i].n_samples == 0)
            .collect();
        if !unseen.is_empty() {
            return unseen[rng.random_range(0..unseen.len())];
        }
        let priorities: Vec<f64> =
            self.stats.iter().map(|s| s.priority(budget, rng)).collect();
        let best = priorities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> =
            (0..priorities.len()).filter(|&i| priorities[i] == best).collect();
        if ties.len() == 1 {
            ties[0]
        } else {
            ties[rng.random_range(0..ties.len())]
        }
    }
}

/// Monte Carlo estimate of the probability that operator 1 outranks operator 2
/// under independent Thompson draws. Diagnostic only; not on the hot path.
pub fn selection_probability(
    s1: &OperatorStats,
    s2: &OperatorStats,
    budget: &Budget,
    mc_samples: u32,
    rng: &mut impl Rng,
) -> f64 {
    assert!(mc_samples >= 1, "mc_samples must be positive");
    assert!(s1.n_samples >= 1 && s2.n_samples >= 1, "both operators must be sampled");
    let mut wins = 0u32;
    for _ in 0..mc_samples {
        if s1.priority(budget, rng) > s2.priority(budget, rng) {
            wins += 1;
        }
    }
    f64::from(wins) / f64::from(mc_samples)
}
