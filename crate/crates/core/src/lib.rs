//! Energy-aware metaheuristic search.
//!
//! A framework for running steady-state GA, PSO, and ILS under fixed energy
//! budgets. Each algorithm exposes two operator variants; an online scheduler
//! learns each operator's fitness improvement and energy cost and picks the
//! one with the best expected improvement per joule, discounted by the
//! remaining budget. Energy comes either from hardware RAPL counters or from
//! a deterministic simulated meter, which makes whole experiments exactly
//! reproducible.
//!
//! Modules:
//! - [`bits`]: genotypes, fitness, seeding.
//! - [`energy`]: RAPL and simulated meters.
//! - [`scheduler`]: per-operator belief state and the selection rule.
//! - [`problems`]: knapsack, NK landscapes, error-correcting codes.
//! - [`solvers`]: the three algorithms and the budgeted run loop.
//! - [`harness`]: multi-trial experiments, profiling, CSV/JSON output.
//! - [`analysis`]: trajectory fits, rank tests, selection-ratio curves.

pub mod analysis;
pub mod bits;
pub mod energy;
pub mod harness;
pub mod problems;
pub mod scheduler;
pub mod solvers;

/// Formats a float with 17 significant digits, enough for exact f64
/// round-trips in CSV output.
pub(crate) fn format_sig17(value: f64) -> String {
    format!("{value:.16e}")
}
