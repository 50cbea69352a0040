//! Post-hoc statistics over experiment output: saturating-exponential
//! trajectory fits, Mann-Whitney U tests (exact and normal-approximate),
//! operator selection-ratio curves, and per-method summary tables.
//!
//! Everything here is a pure function over in-memory records; the `analyze`
//! driver at the bottom wires those functions to the harness's on-disk CSV
//! and manifest formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::format_sig17;
use crate::harness::{HarnessError, Manifest, MANIFEST_FILE};
use crate::problems::ProblemKind;
use crate::solvers::{Algorithm, Mode, StopCondition};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trial file {path} (line {line}): {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("no experiment manifests found under the input directory")]
    NoRecords,
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

// ---------------------------------------------------------------------------
// Trial CSV reading
// ---------------------------------------------------------------------------

/// Per-operator belief-state snapshot as logged in trial CSVs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsSnapshot {
    pub mu_df: f64,
    pub var_df: f64,
    pub mu_ln_e: f64,
    pub var_ln_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub iteration: u64,
    pub cum_energy_j: f64,
    pub cum_evaluations: u64,
    pub best_fitness: f64,
    pub op_index: usize,
    pub stats: Vec<StatsSnapshot>,
}

/// One trial trace read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub op_names: Vec<String>,
    pub points: Vec<TracePoint>,
}

pub fn read_trial_csv(path: &Path) -> Result<TrialTrace, AnalysisError> {
    let text =
        fs::read_to_string(path).map_err(|e| AnalysisError::Io { path: path.to_path_buf(), source: e })?;
    let malformed = |line: usize, reason: &str| AnalysisError::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 5 || columns[..5] != ["iter", "cum_energy_j", "cum_evals", "best_fitness", "op_id"]
    {
        return Err(malformed(1, "unexpected header"));
    }
    let op_names: Vec<String> = columns[5..]
        .iter()
        .step_by(4)
        .filter_map(|c| c.strip_prefix("mu_df_").map(str::to_string))
        .collect();
    if columns.len() != 5 + 4 * op_names.len() {
        return Err(malformed(1, "per-operator column group is incomplete"));
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(malformed(idx + 1, "wrong field count"));
        }
        let parse_u = |s: &str| s.parse::<u64>().map_err(|_| malformed(idx + 1, "bad integer"));
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| malformed(idx + 1, "bad float"));
        let op_index = op_names
            .iter()
            .position(|n| n == fields[4])
            .ok_or_else(|| malformed(idx + 1, "unknown operator id"))?;
        let mut stats = Vec::with_capacity(op_names.len());
        for group in fields[5..].chunks(4) {
            stats.push(StatsSnapshot {
                mu_df: parse_f(group[0])?,
                var_df: parse_f(group[1])?,
                mu_ln_e: parse_f(group[2])?,
                var_ln_e: parse_f(group[3])?,
            });
        }
        points.push(TracePoint {
            iteration: parse_u(fields[0])?,
            cum_energy_j: parse_f(fields[1])?,
            cum_evaluations: parse_u(fields[2])?,
            best_fitness: parse_f(fields[3])?,
            op_index,
            stats,
        });
    }
    if points.is_empty() {
        return Err(malformed(2, "no trajectory points"));
    }
    Ok(TrialTrace { op_names, points })
}

// ---------------------------------------------------------------------------
// Saturating-exponential trajectory fit
// ---------------------------------------------------------------------------

/// Least-squares fit of `f(E) = f_inf * (1 - A * exp(-k * E / B_max))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub f_inf: f64,
    pub amplitude: f64,
    pub k_rate: f64,
    pub residual_sse: f64,
    pub converged: bool,
}

/// Damped Gauss-Newton with multi-start initialization (`k0` in {1, 5, 20},
/// asymptote seeded from the last point, amplitude from the first). A start
/// converges when the gradient norm of the scale-normalized problem drops to
/// 1e-8 within 200 iterations; the best converged start wins, otherwise the
/// best start overall is returned with `converged = false`.
pub fn fit_saturating_exponential(points: &[(f64, f64)], b_max: f64) -> FitResult {
    assert!(points.len() >= 4, "fit requires at least 4 points");
    assert!(b_max > 0.0 && b_max.is_finite(), "b_max must be positive");
    // Sorting makes the result independent of input ordering.
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = sorted.iter().map(|p| p.0 / b_max).collect();
    let ys_raw: Vec<f64> = sorted.iter().map(|p| p.1).collect();

    let y_min = ys_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if (y_max - y_min).abs() <= 1e-12 * y_max.abs().max(1.0) {
        // Constant data: asymptote is the constant, amplitude pinned to zero,
        // rate unidentifiable.
        let c = ys_raw[0];
        let sse = ys_raw.iter().map(|y| (y - c).powi(2)).sum();
        return FitResult { f_inf: c, amplitude: 0.0, k_rate: 0.0, residual_sse: sse, converged: true };
    }

    let scale = y_max.abs().max(y_min.abs()).max(1e-300);
    let ys: Vec<f64> = ys_raw.iter().map(|y| y / scale).collect();
    let y_first = ys[0];
    let y_last = *ys.last().unwrap();
    let f0 = if y_last.abs() < 1e-9 { 1e-9 } else { y_last };
    let mut a0 = 1.0 - y_first / f0;
    if !a0.is_finite() {
        a0 = 0.5;
    }

    let mut best: Option<(FitResult, bool)> = None;
    for k0 in [1.0, 5.0, 20.0] {
        let (theta, sse, converged) = levenberg_fit(&xs, &ys, [f0, a0, k0]);
        let candidate = FitResult {
            f_inf: theta[0] * scale,
            amplitude: theta[1],
            k_rate: theta[2],
            residual_sse: sse * scale * scale,
            converged,
        };
        let better = match &best {
            None => true,
            Some((cur, cur_conv)) => match (converged, cur_conv) {
                (true, false) => true,
                (false, true) => false,
                _ => candidate.residual_sse < cur.residual_sse,
            },
        };
        if better {
            best = Some((candidate, converged));
        }
    }
    best.expect("at least one start ran").0
}

fn model_residuals(xs: &[f64], ys: &[f64], theta: [f64; 3], out: &mut [f64]) -> f64 {
    let [f_inf, a, k] = theta;
    let mut sse = 0.0;
    for i in 0..xs.len() {
        let u = (-k * xs[i]).exp();
        let r = f_inf * (1.0 - a * u) - ys[i];
        out[i] = r;
        sse += r * r;
    }
    sse
}

fn levenberg_fit(xs: &[f64], ys: &[f64], start: [f64; 3]) -> ([f64; 3], f64, bool) {
    let n = xs.len();
    let mut theta = start;
    let mut residuals = vec![0.0; n];
    let mut sse = model_residuals(xs, ys, theta, &mut residuals);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..200 {
        let [f_inf, a, k] = theta;
        let mut grad = [0.0f64; 3];
        let mut hess = [[0.0f64; 3]; 3];
        for i in 0..n {
            let u = (-k * xs[i]).exp();
            let j = [1.0 - a * u, -f_inf * u, f_inf * a * xs[i] * u];
            for p in 0..3 {
                grad[p] += j[p] * residuals[i];
                for q in 0..3 {
                    hess[p][q] += j[p] * j[q];
                }
            }
        }
        let grad_norm = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
        if grad_norm <= 1e-8 {
            converged = true;
            break;
        }
        let mut damped = hess;
        for (p, row) in damped.iter_mut().enumerate() {
            row[p] += lambda;
        }
        let step = solve3(damped, [-grad[0], -grad[1], -grad[2]]);
        let accepted = step.is_some_and(|delta| {
            let trial = [theta[0] + delta[0], theta[1] + delta[1], theta[2] + delta[2]];
            let mut trial_res = vec![0.0; n];
            let trial_sse = model_residuals(xs, ys, trial, &mut trial_res);
            if trial_sse.is_finite() && trial_sse < sse {
                theta = trial;
                residuals = trial_res;
                sse = trial_sse;
                true
            } else {
                false
            }
        });
        if accepted {
            lambda = (lambda / 3.0).max(1e-12);
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (theta, sse, converged)
}

/// Gaussian elimination with partial pivoting for a 3x3 system.
#[allow(clippy::needless_range_loop)] // pivot row and target row are both indexed
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let factor = m[row][col] / m[col][col];
            for c in col..3 {
                m[row][c] -= factor * m[col][c];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for c in row + 1..3 {
            acc -= m[row][c] * x[c];
        }
        x[row] = acc / m[row][row];
        if !x[row].is_finite() {
            return None;
        }
    }
    Some(x)
}

/// Resamples best-so-far trajectories onto a common grid over `[0, b_max]`
/// (previous-value interpolation: best-so-far is a step function) and averages
/// across trials point by point.
pub fn resample_mean_trajectory(
    traces: &[TrialTrace],
    b_max: f64,
    n_grid: usize,
) -> Vec<(f64, f64)> {
    assert!(!traces.is_empty(), "no traces to resample");
    assert!(n_grid >= 2);
    let mut grid = Vec::with_capacity(n_grid);
    for g in 0..n_grid {
        let e = b_max * g as f64 / (n_grid - 1) as f64;
        let mut acc = 0.0;
        for trace in traces {
            let mut value = trace.points[0].best_fitness;
            for point in &trace.points {
                if point.cum_energy_j <= e {
                    value = point.best_fitness;
                } else {
                    break;
                }
            }
            acc += value;
        }
        grid.push((e, acc / traces.len() as f64));
    }
    grid
}

// ---------------------------------------------------------------------------
// Mann-Whitney U test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub u_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UTestMethod {
    /// Full null distribution by counting rank subsets. Cheap for
    /// `n1 * n2 <= 400`.
    Exact,
    /// Normal approximation with midrank tie correction and continuity
    /// correction.
    NormalApprox,
}

/// Two-sided Mann-Whitney U test. Uses the exact null distribution when
/// `n1 * n2 <= 400` and the corrected normal approximation otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> TestResult {
    let method = if a.len() * b.len() <= 400 { UTestMethod::Exact } else { UTestMethod::NormalApprox };
    mann_whitney_u_with(a, b, method)
}

pub fn mann_whitney_u_with(a: &[f64], b: &[f64], method: UTestMethod) -> TestResult {
    assert!(!a.is_empty() && !b.is_empty(), "samples must be non-empty");
    let (n1, n2) = (a.len(), b.len());
    let u1 = u_statistic(a, b);
    let p = match method {
        UTestMethod::Exact => exact_two_sided_p(u1, n1, n2),
        UTestMethod::NormalApprox => normal_two_sided_p(u1, a, b),
    };
    TestResult { u_statistic: u1, p_value: p.clamp(0.0, 1.0), n1, n2 }
}

/// U statistic of the first sample, from midranks of the pooled data.
fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based positions i+1 ..= j share the midrank (i + j + 1) / 2.
        let midrank = (i + j + 1) as f64 / 2.0;
        for entry in &pooled[i..j] {
            if entry.1 {
                rank_sum += midrank;
            }
        }
        i = j;
    }
    rank_sum - (a.len() * (a.len() + 1)) as f64 / 2.0
}

/// Exact two-sided p-value: `min(1, 2 * P(U <= min(u, n1*n2 - u)))` under the
/// no-ties null distribution of U, computed by bounded subset-sum counting.
fn exact_two_sided_p(u1: f64, n1: usize, n2: usize) -> f64 {
    let n = n1 + n2;
    let min_sum = n1 * (n1 + 1) / 2;
    let max_sum = n1 * (2 * n - n1 + 1) / 2;
    // ways[j][s]: subsets of {1..=v} of size j with rank sum s.
    let mut ways = vec![vec![0u64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1;
    for v in 1..=n {
        for j in (1..=n1).rev() {
            for s in (v..=max_sum).rev() {
                let from = ways[j - 1][s - v];
                if from > 0 {
                    ways[j][s] += from;
                }
            }
        }
    }
    let total: u64 = ways[n1].iter().sum();
    let u_low = u1.min(n1 as f64 * n2 as f64 - u1);
    let mut count = 0u64;
    for (s, &w) in ways[n1].iter().enumerate().skip(min_sum) {
        if (s - min_sum) as f64 <= u_low {
            count += w;
        }
    }
    (2.0 * count as f64 / total as f64).min(1.0)
}

fn normal_two_sided_p(u1: f64, a: &[f64], b: &[f64]) -> f64 {
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let n = n1 + n2;
    let mut pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let mean_u = n1 * n2 / 2.0;
    let var_u = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var_u <= 0.0 {
        return 1.0; // every observation tied
    }
    let sd = var_u.sqrt();
    let z = if u1 > mean_u {
        (u1 - mean_u - 0.5) / sd
    } else if u1 < mean_u {
        (u1 - mean_u + 0.5) / sd
    } else {
        0.0
    };
    2.0 * (1.0 - standard_normal_cdf(z.abs()))
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (absolute error below 1.5e-7).
pub fn standard_normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = 1.0 - poly * (-x * x).exp();
    0.5 * (1.0 + sign * erf)
}

// ---------------------------------------------------------------------------
// Selection-ratio curves
// ---------------------------------------------------------------------------

/// One operator selection with the budget fraction already consumed when it
/// was made.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionEvent {
    pub op_index: usize,
    pub budget_fraction: f64,
}

/// Selection fractions per operator within one budget-percentage bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioBin {
    pub lo_fraction: f64,
    pub hi_fraction: f64,
    pub fractions: Vec<f64>,
    pub selections: u64,
}

/// Extracts selection events from a trace: for each iteration the budget
/// fraction consumed before the step, against the configured stop condition.
pub fn selection_events(trace: &TrialTrace, stop: StopCondition) -> Vec<SelectionEvent> {
    let budget = match stop {
        StopCondition::EnergyBudgetJ(b) => b,
        StopCondition::EvalBudget(n) => n as f64,
    };
    let mut events = Vec::with_capacity(trace.points.len());
    let mut consumed_before = 0.0;
    for point in &trace.points {
        events.push(SelectionEvent {
            op_index: point.op_index,
            budget_fraction: (consumed_before / budget).clamp(0.0, 1.0),
        });
        consumed_before = match stop {
            StopCondition::EnergyBudgetJ(_) => point.cum_energy_j,
            StopCondition::EvalBudget(_) => point.cum_evaluations as f64,
        };
    }
    events
}

/// Pools selections across trials into `n_bins` budget-percentage bins and
/// returns the per-operator fraction in each non-empty bin. Fractions in a
/// bin sum to one.
pub fn selection_ratio_curve(
    trials: &[Vec<SelectionEvent>],
    n_ops: usize,
    n_bins: usize,
) -> Vec<RatioBin> {
    assert!(n_bins >= 1, "need at least one bin");
    assert!(n_ops >= 1);
    assert!(
        trials.iter().any(|t| !t.is_empty()),
        "selection ratio curve requires at least one selection event"
    );
    let mut counts = vec![vec![0u64; n_ops]; n_bins];
    for trial in trials {
        for event in trial {
            let bin = ((event.budget_fraction * n_bins as f64) as usize).min(n_bins - 1);
            counts[bin][event.op_index] += 1;
        }
    }
    let mut bins = Vec::new();
    for (b, ops) in counts.iter().enumerate() {
        let total: u64 = ops.iter().sum();
        if total == 0 {
            continue;
        }
        bins.push(RatioBin {
            lo_fraction: b as f64 / n_bins as f64,
            hi_fraction: (b + 1) as f64 / n_bins as f64,
            fractions: ops.iter().map(|&c| c as f64 / total as f64).collect(),
            selections: total,
        });
    }
    bins
}

// ---------------------------------------------------------------------------
// Method summaries
// ---------------------------------------------------------------------------

/// Final-outcome samples for one method (one experiment).
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRecords {
    pub problem: ProblemKind,
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub label: String,
    pub final_fitness: Vec<f64>,
    pub total_energy_j: Vec<f64>,
    pub feasible: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub problem: ProblemKind,
    pub algorithm: Algorithm,
    pub method: String,
    pub trials: usize,
    /// KP only.
    pub feasible_trials: Option<usize>,
    pub mean_final_fitness: f64,
    pub stdev_final_fitness: f64,
    pub mean_total_energy_j: f64,
    pub stdev_total_energy_j: f64,
    /// Trial index with the median final fitness (lower median).
    pub median_trial: u64,
    /// Two-sided p-value of this method's final fitness against the adaptive
    /// method of the same problem/algorithm group; empty on that row itself.
    pub p_fitness_vs_eos: Option<f64>,
    pub p_energy_vs_eos: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); zero for a single trial.
fn stdev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn median_index(xs: &[f64]) -> u64 {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    order[(xs.len() - 1) / 2] as u64
}

/// Builds the per-method summary table. Methods sharing a problem/algorithm
/// group are tested against that group's adaptive (`eos`) method when present.
pub fn summarize(methods: &[MethodRecords]) -> Vec<SummaryRow> {
    assert!(!methods.is_empty(), "summarize requires at least one method");
    let mut eos_by_group: BTreeMap<(String, String), &MethodRecords> = BTreeMap::new();
    for m in methods {
        if m.mode == Mode::Eos {
            eos_by_group.insert((m.problem.to_string(), m.algorithm.to_string()), m);
        }
    }
    methods
        .iter()
        .map(|m| {
            assert!(!m.final_fitness.is_empty(), "method {} has no trials", m.label);
            let reference = eos_by_group.get(&(m.problem.to_string(), m.algorithm.to_string()));
            let (p_fit, p_energy) = match reference {
                Some(eos) if m.mode != Mode::Eos => (
                    Some(mann_whitney_u(&m.final_fitness, &eos.final_fitness).p_value),
                    Some(mann_whitney_u(&m.total_energy_j, &eos.total_energy_j).p_value),
                ),
                _ => (None, None),
            };
            let feasible_trials = if m.problem == ProblemKind::Kp {
                Some(m.feasible.iter().filter(|f| **f == Some(true)).count())
            } else {
                None
            };
            SummaryRow {
                problem: m.problem,
                algorithm: m.algorithm,
                method: m.label.clone(),
                trials: m.final_fitness.len(),
                feasible_trials,
                mean_final_fitness: mean(&m.final_fitness),
                stdev_final_fitness: stdev(&m.final_fitness),
                mean_total_energy_j: mean(&m.total_energy_j),
                stdev_total_energy_j: stdev(&m.total_energy_j),
                median_trial: median_index(&m.final_fitness),
                p_fitness_vs_eos: p_fit,
                p_energy_vs_eos: p_energy,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Directory-level drivers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisKind {
    Summary,
    Fits,
    Ratios,
}

/// Finds every experiment manifest under `dir` (depth-first, sorted paths).
pub fn find_manifests(dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        let direct = current.join(MANIFEST_FILE);
        if direct.is_file() {
            found.push(direct);
        }
        let entries = match fs::read_dir(&current) {
            Ok(entries) => entries,
            Err(e) if found.is_empty() && current == dir => {
                return Err(AnalysisError::Io { path: current, source: e })
            }
            Err(_) => continue,
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    found.dedup();
    Ok(found)
}

fn method_label(manifest: &Manifest) -> String {
    format!("{}:{}", manifest.config.algorithm, manifest.config.mode)
}

fn method_records(manifest: &Manifest) -> MethodRecords {
    MethodRecords {
        problem: manifest.config.problem.kind(),
        algorithm: manifest.config.algorithm,
        mode: manifest.config.mode,
        label: method_label(manifest),
        final_fitness: manifest.trials.iter().map(|t| t.final_fitness).collect(),
        total_energy_j: manifest.trials.iter().map(|t| t.total_energy_j).collect(),
        feasible: manifest.trials.iter().map(|t| t.feasible).collect(),
    }
}

fn load_traces(manifest_path: &Path, manifest: &Manifest) -> Result<Vec<TrialTrace>, AnalysisError> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.trials.iter().map(|t| read_trial_csv(&dir.join(&t.file))).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(format_sig17).unwrap_or_default()
}

/// Runs one analysis over every experiment found under `in_dir` and writes
/// `summary.csv`, `fits.csv`, or `ratios.csv` into `out_dir`. Returns the
/// written path.
pub fn analyze(in_dir: &Path, what: AnalysisKind, out_dir: &Path) -> Result<PathBuf, AnalysisError> {
    let manifest_paths = find_manifests(in_dir)?;
    if manifest_paths.is_empty() {
        return Err(AnalysisError::NoRecords);
    }
    let manifests: Vec<(PathBuf, Manifest)> = manifest_paths
        .into_iter()
        .map(|p| Manifest::load(&p).map(|m| (p, m)))
        .collect::<Result<_, _>>()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| AnalysisError::Io { path: out_dir.to_path_buf(), source: e })?;

    let (file, contents) = match what {
        AnalysisKind::Summary => {
            let methods: Vec<MethodRecords> =
                manifests.iter().map(|(_, m)| method_records(m)).collect();
            let rows = summarize(&methods);
            let mut out = String::from(
                "problem,algorithm,method,trials,feasible_trials,mean_final_fitness,\
                 stdev_final_fitness,mean_total_energy_j,stdev_total_energy_j,median_trial,\
                 p_fitness_vs_eos,p_energy_vs_eos\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.problem,
                    r.algorithm,
                    r.method,
                    r.trials,
                    r.feasible_trials.map(|f| f.to_string()).unwrap_or_default(),
                    format_sig17(r.mean_final_fitness),
                    format_sig17(r.stdev_final_fitness),
                    format_sig17(r.mean_total_energy_j),
                    format_sig17(r.stdev_total_energy_j),
                    r.median_trial,
                    fmt_opt(r.p_fitness_vs_eos),
                    fmt_opt(r.p_energy_vs_eos),
                ));
            }
            ("summary.csv", out)
        }
        AnalysisKind::Fits => {
            let mut out = String::from(
                "problem,algorithm,method,f_inf,amplitude,k_rate,residual_sse,converged,\
                 n_points,b_max_j\n",
            );
            for (path, manifest) in &manifests {
                let traces = load_traces(path, manifest)?;
                let b_max = match manifest.config.stop {
                    StopCondition::EnergyBudgetJ(b) => b,
                    StopCondition::EvalBudget(_) => manifest
                        .trials
                        .iter()
                        .map(|t| t.total_energy_j)
                        .fold(0.0, f64::max),
                };
                let grid = resample_mean_trajectory(&traces, b_max, 200);
                let fit = fit_saturating_exponential(&grid, b_max);
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    manifest.config.problem.kind(),
                    manifest.config.algorithm,
                    method_label(manifest),
                    format_sig17(fit.f_inf),
                    format_sig17(fit.amplitude),
                    format_sig17(fit.k_rate),
                    format_sig17(fit.residual_sse),
                    fit.converged,
                    grid.len(),
                    format_sig17(b_max),
                ));
            }
            ("fits.csv", out)
        }
        AnalysisKind::Ratios => {
            let mut out = String::from(
                "problem,algorithm,method,bin_index,bin_lo_pct,bin_hi_pct,operator,fraction,\
                 selections\n",
            );
            for (path, manifest) in &manifests {
                let traces = load_traces(path, manifest)?;
                let events: Vec<Vec<SelectionEvent>> = traces
                    .iter()
                    .map(|t| selection_events(t, manifest.config.stop))
                    .collect();
                let bins = selection_ratio_curve(&events, manifest.operators.len(), 20);
                for (b, bin) in bins.iter().enumerate() {
                    for (op, fraction) in manifest.operators.iter().zip(&bin.fractions) {
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{},{},{}\n",
                            manifest.config.problem.kind(),
                            manifest.config.algorithm,
                            method_label(manifest),
                            b,
                            format_sig17(bin.lo_fraction * 100.0),
                            format_sig17(bin.hi_fraction * 100.0),
                            op,
                            format_sig17(*fraction),
                            bin.selections,
                        ));
                    }
                }
            }
            ("ratios.csv", out)
        }
    };
    let path = out_dir.join(file);
    fs::write(&path, contents)
        .map_err(|e| AnalysisError::Io { path: path.clone(), source: e })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::RngSeed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn model(f_inf: f64, a: f64, k: f64, x: f64) -> f64 {
        f_inf * (1.0 - a * (-k * x).exp())
    }

    fn synthetic_points(f_inf: f64, a: f64, k: f64, b_max: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let e = b_max * i as f64 / (n - 1) as f64;
                (e, model(f_inf, a, k, e / b_max))
            })
            .collect()
    }

    #[test]
    fn fit_recovers_noise_free_parameters() {
        let points = synthetic_points(10.0, 0.5, 5.0, 1000.0, 50);
        let fit = fit_saturating_exponential(&points, 1000.0);
        assert!(fit.converged);
        assert!((fit.f_inf - 10.0).abs() / 10.0 < 1e-6, "f_inf {}", fit.f_inf);
        assert!((fit.amplitude - 0.5).abs() / 0.5 < 1e-6, "A {}", fit.amplitude);
        assert!((fit.k_rate - 5.0).abs() / 5.0 < 1e-6, "k {}", fit.k_rate);
    }

    #[test]
    fn fit_constant_data_pins_amplitude() {
        let points: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 10.0, 3.25)).collect();
        let fit = fit_saturating_exponential(&points, 100.0);
        assert!(fit.converged);
        assert_eq!(fit.f_inf, 3.25);
        assert_eq!(fit.amplitude, 0.0);
        assert_eq!(fit.residual_sse, 0.0);
    }

    #[test]
    fn fit_with_noise_recovers_within_five_percent() {
        let mut rng = RngSeed(42).rng();
        let (f_inf, a, k, b_max) = (10.0, 0.5, 5.0, 1000.0);
        let noise_sd = 0.01 * f_inf;
        let points: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let e = b_max * i as f64 / 199.0;
                let z: f64 = rng.sample(StandardNormal);
                (e, model(f_inf, a, k, e / b_max) + noise_sd * z)
            })
            .collect();
        let fit = fit_saturating_exponential(&points, b_max);
        assert!((fit.f_inf - f_inf).abs() / f_inf < 0.05);
        assert!((fit.amplitude - a).abs() / a < 0.05);
        assert!((fit.k_rate - k).abs() / k < 0.05);
        // Residual stays within twice the injected noise energy.
        assert!(fit.residual_sse < noise_sd * noise_sd * 200.0 * 2.0);
    }

    #[test]
    fn fit_is_invariant_under_point_reordering() {
        let mut points = synthetic_points(7.0, 0.4, 3.0, 500.0, 40);
        let fit_sorted = fit_saturating_exponential(&points, 500.0);
        points.reverse();
        points.swap(3, 17);
        let fit_shuffled = fit_saturating_exponential(&points, 500.0);
        assert_eq!(fit_sorted, fit_shuffled);
    }

    #[test]
    #[should_panic(expected = "at least 4 points")]
    fn fit_requires_four_points() {
        fit_saturating_exponential(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)], 10.0);
    }

    #[test]
    fn u_test_identical_samples_give_p_one() {
        let a = vec![1.0, 2.0, 2.0, 5.5];
        let result = mann_whitney_u(&a, &a);
        assert_eq!(result.p_value, 1.0);
        assert_eq!(result.u_statistic, 8.0);
    }

    #[test]
    fn u_test_exact_enumeration_example() {
        let result = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(result.u_statistic, 0.0);
        assert!((result.p_value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn u_statistic_complement_identity() {
        let mut rng = RngSeed(3).rng();
        for _ in 0..200 {
            let n1 = rng.random_range(1..12);
            let n2 = rng.random_range(1..12);
            // Coarse grid forces ties.
            let a: Vec<f64> = (0..n1).map(|_| f64::from(rng.random_range(0..6))).collect();
            let b: Vec<f64> = (0..n2).map(|_| f64::from(rng.random_range(0..6))).collect();
            let u_ab = mann_whitney_u(&a, &b).u_statistic;
            let u_ba = mann_whitney_u(&b, &a).u_statistic;
            assert_eq!(u_ab + u_ba, (n1 * n2) as f64);
        }
    }

    #[test]
    fn exact_and_normal_methods_agree_at_moderate_sizes() {
        let mut rng = RngSeed(9).rng();
        for _ in 0..100 {
            let a: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.random::<f64>() + 0.1).collect();
            let exact = mann_whitney_u_with(&a, &b, UTestMethod::Exact).p_value;
            let approx = mann_whitney_u_with(&a, &b, UTestMethod::NormalApprox).p_value;
            assert!(
                (exact - approx).abs() <= 0.01,
                "exact {exact} vs approx {approx}"
            );
        }
    }

    #[test]
    fn u_test_null_p_values_are_uniform() {
        // 400 null tests at n1 = n2 = 100; the empirical p-value CDF must stay
        // within the 1% Kolmogorov-Smirnov band around uniform.
        let mut rng = RngSeed(31).rng();
        let n_sim = 400;
        let mut p_values: Vec<f64> = (0..n_sim)
            .map(|_| {
                let a: Vec<f64> = (0..100).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let b: Vec<f64> = (0..100).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                mann_whitney_u(&a, &b).p_value
            })
            .collect();
        p_values.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (i, p) in p_values.iter().enumerate() {
            let ecdf_hi = (i + 1) as f64 / n_sim as f64;
            let ecdf_lo = i as f64 / n_sim as f64;
            d = d.max((ecdf_hi - p).abs()).max((p - ecdf_lo).abs());
        }
        let critical_1pct = 1.63 / (n_sim as f64).sqrt();
        assert!(d < critical_1pct, "KS statistic {d} exceeds {critical_1pct}");
    }

    #[test]
    #[should_panic(expected = "non-empty")]
    fn u_test_rejects_empty_sample() {
        mann_whitney_u(&[], &[1.0]);
    }

    #[test]
    fn ratio_curve_static_records_are_pure() {
        let trials: Vec<Vec<SelectionEvent>> = (0..5)
            .map(|_| {
                (0..100)
                    .map(|i| SelectionEvent { op_index: 0, budget_fraction: i as f64 / 100.0 })
                    .collect()
            })
            .collect();
        let bins = selection_ratio_curve(&trials, 2, 10);
        assert_eq!(bins.len(), 10);
        for bin in bins {
            assert_eq!(bin.fractions, vec![1.0, 0.0]);
        }
    }

    #[test]
    fn ratio_curve_alternating_operators_split_evenly() {
        let trials: Vec<Vec<SelectionEvent>> = vec![(0..200)
            .map(|i| SelectionEvent { op_index: i % 2, budget_fraction: i as f64 / 200.0 })
            .collect()];
        let bins = selection_ratio_curve(&trials, 2, 10);
        for bin in bins {
            assert!((bin.fractions[0] - 0.5).abs() < 1e-12);
            assert!((bin.fractions[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_curve_fractions_sum_to_one() {
        let mut rng = RngSeed(77).rng();
        let trials: Vec<Vec<SelectionEvent>> = (0..10)
            .map(|_| {
                (0..50)
                    .map(|_| SelectionEvent {
                        op_index: rng.random_range(0..3),
                        budget_fraction: rng.random(),
                    })
                    .collect()
            })
            .collect();
        for bin in selection_ratio_curve(&trials, 3, 17) {
            let total: f64 = bin.fractions.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "at least one selection event")]
    fn ratio_curve_rejects_empty_records() {
        selection_ratio_curve(&[vec![]], 2, 10);
    }

    #[test]
    fn summarize_matches_hand_arithmetic() {
        let eos = MethodRecords {
            problem: ProblemKind::Nk,
            algorithm: Algorithm::Ils,
            mode: Mode::Eos,
            label: "ils:eos".into(),
            final_fitness: vec![0.5, 0.7, 0.6],
            total_energy_j: vec![10.0, 12.0, 11.0],
            feasible: vec![None, None, None],
        };
        let baseline = MethodRecords {
            mode: Mode::Static(crate::solvers::OperatorVariant::Ils1),
            label: "ils:static:ils1".into(),
            final_fitness: vec![0.4, 0.6, 0.5],
            ..eos.clone()
        };
        let rows = summarize(&[eos, baseline]);
        assert_eq!(rows[0].p_fitness_vs_eos, None);
        assert!((rows[0].mean_final_fitness - 0.6).abs() < 1e-15);
        assert!((rows[0].stdev_final_fitness - 0.1).abs() < 1e-12);
        assert_eq!(rows[0].median_trial, 2); // 0.6 is the median value
        assert!((rows[1].mean_final_fitness - 0.5).abs() < 1e-15);
        assert!(rows[1].p_fitness_vs_eos.is_some());
        // Energy samples are identical multisets: exact two-sided p of 1.
        assert_eq!(rows[1].p_energy_vs_eos, Some(1.0));
    }

    #[test]
    fn summarize_single_trial_has_zero_stdev() {
        let m = MethodRecords {
            problem: ProblemKind::Kp,
            algorithm: Algorithm::Ssga,
            mode: Mode::Eos,
            label: "ssga:eos".into(),
            final_fitness: vec![5.0],
            total_energy_j: vec![1.0],
            feasible: vec![Some(true)],
        };
        let rows = summarize(&[m]);
        assert_eq!(rows[0].stdev_final_fitness, 0.0);
        assert_eq!(rows[0].feasible_trials, Some(1));
    }

    #[test]
    fn resample_uses_previous_value_interpolation() {
        let trace = TrialTrace {
            op_names: vec!["a".into()],
            points: vec![
                TracePoint {
                    iteration: 1,
                    cum_energy_j: 2.0,
                    cum_evaluations: 1,
                    best_fitness: 1.0,
                    op_index: 0,
                    stats: vec![],
                },
                TracePoint {
                    iteration: 2,
                    cum_energy_j: 6.0,
                    cum_evaluations: 2,
                    best_fitness: 4.0,
                    op_index: 0,
                    stats: vec![],
                },
            ],
        };
        let grid = resample_mean_trajectory(&[trace], 10.0, 6);
        // Grid energies: 0, 2, 4, 6, 8, 10.
        let values: Vec<f64> = grid.iter().map(|p| p.1).collect();
        assert_eq!(values, vec![1.0, 1.0, 1.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-9);
        assert!((standard_normal_cdf(1.959_963_985) - 0.975).abs() < 1e-6);
        assert!((standard_normal_cdf(-1.959_963_985) - 0.025).abs() < 1e-6);
    }
}
