//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test -p eos-core --test acceptance -- --nocapture` to see
//! the per-criterion report. The statistical criteria (7, 8) run the full
//! desk-scale comparison on a seeded NK instance with the simulated meter.

use std::fs;

use rayon::prelude::*;

use eos_core::analysis::{
    fit_saturating_exponential, mann_whitney_u, mann_whitney_u_with, UTestMethod,
};
use eos_core::bits::{Bitstring, RngSeed};
use eos_core::energy::{rapl_counter_delta, MeterConfig, MeterKind};
use eos_core::harness::{run_experiment, ExperimentConfig, Manifest, ProblemSpec, MANIFEST_FILE};
use eos_core::problems::{EccInstance, KpInstance, NkInstance, ProblemInstance};
use eos_core::scheduler::{Budget, OperatorStats, Scheduler, SchedulerConfig};
use eos_core::solvers::{
    run_solver, Algorithm, Mode, OperatorVariant, RunRecord, SolverParams, StopCondition,
};

use rand::Rng;
use rand_distr::StandardNormal;

fn pass(criterion: u32, message: &str) {
    println!("criterion {criterion:02}: PASS - {message}");
}

// ---------------------------------------------------------------------------
// Independent fitness oracles (kept free of the library's evaluation paths)
// ---------------------------------------------------------------------------

fn kp_oracle(inst: &KpInstance, x: &Bitstring) -> f64 {
    let mut profit: u64 = 0;
    let mut weight: u64 = 0;
    for i in 0..inst.n {
        if x.get(i) {
            profit += inst.profits[i];
            weight += inst.weights[i];
        }
    }
    let mut rho = f64::NEG_INFINITY;
    for i in 0..inst.n {
        rho = rho.max(inst.profits[i] as f64 / inst.weights[i] as f64);
    }
    let over = if weight > inst.capacity { (weight - inst.capacity) as f64 } else { 0.0 };
    profit as f64 - inst.n as f64 * rho * over
}

fn nk_oracle(inst: &NkInstance, x: &Bitstring) -> f64 {
    let mut total = 0.0;
    for i in 0..inst.n {
        let mut bits = vec![x.get(i)];
        bits.extend(inst.neighborhoods[i].iter().map(|&j| x.get(j)));
        let mut idx = 0usize;
        for b in bits {
            idx = idx * 2 + usize::from(b);
        }
        total += inst.tables[i][idx];
    }
    total / inst.n as f64
}

fn ecc_oracle(m: usize, n: usize, x: &Bitstring) -> f64 {
    let mut denom = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mut d = 0usize;
            for c in 0..n {
                if x.get(i * n + c) != x.get(j * n + c) {
                    d += 1;
                }
            }
            if d == 0 {
                return 0.0;
            }
            denom += 1.0 / ((d * d) as f64);
        }
    }
    1.0 / denom
}

fn bitstring_from_index(value: usize, len: usize) -> Bitstring {
    Bitstring::from_bits((0..len).map(|i| (value >> i) & 1 == 1).collect())
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_scheduler_math_exact() {
    let tol = 1e-12;
    // EWMA update from a zeroed-but-seen state.
    let mut s = OperatorStats { n_samples: 1, ..OperatorStats::default() };
    s.update(10.0, eos_core::energy::EnergySample::new(1.0), 0.9);
    assert!((s.mu_df - 1.0).abs() < tol);
    assert!((s.var_df - 8.1).abs() < tol);
    assert!(s.mu_ln_e.abs() < tol && s.var_ln_e.abs() < tol);

    // Ratio.
    assert!((eos_core::scheduler::improvement_per_joule(2.0, 4.0) - 0.5).abs() < tol);
    assert!((eos_core::scheduler::improvement_per_joule(-1.0, 2.0) + 0.5).abs() < tol);

    // Expected-energy identity exp(mu + var/2).
    let e = OperatorStats { mu_ln_e: 0.0, var_ln_e: 2.0, n_samples: 1, ..Default::default() };
    assert!((e.expected_energy() - std::f64::consts::E).abs() < tol);
    let e3 = OperatorStats { mu_ln_e: 3.0f64.ln(), n_samples: 1, ..Default::default() };
    assert!((e3.expected_energy() - 3.0).abs() < tol * 3.0);

    // Budget penalty B / (B + E[energy]).
    let unit = OperatorStats { n_samples: 1, ..Default::default() };
    assert!((unit.budget_penalty(&Budget::new(1.0)) - 0.5).abs() < tol);
    assert!((unit.budget_penalty(&Budget::new(3.0)) - 0.75).abs() < tol);
    pass(1, "EWMA, ratio, expected energy, and penalty match hand values to 1e-12");
}

#[test]
fn acceptance_02_thompson_dominance() {
    // Post-exploration beliefs: equal energy statistics, strongly separated
    // improvements, near-degenerate variances.
    let beliefs = |mu_df: f64| OperatorStats {
        mu_df,
        var_df: 1e-6,
        mu_ln_e: 0.0,
        var_ln_e: 1e-6,
        n_samples: 1,
    };
    let a = beliefs(1.0);
    let b = beliefs(0.1);
    let budget = Budget::new(10.0);
    let mut rng = RngSeed(1234).rng();
    let mut wins_a = 0u32;
    let n = 10_000;
    for _ in 0..n {
        let pa = a.priority(&budget, &mut rng);
        let pb = b.priority(&budget, &mut rng);
        if pa > pb {
            wins_a += 1;
        }
    }
    let ratio = f64::from(wins_a) / f64::from(n);
    assert!(ratio >= 0.99, "dominant operator won only {ratio}");
    // And through the full selection rule.
    let mut sched = Scheduler::new(SchedulerConfig::default(), 2);
    sched.record(0, 1.0, eos_core::energy::EnergySample::new(1.0));
    sched.record(1, 0.1, eos_core::energy::EnergySample::new(1.0));
    let mut selections_a = 0u32;
    for _ in 0..n {
        if sched.select(&budget, &mut rng) == 0 {
            selections_a += 1;
        }
    }
    let sel_ratio = f64::from(selections_a) / f64::from(n);
    assert!(sel_ratio >= 0.99, "selection rule picked the dominant operator only {sel_ratio}");
    pass(2, "dominant operator selected in >= 99% of 10^4 draws");
}

#[test]
fn acceptance_03_forced_exploration() {
    let problem = ProblemInstance::Nk(NkInstance::generate(10, 2, RngSeed(3)));
    let params = SolverParams { pop_size: 6, ls_iterations: 2, ..SolverParams::default() };
    for seed in 0..1000u64 {
        let record = run_solver(
            &problem,
            Algorithm::Ils,
            Mode::Eos,
            StopCondition::EvalBudget(6),
            &MeterConfig::simulated(),
            &SchedulerConfig::default(),
            &params,
            seed,
            RngSeed(9000).for_trial(seed),
        )
        .unwrap();
        let ops: Vec<usize> = record.trajectory.iter().take(2).map(|p| p.op_index).collect();
        assert_eq!(ops.len(), 2, "seed {seed} ran fewer than two iterations");
        assert_ne!(ops[0], ops[1], "seed {seed} repeated an operator before exploring both");
    }
    pass(3, "first two selections cover both operators in 1000 seeded runs");
}

#[test]
fn acceptance_04_fitness_oracles() {
    let mut rng = RngSeed(44).rng();
    // Random-point agreement, exact.
    for n in [5usize, 11, 16] {
        let kp = KpInstance::generate(n, RngSeed(n as u64));
        let nk = NkInstance::generate(n, 4.min(n - 1), RngSeed(n as u64 + 1));
        for _ in 0..3334 {
            let x = Bitstring::random(n, &mut rng);
            assert_eq!(kp.fitness(&x).value(), kp_oracle(&kp, &x));
            assert_eq!(nk.fitness(&x).value(), nk_oracle(&nk, &x));
        }
    }
    let ecc = EccInstance::new(4, 4);
    for _ in 0..10_000 {
        let x = Bitstring::random(16, &mut rng);
        assert_eq!(ecc.fitness(&x).value(), ecc_oracle(4, 4, &x));
    }

    // Full-landscape argmax agreement for 12-bit genotypes.
    let kp = KpInstance::generate(12, RngSeed(7));
    let nk = NkInstance::generate(12, 3, RngSeed(8));
    let ecc = EccInstance::new(4, 3);
    let mut best = [(f64::NEG_INFINITY, 0usize); 3];
    let mut oracle_best = [(f64::NEG_INFINITY, 0usize); 3];
    for v in 0..(1usize << 12) {
        let x = bitstring_from_index(v, 12);
        let impl_values =
            [kp.fitness(&x).value(), nk.fitness(&x).value(), ecc.fitness(&x).value()];
        let oracle_values = [kp_oracle(&kp, &x), nk_oracle(&nk, &x), ecc_oracle(4, 3, &x)];
        for p in 0..3 {
            if impl_values[p] > best[p].0 {
                best[p] = (impl_values[p], v);
            }
            if oracle_values[p] > oracle_best[p].0 {
                oracle_best[p] = (oracle_values[p], v);
            }
        }
    }
    for p in 0..3 {
        assert_eq!(best[p].0, oracle_best[p].0, "problem {p}: max values differ");
        assert_eq!(best[p].1, oracle_best[p].1, "problem {p}: argmax differs");
    }
    pass(4, "10^4 random points and 2^12 full landscapes match independent oracles exactly");
}

#[test]
fn acceptance_05_ecc_closed_form() {
    let inst = EccInstance::new(2, 12);
    for d in 1..=12usize {
        let mut x = Bitstring::zeros(24);
        for i in 0..d {
            x.flip(12 + i);
        }
        let expected = (d * d) as f64 / 2.0;
        let got = inst.fitness(&x).value();
        assert!((got - expected).abs() <= 1e-12 * expected, "d={d}: {got} vs {expected}");
    }
    pass(5, "two-codeword fitness equals d^2/2 for every distance 1..=12");
}

#[test]
fn acceptance_06_monotone_best_so_far() {
    let problems = [
        ProblemInstance::Kp(KpInstance::generate(20, RngSeed(1))),
        ProblemInstance::Nk(NkInstance::generate(15, 3, RngSeed(2))),
        ProblemInstance::Ecc(EccInstance::new(4, 5)),
    ];
    let params = SolverParams { pop_size: 8, ls_iterations: 4, ..SolverParams::default() };
    let mut checked = 0u32;
    for problem in &problems {
        for algorithm in [Algorithm::Ssga, Algorithm::Pso, Algorithm::Ils] {
            let portfolio = OperatorVariant::portfolio(algorithm);
            let modes =
                [Mode::Eos, Mode::Static(portfolio[0]), Mode::Static(portfolio[1])];
            for mode in modes {
                let failures: Vec<u64> = (0..100u64)
                    .into_par_iter()
                    .filter(|&seed| {
                        let record = run_solver(
                            problem,
                            algorithm,
                            mode,
                            StopCondition::EvalBudget(60),
                            &MeterConfig::simulated(),
                            &SchedulerConfig::default(),
                            &params,
                            seed,
                            RngSeed(600).for_trial(seed),
                        )
                        .unwrap();
                        record
                            .trajectory
                            .windows(2)
                            .any(|w| w[1].best_fitness < w[0].best_fitness)
                    })
                    .collect();
                assert!(
                    failures.is_empty(),
                    "{algorithm}/{mode} on {}: non-monotone best-so-far for seeds {failures:?}",
                    problem.kind()
                );
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 27);
    pass(6, "best-so-far non-decreasing over 100 seeded runs of all 27 combinations");
}

// Shared setup for criteria 7 and 8: NK(n=50, K=4), 10^4 evaluations, 30
// trials per method, simulated meter.
fn desk_scale_records(algorithm: Algorithm, mode: Mode) -> Vec<RunRecord> {
    let problem = ProblemInstance::Nk(NkInstance::generate(50, 4, RngSeed(77)));
    (0..30u64)
        .into_par_iter()
        .map(|trial| {
            run_solver(
                &problem,
                algorithm,
                mode,
                StopCondition::EvalBudget(10_000),
                &MeterConfig::simulated(),
                &SchedulerConfig::default(),
                &SolverParams::default(),
                trial,
                RngSeed(4242).for_trial(trial),
            )
            .unwrap()
        })
        .collect()
}

fn finals(records: &[RunRecord]) -> Vec<f64> {
    records.iter().map(|r| r.final_fitness.value()).collect()
}

fn energies(records: &[RunRecord]) -> Vec<f64> {
    records.iter().map(|r| r.total_energy_j).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn acceptance_07_desk_scale_ordering() {
    // (a) Full beats Light.
    let pso_full = finals(&desk_scale_records(Algorithm::Pso, Mode::Static(OperatorVariant::PsoFull)));
    let pso_light =
        finals(&desk_scale_records(Algorithm::Pso, Mode::Static(OperatorVariant::PsoLight)));
    let p_ab = mann_whitney_u(&pso_full, &pso_light).p_value;
    assert!(
        p_ab < 0.01 && mean(&pso_full) > mean(&pso_light),
        "(a) full {:.4} vs light {:.4}, p={p_ab:.4}",
        mean(&pso_full),
        mean(&pso_light)
    );

    // (b) One-bit moves beat five-bit moves.
    let ils1 = finals(&desk_scale_records(Algorithm::Ils, Mode::Static(OperatorVariant::Ils1)));
    let ils5 = finals(&desk_scale_records(Algorithm::Ils, Mode::Static(OperatorVariant::Ils5)));
    let p_b = mann_whitney_u(&ils1, &ils5).p_value;
    assert!(
        p_b < 0.01 && mean(&ils1) > mean(&ils5),
        "(b) ils1 {:.4} vs ils5 {:.4}, p={p_b:.4}",
        mean(&ils1),
        mean(&ils5)
    );

    // (c) Adaptive mode is not significantly worse than its best static
    // baseline for PSO and ILS.
    let eos_pso = finals(&desk_scale_records(Algorithm::Pso, Mode::Eos));
    let (best_pso, best_pso_name) = if mean(&pso_full) >= mean(&pso_light) {
        (&pso_full, "full")
    } else {
        (&pso_light, "light")
    };
    let p_c1 = mann_whitney_u(&eos_pso, best_pso).p_value;
    assert!(
        p_c1 >= 0.05 || mean(&eos_pso) >= mean(best_pso),
        "(c) adaptive pso {:.4} significantly worse than {best_pso_name} {:.4}, p={p_c1:.4}",
        mean(&eos_pso),
        mean(best_pso)
    );
    let eos_ils = finals(&desk_scale_records(Algorithm::Ils, Mode::Eos));
    let (best_ils, best_ils_name) =
        if mean(&ils1) >= mean(&ils5) { (&ils1, "ils1") } else { (&ils5, "ils5") };
    let p_c2 = mann_whitney_u(&eos_ils, best_ils).p_value;
    assert!(
        p_c2 >= 0.05 || mean(&eos_ils) >= mean(best_ils),
        "(c) adaptive ils {:.4} significantly worse than {best_ils_name} {:.4}, p={p_c2:.4}",
        mean(&eos_ils),
        mean(best_ils)
    );

    // (d) The three ssGA methods are mutually not significant.
    let eos_ssga = finals(&desk_scale_records(Algorithm::Ssga, Mode::Eos));
    let ssga1 = finals(&desk_scale_records(Algorithm::Ssga, Mode::Static(OperatorVariant::Replace1)));
    let ssga5 = finals(&desk_scale_records(Algorithm::Ssga, Mode::Static(OperatorVariant::Replace5)));
    for (label, a, b) in [
        ("adaptive vs replace1", &eos_ssga, &ssga1),
        ("adaptive vs replace5", &eos_ssga, &ssga5),
        ("replace1 vs replace5", &ssga1, &ssga5),
    ] {
        let p = mann_whitney_u(a, b).p_value;
        assert!(
            p >= 0.05,
            "(d) {label}: p={p:.4} ({:.4} vs {:.4})",
            mean(a),
            mean(b)
        );
    }
    pass(
        7,
        "operator orderings and adaptive-vs-static equivalences reproduced at desk scale",
    );
}

#[test]
fn acceptance_08_energy_ordering_under_fixed_evaluations() {
    let eos = energies(&desk_scale_records(Algorithm::Ssga, Mode::Eos));
    let ssga1 =
        energies(&desk_scale_records(Algorithm::Ssga, Mode::Static(OperatorVariant::Replace1)));
    let p = mann_whitney_u(&eos, &ssga1).p_value;
    assert!(
        mean(&eos) < mean(&ssga1) && p < 0.01,
        "adaptive {:.2} J vs replace1 {:.2} J, p={p:.4}",
        mean(&eos),
        mean(&ssga1)
    );
    pass(8, "adaptive ssGA consumes significantly less energy than replace1 at fixed evaluations");
}

#[test]
fn acceptance_09_curve_fit_recovery() {
    let model = |f_inf: f64, a: f64, k: f64, x: f64| f_inf * (1.0 - a * (-k * x).exp());
    let b_max = 1000.0;
    let clean: Vec<(f64, f64)> = (0..200)
        .map(|i| {
            let e = b_max * i as f64 / 199.0;
            (e, model(10.0, 0.5, 5.0, e / b_max))
        })
        .collect();
    let fit = fit_saturating_exponential(&clean, b_max);
    assert!(fit.converged);
    for (got, want) in [(fit.f_inf, 10.0), (fit.amplitude, 0.5), (fit.k_rate, 5.0)] {
        assert!((got - want).abs() / want < 1e-6, "noise-free recovery: {got} vs {want}");
    }

    let mut rng = RngSeed(99).rng();
    let noisy: Vec<(f64, f64)> = clean
        .iter()
        .map(|&(e, y)| {
            let z: f64 = rng.sample(StandardNormal);
            (e, y + 0.1 * z)
        })
        .collect();
    let fit = fit_saturating_exponential(&noisy, b_max);
    for (got, want) in [(fit.f_inf, 10.0), (fit.amplitude, 0.5), (fit.k_rate, 5.0)] {
        assert!((got - want).abs() / want < 0.05, "1%-noise recovery: {got} vs {want}");
    }
    pass(9, "model parameters recovered to 1e-6 noise-free and 5% under 1% noise");
}

#[test]
fn acceptance_10_mann_whitney_exactness() {
    let result = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]);
    assert_eq!(result.u_statistic, 0.0);
    assert!((result.p_value - 1.0 / 3.0).abs() < 1e-15, "exact p {}", result.p_value);

    let mut rng = RngSeed(10).rng();
    for case in 0..100 {
        let a: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.random::<f64>() + 0.15).collect();
        let exact = mann_whitney_u_with(&a, &b, UTestMethod::Exact).p_value;
        let approx = mann_whitney_u_with(&a, &b, UTestMethod::NormalApprox).p_value;
        assert!(
            (exact - approx).abs() <= 0.01,
            "case {case}: exact {exact} vs approx {approx}"
        );
    }
    pass(10, "exact p = 1/3 on the enumeration example; exact/approx agree within 0.01");
}

#[test]
fn acceptance_11_rapl_arithmetic_and_fake_sysfs() {
    assert_eq!(rapl_counter_delta(900, 49, 999), 149);
    assert_eq!(rapl_counter_delta(100, 250, 1000), 150);
    assert_eq!(rapl_counter_delta(0, 0, 999), 0);

    // Integration against a fake powercap tree: static counters clamp every
    // sample to the energy floor, and the experiment still runs to its
    // evaluation budget, sequentially.
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("powercap");
    for (dir, name) in [("intel-rapl:0", "package-0"), ("intel-rapl:0:0", "dram")] {
        let d = root.join(dir);
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("name"), format!("{name}\n")).unwrap();
        fs::write(d.join("energy_uj"), "123456\n").unwrap();
        fs::write(d.join("max_energy_range_uj"), "262143328850\n").unwrap();
    }
    let config = ExperimentConfig {
        problem: ProblemSpec::Nk { n: 10, k: 2, instance_seed: 5 },
        algorithm: Algorithm::Ils,
        mode: Mode::Eos,
        stop: StopCondition::EvalBudget(20),
        trials: 2,
        master_seed: 9,
        meter: MeterConfig {
            kind: MeterKind::Rapl,
            rapl_root: Some(root.clone()),
            ..MeterConfig::default()
        },
        alpha: 0.9,
    };
    let out = tmp.path().join("out");
    let records = run_experiment(&config, &out).unwrap();
    assert_eq!(records.len(), 2);
    for record in &records {
        for point in &record.trajectory {
            assert!(point.cum_energy_j > 0.0);
        }
        // Static fake counters: every sample equals the configured floor.
        let steps = record.trajectory.len() as f64;
        assert!((record.total_energy_j - steps * 1e-9).abs() < 1e-15);
    }
    let manifest = Manifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.trials.len(), 2);

    // Missing tree fails the experiment up front.
    let bad = ExperimentConfig {
        meter: MeterConfig {
            kind: MeterKind::Rapl,
            rapl_root: Some(tmp.path().join("missing")),
            ..MeterConfig::default()
        },
        ..config
    };
    assert!(run_experiment(&bad, &tmp.path().join("out2")).is_err());
    pass(11, "wraparound arithmetic exact; fake powercap tree drives a full experiment");
}

#[test]
fn acceptance_12_determinism() {
    let config = ExperimentConfig {
        problem: ProblemSpec::Nk { n: 12, k: 2, instance_seed: 21 },
        algorithm: Algorithm::Ssga,
        mode: Mode::Eos,
        stop: StopCondition::EvalBudget(300),
        trials: 4,
        master_seed: 77,
        meter: MeterConfig::simulated(),
        alpha: 0.9,
    };
    let tmp = tempfile::tempdir().unwrap();
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&config, &dir_a).unwrap();
    run_experiment(&config, &dir_b).unwrap();
    let mut names: Vec<String> = fs::read_dir(&dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for name in &names {
        let a = fs::read(dir_a.join(name)).unwrap();
        let b = fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    pass(12, "identical configs produce byte-identical output directories");
}
