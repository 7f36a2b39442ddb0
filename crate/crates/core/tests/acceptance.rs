//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! The process exits non-zero when a criterion fails that is not listed in
//! `KNOWN_SHORTFALLS`; those are still evaluated in full and printed as FAIL.

use std::process::ExitCode;
use std::time::Instant;

use artdisp_core::control::ControlConfig;
use artdisp_core::dispatch::DispatchContext;
use artdisp_core::dispatch::Mode;
use artdisp_core::experiment::{control_demo, corruption_sweep, episode_batch, stressed_episode_setup};
use artdisp_core::grid::*;
use artdisp_core::learner::{evaluate_model, train_bundle, Hyperparams};
use artdisp_core::scenario::{build_dataset, CorruptionMode, ScenarioConfig};
use artdisp_core::stability::*;
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

mod common;

// Tolerances and bands.
const PF_MISMATCH: f64 = 1e-6;
const PF_MAX_ITER: usize = 10;
const PF_RECHECK: f64 = 1e-6;
const PF_TIME_S: f64 = 0.1;
const NOSE_TOL: f64 = 1e-6;
const ZERO_LOAD_TOL: f64 = 1e-9;
const COLLAPSE_LEVEL: f64 = 0.8;
const COLLAPSE_WINDOW: f64 = 0.01;
const SCAN_TOL: f64 = 1e-4;
const DATASET_SIZE: usize = 5000;
const TEST_FRACTION: f64 = 0.2;
const INJECTION_REL_RMSE: f64 = 0.20;
const INDICATOR_REL_RMSE: f64 = 0.15;
const DATAGEN_BUDGET_S: f64 = 30.0 * 60.0;
const TRAIN_BUDGET_S: f64 = 5.0 * 60.0;
const SWEEP_RATES: [f64; 3] = [0.05, 0.1, 0.2];
const SWEEP_DEGRADATION: f64 = 2.0;
const DEMO_SCENARIOS: usize = 30;
const DEMO_MIN_SCENARIOS: usize = 20;
const DEMO_SUCCESS: f64 = 0.90;
const INFERENCE_S: f64 = 0.01;
const SAFETY_SEQUENCES: u32 = 10_000;
const EPISODES: u64 = 100;
const EPISODE_TICKS: u64 = 20;
const PAIRED_SHARE: f64 = 0.95;
const SEED: u64 = 2024;

/// Evaluated and reported, but not allowed to fail the run; see README.
const KNOWN_SHORTFALLS: [&str; 2] = ["collapse proximity", "paired episodes"];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

/// Specified minus computed injections from the dense matrix in rectangular
/// form, S = V·conj(Y·V).
fn rectangular_mismatch(case: &NetworkCase, v: &[Complex64]) -> f64 {
    let y = build_ybus(case).to_dense();
    let gen = case.bus_generation();
    let kinds = case.effective_kinds();
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        let current: Complex64 = (0..v.len()).map(|k| y[(i, k)] * v[k]).sum();
        let s = v[i] * current.conj();
        let bus = &case.buses[i];
        if kinds[i] != BusKind::Slack {
            worst = worst.max((gen[i].p - bus.p_load - s.re).abs());
        }
        if kinds[i] == BusKind::PQ {
            worst = worst.max((gen[i].q - bus.q_load + bus.q_comp - s.im).abs());
        }
    }
    worst
}

fn power_flow() -> Outcome {
    let opts = PowerFlowOptions::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, case) in [
        ("ieee14", bundled::ieee14()),
        ("ieee30", bundled::ieee30()),
        ("ieee118", bundled::ieee118()),
    ] {
        let sol = solve_power_flow(&case, &opts).unwrap();
        let recheck = rectangular_mismatch(&case, &sol.v);
        ok &= sol.converged && sol.iterations <= PF_MAX_ITER && sol.max_mismatch < PF_MISMATCH && recheck < PF_RECHECK;
        parts.push(format!(
            "{name} {} it, mismatch {:.1e}, recheck {:.1e}",
            sol.iterations, sol.max_mismatch, recheck
        ));
    }
    let case = bundled::ieee118();
    let runs = 20;
    let t = Instant::now();
    for _ in 0..runs {
        solve_power_flow(&case, &opts).unwrap();
    }
    let per = t.elapsed().as_secs_f64() / runs as f64;
    ok &= per < PF_TIME_S;
    parts.push(format!("ieee118 {:.2} ms per solve", per * 1e3));
    report("power-flow correctness", ok, parts.join("; "))
}

fn l_index_oracle() -> Outcome {
    // Lossless 2-bus at the nose: q_max = V1²/(4x) = 2.5, V2 = V1/2, L = 1.
    let x = 0.1;
    let q_max = 1.0 / (4.0 * x);
    let case = NetworkCase {
        base_mva: 100.0,
        buses: vec![
            Bus::new(1, BusKind::Slack),
            Bus::new(2, BusKind::PQ).with_load(0.0, q_max),
        ],
        branches: vec![Branch::line(1, 2, 0.0, x, 0.0)],
        generators: vec![Generator::new(1, 0.0, 1.0)],
    };
    // Newton converges only linearly onto the double root; give it room.
    let opts = PowerFlowOptions {
        tolerance: 1e-14,
        max_iter: 100,
        ..Default::default()
    };
    let sol = solve_power_flow(&case, &opts).unwrap();
    let v_ratio = sol.v[1].norm() / sol.v[0].norm();
    let l = compute_l_index(&sol, &f_matrix_for_case(&case).unwrap(), &Thresholds::default())
        .unwrap()
        .l_max;
    let nose_ok = sol.converged && (v_ratio - 0.5).abs() < NOSE_TOL && (l - 1.0).abs() < NOSE_TOL;

    let mut worst_zero = 0.0f64;
    for case in [bundled::ieee14(), bundled::ieee30(), bundled::ieee118()] {
        let mut c = case.clone();
        c.buses.iter_mut().for_each(|b| (b.p_load, b.q_load) = (0.0, 0.0));
        c.generators.iter_mut().for_each(|g| g.p_gen = 0.0);
        let sol = solve_power_flow(&c, &PowerFlowOptions::default()).unwrap();
        let r = compute_l_index(&sol, &f_matrix_for_case(&c).unwrap(), &Thresholds::default()).unwrap();
        worst_zero = worst_zero.max(r.l_local.values().copied().fold(0.0, f64::max));
    }
    report(
        "L-index analytic oracle",
        nose_ok && worst_zero <= ZERO_LOAD_TOL,
        format!(
            "nose V2/V1 {v_ratio:.9} (|err| {:.1e}), L {l:.9} (|err| {:.1e}) after {} it; zero-load max L {worst_zero:.1e}",
            (v_ratio - 0.5).abs(),
            (l - 1.0).abs(),
            sol.iterations
        ),
    )
}

fn collapse_proximity() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, case) in [("ieee14", bundled::ieee14()), ("ieee118", bundled::ieee118())] {
        let r = find_loadability_limit(&case, &vec![1.0; case.buses.len()], SCAN_TOL, &ScanOptions::default()).unwrap();
        let increasing = r.trace.windows(2).all(|w| w[1].1 > w[0].1);
        let near = r
            .trace
            .iter()
            .filter(|(lam, _)| *lam >= (1.0 - COLLAPSE_WINDOW) * r.lambda_max)
            .map(|p| p.1)
            .fold(f64::NAN, f64::max);
        let high = near > COLLAPSE_LEVEL;
        ok &= increasing && high;
        parts.push(format!(
            "{name} lambda_max {:.4}, {} points, increasing {increasing}, l_max near nose {near:.3} (> {COLLAPSE_LEVEL}: {high})",
            r.lambda_max,
            r.trace.len()
        ));
    }
    report("collapse proximity", ok, parts.join("; "))
}

fn main() -> ExitCode {
    let mut outcomes = vec![power_flow(), l_index_oracle(), collapse_proximity()];

    let case = bundled::ieee118();
    let scenario = ScenarioConfig::ieee118_stressed(SEED);
    let t = Instant::now();
    let dataset = build_dataset(&case, &scenario, DATASET_SIZE).unwrap();
    let datagen_s = t.elapsed().as_secs_f64();
    let (train, test) = dataset.split(TEST_FRACTION);
    let t = Instant::now();
    let bundle = train_bundle(&train, &Hyperparams::default(), train.samples.len()).unwrap();
    let train_s = t.elapsed().as_secs_f64();
    let eval = evaluate_model(&bundle, &test.samples, None, None).unwrap();
    let pooled = eval.per_target["dq_pooled"].relative_rmse;
    outcomes.push(report(
        "surrogate accuracy",
        pooled <= INJECTION_REL_RMSE && eval.relative_rmse <= INDICATOR_REL_RMSE && datagen_s < DATAGEN_BUDGET_S && train_s < TRAIN_BUDGET_S,
        format!(
            "{} train / {} test samples; injection rel RMSE {pooled:.3} (<= {INJECTION_REL_RMSE}), l_max rel RMSE {:.3} (<= {INDICATOR_REL_RMSE}); datagen {datagen_s:.1} s, training {train_s:.2} s",
            train.samples.len(),
            test.samples.len(),
            eval.relative_rmse
        ),
    ));

    let modes = [CorruptionMode::Gap, CorruptionMode::Noise, CorruptionMode::Stuck];
    let mut rates = vec![0.0];
    rates.extend(SWEEP_RATES);
    let sweep = corruption_sweep(&bundle, &test.samples, &case, &modes, &rates, SEED).unwrap();
    let mut below = true;
    let mut bounded = true;
    let mut worst_margin = f64::INFINITY;
    let mut worst_growth = 0.0f64;
    for &m in &modes {
        for &r in &SWEEP_RATES {
            let row = sweep.row(m, r).unwrap();
            below &= row.model.rmse < row.baseline.rmse;
            worst_margin = worst_margin.min(row.baseline.rmse / row.model.rmse);
        }
        let growth = sweep.row(m, 0.1).unwrap().model.rmse / sweep.clean.rmse;
        bounded &= growth <= SWEEP_DEGRADATION;
        worst_growth = worst_growth.max(growth);
    }
    outcomes.push(report(
        "corrupted-input robustness",
        below && bounded,
        format!(
            "model below baseline at every nonzero rate: {below} (smallest baseline/model ratio {worst_margin:.2}); worst rate-0.1 RMSE / clean RMSE {worst_growth:.2} (<= {SWEEP_DEGRADATION})"
        ),
    ));

    let control = ControlConfig::from_scenario(&scenario);
    let demo = control_demo(&case, &scenario, Some(&bundle), &control, DEMO_SCENARIOS).unwrap();
    let good = demo
        .traces
        .iter()
        .filter(|t| t.success && t.strictly_decreasing)
        .count();
    let share = good as f64 / demo.traces.len().max(1) as f64;
    outcomes.push(report(
        "corrective control",
        demo.traces.len() >= DEMO_MIN_SCENARIOS && share >= DEMO_SUCCESS,
        format!(
            "{good}/{} alarm scenarios with strictly decreasing l_sum and final l_max < {}",
            demo.traces.len(),
            demo.alarm
        ),
    ));

    outcomes.push(report(
        "inference speed",
        eval.latency_s < INFERENCE_S,
        format!(
            "{:.2} us per measurement vector (< {} ms)",
            eval.latency_s * 1e6,
            INFERENCE_S * 1e3
        ),
    ));

    let mut runner = TestRunner::new(Config {
        cases: SAFETY_SEQUENCES,
        failure_persistence: None,
        ..Config::default()
    });
    let safety = runner.run(&prop::collection::vec(common::op(), 1..14), |ops| {
        common::check_sequence(&ops)
    });
    outcomes.push(report(
        "state-machine safety",
        safety.is_ok(),
        match &safety {
            Ok(()) => format!("{SAFETY_SEQUENCES} random sequences, no violations"),
            Err(e) => format!("{e}"),
        },
    ));

    let (start, adversary) = stressed_episode_setup(&case, SEED);
    let ctx = DispatchContext {
        bundle: Some(bundle),
        control,
    };
    let seeds: Vec<u64> = (0..EPISODES).collect();
    let batch = episode_batch(
        &start,
        &adversary,
        &ctx,
        &[Mode::Monitor, Mode::ClosedLoop],
        &seeds,
        EPISODE_TICKS,
    )
    .unwrap();
    let paired = batch.paired_vs_monitor["ClosedLoop"];
    let mean = |m: &str| batch.per_mode[m].mean_payoff;
    let payoff = |m: Mode, seed: u64| {
        batch
            .episodes
            .iter()
            .find(|e| e.mode == m && e.seed == seed)
            .unwrap()
            .payoff
    };
    let worst_deficit = seeds
        .iter()
        .map(|&s| payoff(Mode::Monitor, s) - payoff(Mode::ClosedLoop, s))
        .fold(0.0, f64::max);
    outcomes.push(report(
        "paired episodes",
        paired >= PAIRED_SHARE,
        format!(
            "ClosedLoop >= Monitor on {:.0}% of {EPISODES} seeds (>= {:.0}%); mean payoff {:.3} vs {:.3}; largest per-seed shortfall {worst_deficit:.3}",
            paired * 100.0,
            PAIRED_SHARE * 100.0,
            mean("ClosedLoop"),
            mean("Monitor")
        ),
    ));

    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass", outcomes.len());
    let unexpected: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_SHORTFALLS.contains(&o.name))
        .collect();
    for o in &outcomes {
        if o.pass && KNOWN_SHORTFALLS.contains(&o.name) {
            println!("note: {} now passes; drop it from the known shortfalls", o.name);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for o in unexpected {
            eprintln!("unexpected failure: {}: {}", o.name, o.detail);
        }
        ExitCode::FAILURE
    }
}
