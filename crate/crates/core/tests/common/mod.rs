//! Shared by the dispatch tests and the acceptance run.
#![allow(dead_code)]

use std::sync::OnceLock;

use artdisp_core::control::ControlConfig;
use artdisp_core::dispatch::*;
use artdisp_core::grid::*;
use artdisp_core::stability::{StateClass, Thresholds};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub fn two_bus(q: f64) -> NetworkCase {
    NetworkCase {
        base_mva: 100.0,
        buses: vec![Bus::new(1, BusKind::Slack), Bus::new(2, BusKind::PQ).with_load(0.0, q)],
        branches: vec![Branch::line(1, 2, 0.0, 0.2, 0.0), Branch::line(1, 2, 0.0, 0.2, 0.0)],
        generators: vec![Generator::new(1, 0.0, 1.0)],
    }
}

pub fn small_ctx() -> DispatchContext {
    DispatchContext {
        bundle: None,
        control: ControlConfig {
            thresholds: Thresholds::default(),
            candidates: vec![2],
            ..Default::default()
        },
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Tick,
    Mode(Mode),
    Scale(f64),
    Trip(usize),
    NoSuchLine,
    ApplyTop,
    RejectTop,
    Bogus(bool),
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => Just(Op::Tick),
        2 => prop_oneof![Just(Mode::Monitor), Just(Mode::OpenLoop), Just(Mode::ClosedLoop), Just(Mode::Combined)].prop_map(Op::Mode),
        2 => (0.85f64..1.2).prop_map(Op::Scale),
        1 => (0usize..2).prop_map(Op::Trip),
        1 => Just(Op::NoSuchLine),
        2 => Just(Op::ApplyTop),
        1 => Just(Op::RejectTop),
        1 => any::<bool>().prop_map(Op::Bogus),
    ]
}

pub fn input_for(op: &Op, state: &DispatchState) -> DispatchInput {
    let top = state.pending.first().map(|r| r.id.clone());
    match op {
        Op::Tick => DispatchInput::Tick { attack: None },
        Op::Mode(m) => DispatchInput::ModeChange { mode: *m },
        Op::Scale(f) => DispatchInput::Disturbance {
            perturbation: Perturbation {
                load_scale: [(2, *f)].into(),
                ..Default::default()
            },
        },
        Op::Trip(k) => DispatchInput::Disturbance {
            perturbation: Perturbation {
                outages: vec![ElementRef::Branch(*k)],
                ..Default::default()
            },
        },
        Op::NoSuchLine => DispatchInput::Disturbance {
            perturbation: Perturbation {
                outages: vec![ElementRef::Branch(99)],
                ..Default::default()
            },
        },
        Op::ApplyTop => DispatchInput::Decision {
            id: top.unwrap_or_else(|| "r0".into()),
            verdict: Verdict::Apply,
        },
        Op::RejectTop => DispatchInput::Decision {
            id: top.unwrap_or_else(|| "r0".into()),
            verdict: Verdict::Reject,
        },
        Op::Bogus(apply) => DispatchInput::Decision {
            id: "nope".into(),
            verdict: if *apply { Verdict::Apply } else { Verdict::Reject },
        },
    }
}

pub fn initial() -> &'static DispatchState {
    static S: OnceLock<DispatchState> = OnceLock::new();
    S.get_or_init(|| DispatchState::new(two_bus(2.3), &small_ctx()).unwrap())
}

/// Runs one input sequence and checks the mode invariants after every step
/// and replay equality at the end.
pub fn check_sequence(ops: &[Op]) -> Result<(), TestCaseError> {
    let ctx = small_ctx();
    let mut state = initial().clone();
    let cap = ctx.control.auto_cap;
    for op in ops {
        let mode = state.mode;
        let input = input_for(op, &state);
        let before = state.event_log.len();
        let (s, events) = dispatch_step(&ctx, state, &input).unwrap();
        state = s;
        prop_assert_eq!(&state.event_log[before..], &events[..]);
        prop_assert!(state.event_log.iter().enumerate().all(|(k, e)| e.seq == k as u64));
        let auto: Vec<&EventPayload> = events
            .iter()
            .map(|e| &e.payload)
            .filter(|p| matches!(p, EventPayload::AutoApplied { .. }))
            .collect();
        if mode == Mode::OpenLoop || mode == Mode::Monitor {
            prop_assert!(auto.is_empty());
        }
        if state.mode == Mode::ClosedLoop {
            prop_assert!(state.pending.is_empty());
        }
        if mode == Mode::Combined {
            for p in &auto {
                let EventPayload::AutoApplied { applied, .. } = p else {
                    unreachable!()
                };
                prop_assert!(applied.iter().all(|a| a.dq.abs() <= cap));
            }
        }
        // Liveness: a non-Normal ClosedLoop tick either acts or says why not.
        if mode == Mode::ClosedLoop && matches!(input, DispatchInput::Tick { .. }) {
            let non_normal = events.iter().any(|e| matches!(e.payload, EventPayload::Telemetry { state_class: Some(c), .. } if c != StateClass::Normal));
            if non_normal {
                let noted = events
                    .iter()
                    .any(|e| matches!(&e.payload, EventPayload::RecommendationIssued { note: Some(_), .. }));
                prop_assert!(!auto.is_empty() || noted);
            }
        }
    }
    let replayed = replay(&ctx, initial(), &state.event_log).unwrap();
    prop_assert_eq!(replayed, state);
    Ok(())
}
