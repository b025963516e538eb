use editrefiner_core::backends::mock::{MockConfig, MockProvider};
use editrefiner_core::backends::BackendProvider;
use editrefiner_core::objectives::{overall_score, DimensionScores};
use editrefiner_core::refine::*;
use editrefiner_core::trace::{replay, write_trace, TraceDoc};
use editrefiner_core::ImageRef;
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn input(id: &str) -> SessionInput {
    let src = RgbImage::from_fn(48, 32, |x, y| Rgb([(x * 5) as u8, (y * 7) as u8, 90]));
    let edit = RgbImage::from_fn(48, 32, |x, y| Rgb([(x * 5) as u8, 200, (y * 3) as u8]));
    SessionInput {
        session_id: id.into(),
        source: ImageRef::from_rgb("src", &src),
        edited: ImageRef::from_rgb("edit", &edit),
        instruction: "make the sky green".into(),
    }
}

fn run_with(provider: &MockProvider, cfg: &LoopConfig) -> EditSession {
    run_session(&input("s"), &provider.session("s").unwrap(), cfg).unwrap()
}

fn run(schedule: &[f64], cfg: &LoopConfig) -> EditSession {
    run_with(&MockProvider::new(MockConfig::with_seed(5).schedule("s", schedule)), cfg)
}

#[test]
fn regression_after_one_gain_keeps_the_gain() {
    let s = run(&[60.0, 70.0, 68.0], &LoopConfig::default());
    assert_eq!(s.turn(), 2);
    assert_eq!(s.stop_reason, Some(StopReason::NoImprovement));
    assert_eq!(s.best.unwrap().turn, 1);
    assert!((s.final_evaluation().unwrap().overall - 70.0).abs() < 1e-9);
    assert_eq!(s.final_image(), Some(&s.history[0].evaluation.image));
}

#[test]
fn immediate_regression_returns_the_incoming_edit() {
    let s = run(&[70.0, 65.0], &LoopConfig::default());
    assert_eq!(s.turn(), 1);
    assert_eq!(s.stop_reason, Some(StopReason::NoImprovement));
    assert_eq!(s.final_image(), Some(&input("s").edited));
}

#[test]
fn steady_gains_exhaust_the_budget() {
    let s = run(&[50.0, 60.0, 70.0, 80.0, 90.0, 95.0], &LoopConfig::default());
    assert_eq!(s.turn(), 4);
    assert_eq!(s.stop_reason, Some(StopReason::MaxTurns));
    assert!((s.final_evaluation().unwrap().overall - 90.0).abs() < 1e-9);
}

#[test]
fn single_turn_budget() {
    let cfg = LoopConfig {
        max_turns: 1,
        ..Default::default()
    };
    let s = run(&[50.0, 60.0, 70.0], &cfg);
    assert_eq!(s.turn(), 1);
    assert_eq!(s.stop_reason, Some(StopReason::MaxTurns));
    assert_eq!(s.best.unwrap().turn, 1);
}

#[test]
fn each_turn_feeds_the_previous_output_forward() {
    let s = run(&[50.0, 60.0, 70.0, 80.0, 90.0], &LoopConfig::default());
    assert_eq!(s.history[0].input, input("s").edited);
    for w in s.history.windows(2) {
        assert_eq!(w[1].input, w[0].evaluation.image);
    }
    for t in &s.history {
        assert!(!t.mask.is_empty());
        assert!(t.re_edit_instruction.contains("make the sky green"));
        assert!(!t.description.is_empty());
    }
}

#[test]
fn zero_turn_budget_is_rejected() {
    let cfg = LoopConfig {
        max_turns: 0,
        ..Default::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn aborted_session_keeps_its_partial_state() {
    let mut mc = MockConfig::with_seed(5);
    mc.failing_sessions.insert("s".into());
    let p = MockProvider::new(mc);
    let abort = run_session(&input("s"), &p.session("s").unwrap(), &LoopConfig::default()).unwrap_err();
    assert_eq!(abort.session.stop_reason, Some(StopReason::Aborted));
    assert!(abort.session.history.is_empty());
    assert!(!abort.error.is_retryable());
}

#[test]
fn trace_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let provider = MockProvider::new(MockConfig::with_seed(9).schedule("s", &[55.0, 61.0, 67.0, 64.0]));
    let s = run_with(&provider, &LoopConfig::default());
    write_trace(&s, &input("s").edited, dir.path()).unwrap();

    let r = replay(dir.path(), &provider).unwrap();
    assert!(r.error.is_none());
    assert!(r.is_identical());

    let doc = TraceDoc::read(dir.path()).unwrap();
    assert_eq!(doc.turns.len(), 3);
    assert_eq!(doc.best.unwrap().turn, 2);

    // A different seed perturbs perception and must show up as a diff.
    let other = MockProvider::new(MockConfig::with_seed(10).schedule("s", &[55.0, 61.0, 67.0, 64.0]));
    assert!(!replay(dir.path(), &other).unwrap().is_identical());
}

#[test]
fn sessions_are_deterministic_across_runs() {
    let a = run(&[40.0, 45.0, 50.0, 48.0], &LoopConfig::default());
    let b = run(&[40.0, 45.0, 50.0, 48.0], &LoopConfig::default());
    let (da, _) = TraceDoc::build(&a, &input("s").edited).unwrap();
    let (db, _) = TraceDoc::build(&b, &input("s").edited).unwrap();
    assert_eq!(da.to_json().unwrap(), db.to_json().unwrap());
}

fn scores_strategy() -> impl Strategy<Value = Vec<DimensionScores>> {
    prop::collection::vec(
        (0.0f64..100.0, 0.0f64..100.0, 0.0f64..100.0).prop_map(|(a, b, c)| DimensionScores::new(a, b, c)),
        1..8,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loop_invariants(
        schedule in scores_strategy(),
        max_turns in 1u32..6,
        eps in prop_oneof![Just(0.0), 0.0f64..5.0],
        keep_best in any::<bool>(),
    ) {
        let mut mc = MockConfig::with_seed(1);
        mc.schedules.insert("s".into(), schedule);
        let cfg = LoopConfig { max_turns, improvement_epsilon: eps, keep_best, ..Default::default() };
        let s = run_with(&MockProvider::new(mc), &cfg);

        prop_assert!(s.turn() <= max_turns);
        let base = s.baseline.as_ref().unwrap();
        let all: Vec<_> = std::iter::once(base).chain(s.history.iter().map(|t| &t.evaluation)).collect();
        for e in &all {
            prop_assert_eq!(e.overall, overall_score(&e.scores.floored()).unwrap());
        }

        // Every turn but the last improved, each by more than eps over its predecessor.
        let mut best = base.overall;
        for (i, t) in s.history.iter().enumerate() {
            let last = i + 1 == s.history.len();
            prop_assert_eq!(t.improved, t.evaluation.overall > best + eps);
            if !last {
                prop_assert!(t.improved);
            }
            if t.improved {
                best = t.evaluation.overall;
            }
        }
        match s.stop_reason {
            Some(StopReason::MaxTurns) => prop_assert_eq!(s.turn(), max_turns),
            Some(StopReason::NoImprovement) => prop_assert!(!s.history.last().unwrap().improved),
            other => prop_assert!(false, "unexpected stop {:?}", other),
        }

        let fin = s.final_evaluation().unwrap();
        if keep_best {
            for e in &all {
                prop_assert!(fin.overall >= e.overall - eps - 1e-12);
            }
            prop_assert_eq!(fin.overall, best);
        } else {
            prop_assert_eq!(fin, &s.history.last().unwrap().evaluation);
        }
    }
}
