//! Independent refinement sessions run side by side.

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, BackendProvider};
use crate::exec::with_parallelism;
use crate::objectives::DimensionScores;
use crate::refine::{run_session, EditSession, LoopConfig, SessionInput, StopReason};

#[derive(Debug)]
pub struct SessionOutcome {
    pub session_id: String,
    /// The full or partial session. `None` only when backend setup failed.
    pub session: Option<EditSession>,
    pub error: Option<BackendError>,
}

impl SessionOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.session.is_some()
    }
}

/// One row of the per-session table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub session_id: String,
    pub status: String,
    pub turns: u32,
    pub stop_reason: Option<StopReason>,
    pub best_turn: Option<u32>,
    pub baseline_overall: Option<f64>,
    pub final_overall: Option<f64>,
    pub final_image: Option<String>,
    pub error: Option<String>,
}

/// Aggregates over the successful sessions of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_sessions: usize,
    pub n_succeeded: usize,
    pub n_failed: usize,
    pub mean_turns: f64,
    /// Mean of final minus baseline scores per dimension.
    pub mean_delta: DimensionScores,
    pub mean_delta_overall: f64,
}

#[derive(Debug)]
pub struct BatchReport {
    /// In input order.
    pub outcomes: Vec<SessionOutcome>,
    pub summary: BatchSummary,
}

impl BatchReport {
    pub fn rows(&self) -> Vec<SessionRow> {
        self.outcomes.iter().map(session_row).collect()
    }
}

fn session_row(o: &SessionOutcome) -> SessionRow {
    let s = o.session.as_ref();
    SessionRow {
        session_id: o.session_id.clone(),
        status: if o.succeeded() { "ok" } else { "failed" }.into(),
        turns: s.map_or(0, |s| s.turn()),
        stop_reason: s.and_then(|s| s.stop_reason),
        best_turn: s.and_then(|s| s.best).map(|b| b.turn),
        baseline_overall: s.and_then(|s| s.baseline.as_ref()).map(|b| b.overall),
        final_overall: s.and_then(|s| s.final_evaluation()).map(|e| e.overall),
        final_image: s.and_then(|s| s.final_image()).map(|i| i.id.clone()),
        error: o.error.as_ref().map(|e| e.to_string()),
    }
}

pub fn summarize(outcomes: &[SessionOutcome]) -> BatchSummary {
    let ok: Vec<&EditSession> = outcomes
        .iter()
        .filter(|o| o.succeeded())
        .filter_map(|o| o.session.as_ref())
        .collect();
    let n = ok.len();
    let mean = |f: &dyn Fn(&EditSession) -> f64| {
        if n == 0 {
            0.0
        } else {
            ok.iter().map(|s| f(s)).sum::<f64>() / n as f64
        }
    };
    let delta = |s: &EditSession, d: usize| {
        match (s.final_evaluation(), s.baseline.as_ref()) {
            (Some(f), Some(b)) => f.scores.as_array()[d] - b.scores.as_array()[d],
            _ => 0.0,
        }
    };
    BatchSummary {
        n_sessions: outcomes.len(),
        n_succeeded: n,
        n_failed: outcomes.len() - n,
        mean_turns: mean(&|s| s.turn() as f64),
        mean_delta: DimensionScores::new(
            mean(&|s| delta(s, 0)),
            mean(&|s| delta(s, 1)),
            mean(&|s| delta(s, 2)),
        ),
        mean_delta_overall: mean(&|s| match (s.final_evaluation(), s.baseline.as_ref()) {
            (Some(f), Some(b)) => f.overall - b.overall,
            _ => 0.0,
        }),
    }
}

/// Run every session with up to `parallelism` sessions in flight. A failing
/// session is recorded and the rest continue. Output order follows input
/// order, so results do not depend on `parallelism`.
pub fn run_batch(
    inputs: &[SessionInput],
    provider: &dyn BackendProvider,
    cfg: &LoopConfig,
    parallelism: usize,
) -> crate::Result<BatchReport> {
    cfg.validate()?;
    let outcomes = with_parallelism(parallelism, |exec| {
        exec.map(inputs, |input| {
            let outcome = match provider.session(&input.session_id) {
                Err(e) => SessionOutcome {
                    session_id: input.session_id.clone(),
                    session: None,
                    error: Some(e),
                },
                Ok(backends) => match run_session(input, &backends, cfg) {
                    Ok(s) => SessionOutcome {
                        session_id: input.session_id.clone(),
                        session: Some(s),
                        error: None,
                    },
                    Err(abort) => SessionOutcome {
                        session_id: input.session_id.clone(),
                        session: Some(abort.session),
                        error: Some(abort.error),
                    },
                },
            };
            if let Some(e) = &outcome.error {
                log::error!("session {} failed: {e}", input.session_id);
            }
            outcome
        })
    });
    let summary = summarize(&outcomes);
    Ok(BatchReport { outcomes, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockConfig, MockProvider};
    use crate::types::ImageRef;
    use image::RgbImage;

    fn inputs(n: usize) -> Vec<SessionInput> {
        (0..n)
            .map(|i| {
                let img = RgbImage::from_pixel(32, 32, image::Rgb([i as u8 * 40, 80, 120]));
                SessionInput {
                    session_id: format!("s{i}"),
                    source: ImageRef::from_rgb(format!("src{i}"), &img),
                    edited: ImageRef::from_rgb(format!("edit{i}"), &img),
                    instruction: format!("instruction {i}"),
                }
            })
            .collect()
    }

    #[test]
    fn mean_turns_accounting() {
        // 1, 2, 3 and 4 turns.
        let cfg = MockConfig::with_seed(2)
            .schedule("s0", &[60.0, 50.0])
            .schedule("s1", &[60.0, 70.0, 65.0])
            .schedule("s2", &[60.0, 61.0, 62.0, 62.0])
            .schedule("s3", &[10.0, 20.0, 30.0, 40.0, 50.0]);
        let r = run_batch(&inputs(4), &MockProvider::new(cfg), &LoopConfig::default(), 2).unwrap();
        assert_eq!(r.summary.mean_turns, 2.5);
        assert_eq!(r.summary.n_succeeded, 4);
        // Deltas: 0, 10, 2, 40.
        assert!((r.summary.mean_delta_overall - 13.0).abs() < 1e-9);
        assert!((r.summary.mean_delta.perceptual_quality - 13.0).abs() < 1e-9);
    }

    #[test]
    fn failures_are_isolated() {
        let mut cfg = MockConfig::with_seed(3);
        cfg.failing_sessions.insert("s1".into());
        let r = run_batch(&inputs(3), &MockProvider::new(cfg), &LoopConfig::default(), 3).unwrap();
        assert_eq!((r.summary.n_succeeded, r.summary.n_failed), (2, 1));
        let rows = r.rows();
        assert_eq!(rows[1].status, "failed");
        assert_eq!(rows[1].stop_reason, Some(StopReason::Aborted));
        assert_eq!(rows[0].status, "ok");
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let cfg = MockConfig::with_seed(9);
        let p = MockProvider::new(cfg);
        let a = run_batch(&inputs(3), &p, &LoopConfig::default(), 1).unwrap();
        let b = run_batch(&inputs(3), &p, &LoopConfig::default(), 3).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.rows(), b.rows());
        for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
            assert_eq!(x.session, y.session);
        }
    }
}
