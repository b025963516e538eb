//! The perception → reasoning → action → evaluation refinement loop.
//!
//! The incoming edit is scored first so the first turn has something to beat.
//! Each turn then
//!
//! 1. asks the perception agent for artifact and editing-failure maps,
//! 2. thresholds each map into a mask and extracts per-kind boxes,
//! 3. asks the reasoning agent to diagnose each kind's boxes separately,
//! 4. unions the masks, concatenates the descriptions (artifact first) and
//!    builds one re-edit instruction,
//! 5. calls the action agent once and scores its output.
//!
//! The loop stops as soon as a turn fails to beat the best score so far by
//! more than `improvement_epsilon` (ties stop), when the turn budget is
//! spent, or when perception finds nothing to fix.

use serde::{Deserialize, Serialize};

use crate::backends::{
    call_action, call_evaluation, call_perception, call_reasoning, ActionRequest, BackendError,
    BackendSet, EvaluationRequest, PerceptionRequest, ReasoningRequest,
};
use crate::backends::mock::location_phrase;
use crate::error::{Error, Result};
use crate::objectives::{overall_score, DimensionScores};
use crate::perception::{extract_boxes, threshold_map, union_masks, PerceptionPostConfig};
use crate::types::{BinaryMask, BoundingBox, FlawDiagnosis, ImageRef, RegionKind, SaliencyMap};

/// Phrases used to turn diagnoses into a re-edit instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReEditTemplate {
    pub artifact_verb: String,
    pub failure_verb: String,
    pub preamble: String,
    pub closing: String,
}

impl Default for ReEditTemplate {
    fn default() -> Self {
        ReEditTemplate {
            artifact_verb: "remove the artifact and restore natural detail".into(),
            failure_verb: "make this region follow the instruction".into(),
            preamble: "Refine the edit for \"{instruction}\" inside the masked regions only:".into(),
            closing: "Keep everything outside the mask unchanged.".into(),
        }
    }
}

impl ReEditTemplate {
    /// `preamble`, then one clause per diagnosis (flaw type, location,
    /// correction verb) in artifact-then-failure order, then `closing`.
    pub fn render(&self, instruction: &str, width: u32, height: u32, diagnoses: &[FlawDiagnosis]) -> String {
        let mut parts = vec![self.preamble.replace("{instruction}", instruction)];
        if diagnoses.is_empty() {
            parts.push("correct the highlighted flaws.".into());
        }
        for d in diagnoses {
            let verb = match d.region_kind {
                RegionKind::Artifact => &self.artifact_verb,
                RegionKind::EditingFailure => &self.failure_verb,
            };
            parts.push(format!(
                "{} at the {}: {verb}.",
                d.flaw_type,
                location_phrase(&d.bbox, width, height)
            ));
        }
        parts.push(self.closing.clone());
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_turns: u32,
    pub improvement_epsilon: f64,
    pub perception_post: PerceptionPostConfig,
    /// Return the best-scoring image rather than the last one produced.
    pub keep_best: bool,
    #[serde(default)]
    pub template: ReEditTemplate,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_turns: 4,
            improvement_epsilon: 0.0,
            perception_post: PerceptionPostConfig::default(),
            keep_best: true,
            template: ReEditTemplate::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns < 1 {
            return Err(Error::InvalidArgument("max_turns must be >= 1".into()));
        }
        if !(self.improvement_epsilon >= 0.0) || !self.improvement_epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "improvement_epsilon must be >= 0, got {}",
                self.improvement_epsilon
            )));
        }
        self.perception_post.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInput {
    pub session_id: String,
    pub source: ImageRef,
    pub edited: ImageRef,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub image: ImageRef,
    pub scores: DimensionScores,
    pub overall: f64,
}

/// What happened for one region kind within a turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTurn {
    pub region_kind: RegionKind,
    pub map: SaliencyMap,
    pub mask: BinaryMask,
    pub boxes: Vec<BoundingBox>,
    /// `None` when there were no boxes and the reasoning agent was not called.
    pub diagnoses: Option<Vec<FlawDiagnosis>>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub input: ImageRef,
    pub regions: Vec<RegionTurn>,
    pub mask: BinaryMask,
    pub description: String,
    pub re_edit_instruction: String,
    pub evaluation: Evaluation,
    /// Whether this turn beat the best score so far.
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoImprovement,
    MaxTurns,
    NoFlawsDetected,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Best {
    /// 0 is the incoming edit.
    pub turn: u32,
    pub overall: f64,
}

/// Full state and history of one refinement session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSession {
    pub session_id: String,
    pub source: ImageRef,
    pub instruction: String,
    /// The most recent image: the incoming edit, then each action output.
    pub current: ImageRef,
    pub config: LoopConfig,
    pub baseline: Option<Evaluation>,
    pub history: Vec<TurnRecord>,
    pub best: Option<Best>,
    pub stop_reason: Option<StopReason>,
    pub error: Option<String>,
}

impl EditSession {
    fn new(input: &SessionInput, cfg: &LoopConfig) -> Self {
        EditSession {
            session_id: input.session_id.clone(),
            source: input.source.clone(),
            instruction: input.instruction.clone(),
            current: input.edited.clone(),
            config: cfg.clone(),
            baseline: None,
            history: Vec::new(),
            best: None,
            stop_reason: None,
            error: None,
        }
    }

    /// Number of completed turns.
    pub fn turn(&self) -> u32 {
        self.history.len() as u32
    }

    /// The image and scores at a turn index (0 = incoming edit).
    pub fn evaluation_at(&self, turn: u32) -> Option<&Evaluation> {
        if turn == 0 {
            self.baseline.as_ref()
        } else {
            self.history.get(turn as usize - 1).map(|t| &t.evaluation)
        }
    }

    /// The image the session hands back: best-scoring under `keep_best`,
    /// otherwise the last one produced.
    pub fn final_evaluation(&self) -> Option<&Evaluation> {
        if self.config.keep_best {
            self.best.and_then(|b| self.evaluation_at(b.turn))
        } else {
            self.history
                .last()
                .map(|t| &t.evaluation)
                .or(self.baseline.as_ref())
        }
    }

    pub fn final_image(&self) -> Option<&ImageRef> {
        self.final_evaluation().map(|e| &e.image)
    }
}

/// A session stopped by a fatal backend error; the partial history is kept.
#[derive(Debug)]
pub struct SessionAbort {
    pub session: EditSession,
    pub error: BackendError,
}

impl std::fmt::Display for SessionAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "session {} aborted: {}", self.session.session_id, self.error)
    }
}

impl std::error::Error for SessionAbort {}

fn evaluate(
    backends: &BackendSet,
    input: &SessionInput,
    image: &ImageRef,
) -> std::result::Result<Evaluation, BackendError> {
    let resp = call_evaluation(
        backends.evaluation.as_ref(),
        &EvaluationRequest {
            source: input.source.clone(),
            edited: image.clone(),
            instruction: input.instruction.clone(),
        },
    )?;
    let overall = overall_score(&resp.scores.floored()).map_err(|e| BackendError::Invariant {
        agent: "evaluation",
        invariant: e.to_string(),
    })?;
    Ok(Evaluation {
        image: image.clone(),
        scores: resp.scores,
        overall,
    })
}

/// Run one session to completion. Backend errors abort the session with
/// its partial history preserved in the returned [`SessionAbort`].
pub fn run_session(
    input: &SessionInput,
    backends: &BackendSet,
    cfg: &LoopConfig,
) -> std::result::Result<EditSession, Box<SessionAbort>> {
    let mut session = EditSession::new(input, cfg);
    match drive(&mut session, input, backends, cfg) {
        Ok(()) => Ok(session),
        Err(error) => {
            session.stop_reason = Some(StopReason::Aborted);
            session.error = Some(error.to_string());
            Err(Box::new(SessionAbort { session, error }))
        }
    }
}

fn drive(
    session: &mut EditSession,
    input: &SessionInput,
    backends: &BackendSet,
    cfg: &LoopConfig,
) -> std::result::Result<(), BackendError> {
    let baseline = evaluate(backends, input, &input.edited)?;
    let mut best = Best {
        turn: 0,
        overall: baseline.overall,
    };
    let mut current = input.edited.clone();
    session.baseline = Some(baseline);
    session.best = Some(best);

    for turn in 1..=cfg.max_turns {
        let perception = call_perception(
            backends.perception.as_ref(),
            &PerceptionRequest {
                source: input.source.clone(),
                edited: current.clone(),
                instruction: input.instruction.clone(),
            },
        )?;

        let mut regions = Vec::with_capacity(2);
        for kind in RegionKind::ALL {
            let map = perception.map(kind).clone();
            let mask = threshold_map(&map, &cfg.perception_post);
            let boxes = extract_boxes(&mask, &cfg.perception_post);
            let (diagnoses, summary) = if boxes.is_empty() {
                (None, String::new())
            } else {
                let resp = call_reasoning(
                    backends.reasoning.as_ref(),
                    &ReasoningRequest {
                        source: input.source.clone(),
                        edited: current.clone(),
                        instruction: input.instruction.clone(),
                        region_kind: kind,
                        boxes: boxes.clone(),
                    },
                )?;
                (Some(resp.diagnoses), resp.summary)
            };
            regions.push(RegionTurn {
                region_kind: kind,
                map,
                mask,
                boxes,
                diagnoses,
                summary,
            });
        }

        let masks: Vec<BinaryMask> = regions.iter().map(|r| r.mask.clone()).collect();
        let mask = union_masks(&masks).map_err(|e| BackendError::Invariant {
            agent: "perception",
            invariant: e.to_string(),
        })?;
        if mask.is_empty() {
            session.stop_reason = Some(StopReason::NoFlawsDetected);
            return Ok(());
        }

        let description = regions
            .iter()
            .map(|r| r.summary.as_str())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("\n");
        let all_diagnoses: Vec<FlawDiagnosis> = regions
            .iter()
            .flat_map(|r| r.diagnoses.iter().flatten().cloned())
            .collect();
        let re_edit_instruction =
            cfg.template
                .render(&input.instruction, current.width, current.height, &all_diagnoses);

        let action = call_action(
            backends.action.as_ref(),
            &ActionRequest {
                source: input.source.clone(),
                previous_edit: current.clone(),
                re_edit_instruction: re_edit_instruction.clone(),
                mask: mask.clone(),
            },
        )?;
        let evaluation = evaluate(backends, input, &action.re_edited)?;
        let improved = evaluation.overall > best.overall + cfg.improvement_epsilon;
        log::info!(
            "session {} turn {turn}: overall {:.4} (best {:.4}){}",
            session.session_id,
            evaluation.overall,
            best.overall,
            if improved { "" } else { ", stopping" }
        );
        let overall = evaluation.overall;
        session.current = evaluation.image.clone();
        session.history.push(TurnRecord {
            turn,
            input: current,
            regions,
            mask,
            description,
            re_edit_instruction,
            evaluation,
            improved,
        });

        if !improved {
            session.stop_reason = Some(StopReason::NoImprovement);
            return Ok(());
        }
        best = Best { turn, overall };
        session.best = Some(best);
        current = session.current.clone();
    }
    session.stop_reason = Some(StopReason::MaxTurns);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockConfig, MockProvider};
    use crate::backends::BackendProvider;
    use image::RgbImage;

    fn input() -> SessionInput {
        let img = |id: &str, v: u8| ImageRef::from_rgb(id, &RgbImage::from_pixel(64, 64, image::Rgb([v, v, v])));
        SessionInput {
            session_id: "s".into(),
            source: img("src", 40),
            edited: img("edit", 90),
            instruction: "turn the wall blue".into(),
        }
    }

    fn run(schedule: &[f64], cfg: &LoopConfig) -> EditSession {
        let p = MockProvider::new(MockConfig::with_seed(11).schedule("s", schedule));
        run_session(&input(), &p.session("s").unwrap(), cfg).unwrap()
    }

    #[test]
    fn stops_after_first_non_improving_turn() {
        let s = run(&[60.0, 70.0, 68.0], &LoopConfig::default());
        assert_eq!(s.turn(), 2);
        assert_eq!(s.stop_reason, Some(StopReason::NoImprovement));
        let best = s.best.unwrap();
        assert_eq!(best.turn, 1);
        assert!((best.overall - 70.0).abs() < 1e-9);
        assert_eq!(s.final_image(), Some(&s.history[0].evaluation.image));
        assert!(s.history[0].improved && !s.history[1].improved);
    }

    #[test]
    fn immediate_regression_returns_incoming_edit() {
        let s = run(&[70.0, 65.0], &LoopConfig::default());
        assert_eq!(s.turn(), 1);
        assert_eq!(s.final_image(), Some(&input().edited));
        assert_eq!(s.best.unwrap().turn, 0);
    }

    #[test]
    fn ties_stop_the_loop() {
        let s = run(&[70.0, 70.0, 80.0], &LoopConfig::default());
        assert_eq!(s.turn(), 1);
        assert_eq!(s.stop_reason, Some(StopReason::NoImprovement));
    }

    #[test]
    fn increasing_schedule_uses_full_budget() {
        let s = run(&[50.0, 55.0, 60.0, 65.0, 70.0, 75.0], &LoopConfig::default());
        assert_eq!(s.turn(), 4);
        assert_eq!(s.stop_reason, Some(StopReason::MaxTurns));
        assert_eq!(s.best.unwrap().turn, 4);
    }

    #[test]
    fn keep_best_off_returns_last_image() {
        let cfg = LoopConfig {
            keep_best: false,
            ..Default::default()
        };
        let s = run(&[60.0, 70.0, 68.0], &cfg);
        assert_eq!(s.final_image(), Some(&s.history[1].evaluation.image));
    }

    #[test]
    fn epsilon_requires_margin() {
        let cfg = LoopConfig {
            improvement_epsilon: 5.0,
            ..Default::default()
        };
        let s = run(&[60.0, 64.0, 90.0], &cfg);
        assert_eq!(s.turn(), 1);
    }

    #[test]
    fn turn_records_recompute_overall() {
        let s = run(&[50.0, 55.0, 60.0, 65.0, 70.0], &LoopConfig::default());
        for t in &s.history {
            assert_eq!(t.evaluation.overall, overall_score(&t.evaluation.scores).unwrap());
            assert_eq!(t.regions.len(), 2);
            assert_eq!(t.regions[0].region_kind, RegionKind::Artifact);
            assert!(t.re_edit_instruction.contains("turn the wall blue"));
        }
    }

    #[test]
    fn fatal_error_keeps_partial_trace() {
        let mut cfg = MockConfig::with_seed(1);
        cfg.failing_sessions.insert("s".into());
        let p = MockProvider::new(cfg);
        let abort = run_session(&input(), &p.session("s").unwrap(), &LoopConfig::default())
            .unwrap_err();
        assert_eq!(abort.session.stop_reason, Some(StopReason::Aborted));
        assert!(abort.session.error.as_deref().unwrap().contains("injected_failure"));
        assert!(abort.session.history.is_empty());
    }

    #[test]
    fn template_rendering() {
        let t = ReEditTemplate::default();
        let d = FlawDiagnosis {
            region_kind: RegionKind::EditingFailure,
            flaw_type: "missing edit".into(),
            reasoning: String::new(),
            bbox: BoundingBox::new(0, 0, 3, 3),
        };
        let s = t.render("add a hat", 30, 30, &[d]);
        assert_eq!(
            s,
            "Refine the edit for \"add a hat\" inside the masked regions only: missing edit at \
             the top-left: make this region follow the instruction. Keep everything outside the \
             mask unchanged."
        );
    }

    #[test]
    fn config_validation() {
        let cfg = LoopConfig {
            max_turns: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
