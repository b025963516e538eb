//! Deterministic offline backends.
//!
//! Every response is a pure function of the suite seed, the session's call
//! index for that agent, and stable request content (image ids, dimensions,
//! instruction text, boxes). File paths never enter the digest, so runs are
//! reproducible across checkouts.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::*;
use crate::gt::{build_gt_map_with, GtBuildConfig};
use crate::exec::Exec;
use crate::objectives::DimensionScores;
use crate::raster::sha256_hex;
use crate::types::Disk;

const ARTIFACT_FLAWS: [&str; 4] = [
    "distorted structure",
    "texture artifact",
    "lighting mismatch",
    "blurred detail",
];
const FAILURE_FLAWS: [&str; 4] = [
    "missing edit",
    "unintended change",
    "incorrect attribute",
    "incomplete edit",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockConfig {
    pub seed: u64,
    /// Evaluation scores per session, returned in call order. The first entry
    /// scores the incoming edit; the last entry repeats once exhausted.
    #[serde(default)]
    pub schedules: BTreeMap<String, Vec<DimensionScores>>,
    /// Schedule for sessions without their own entry. When absent, scores are
    /// drawn from the seeded generator.
    #[serde(default)]
    pub default_schedule: Option<Vec<DimensionScores>>,
    /// Sessions whose evaluation agent answers with a fatal error.
    #[serde(default)]
    pub failing_sessions: BTreeSet<String>,
}

impl MockConfig {
    pub fn with_seed(seed: u64) -> Self {
        MockConfig {
            seed,
            ..Default::default()
        }
    }

    /// Set a schedule of uniform scores (the same value in all three dimensions).
    pub fn schedule(mut self, session: &str, overall: &[f64]) -> Self {
        self.schedules.insert(
            session.into(),
            overall.iter().map(|&s| DimensionScores::uniform(s)).collect(),
        );
        self
    }
}

/// Builds fresh per-session mocks sharing one configuration.
#[derive(Debug, Clone)]
pub struct MockProvider {
    cfg: Arc<MockConfig>,
}

impl MockProvider {
    pub fn new(cfg: MockConfig) -> Self {
        MockProvider { cfg: Arc::new(cfg) }
    }

    pub fn config(&self) -> &MockConfig {
        &self.cfg
    }
}

impl BackendProvider for MockProvider {
    fn session(&self, session_id: &str) -> BackendResult<BackendSet> {
        let state = |cfg: &Arc<MockConfig>| MockState {
            cfg: cfg.clone(),
            session: session_id.to_string(),
            calls: AtomicUsize::new(0),
        };
        Ok(BackendSet {
            perception: Box::new(MockPerception(state(&self.cfg))),
            reasoning: Box::new(MockReasoning(state(&self.cfg))),
            action: Box::new(MockAction(state(&self.cfg))),
            evaluation: Box::new(MockEvaluation(state(&self.cfg))),
        })
    }
}

/// The four mock agents for a single session with the given seed.
pub fn mock_suite(seed: u64) -> BackendSet {
    MockProvider::new(MockConfig::with_seed(seed))
        .session("default")
        .expect("mock sessions never fail to start")
}

#[derive(Debug)]
struct MockState {
    cfg: Arc<MockConfig>,
    session: String,
    calls: AtomicUsize,
}

impl MockState {
    fn next_call(&self) -> usize {
        self.calls.fetch_add(1, Ordering::SeqCst)
    }

    fn rng(&self, agent: &str, call: usize, content: &[&str]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.cfg.seed.to_le_bytes());
        h.update(agent.as_bytes());
        h.update((call as u64).to_le_bytes());
        for c in content {
            h.update((c.len() as u64).to_le_bytes());
            h.update(c.as_bytes());
        }
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}

fn image_key(img: &ImageRef) -> String {
    format!("{}:{}x{}", img.id, img.width, img.height)
}

struct MockPerception(MockState);

impl MockPerception {
    fn synthetic_map(rng: &mut ChaCha8Rng, w: u32, h: u32) -> SaliencyMap {
        let blobs = rng.random_range(1..=2);
        let disks: Vec<Disk> = (0..blobs)
            .map(|_| {
                let radius = h as f64 * rng.random_range(0.15..0.25);
                Disk::new(
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                    radius,
                )
            })
            .collect();
        build_gt_map_with(&disks, w, h, &GtBuildConfig::default(), Exec::Sequential)
            .expect("synthetic disks are in bounds")
    }
}

impl PerceptionAgent for MockPerception {
    fn perceive(&self, req: &PerceptionRequest) -> BackendResult<PerceptionResponse> {
        let call = self.0.next_call();
        let mut rng = self.0.rng(
            "perception",
            call,
            &[&image_key(&req.source), &image_key(&req.edited), &req.instruction],
        );
        let (w, h) = (req.edited.width, req.edited.height);
        Ok(PerceptionResponse {
            artifact_map: Self::synthetic_map(&mut rng, w, h),
            failure_map: Self::synthetic_map(&mut rng, w, h),
        })
    }
}

struct MockReasoning(MockState);

/// Coarse 3×3 position name of a box center.
pub fn location_phrase(b: &BoundingBox, width: u32, height: u32) -> &'static str {
    let (cx, cy) = b.center();
    let col = ((cx * 3.0 / width as f64) as usize).min(2);
    let row = ((cy * 3.0 / height as f64) as usize).min(2);
    [
        ["top-left", "top", "top-right"],
        ["left", "center", "right"],
        ["bottom-left", "bottom", "bottom-right"],
    ][row][col]
}

impl ReasoningAgent for MockReasoning {
    fn reason(&self, req: &ReasoningRequest) -> BackendResult<ReasoningResponse> {
        let call = self.0.next_call();
        let boxes = serde_json::to_string(&req.boxes).unwrap_or_default();
        let mut rng = self.0.rng(
            "reasoning",
            call,
            &[&image_key(&req.edited), req.region_kind.as_str(), &boxes],
        );
        let taxonomy = match req.region_kind {
            RegionKind::Artifact => &ARTIFACT_FLAWS,
            RegionKind::EditingFailure => &FAILURE_FLAWS,
        };
        let diagnoses: Vec<FlawDiagnosis> = req
            .boxes
            .iter()
            .map(|b| {
                let flaw = taxonomy[rng.random_range(0..taxonomy.len())];
                let place = location_phrase(b, req.edited.width, req.edited.height);
                FlawDiagnosis {
                    region_kind: req.region_kind,
                    flaw_type: flaw.into(),
                    reasoning: format!(
                        "The {place} region ({}x{} px) shows {flaw}.",
                        b.width(),
                        b.height()
                    ),
                    bbox: *b,
                }
            })
            .collect();
        let summary = diagnoses
            .iter()
            .map(|d| d.reasoning.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(ReasoningResponse { diagnoses, summary })
    }
}

struct MockAction(MockState);

impl ActionAgent for MockAction {
    fn act(&self, req: &ActionRequest) -> BackendResult<ActionResponse> {
        let call = self.0.next_call();
        let mut rng = self.0.rng(
            "action",
            call,
            &[&image_key(&req.previous_edit), &req.re_edit_instruction],
        );
        let tint = [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
        let mut img = req.previous_edit.load_rgb().map_err(|e| BackendError::Remote {
            agent: "action",
            code: "bad_input".into(),
            message: e.to_string(),
        })?;
        if req.mask.dims() != img.dimensions() {
            return Err(BackendError::Remote {
                agent: "action",
                code: "bad_input".into(),
                message: "mask does not match the previous edit".into(),
            });
        }
        for (x, y, px) in img.enumerate_pixels_mut() {
            if req.mask.get(x, y) {
                for c in 0..3 {
                    px.0[c] = ((px.0[c] as u16 + tint[c] as u16) / 2) as u8;
                }
            }
        }
        let id = format!("img-{}", &sha256_hex(img.as_raw())[..16]);
        Ok(ActionResponse {
            re_edited: ImageRef::from_rgb(id, &img),
        })
    }
}

struct MockEvaluation(MockState);

impl EvaluationAgent for MockEvaluation {
    fn evaluate(&self, req: &EvaluationRequest) -> BackendResult<EvaluationResponse> {
        let call = self.0.next_call();
        let cfg = &self.0.cfg;
        if cfg.failing_sessions.contains(&self.0.session) {
            return Err(BackendError::Remote {
                agent: "evaluation",
                code: "injected_failure".into(),
                message: format!("session {} is configured to fail", self.0.session),
            });
        }
        let schedule = cfg
            .schedules
            .get(&self.0.session)
            .or(cfg.default_schedule.as_ref());
        let scores = match schedule {
            Some(s) if !s.is_empty() => s[call.min(s.len() - 1)],
            _ => {
                let mut rng = self.0.rng(
                    "evaluation",
                    call,
                    &[&image_key(&req.edited), &req.instruction],
                );
                let mut draw = || (rng.random_range(40.0..95.0_f64) * 100.0).round() / 100.0;
                DimensionScores::new(draw(), draw(), draw())
            }
        };
        Ok(EvaluationResponse { scores })
    }
}
