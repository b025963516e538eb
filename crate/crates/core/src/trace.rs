//! Session traces: one JSON document per session plus content-addressed
//! payloads.
//!
//! Images are stored as RGB PNG, masks as 1-bit PNG and saliency maps as
//! JSON sidecars, each named by the sha256 of its bytes under `payloads/`
//! next to the trace document. The document itself records every agent
//! request and response with payloads replaced by references. The source
//! image and instruction are part of every request and are recorded once
//! at the top.
//!
//! Layout of a session directory:
//!
//! ```text
//! <dir>/trace.json
//! <dir>/payloads/<sha256>.png
//! <dir>/payloads/<sha256>.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, BackendProvider};
use crate::error::{Error, Result};
use crate::objectives::DimensionScores;
use crate::raster::{encode_mask_png, encode_rgb_png, sha256_hex};
use crate::refine::{
    run_session, Best, EditSession, Evaluation, LoopConfig, SessionInput, StopReason, TurnRecord,
};
use crate::types::{BinaryMask, BoundingBox, FlawDiagnosis, ImageRef, RegionKind, SaliencyMap};

pub const TRACE_FORMAT: &str = "editrefiner-trace/1";
pub const TRACE_FILE: &str = "trace.json";
pub const PAYLOAD_DIR: &str = "payloads";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Path relative to the session directory.
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateStep {
    pub edited: ImageEntry,
    pub scores: DimensionScores,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceiveStep {
    pub edited: ImageEntry,
    pub artifact_map: String,
    pub failure_map: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasonStep {
    pub diagnoses: Vec<FlawDiagnosis>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionStep {
    pub region_kind: RegionKind,
    pub mask: String,
    pub boxes: Vec<BoundingBox>,
    /// Absent when there were no boxes to reason about.
    pub reason: Option<ReasonStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActStep {
    pub previous_edit: ImageEntry,
    pub description: String,
    pub re_edit_instruction: String,
    pub mask: String,
    pub re_edited: ImageEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnStep {
    pub turn: u32,
    pub perceive: PerceiveStep,
    pub regions: Vec<RegionStep>,
    pub act: ActStep,
    pub evaluate: EvaluateStep,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceDoc {
    pub format: String,
    pub session_id: String,
    pub instruction: String,
    pub source: ImageEntry,
    pub edited: ImageEntry,
    pub config: LoopConfig,
    pub baseline: Option<EvaluateStep>,
    pub turns: Vec<TurnStep>,
    pub best: Option<Best>,
    pub final_image: Option<ImageEntry>,
    pub stop_reason: Option<StopReason>,
    pub error: Option<String>,
}

/// Collects payload bytes keyed by their relative path.
#[derive(Debug, Default)]
pub struct Payloads {
    files: BTreeMap<String, Vec<u8>>,
}

impl Payloads {
    fn put(&mut self, bytes: Vec<u8>, ext: &str) -> String {
        let rel = format!("{PAYLOAD_DIR}/{}.{ext}", sha256_hex(&bytes));
        self.files.entry(rel.clone()).or_insert(bytes);
        rel
    }

    fn image(&mut self, img: &ImageRef) -> Result<ImageEntry> {
        let png = encode_rgb_png(&img.load_rgb()?)?;
        Ok(ImageEntry {
            id: img.id.clone(),
            width: img.width,
            height: img.height,
            payload: self.put(png, "png"),
        })
    }

    fn map(&mut self, m: &SaliencyMap) -> Result<String> {
        let json = serde_json::to_vec(m).map_err(|e| Error::Codec(e.to_string()))?;
        Ok(self.put(json, "json"))
    }

    fn mask(&mut self, m: &BinaryMask) -> Result<String> {
        Ok(self.put(encode_mask_png(m)?, "png"))
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.files.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

fn evaluate_step(e: &Evaluation, p: &mut Payloads) -> Result<EvaluateStep> {
    Ok(EvaluateStep {
        edited: p.image(&e.image)?,
        scores: e.scores,
        overall: e.overall,
    })
}

fn turn_step(t: &TurnRecord, p: &mut Payloads) -> Result<TurnStep> {
    let map_of = |k: RegionKind| {
        t.regions
            .iter()
            .find(|r| r.region_kind == k)
            .map(|r| &r.map)
            .ok_or_else(|| Error::InvalidInput(format!("turn {} has no {k} region", t.turn)))
    };
    let input = p.image(&t.input)?;
    let perceive = PerceiveStep {
        edited: input.clone(),
        artifact_map: p.map(map_of(RegionKind::Artifact)?)?,
        failure_map: p.map(map_of(RegionKind::EditingFailure)?)?,
    };
    let mut regions = Vec::with_capacity(t.regions.len());
    for r in &t.regions {
        regions.push(RegionStep {
            region_kind: r.region_kind,
            mask: p.mask(&r.mask)?,
            boxes: r.boxes.clone(),
            reason: r.diagnoses.as_ref().map(|d| ReasonStep {
                diagnoses: d.clone(),
                summary: r.summary.clone(),
            }),
        });
    }
    let evaluate = evaluate_step(&t.evaluation, p)?;
    Ok(TurnStep {
        turn: t.turn,
        perceive,
        regions,
        act: ActStep {
            previous_edit: input,
            description: t.description.clone(),
            re_edit_instruction: t.re_edit_instruction.clone(),
            mask: p.mask(&t.mask)?,
            re_edited: evaluate.edited.clone(),
        },
        evaluate,
        improved: t.improved,
    })
}

impl TraceDoc {
    /// Build the document for a session (finished or aborted) and collect
    /// its payloads. `edited` is the incoming edit, which an aborted session
    /// may not have recorded anywhere else.
    pub fn build(session: &EditSession, edited: &ImageRef) -> Result<(TraceDoc, Payloads)> {
        let mut p = Payloads::default();
        let source = p.image(&session.source)?;
        let edited = p.image(edited)?;
        let baseline = session
            .baseline
            .as_ref()
            .map(|b| evaluate_step(b, &mut p))
            .transpose()?;
        let turns = session
            .history
            .iter()
            .map(|t| turn_step(t, &mut p))
            .collect::<Result<Vec<_>>>()?;
        let final_image = session.final_image().map(|i| p.image(i)).transpose()?;
        let doc = TraceDoc {
            format: TRACE_FORMAT.into(),
            session_id: session.session_id.clone(),
            instruction: session.instruction.clone(),
            source,
            edited,
            config: session.config.clone(),
            baseline,
            turns,
            best: session.best,
            final_image,
            stop_reason: session.stop_reason,
            error: session.error.clone(),
        };
        Ok((doc, p))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Codec(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<TraceDoc> {
        let doc: TraceDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("trace: {e}")))?;
        if doc.format != TRACE_FORMAT {
            return Err(Error::Parse(format!(
                "unsupported trace format {:?}, expected {TRACE_FORMAT:?}",
                doc.format
            )));
        }
        Ok(doc)
    }

    pub fn read(dir: &Path) -> Result<TraceDoc> {
        let path = dir.join(TRACE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    /// Load an image payload back into an inline [`ImageRef`].
    pub fn load_image(dir: &Path, entry: &ImageEntry) -> Result<ImageRef> {
        let path = dir.join(&entry.payload);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let img = crate::raster::decode_rgb_png(&bytes)?;
        let out = ImageRef::from_rgb(entry.id.clone(), &img);
        if (out.width, out.height) != (entry.width, entry.height) {
            return Err(Error::InvalidInput(format!(
                "payload {} is {}x{}, trace says {}x{}",
                entry.payload, out.width, out.height, entry.width, entry.height
            )));
        }
        Ok(out)
    }
}

/// Write `trace.json` and its payloads into `dir`, creating it if needed.
pub fn write_trace(session: &EditSession, edited: &ImageRef, dir: &Path) -> Result<PathBuf> {
    let (doc, payloads) = TraceDoc::build(session, edited)?;
    let payload_dir = dir.join(PAYLOAD_DIR);
    fs::create_dir_all(&payload_dir).map_err(|e| Error::io(&payload_dir, e))?;
    for (rel, bytes) in payloads.iter() {
        let path = dir.join(rel);
        if !path.exists() {
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
    }
    let path = dir.join(TRACE_FILE);
    fs::write(&path, doc.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Result of re-running a recorded session.
#[derive(Debug)]
pub struct Replay {
    pub recorded: String,
    pub replayed: String,
    pub error: Option<BackendError>,
}

impl Replay {
    pub fn is_identical(&self) -> bool {
        self.recorded == self.replayed
    }
}

/// Re-run the session recorded in `dir` against `provider` with the
/// recorded inputs and configuration, and render the new trace document
/// for comparison with the stored one.
pub fn replay(dir: &Path, provider: &dyn BackendProvider) -> Result<Replay> {
    let path = dir.join(TRACE_FILE);
    let recorded = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let doc = TraceDoc::from_json(&recorded)?;
    let input = SessionInput {
        session_id: doc.session_id.clone(),
        source: TraceDoc::load_image(dir, &doc.source)?,
        edited: TraceDoc::load_image(dir, &doc.edited)?,
        instruction: doc.instruction.clone(),
    };
    let (session, error) = match provider.session(&input.session_id) {
        Ok(backends) => match run_session(&input, &backends, &doc.config) {
            Ok(s) => (s, None),
            Err(abort) => (abort.session, Some(abort.error)),
        },
        Err(e) => return Err(Error::InvalidInput(format!("backend setup failed: {e}"))),
    };
    let (new_doc, _) = TraceDoc::build(&session, &input.edited)?;
    Ok(Replay {
        recorded,
        replayed: new_doc.to_json()?,
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockConfig, MockProvider};
    use image::RgbImage;

    fn input() -> SessionInput {
        let src = RgbImage::from_fn(32, 32, |x, y| image::Rgb([x as u8 * 7, y as u8 * 7, 90]));
        let edit = RgbImage::from_fn(32, 32, |x, y| image::Rgb([200, x as u8 * 5, y as u8 * 3]));
        SessionInput {
            session_id: "t1".into(),
            source: ImageRef::from_rgb("src", &src),
            edited: ImageRef::from_rgb("edit", &edit),
            instruction: "make it red".into(),
        }
    }

    #[test]
    fn write_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let provider = MockProvider::new(MockConfig::with_seed(5).schedule("t1", &[50.0, 60.0, 65.0, 64.0]));
        let inp = input();
        let s = run_session(&inp, &provider.session("t1").unwrap(), &LoopConfig::default()).unwrap();
        write_trace(&s, &inp.edited, dir.path()).unwrap();

        let doc = TraceDoc::read(dir.path()).unwrap();
        assert_eq!(doc.turns.len(), 3);
        for t in &doc.turns {
            assert!(dir.path().join(&t.perceive.artifact_map).exists());
            assert!(dir.path().join(&t.act.re_edited.payload).exists());
        }

        let fresh = MockProvider::new(MockConfig::with_seed(5).schedule("t1", &[50.0, 60.0, 65.0, 64.0]));
        let r = replay(dir.path(), &fresh).unwrap();
        assert!(r.is_identical());

        let other = MockProvider::new(MockConfig::with_seed(6).schedule("t1", &[50.0, 60.0, 65.0, 64.0]));
        assert!(!replay(dir.path(), &other).unwrap().is_identical());
    }

    #[test]
    fn aborted_sessions_are_traced() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = MockConfig::with_seed(1);
        cfg.failing_sessions.insert("t1".into());
        let provider = MockProvider::new(cfg);
        let inp = input();
        let abort = run_session(&inp, &provider.session("t1").unwrap(), &LoopConfig::default())
            .unwrap_err();
        write_trace(&abort.session, &inp.edited, dir.path()).unwrap();
        let doc = TraceDoc::read(dir.path()).unwrap();
        assert_eq!(doc.stop_reason, Some(StopReason::Aborted));
        assert!(doc.error.is_some());
        let r = replay(dir.path(), &provider).unwrap();
        assert!(r.is_identical());
        assert!(r.error.is_some());
    }

    #[test]
    fn rejects_unknown_format() {
        let err = TraceDoc::from_json(r#"{"format":"x"}"#).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }
}
