use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use editrefiner_core::backends::http::{HttpClient, HttpConfig, HttpProvider};
use editrefiner_core::backends::mock::{MockConfig, MockProvider};
use editrefiner_core::backends::BackendProvider;
use editrefiner_core::batch::{run_batch, BatchSummary};
use editrefiner_core::manifest::{load_annotation_manifest, Manifest};
use editrefiner_core::objectives::DimensionScores;
use editrefiner_core::refine::{LoopConfig, SessionInput};
use editrefiner_core::trace::write_trace;
use serde::{Deserialize, Serialize};

use super::{ensure_dir, read_text, write_csv, write_json};
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Use the deterministic mock backends.
    #[arg(long, conflicts_with = "endpoints")]
    mock: bool,
    /// Base URL of a server speaking the backend protocol.
    #[arg(long)]
    endpoints: Option<String>,
    /// JSON object of session id to evaluator scores, one per evaluation call.
    /// Entries are a single number (all dimensions) or a score object.
    #[arg(long, requires = "mock")]
    mock_schedule: Option<PathBuf>,
    #[arg(long)]
    max_turns: Option<u32>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScheduleEntry {
    Uniform(f64),
    Scores(DimensionScores),
}

impl ScheduleEntry {
    fn scores(&self) -> DimensionScores {
        match self {
            ScheduleEntry::Uniform(s) => DimensionScores::uniform(*s),
            ScheduleEntry::Scores(s) => *s,
        }
    }
}

/// What `run.json` records: enough to re-create the backends and the loop.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    backend: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    endpoints: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mock: Option<&'a MockConfig>,
    #[serde(rename = "loop")]
    loop_config: &'a LoopConfig,
}

#[derive(Debug, Serialize)]
struct AggregateRow {
    n_sessions: usize,
    n_succeeded: usize,
    n_failed: usize,
    mean_turns: f64,
    mean_delta_perceptual_quality: f64,
    mean_delta_instruction_following: f64,
    mean_delta_visual_consistency: f64,
    mean_delta_overall: f64,
}

impl From<&BatchSummary> for AggregateRow {
    fn from(s: &BatchSummary) -> Self {
        AggregateRow {
            n_sessions: s.n_sessions,
            n_succeeded: s.n_succeeded,
            n_failed: s.n_failed,
            mean_turns: s.mean_turns,
            mean_delta_perceptual_quality: s.mean_delta.perceptual_quality,
            mean_delta_instruction_following: s.mean_delta.instruction_following,
            mean_delta_visual_consistency: s.mean_delta.visual_consistency,
            mean_delta_overall: s.mean_delta_overall,
        }
    }
}

const SUMMARY_HEADER: [&str; 9] = [
    "session_id",
    "status",
    "turns",
    "stop_reason",
    "best_turn",
    "baseline_overall",
    "final_overall",
    "final_image",
    "error",
];

const AGGREGATE_HEADER: [&str; 8] = [
    "n_sessions",
    "n_succeeded",
    "n_failed",
    "mean_turns",
    "mean_delta_perceptual_quality",
    "mean_delta_instruction_following",
    "mean_delta_visual_consistency",
    "mean_delta_overall",
];

fn load_schedule(path: &Path) -> CliResult<BTreeMap<String, Vec<DimensionScores>>> {
    let raw: BTreeMap<String, Vec<ScheduleEntry>> = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (id, entries) in raw {
        let scores: Vec<DimensionScores> = entries.iter().map(ScheduleEntry::scores).collect();
        if scores.is_empty() {
            return Err(CliError::validation(format!("schedule for {id} is empty")));
        }
        if let Some(bad) = scores
            .iter()
            .flat_map(|s| s.as_array())
            .find(|v| !(0.0..=100.0).contains(v))
        {
            return Err(CliError::validation(format!(
                "schedule for {id} has score {bad} outside [0, 100]"
            )));
        }
        out.insert(id, scores);
    }
    Ok(out)
}

fn session_inputs(m: &Manifest) -> CliResult<Vec<SessionInput>> {
    let mut missing = Vec::new();
    let mut inputs = Vec::new();
    for img in &m.images {
        match (img.source(), &img.instruction) {
            (Some(source), Some(instruction)) => inputs.push(SessionInput {
                session_id: img.image.id.clone(),
                source,
                edited: img.image.clone(),
                instruction: instruction.clone(),
            }),
            _ => missing.push(img.image.id.as_str()),
        }
    }
    if !missing.is_empty() {
        for id in &missing {
            eprintln!("{id}: refine needs source_path and instruction");
        }
        return Err(CliError::validation(format!(
            "{} image(s) without source_path or instruction",
            missing.len()
        )));
    }
    Ok(inputs)
}

pub fn run(args: RefineArgs, g: &Globals) -> CliResult<()> {
    let file = &g.file.refine;
    let defaults = LoopConfig::default();
    let cfg = LoopConfig {
        max_turns: args.max_turns.or(file.max_turns).unwrap_or(defaults.max_turns),
        improvement_epsilon: file.improvement_epsilon.unwrap_or(defaults.improvement_epsilon),
        keep_best: file.keep_best.unwrap_or(defaults.keep_best),
        ..defaults
    };
    cfg.validate()?;
    let endpoints = if args.mock {
        None
    } else {
        match args.endpoints.clone().or_else(|| file.endpoints.clone()) {
            Some(url) => Some(url),
            None => return Err(CliError::validation("refine needs --mock or --endpoints")),
        }
    };

    let mock_cfg = if args.mock {
        let mut mc = MockConfig::with_seed(g.seed);
        if let Some(path) = &args.mock_schedule {
            mc.schedules = load_schedule(path)?;
        }
        Some(mc)
    } else {
        None
    };

    let manifest = load_annotation_manifest(&args.manifest)?;
    let inputs = session_inputs(&manifest)?;

    let provider: Box<dyn BackendProvider> = match (&mock_cfg, &endpoints) {
        (Some(mc), _) => Box::new(MockProvider::new(mc.clone())),
        (None, Some(url)) => {
            let client = HttpClient::with_reqwest(HttpConfig::new(url.clone()))
                .map_err(|e| CliError::runtime(format!("http client: {e}")))?;
            Box::new(HttpProvider::new(client))
        }
        (None, None) => unreachable!("checked above"),
    };

    log::info!(
        "refining {} session(s), max {} turns, parallelism {}",
        inputs.len(),
        cfg.max_turns,
        g.parallelism
    );
    let report = run_batch(&inputs, provider.as_ref(), &cfg, g.parallelism)?;

    ensure_dir(&args.out_dir)?;
    let trace_root = args.out_dir.join("traces");
    for (input, outcome) in inputs.iter().zip(&report.outcomes) {
        if let Some(session) = &outcome.session {
            write_trace(session, &input.edited, &trace_root.join(&outcome.session_id))?;
        }
        if let Some(e) = &outcome.error {
            log::error!("session {} failed: {e}", outcome.session_id);
        }
    }
    write_csv(&args.out_dir.join("summary.csv"), &SUMMARY_HEADER, &report.rows())?;
    write_csv(
        &args.out_dir.join("aggregate.csv"),
        &AGGREGATE_HEADER,
        &[AggregateRow::from(&report.summary)],
    )?;
    write_json(
        &args.out_dir.join("run.json"),
        &RunRecord {
            backend: if mock_cfg.is_some() { "mock" } else { "http" },
            endpoints: endpoints.as_deref(),
            mock: mock_cfg.as_ref(),
            loop_config: &cfg,
        },
    )?;

    let s = &report.summary;
    log::info!(
        "{} ok, {} failed, mean turns {:.2}, mean overall delta {:+.3}",
        s.n_succeeded,
        s.n_failed,
        s.mean_turns,
        s.mean_delta_overall
    );
    if s.n_failed > 0 {
        return Err(CliError::runtime(format!("{} session(s) failed", s.n_failed)));
    }
    Ok(())
}
