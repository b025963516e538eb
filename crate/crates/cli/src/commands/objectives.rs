use std::path::PathBuf;

use clap::Args;
use editrefiner_core::objectives::{
    grpo_objective, hybrid_saliency_loss, overall_score, score_loss, DimensionScores, GrpoBatch,
    HybridLossWeights,
};
use editrefiner_core::SaliencyMap;
use serde::{Deserialize, Serialize};

use super::{read_text, write_csv};
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct EvalObjectivesArgs {
    /// JSON array of fixtures, each tagged with `"objective"`.
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case")]
enum Fixture {
    Grpo {
        name: String,
        #[serde(flatten)]
        batch: GrpoBatch,
    },
    HybridSaliencyLoss {
        name: String,
        pred: SaliencyMap,
        gt: SaliencyMap,
        #[serde(default)]
        weights: Option<HybridLossWeights>,
    },
    OverallScore {
        name: String,
        scores: DimensionScores,
    },
    ScoreLoss {
        name: String,
        pred: Vec<DimensionScores>,
        gt: Vec<DimensionScores>,
    },
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    name: &'a str,
    objective: &'static str,
    value: f64,
}

pub fn run(args: EvalObjectivesArgs, _g: &Globals) -> CliResult<()> {
    let fixtures: Vec<Fixture> = serde_json::from_str(&read_text(&args.fixtures)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", args.fixtures.display())))?;
    let mut rows = Vec::with_capacity(fixtures.len());
    for f in &fixtures {
        let row = match f {
            Fixture::Grpo { name, batch } => Row {
                name,
                objective: "grpo",
                value: grpo_objective(batch)?,
            },
            Fixture::HybridSaliencyLoss { name, pred, gt, weights } => Row {
                name,
                objective: "hybrid_saliency_loss",
                value: hybrid_saliency_loss(pred, gt, &weights.unwrap_or_default())?,
            },
            Fixture::OverallScore { name, scores } => Row {
                name,
                objective: "overall_score",
                value: overall_score(scores)?,
            },
            Fixture::ScoreLoss { name, pred, gt } => Row {
                name,
                objective: "score_loss",
                value: score_loss(pred, gt)?,
            },
        };
        rows.push(row);
    }
    write_csv(&args.out, &["name", "objective", "value"], &rows)
}
