use std::path::PathBuf;

use clap::Args;
use editrefiner_core::mos::{run_mos_pipeline, MosConfig, OutlierScope, RatingRecord, StatsScope};

use super::{read_text, write_csv};
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct ComputeMosArgs {
    /// CSV with `annotator_id,image_id,dimension,raw_score`, or a JSON array of the same records.
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_outlier_scope)]
    outlier_scope: Option<OutlierScope>,
    #[arg(long, value_parser = parse_stats_scope)]
    stats_scope: Option<StatsScope>,
}

fn parse_outlier_scope(s: &str) -> Result<OutlierScope, String> {
    match s {
        "per_image" => Ok(OutlierScope::PerImage),
        "per_annotator" => Ok(OutlierScope::PerAnnotator),
        _ => Err(format!("expected per_image or per_annotator, got {s:?}")),
    }
}

fn parse_stats_scope(s: &str) -> Result<StatsScope, String> {
    match s {
        "per_dimension" => Ok(StatsScope::PerDimension),
        "all_dimensions" => Ok(StatsScope::AllDimensions),
        _ => Err(format!("expected per_dimension or all_dimensions, got {s:?}")),
    }
}

const HEADER: [&str; 5] = ["image_id", "dimension", "z_mean", "score", "n_valid"];

fn read_ratings(path: &PathBuf) -> CliResult<Vec<RatingRecord>> {
    let bad = |e: &dyn std::fmt::Display| CliError::validation(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_str(&read_text(path)?).map_err(|e| bad(&e));
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let records = reader
        .deserialize()
        .collect::<Result<Vec<RatingRecord>, _>>()
        .map_err(|e| bad(&e))?;
    Ok(records)
}

pub fn run(args: ComputeMosArgs, g: &Globals) -> CliResult<()> {
    let file = &g.file.mos;
    let defaults = MosConfig::default();
    let cfg = MosConfig {
        outlier_scope: args.outlier_scope.or(file.outlier_scope).unwrap_or(defaults.outlier_scope),
        outlier_sigmas: file.outlier_sigmas.unwrap_or(defaults.outlier_sigmas),
        max_outlier_rate: file.max_outlier_rate.unwrap_or(defaults.max_outlier_rate),
        stats_scope: args.stats_scope.or(file.stats_scope).unwrap_or(defaults.stats_scope),
    };
    if !(cfg.outlier_sigmas > 0.0) || !(0.0..=1.0).contains(&cfg.max_outlier_rate) {
        return Err(CliError::validation(format!(
            "need outlier_sigmas > 0 and max_outlier_rate in [0, 1], got {} and {}",
            cfg.outlier_sigmas, cfg.max_outlier_rate
        )));
    }

    let ratings = read_ratings(&args.ratings)?;
    if let Some(r) = ratings.iter().find(|r| !r.raw_score.is_finite()) {
        return Err(CliError::validation(format!(
            "non-finite rating from {} on {}",
            r.annotator_id, r.image_id
        )));
    }
    let report = run_mos_pipeline(&ratings, &cfg)?;
    for a in &report.excluded_annotators {
        log::info!("excluded annotator {a}");
    }
    for d in &report.dropped {
        log::warn!("dropped annotator {}: {}", d.annotator_id, d.reason);
    }
    log::info!(
        "{} ratings, {} outliers removed, {} MOS rows",
        ratings.len(),
        report.removed_outliers.len(),
        report.results.len()
    );
    write_csv(&args.out, &HEADER, &report.results)
}
