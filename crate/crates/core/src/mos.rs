//! Mean opinion scores from raw panel ratings.
//!
//! Pipeline: reject ratings more than two standard deviations from the panel
//! mean of their stimulus, exclude annotators whose outlier rate exceeds 5%,
//! z-score each remaining rating with its annotator's mean and standard
//! deviation, average per image, and rescale `z ∈ [-3, 3]` onto `[0, 100]`.
//!
//! All standard deviations are population (divide by `n`). Records are put in
//! a canonical order before any arithmetic, so results do not depend on input
//! order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    PerceptualQuality,
    InstructionFollowing,
    VisualConsistency,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::PerceptualQuality,
        Dimension::InstructionFollowing,
        Dimension::VisualConsistency,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Dimension::PerceptualQuality => "perceptual_quality",
            Dimension::InstructionFollowing => "instruction_following",
            Dimension::VisualConsistency => "visual_consistency",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dimension {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown dimension {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub annotator_id: String,
    pub image_id: String,
    pub dimension: Dimension,
    pub raw_score: f64,
}

impl RatingRecord {
    pub fn new(annotator: &str, image: &str, dimension: Dimension, raw_score: f64) -> Self {
        RatingRecord {
            annotator_id: annotator.into(),
            image_id: image.into(),
            dimension,
            raw_score,
        }
    }

    fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.annotator_id
            .cmp(&other.annotator_id)
            .then_with(|| self.image_id.cmp(&other.image_id))
            .then(self.dimension.cmp(&other.dimension))
            .then(self.raw_score.total_cmp(&other.raw_score))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorStats {
    pub annotator_id: String,
    pub mean: f64,
    pub std: f64,
    pub n_ratings: usize,
    pub n_outliers: usize,
}

impl AnnotatorStats {
    pub fn outlier_rate(&self) -> f64 {
        if self.n_ratings == 0 {
            0.0
        } else {
            self.n_outliers as f64 / self.n_ratings as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosResult {
    pub image_id: String,
    pub dimension: Dimension,
    pub z_mean: f64,
    pub score: f64,
    pub n_valid: usize,
}

/// Which ratings form the reference distribution when flagging outliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierScope {
    /// All annotators' ratings of the same image and dimension.
    #[default]
    PerImage,
    /// The same annotator's ratings in the same dimension.
    PerAnnotator,
}

/// Which of an annotator's ratings define their `μ_i`, `σ_i` for z-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsScope {
    #[default]
    PerDimension,
    AllDimensions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosConfig {
    pub outlier_scope: OutlierScope,
    pub outlier_sigmas: f64,
    /// Annotators whose outlier fraction is strictly above this are excluded.
    pub max_outlier_rate: f64,
    pub stats_scope: StatsScope,
}

impl Default for MosConfig {
    fn default() -> Self {
        MosConfig {
            outlier_scope: OutlierScope::PerImage,
            outlier_sigmas: 2.0,
            max_outlier_rate: 0.05,
            stats_scope: StatsScope::PerDimension,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutlierReport {
    pub kept: Vec<RatingRecord>,
    pub removed: Vec<RatingRecord>,
    /// One entry per annotator, sorted by id.
    pub stats: Vec<AnnotatorStats>,
}

/// An annotator (or annotator/dimension group) skipped by [`compute_mos`]
/// because their ratings have zero spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedAnnotator {
    pub annotator_id: String,
    pub dimension: Option<Dimension>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosOutcome {
    /// Sorted by `(image_id, dimension)`.
    pub results: Vec<MosResult>,
    pub dropped: Vec<DroppedAnnotator>,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn canonical(panel: &[RatingRecord]) -> Vec<RatingRecord> {
    let mut v = panel.to_vec();
    v.sort_by(RatingRecord::canonical_cmp);
    v
}

/// Flag ratings that sit more than `outlier_sigmas` standard deviations from
/// their reference mean. One pass, no iteration.
pub fn reject_outliers(panel: &[RatingRecord], cfg: &MosConfig) -> Result<OutlierReport> {
    let records = canonical(panel);

    let mut per_annotator: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        per_annotator.entry(&r.annotator_id).or_default().push(i);
    }
    if let Some((id, idx)) = per_annotator.iter().find(|(_, idx)| idx.len() < 2) {
        return Err(Error::InvalidInput(format!(
            "annotator {id} has {} rating(s); at least 2 are required",
            idx.len()
        )));
    }

    let mut groups: BTreeMap<(&str, Dimension), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = match cfg.outlier_scope {
            OutlierScope::PerImage => r.image_id.as_str(),
            OutlierScope::PerAnnotator => r.annotator_id.as_str(),
        };
        groups.entry((key, r.dimension)).or_default().push(i);
    }

    let mut outlier = vec![false; records.len()];
    for idx in groups.values() {
        let (mean, std) = mean_std(idx.iter().map(|&i| records[i].raw_score));
        for &i in idx {
            outlier[i] = (records[i].raw_score - mean).abs() > cfg.outlier_sigmas * std;
        }
    }

    let stats = per_annotator
        .iter()
        .map(|(id, idx)| {
            let (mean, std) = mean_std(idx.iter().map(|&i| records[i].raw_score));
            AnnotatorStats {
                annotator_id: id.to_string(),
                mean,
                std,
                n_ratings: idx.len(),
                n_outliers: idx.iter().filter(|&&i| outlier[i]).count(),
            }
        })
        .collect();

    let (removed, kept): (Vec<_>, Vec<_>) = records
        .into_iter()
        .zip(outlier)
        .partition(|(_, is_out)| *is_out);
    Ok(OutlierReport {
        kept: kept.into_iter().map(|(r, _)| r).collect(),
        removed: removed.into_iter().map(|(r, _)| r).collect(),
        stats,
    })
}

/// Annotators whose outlier fraction is strictly above `max_outlier_rate`.
pub fn exclude_annotators(stats: &[AnnotatorStats], cfg: &MosConfig) -> Vec<String> {
    stats
        .iter()
        .filter(|s| s.outlier_rate() > cfg.max_outlier_rate)
        .map(|s| s.annotator_id.clone())
        .collect()
}

/// Z-score every rating with its annotator's statistics, average per image
/// and dimension, and rescale to `[0, 100]`.
pub fn compute_mos(kept: &[RatingRecord], cfg: &MosConfig) -> MosOutcome {
    let records = canonical(kept);

    let mut annot_groups: BTreeMap<(&str, Option<Dimension>), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let dim = match cfg.stats_scope {
            StatsScope::PerDimension => Some(r.dimension),
            StatsScope::AllDimensions => None,
        };
        annot_groups.entry((&r.annotator_id, dim)).or_default().push(i);
    }

    let mut z = vec![None; records.len()];
    let mut dropped = Vec::new();
    for ((id, dim), idx) in &annot_groups {
        let (mean, std) = mean_std(idx.iter().map(|&i| records[i].raw_score));
        if std <= 0.0 {
            log::warn!("annotator {id} has zero rating spread; dropped from MOS");
            dropped.push(DroppedAnnotator {
                annotator_id: id.to_string(),
                dimension: *dim,
                reason: "zero standard deviation".into(),
            });
            continue;
        }
        for &i in idx {
            z[i] = Some((records[i].raw_score - mean) / std);
        }
    }

    let mut per_image: BTreeMap<(&str, Dimension), Vec<f64>> = BTreeMap::new();
    for (r, z) in records.iter().zip(&z) {
        if let Some(z) = z {
            per_image.entry((&r.image_id, r.dimension)).or_default().push(*z);
        }
    }
    let results = per_image
        .into_iter()
        .map(|((image_id, dimension), zs)| {
            let z_mean = zs.iter().sum::<f64>() / zs.len() as f64;
            MosResult {
                image_id: image_id.to_string(),
                dimension,
                z_mean,
                score: z_to_score(z_mean),
                n_valid: zs.len(),
            }
        })
        .collect();
    MosOutcome { results, dropped }
}

/// `100 (z + 3) / 6`, clipped to `[0, 100]`.
pub fn z_to_score(z: f64) -> f64 {
    (100.0 * (z + 3.0) / 6.0).clamp(0.0, 100.0)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosReport {
    pub results: Vec<MosResult>,
    pub removed_outliers: Vec<RatingRecord>,
    pub excluded_annotators: Vec<String>,
    pub stats: Vec<AnnotatorStats>,
    pub dropped: Vec<DroppedAnnotator>,
}

/// Outlier rejection, annotator exclusion and MOS in one call.
pub fn run_mos_pipeline(panel: &[RatingRecord], cfg: &MosConfig) -> Result<MosReport> {
    let report = reject_outliers(panel, cfg)?;
    let excluded = exclude_annotators(&report.stats, cfg);
    let kept: Vec<RatingRecord> = report
        .kept
        .into_iter()
        .filter(|r| !excluded.contains(&r.annotator_id))
        .collect();
    let outcome = compute_mos(&kept, cfg);
    Ok(MosReport {
        results: outcome.results,
        removed_outliers: report.removed,
        excluded_annotators: excluded,
        stats: report.stats,
        dropped: outcome.dropped,
    })
}
