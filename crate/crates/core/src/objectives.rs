//! Training objectives and the overall-score formula as plain numeric functions.
//!
//! Nothing here trains a model. The functions evaluate the losses, and the
//! two differentiable ones also expose analytic gradients so they can be
//! checked against finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::types::SaliencyMap;

/// Probability clamp for the binary cross-entropy term.
pub const BCE_EPS: f64 = 1e-7;
/// Regularizer inside the log of the KL term.
pub const KL_EPS: f64 = 1e-7;
/// Floor applied to evaluator scores before they enter [`overall_score`].
pub const SCORE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridLossWeights {
    /// Weight of the L1 term.
    pub alpha: f64,
    /// Weight of the BCE term. The KL term gets `1 - alpha - beta`.
    pub beta: f64,
}

impl Default for HybridLossWeights {
    fn default() -> Self {
        HybridLossWeights {
            alpha: 0.3,
            beta: 0.3,
        }
    }
}

impl HybridLossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta <= 1.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "hybrid loss weights need alpha, beta >= 0 and alpha + beta <= 1, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn kl_weight(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }
}

/// The three terms of the hybrid saliency loss, unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridTerms {
    pub l1: f64,
    pub bce: f64,
    pub kl: f64,
}

fn check_pair(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<(f64, f64)> {
    if pred.dims() != gt.dims() {
        return Err(Error::InvalidArgument(format!(
            "map dimension mismatch: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let p_mass: f64 = pred.values().iter().sum();
    let g_mass: f64 = gt.values().iter().sum();
    if p_mass <= 0.0 || g_mass <= 0.0 {
        return Err(Error::UndefinedMetric(
            "KL term needs positive mass in both maps".into(),
        ));
    }
    Ok((p_mass, g_mass))
}

/// Per-pixel terms: mean |p - g|, mean BCE with clamped `p`, and
/// `KL(ĝ ‖ p̂)` over sum-normalized maps.
pub fn hybrid_terms(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<HybridTerms> {
    let (p_mass, g_mass) = check_pair(pred, gt)?;
    let n = pred.values().len() as f64;
    let (mut l1, mut bce, mut kl) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        l1 += (p - g).abs();
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        bce -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
        let gn = g / g_mass;
        if gn > 0.0 {
            kl += gn * (gn / (p / p_mass + KL_EPS)).ln();
        }
    }
    Ok(HybridTerms {
        l1: l1 / n,
        bce: bce / n,
        kl,
    })
}

pub fn hybrid_saliency_loss(
    pred: &SaliencyMap,
    gt: &SaliencyMap,
    w: &HybridLossWeights,
) -> Result<f64> {
    w.validate()?;
    let t = hybrid_terms(pred, gt)?;
    Ok(w.alpha * t.l1 + w.beta * t.bce + w.kl_weight() * t.kl)
}

/// Gradient of [`hybrid_saliency_loss`] with respect to every prediction value.
///
/// The L1 subgradient is taken as 0 where `p == g`; BCE contributes nothing
/// where the clamp is active.
pub fn hybrid_saliency_loss_grad(
    pred: &SaliencyMap,
    gt: &SaliencyMap,
    w: &HybridLossWeights,
) -> Result<Vec<f64>> {
    w.validate()?;
    let (p_mass, g_mass) = check_pair(pred, gt)?;
    let n = pred.values().len() as f64;

    // d/dp_k of -Σ_i ĝ_i ln(p_i/P + ε) = -ĝ_k/(P(p̂_k+ε)) + Σ_i ĝ_i p_i / (P²(p̂_i+ε))
    let shared: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| (g / g_mass) * p / (p_mass * p_mass * (p / p_mass + KL_EPS)))
        .sum();

    Ok(pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| {
            let d_l1 = if p > g {
                1.0
            } else if p < g {
                -1.0
            } else {
                0.0
            } / n;
            let d_bce = if p > BCE_EPS && p < 1.0 - BCE_EPS {
                (-(g / p) + (1.0 - g) / (1.0 - p)) / n
            } else {
                0.0
            };
            let d_kl = -(g / g_mass) / (p_mass * (p / p_mass + KL_EPS)) + shared;
            w.alpha * d_l1 + w.beta * d_bce + w.kl_weight() * d_kl
        })
        .collect())
}

/// Token-level inputs to the clipped policy objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoBatch {
    pub log_probs_policy: Vec<f64>,
    pub log_probs_ref: Vec<f64>,
    pub advantages: Vec<f64>,
    pub clip_eps: f64,
    pub kl_coeff: f64,
}

impl GrpoBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.log_probs_policy.len();
        if n == 0 || self.log_probs_ref.len() != n || self.advantages.len() != n {
            return Err(Error::InvalidArgument(format!(
                "GRPO batch needs equal non-empty sequences, got {}/{}/{}",
                n,
                self.log_probs_ref.len(),
                self.advantages.len()
            )));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clip_eps must be in (0,1), got {}",
                self.clip_eps
            )));
        }
        if !(self.kl_coeff >= 0.0) || !self.kl_coeff.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kl_coeff must be >= 0, got {}",
                self.kl_coeff
            )));
        }
        let all = self
            .log_probs_policy
            .iter()
            .chain(&self.log_probs_ref)
            .chain(&self.advantages);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite log-prob or advantage".into()));
        }
        Ok(())
    }

    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_probs_policy
            .iter()
            .zip(&self.log_probs_ref)
            .map(|(p, r)| (p - r).exp())
    }
}

/// `mean_t min(r_t A_t, clip(r_t, 1-ε, 1+ε) A_t) - β mean_t(log π_θ - log π_ref)`.
pub fn grpo_objective(b: &GrpoBatch) -> Result<f64> {
    b.validate()?;
    let n = b.advantages.len() as f64;
    let (lo, hi) = (1.0 - b.clip_eps, 1.0 + b.clip_eps);
    let surrogate: f64 = b
        .ratios()
        .zip(&b.advantages)
        .map(|(r, &a)| (r * a).min(r.clamp(lo, hi) * a))
        .sum();
    let kl: f64 = b
        .log_probs_policy
        .iter()
        .zip(&b.log_probs_ref)
        .map(|(p, r)| p - r)
        .sum();
    Ok(surrogate / n - b.kl_coeff * kl / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoGrad {
    pub log_probs_policy: Vec<f64>,
    pub log_probs_ref: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Analytic gradient of [`grpo_objective`]. At the clip boundary the
/// unclipped branch is used.
pub fn grpo_objective_grad(b: &GrpoBatch) -> Result<GrpoGrad> {
    b.validate()?;
    let n = b.advantages.len() as f64;
    let (lo, hi) = (1.0 - b.clip_eps, 1.0 + b.clip_eps);
    let mut g = GrpoGrad {
        log_probs_policy: Vec::with_capacity(b.advantages.len()),
        log_probs_ref: Vec::with_capacity(b.advantages.len()),
        advantages: Vec::with_capacity(b.advantages.len()),
    };
    for (r, &a) in b.ratios().zip(&b.advantages) {
        let clipped = r.clamp(lo, hi);
        let unclipped_wins = r * a <= clipped * a;
        // d(r A)/d log π_θ = r A; the clipped branch is flat in r.
        let d_ratio = if unclipped_wins { r * a } else { 0.0 };
        g.log_probs_policy.push((d_ratio - b.kl_coeff) / n);
        g.log_probs_ref.push((-d_ratio + b.kl_coeff) / n);
        g.advantages
            .push(if unclipped_wins { r } else { clipped } / n);
    }
    Ok(g)
}

/// Group-relative advantages: `(reward - mean) / (std + eps)` with population std.
pub fn group_relative_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

/// A structured diagnosis as produced by the reasoning model, for reward scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisText {
    pub flaw_type: String,
    pub reasoning: String,
}

/// Scores a raw reasoning-model completion against a reference diagnosis.
pub trait RewardFn {
    fn reward(&self, completion: &str, reference: &DiagnosisText) -> f64;
}

/// Equal-weight mix of a format check (completion parses as a JSON diagnosis),
/// exact flaw-type match, and token-set Jaccard overlap of the reasoning.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultReward;

impl RewardFn for DefaultReward {
    fn reward(&self, completion: &str, reference: &DiagnosisText) -> f64 {
        let Ok(parsed) = serde_json::from_str::<DiagnosisText>(completion) else {
            return 0.0;
        };
        let format = 1.0;
        let flaw = if parsed.flaw_type.trim().eq_ignore_ascii_case(reference.flaw_type.trim()) {
            1.0
        } else {
            0.0
        };
        let similarity = jaccard(&parsed.reasoning, &reference.reasoning);
        (format + flaw + similarity) / 3.0
    }
}

fn jaccard(a: &str, b: &str) -> f64 {
    use std::collections::BTreeSet;
    let tokens = |s: &str| -> BTreeSet<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    };
    let (ta, tb) = (tokens(a), tokens(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Per-image evaluator scores: perceptual quality `s_v`, instruction
/// following `s_e`, visual consistency `s_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub perceptual_quality: f64,
    pub instruction_following: f64,
    pub visual_consistency: f64,
}

impl DimensionScores {
    pub fn new(perceptual_quality: f64, instruction_following: f64, visual_consistency: f64) -> Self {
        DimensionScores {
            perceptual_quality,
            instruction_following,
            visual_consistency,
        }
    }

    pub fn uniform(s: f64) -> Self {
        Self::new(s, s, s)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [
            self.perceptual_quality,
            self.instruction_following,
            self.visual_consistency,
        ]
    }

    /// Raise every score to at least [`SCORE_FLOOR`].
    pub fn floored(&self) -> Self {
        let f = |v: f64| v.max(SCORE_FLOOR);
        Self::new(
            f(self.perceptual_quality),
            f(self.instruction_following),
            f(self.visual_consistency),
        )
    }
}

pub const OVERALL_EXPONENTS: [f64; 3] = [0.3, 0.4, 0.3];

/// Weighted geometric mean `s_v^0.3 · s_e^0.4 · s_p^0.3`.
pub fn overall_score(s: &DimensionScores) -> Result<f64> {
    let v = s.as_array();
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "overall score needs strictly positive inputs, got {bad}"
        )));
    }
    Ok(v.iter()
        .zip(OVERALL_EXPONENTS)
        .map(|(x, e)| x.powf(e))
        .product())
}

/// `Σ_d [MSE_d + (1 - PLCC_d)]` over the three score dimensions.
pub fn score_loss(pred: &[DimensionScores], gt: &[DimensionScores]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} targets",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "score loss needs at least 3 items, got {}",
            pred.len()
        )));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    for d in 0..3 {
        let p: Vec<f64> = pred.iter().map(|s| s.as_array()[d]).collect();
        let g: Vec<f64> = gt.iter().map(|s| s.as_array()[d]).collect();
        let mse = p.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let r = pearson(&p, &g)?;
        total += mse + (1.0 - r);
    }
    Ok(total)
}
