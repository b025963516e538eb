//! Saliency metrics (CC, SIM, KLD, NSS, AUC-Judd) and score correlation
//! metrics (SRCC, KRCC, PLCC).
//!
//! Conventions:
//! - KLD is `KL(ground ‖ prediction)` over sum-normalized maps with
//!   [`KLD_EPS`] added to the prediction inside the log. Terms where the
//!   ground truth is zero contribute nothing. The result is floored at 0,
//!   since the regularizer can push identical maps a few ε below it.
//! - AUC-Judd uses the distinct fixation values as thresholds plus the
//!   `(0,0)` and `(1,1)` endpoints. A non-fixation pixel tying a threshold
//!   counts as a false positive. Duplicate fixation points count once.
//! - NSS z-scores with the population standard deviation and averages over
//!   the fixation list as given (duplicates included).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::types::{Disk, SaliencyMap};

pub const KLD_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FixationSet {
    pub points: Vec<(u32, u32)>,
}

impl FixationSet {
    pub fn new(points: Vec<(u32, u32)>) -> Self {
        FixationSet { points }
    }

    /// Fixations taken as annotated disk centers rounded to the nearest pixel.
    pub fn from_disks<'a>(
        disks: impl IntoIterator<Item = &'a Disk>,
        width: u32,
        height: u32,
    ) -> Self {
        let points = disks
            .into_iter()
            .map(|d| {
                let x = (d.cx.round().max(0.0) as u32).min(width - 1);
                let y = (d.cy.round().max(0.0) as u32).min(height - 1);
                (x, y)
            })
            .collect();
        FixationSet { points }
    }

    fn check(&self, map: &SaliencyMap) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidArgument("empty fixation set".into()));
        }
        if let Some(p) = self
            .points
            .iter()
            .find(|(x, y)| *x >= map.width() || *y >= map.height())
        {
            return Err(Error::InvalidArgument(format!(
                "fixation {p:?} outside {}x{} map",
                map.width(),
                map.height()
            )));
        }
        Ok(())
    }
}

/// Paired predicted and ground-truth scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    predictions: Vec<f64>,
    ground_truth: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(predictions: Vec<f64>, ground_truth: Vec<f64>) -> Result<Self> {
        if predictions.len() != ground_truth.len() {
            return Err(Error::InvalidArgument(format!(
                "series length mismatch: {} predictions vs {} ground truth",
                predictions.len(),
                ground_truth.len()
            )));
        }
        if predictions.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least 3 scores, got {}",
                predictions.len()
            )));
        }
        if predictions.iter().chain(&ground_truth).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite score".into()));
        }
        Ok(ScoreSeries {
            predictions,
            ground_truth,
        })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn ground_truth(&self) -> &[f64] {
        &self.ground_truth
    }
}

fn same_dims(p: &SaliencyMap, g: &SaliencyMap) -> Result<()> {
    if p.dims() != g.dims() {
        return Err(Error::InvalidArgument(format!(
            "map dimension mismatch: {:?} vs {:?}",
            p.dims(),
            g.dims()
        )));
    }
    Ok(())
}

/// Pearson correlation via a single streaming pass over the co-moments.
pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (k + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedMetric(
            "correlation of a constant sequence".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn sum_normalized(m: &SaliencyMap, what: &str) -> Result<Vec<f64>> {
    let total: f64 = m.values().iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedMetric(format!("{what} map has zero mass")));
    }
    Ok(m.values().iter().map(|v| v / total).collect())
}

/// Pearson correlation between two maps.
pub fn cc(p: &SaliencyMap, g: &SaliencyMap) -> Result<f64> {
    same_dims(p, g)?;
    pearson(p.values(), g.values())
}

/// Histogram intersection of the two sum-normalized maps.
pub fn sim(p: &SaliencyMap, g: &SaliencyMap) -> Result<f64> {
    same_dims(p, g)?;
    let pn = sum_normalized(p, "prediction")?;
    let gn = sum_normalized(g, "ground-truth")?;
    Ok(pn.iter().zip(&gn).map(|(a, b)| a.min(*b)).sum())
}

/// `KL(g ‖ p)` over sum-normalized maps.
pub fn kld(p: &SaliencyMap, g: &SaliencyMap) -> Result<f64> {
    same_dims(p, g)?;
    let pn = sum_normalized(p, "prediction")?;
    let gn = sum_normalized(g, "ground-truth")?;
    let d: f64 = gn
        .iter()
        .zip(&pn)
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, p)| g * (g / (p + KLD_EPS)).ln())
        .sum();
    Ok(d.max(0.0))
}

/// Mean z-scored map value at the fixations.
pub fn nss(p: &SaliencyMap, f: &FixationSet) -> Result<f64> {
    f.check(p)?;
    let n = p.values().len() as f64;
    let mean = p.values().iter().sum::<f64>() / n;
    let var = p.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::UndefinedMetric("NSS of a constant map".into()));
    }
    let std = var.sqrt();
    let total: f64 = f.points.iter().map(|&(x, y)| (p.get(x, y) - mean) / std).sum();
    Ok(total / f.points.len() as f64)
}

/// Area under the ROC curve with fixated pixels as positives and every
/// other pixel as a negative.
pub fn auc_judd(p: &SaliencyMap, f: &FixationSet) -> Result<f64> {
    f.check(p)?;
    let w = p.width() as usize;
    let mut is_fix = vec![false; p.values().len()];
    for &(x, y) in &f.points {
        is_fix[y as usize * w + x as usize] = true;
    }
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (v, fix) in p.values().iter().zip(&is_fix) {
        if *fix {
            pos.push(*v);
        } else {
            neg.push(*v);
        }
    }
    if neg.is_empty() {
        return Err(Error::UndefinedMetric(
            "fixations cover every pixel; no negatives".into(),
        ));
    }
    let desc = |a: &f64, b: &f64| b.partial_cmp(a).unwrap_or(Ordering::Equal);
    pos.sort_by(desc);
    neg.sort_by(desc);

    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut area = 0.0;
    let (mut prev_tp, mut prev_fp) = (0.0, 0.0);
    let (mut i, mut j) = (0usize, 0usize);
    while i < pos.len() {
        let t = pos[i];
        while i < pos.len() && pos[i] >= t {
            i += 1;
        }
        while j < neg.len() && neg[j] >= t {
            j += 1;
        }
        let (tp, fp) = (i as f64 / np, j as f64 / nn);
        area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    area += (1.0 - prev_fp) * (1.0 + prev_tp) / 2.0;
    Ok(area)
}

/// Ranks starting at 1, ties sharing their average rank.
pub(crate) fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

pub fn plcc(s: &ScoreSeries) -> Result<f64> {
    pearson(&s.predictions, &s.ground_truth)
}

pub fn srcc(s: &ScoreSeries) -> Result<f64> {
    pearson(
        &average_ranks(&s.predictions),
        &average_ranks(&s.ground_truth),
    )
}

/// Kendall's tau-b in O(n log n) (Knight's merge-sort algorithm).
pub fn krcc(s: &ScoreSeries) -> Result<f64> {
    let mut pairs: Vec<(f64, f64)> = s
        .predictions
        .iter()
        .copied()
        .zip(s.ground_truth.iter().copied())
        .collect();
    let n = pairs.len() as u64;
    let n0 = n * (n - 1) / 2;

    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let ties_x = tie_pairs(&pairs, |a, b| a.0 == b.0);
    let ties_xy = tie_pairs(&pairs, |a, b| a == b);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = ys.clone();
    let swaps = merge_count(&mut ys, &mut buf);
    let ties_y = tie_pairs(&ys, |a, b| a == b);

    if ties_x == n0 || ties_y == n0 {
        return Err(Error::UndefinedMetric(
            "Kendall tau of a constant sequence".into(),
        ));
    }
    let numer = n0 as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - ties_x) as f64).sqrt() * ((n0 - ties_y) as f64).sqrt();
    Ok((numer / denom).clamp(-1.0, 1.0))
}

/// Number of tied pairs among runs of equal neighbours in a sorted slice.
fn tie_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for k in 1..=sorted.len() {
        if k < sorted.len() && eq(&sorted[k], &sorted[k - 1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(xs: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = xs.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if xs[j] < xs[i] {
            buf[k] = xs[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = xs[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&xs[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&xs[j..n]);
    xs.copy_from_slice(&buf[..n]);
    swaps
}

/// All five saliency metrics for one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyScores {
    pub cc: f64,
    pub sim: f64,
    pub kld: f64,
    pub nss: f64,
    pub auc_judd: f64,
}

pub fn score_saliency(
    pred: &SaliencyMap,
    gt: &SaliencyMap,
    fixations: &FixationSet,
) -> Result<SaliencyScores> {
    same_dims(pred, gt)?;
    Ok(SaliencyScores {
        cc: cc(pred, gt)?,
        sim: sim(pred, gt)?,
        kld: kld(pred, gt)?,
        nss: nss(pred, fixations)?,
        auc_judd: auc_judd(pred, fixations)?,
    })
}

/// One item of an evaluation corpus.
#[derive(Debug, Clone)]
pub struct SaliencyCase {
    pub id: String,
    pub pred: SaliencyMap,
    pub gt: SaliencyMap,
    pub fixations: FixationSet,
}

/// Score every case independently; order is preserved.
pub fn evaluate_corpus(cases: &[SaliencyCase], exec: Exec) -> Vec<(String, Result<SaliencyScores>)> {
    exec.map(cases, |c| {
        (c.id.clone(), score_saliency(&c.pred, &c.gt, &c.fixations))
    })
}

/// Mean of each metric over the successful rows.
pub fn mean_scores<'a>(rows: impl IntoIterator<Item = &'a SaliencyScores>) -> Option<SaliencyScores> {
    let mut acc = SaliencyScores {
        cc: 0.0,
        sim: 0.0,
        kld: 0.0,
        nss: 0.0,
        auc_judd: 0.0,
    };
    let mut n = 0usize;
    for r in rows {
        acc.cc += r.cc;
        acc.sim += r.sim;
        acc.kld += r.kld;
        acc.nss += r.nss;
        acc.auc_judd += r.auc_judd;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let k = n as f64;
    Some(SaliencyScores {
        cc: acc.cc / k,
        sim: acc.sim / k,
        kld: acc.kld / k,
        nss: acc.nss / k,
        auc_judd: acc.auc_judd / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: u32, h: u32, v: &[f64]) -> SaliencyMap {
        SaliencyMap::new(w, h, v.to_vec()).unwrap()
    }

    fn ramp() -> SaliencyMap {
        SaliencyMap::from_fn(4, 4, |x, y| (x * 4 + y) as f64 / 15.0).unwrap()
    }

    #[test]
    fn cc_self_and_negation() {
        let m = ramp();
        assert!((cc(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        let neg = SaliencyMap::new(4, 4, m.values().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!((cc(&m, &neg).unwrap() + 1.0).abs() < 1e-12);
        let flat = map(4, 4, &[0.3; 16]);
        assert!(matches!(cc(&flat, &m), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn sim_cases() {
        let m = ramp();
        assert!((sim(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        let a = map(2, 1, &[1.0, 0.0]);
        let b = map(2, 1, &[0.0, 1.0]);
        assert_eq!(sim(&a, &b).unwrap(), 0.0);
        let z = SaliencyMap::zeros(2, 1).unwrap();
        assert!(matches!(sim(&z, &a), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn kld_self_is_zero_and_point_mass_is_log_n() {
        let m = ramp();
        assert!(kld(&m, &m).unwrap() < 1e-6);
        let uniform = map(4, 4, &[0.5; 16]);
        let mut point = vec![0.0; 16];
        point[5] = 1.0;
        let point = map(4, 4, &point);
        let d = kld(&uniform, &point).unwrap();
        // ln(1 / (1/16 + ε)) = ln 16 − ln(1 + 16ε)
        assert!((d - 16f64.ln()).abs() <= 16.0 * KLD_EPS);
    }

    #[test]
    fn kld_is_asymmetric() {
        let a = map(3, 1, &[0.1, 0.5, 1.0]);
        let b = map(3, 1, &[0.9, 0.2, 0.3]);
        assert!((kld(&a, &b).unwrap() - kld(&b, &a).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn nss_hand_example() {
        let m = map(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        // mean 0.5, population std 0.5 -> z = 1 at a 1-valued pixel. Scaled
        // copy of the [[0,2],[0,2]] fixture; NSS is affine invariant.
        assert!((nss(&m, &FixationSet::new(vec![(1, 0)])).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nss_all_pixels_is_zero() {
        let m = ramp();
        let all = FixationSet::new((0..4).flat_map(|y| (0..4).map(move |x| (x, y))).collect());
        assert!(nss(&m, &all).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nss_rejects_out_of_bounds_fixation() {
        assert!(matches!(
            nss(&ramp(), &FixationSet::new(vec![(4, 0)])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn auc_perfect_separation_and_no_negatives() {
        let mut v = vec![0.1; 16];
        v[3] = 0.9;
        v[10] = 0.8;
        let m = map(4, 4, &v);
        let f = FixationSet::new(vec![(3, 0), (2, 2)]);
        assert!((auc_judd(&m, &f).unwrap() - 1.0).abs() < 1e-15);
        let all = FixationSet::new((0..4).flat_map(|y| (0..4).map(move |x| (x, y))).collect());
        assert!(matches!(auc_judd(&m, &all), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auc_ties_count_as_false_positives() {
        // one fixation at value 0.5, one negative also at 0.5, one at 0.0:
        // threshold 0.5 -> tp 1, fp 1/2; area = 0.5*0.5*1 + 0.5*1 = 0.75
        let m = map(3, 1, &[0.5, 0.5, 0.0]);
        let f = FixationSet::new(vec![(0, 0)]);
        assert!((auc_judd(&m, &f).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rank_helpers() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(tie_pairs(&[1, 1, 1, 2, 3, 3], |a, b| a == b), 4);
        let mut xs = vec![3.0, 1.0, 2.0, 2.0, 0.0];
        let mut buf = xs.clone();
        assert_eq!(merge_count(&mut xs, &mut buf), 7);
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn correlation_identities() {
        let gt = vec![1.0, 4.0, 2.0, 8.0, 5.0];
        let s = ScoreSeries::new(gt.clone(), gt.clone()).unwrap();
        for f in [plcc, srcc, krcc] {
            assert!((f(&s).unwrap() - 1.0).abs() < 1e-12);
        }
        let rev = ScoreSeries::new(gt.iter().map(|v| -v.powi(3)).collect(), gt.clone()).unwrap();
        assert!((srcc(&rev).unwrap() + 1.0).abs() < 1e-12);
        assert!((krcc(&rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_series_validation() {
        assert!(ScoreSeries::new(vec![1.0, 2.0], vec![1.0, 2.0]).is_err());
        assert!(ScoreSeries::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0]).is_err());
        let flat = ScoreSeries::new(vec![1.0, 2.0, 3.0], vec![2.0; 3]).unwrap();
        for f in [plcc, srcc, krcc] {
            assert!(matches!(f(&flat), Err(Error::UndefinedMetric(_))));
        }
    }

    #[test]
    fn fixations_from_disk_centers() {
        let f = FixationSet::from_disks(&[Disk::new(3.4, 7.6, 2.0), Disk::new(9.9, 0.2, 1.0)], 10, 10);
        assert_eq!(f.points, vec![(3, 8), (9, 0)]);
    }
}
