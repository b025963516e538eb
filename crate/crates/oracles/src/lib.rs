//! Slow, obvious reference implementations.
//!
//! Everything here works on plain slices and shares no code with the
//! library, so agreement between the two is meaningful. Maps are row-major
//! `width × height` slices; points are `(x, y)`.

use std::collections::{BTreeMap, BTreeSet};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-pass Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn sim(p: &[f64], g: &[f64]) -> f64 {
    let (sp, sg): (f64, f64) = (p.iter().sum(), g.iter().sum());
    let mut total = 0.0;
    for i in 0..p.len() {
        let a = p[i] / sp;
        let b = g[i] / sg;
        total += if a < b { a } else { b };
    }
    total
}

/// KL(g ‖ p) over sum-normalized maps, `eps` added to the prediction.
pub fn kld(p: &[f64], g: &[f64], eps: f64) -> f64 {
    let (sp, sg): (f64, f64) = (p.iter().sum(), g.iter().sum());
    let mut total = 0.0;
    for i in 0..p.len() {
        let gi = g[i] / sg;
        if gi > 0.0 {
            total += gi * (gi / (p[i] / sp + eps)).ln();
        }
    }
    total.max(0.0)
}

pub fn nss(p: &[f64], width: usize, points: &[(usize, usize)]) -> f64 {
    let m = mean(p);
    let var = p.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / p.len() as f64;
    let sd = var.sqrt();
    let mut total = 0.0;
    for &(x, y) in points {
        total += (p[y * width + x] - m) / sd;
    }
    total / points.len() as f64
}

/// AUC-Judd by enumerating every threshold and counting all pixels at each.
pub fn auc_judd(p: &[f64], width: usize, points: &[(usize, usize)]) -> f64 {
    let fixated: BTreeSet<usize> = points.iter().map(|&(x, y)| y * width + x).collect();
    let n_pos = fixated.len() as f64;
    let n_neg = (p.len() - fixated.len()) as f64;

    let mut thresholds: Vec<f64> = fixated.iter().map(|&i| p[i]).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut curve = vec![(0.0, 0.0)];
    for t in thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (i, &v) in p.iter().enumerate() {
            if v >= t {
                if fixated.contains(&i) {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        curve.push((fp / n_neg, tp / n_pos));
    }
    curve.push((1.0, 1.0));

    let mut area = 0.0;
    for w in curve.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    area
}

/// Rank of each element: one plus the number of smaller elements, plus half
/// the number of other equal elements.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Kendall's tau-b by counting every pair.
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1.0;
            } else if dy == 0.0 {
                ty += 1.0;
            } else if (dx > 0.0) == (dy > 0.0) {
                conc += 1.0;
            } else {
                disc += 1.0;
            }
        }
    }
    (conc - disc) / ((conc + disc + tx) * (conc + disc + ty)).sqrt()
}

/// Peak-normalized sum of full-grid Gaussians, one per `(cx, cy, radius)`.
pub fn gaussian_map(
    disks: &[(f64, f64, f64)],
    width: usize,
    height: usize,
    sigma_factor: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    for &(cx, cy, r) in disks {
        let s = sigma_factor * r;
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                out[y * width + x] += (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    let peak = out.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut out {
            *v /= peak;
        }
    }
    out
}

/// Tight inclusive box `(x_min, y_min, x_max, y_max)` of a pixel set.
pub fn tight_box(pixels: &[(u32, u32)]) -> (u32, u32, u32, u32) {
    let xs = pixels.iter().map(|p| p.0);
    let ys = pixels.iter().map(|p| p.1);
    (
        xs.clone().min().unwrap(),
        ys.clone().min().unwrap(),
        xs.max().unwrap(),
        ys.max().unwrap(),
    )
}

/// One rating: annotator, image, dimension index, raw score.
pub type Rating = (String, String, usize, f64);

fn pop_mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

/// MOS per `(image, dimension)` with per-image outlier bands of `k` standard
/// deviations, exclusion of annotators with outlier fraction above
/// `max_rate`, per-dimension annotator z-scores and the `100 (z + 3) / 6`
/// rescale clipped to `[0, 100]`. Every statistic is recomputed by scanning
/// the full list.
pub fn mos(panel: &[Rating], k: f64, max_rate: f64) -> BTreeMap<(String, usize), f64> {
    let is_outlier = |r: &Rating| {
        let peers: Vec<f64> = panel
            .iter()
            .filter(|q| q.1 == r.1 && q.2 == r.2)
            .map(|q| q.3)
            .collect();
        let (m, s) = pop_mean_std(&peers);
        (r.3 - m).abs() > k * s
    };
    let annotators: BTreeSet<&String> = panel.iter().map(|r| &r.0).collect();
    let mut excluded = BTreeSet::new();
    for a in &annotators {
        let own: Vec<&Rating> = panel.iter().filter(|r| &r.0 == *a).collect();
        let n_out = own.iter().filter(|r| is_outlier(r)).count();
        if n_out as f64 / own.len() as f64 > max_rate {
            excluded.insert((*a).clone());
        }
    }
    let valid: Vec<&Rating> = panel
        .iter()
        .filter(|r| !excluded.contains(&r.0) && !is_outlier(r))
        .collect();

    let mut z_by_cell: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in &valid {
        let own: Vec<f64> = valid
            .iter()
            .filter(|q| q.0 == r.0 && q.2 == r.2)
            .map(|q| q.3)
            .collect();
        let (m, s) = pop_mean_std(&own);
        if s > 0.0 {
            z_by_cell
                .entry((r.1.clone(), r.2))
                .or_default()
                .push((r.3 - m) / s);
        }
    }
    z_by_cell
        .into_iter()
        .map(|(key, zs)| {
            let score = 100.0 * (mean(&zs) + 3.0) / 6.0;
            (key, score.clamp(0.0, 100.0))
        })
        .collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    g
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_hand_cases() {
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        // one tie in x: pairs (1,2) tie, (1,3) and (2,3) concordant
        let t = kendall_tau_b(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!((t - 2.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn auc_perfect_separation() {
        let p = [0.9, 0.1, 0.1, 0.1];
        assert_eq!(auc_judd(&p, 2, &[(0, 0)]), 1.0);
    }
}
