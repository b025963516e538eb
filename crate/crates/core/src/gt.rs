//! Ground-truth flaw saliency from annotated disks.
//!
//! Every disk contributes an isotropic Gaussian centered on the disk with
//! `σ = kernel_sigma_factor × radius`. Kernels are evaluated on the full grid
//! without truncation, summed, and by default peak-normalized to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::types::{Disk, RegionAnnotation, RegionKind, SaliencyMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the grid maximum so the peak is exactly 1.
    #[default]
    Peak,
    /// Keep raw kernel sums, saturating at 1 where kernels overlap.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBuildConfig {
    pub kernel_sigma_factor: f64,
    pub normalization: Normalization,
}

impl Default for GtBuildConfig {
    fn default() -> Self {
        GtBuildConfig {
            kernel_sigma_factor: 0.5,
            normalization: Normalization::Peak,
        }
    }
}

impl GtBuildConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kernel_sigma_factor > 0.0) || !self.kernel_sigma_factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel_sigma_factor must be > 0, got {}",
                self.kernel_sigma_factor
            )));
        }
        Ok(())
    }
}

pub fn build_gt_map(
    disks: &[Disk],
    width: u32,
    height: u32,
    cfg: &GtBuildConfig,
) -> Result<SaliencyMap> {
    build_gt_map_with(disks, width, height, cfg, Exec::default())
}

/// [`build_gt_map`] with an explicit execution strategy. Rows are evaluated
/// independently, so both strategies produce bit-identical maps.
pub fn build_gt_map_with(
    disks: &[Disk],
    width: u32,
    height: u32,
    cfg: &GtBuildConfig,
    exec: Exec,
) -> Result<SaliencyMap> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty image dimensions {width}x{height}"
        )));
    }
    cfg.validate()?;
    for d in disks {
        if let Some(v) = d.validate(width, height).first() {
            return Err(Error::InvalidArgument(v.to_string()));
        }
    }

    // Canonical order makes the floating-point sum independent of input order.
    let mut kernels: Vec<(f64, f64, f64)> = disks
        .iter()
        .map(|d| {
            let sigma = cfg.kernel_sigma_factor * d.radius;
            (d.cx, d.cy, 2.0 * sigma * sigma)
        })
        .collect();
    kernels.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });

    let rows = exec.map_range(height as usize, |y| {
        let yf = y as f64;
        (0..width)
            .map(|x| {
                let xf = x as f64;
                kernels
                    .iter()
                    .map(|&(cx, cy, two_var)| {
                        let (dx, dy) = (xf - cx, yf - cy);
                        (-(dx * dx + dy * dy) / two_var).exp()
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let mut values: Vec<f64> = rows.into_iter().flatten().collect();

    match cfg.normalization {
        Normalization::Peak => {
            let peak = values.iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                values.iter_mut().for_each(|v| *v /= peak);
            }
        }
        Normalization::None => values.iter_mut().for_each(|v| *v = v.min(1.0)),
    }
    SaliencyMap::new(width, height, values)
}

/// Build one map per region kind for an image from its annotations.
pub fn build_image_maps(
    annotations: &[&RegionAnnotation],
    width: u32,
    height: u32,
    cfg: &GtBuildConfig,
    exec: Exec,
) -> Result<Vec<(RegionKind, SaliencyMap)>> {
    RegionKind::ALL
        .iter()
        .map(|&kind| {
            let disks: Vec<Disk> = annotations
                .iter()
                .filter(|a| a.region_kind == kind)
                .flat_map(|a| a.disks().copied())
                .collect();
            Ok((kind, build_gt_map_with(&disks, width, height, cfg, exec)?))
        })
        .collect()
}
