//! Turning a predicted saliency map into a binary mask and flaw boxes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, BoundingBox, SaliencyMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const EIGHT: [(i64, i64); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionPostConfig {
    pub tau: f64,
    pub connectivity: Connectivity,
    /// Components smaller than this many pixels produce no box.
    pub min_component_area: usize,
}

impl Default for PerceptionPostConfig {
    fn default() -> Self {
        PerceptionPostConfig {
            tau: 0.5,
            connectivity: Connectivity::Eight,
            min_component_area: 16,
        }
    }
}

impl PerceptionPostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be in (0,1), got {}",
                self.tau
            )));
        }
        if self.min_component_area < 1 {
            return Err(Error::InvalidArgument(
                "min_component_area must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Set a bit wherever the map reaches `tau`.
pub fn threshold_map(s: &SaliencyMap, cfg: &PerceptionPostConfig) -> BinaryMask {
    BinaryMask::new(
        s.width(),
        s.height(),
        s.values().iter().map(|&v| v >= cfg.tau).collect(),
    )
    .expect("same dimensions as the source map")
}

/// One tight box per connected component of at least `min_component_area`
/// pixels, sorted by `(y_min, x_min)`.
pub fn extract_boxes(m: &BinaryMask, cfg: &PerceptionPostConfig) -> Vec<BoundingBox> {
    let (w, h) = (m.width() as usize, m.height() as usize);
    let bits = m.bits();
    let mut visited = vec![false; bits.len()];
    let mut queue = VecDeque::new();
    let mut boxes = Vec::new();

    for start in 0..bits.len() {
        if !bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0usize;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for &(dx, dy) in cfg.connectivity.offsets() {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if bits[j] && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if area >= cfg.min_component_area {
            boxes.push(BoundingBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32));
        }
    }
    boxes.sort_by_key(|b| (b.y_min, b.x_min, b.y_max, b.x_max));
    boxes
}

/// Pointwise OR of masks with identical dimensions.
pub fn union_masks(ms: &[BinaryMask]) -> Result<BinaryMask> {
    let first = ms
        .first()
        .ok_or_else(|| Error::InvalidArgument("union of zero masks".into()))?;
    let mut bits = first.bits().to_vec();
    for m in &ms[1..] {
        if m.dims() != first.dims() {
            return Err(Error::InvalidArgument(format!(
                "mask dimension mismatch: {:?} vs {:?}",
                first.dims(),
                m.dims()
            )));
        }
        bits.iter_mut().zip(m.bits()).for_each(|(a, b)| *a |= *b);
    }
    BinaryMask::new(first.width(), first.height(), bits)
}
