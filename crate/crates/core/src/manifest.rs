//! Annotation manifest: images, region annotations and optional ratings in one JSON file.
//!
//! ```json
//! {
//!   "images": [{"id": "a", "width": 64, "height": 64, "path": "a.png",
//!               "source_path": "a_src.png", "instruction": "make the sky pink"}],
//!   "annotations": [{"image_id": "a", "region_kind": "artifact",
//!                    "boxes": [{"x_min": 1, "y_min": 1, "x_max": 9, "y_max": 9,
//!                               "disks": [{"cx": 5, "cy": 5, "radius": 3.2}],
//!                               "description": "smeared texture"}]}],
//!   "ratings": [{"annotator_id": "r1", "image_id": "a",
//!                "dimension": "perceptual_quality", "raw_score": 3.5}]
//! }
//! ```
//!
//! `source_path` and `instruction` are only needed by the refinement loop.
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordViolation, Result};
use crate::mos::RatingRecord;
use crate::types::{validate_annotation, ImageRef, PixelSource, RegionAnnotation, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    #[serde(flatten)]
    pub image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

impl ManifestImage {
    /// The original (pre-edit) image, when the manifest provides one.
    pub fn source(&self) -> Option<ImageRef> {
        self.source_path.as_ref().map(|p| ImageRef {
            id: format!("{}/source", self.image.id),
            width: self.image.width,
            height: self.image.height,
            pixels: PixelSource::Path(p.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ManifestImage>,
    #[serde(default)]
    pub annotations: Vec<RegionAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<Vec<RatingRecord>>,
}

impl Manifest {
    pub fn image(&self, id: &str) -> Option<&ManifestImage> {
        self.images.iter().find(|i| i.image.id == id)
    }

    pub fn annotations_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a RegionAnnotation> {
        self.annotations.iter().filter(move |a| a.image_id == id)
    }

    /// Parse from JSON text and check structural uniqueness. Relative paths
    /// are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Manifest> {
        let mut m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut seen = HashSet::new();
        for img in &m.images {
            if !seen.insert(img.image.id.as_str()) {
                return Err(Error::Parse(
                    Violation::DuplicateImageId(img.image.id.clone()).to_string(),
                ));
            }
        }
        for img in &mut m.images {
            if let PixelSource::Path(p) = &mut img.image.pixels {
                *p = resolve(base_dir, p);
            }
            if let Some(p) = &mut img.source_path {
                *p = resolve(base_dir, p);
            }
        }
        Ok(m)
    }

    /// Every violation in the manifest, keyed by image id.
    pub fn violations(&self) -> Vec<RecordViolation> {
        let index: BTreeMap<&str, &ImageRef> = self
            .images
            .iter()
            .map(|i| (i.image.id.as_str(), &i.image))
            .collect();
        let mut out = Vec::new();
        for img in &self.images {
            for v in img.image.validate() {
                out.push(RecordViolation {
                    record_id: img.image.id.clone(),
                    violation: v,
                });
            }
        }
        for a in &self.annotations {
            let record_id = a.image_id.clone();
            match index.get(a.image_id.as_str()) {
                Some(img) => out.extend(
                    validate_annotation(a, img)
                        .into_iter()
                        .map(|violation| RecordViolation {
                            record_id: record_id.clone(),
                            violation,
                        }),
                ),
                None => out.push(RecordViolation {
                    record_id,
                    violation: Violation::UnknownImage(a.image_id.clone()),
                }),
            }
        }
        for r in self.ratings.iter().flatten() {
            if !index.contains_key(r.image_id.as_str()) {
                out.push(RecordViolation {
                    record_id: r.image_id.clone(),
                    violation: Violation::UnknownImage(r.image_id.clone()),
                });
            }
            if !(1.0..=5.0).contains(&r.raw_score) {
                out.push(RecordViolation {
                    record_id: r.image_id.clone(),
                    violation: Violation::RatingOutOfRange(r.raw_score),
                });
            }
        }
        out
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Read and validate a manifest. Any violation rejects the whole file.
pub fn load_annotation_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let m = Manifest::parse(&text, base)?;
    let violations = m.violations();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(m)
}
