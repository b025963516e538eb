//! Shared domain types: images, saliency grids, masks, annotated regions.
//!
//! Coordinates are integer pixels with the origin at the top-left corner and
//! y growing downward. Disk centers are real-valued. Boxes are inclusive on
//! both corners, so a 1×1 region is `(x, y, x, y)`.

use std::fmt;
use std::path::PathBuf;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the 8-bit RGB pixels of an image live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelSource {
    /// An image file on disk, decoded on demand.
    Path(PathBuf),
    /// Row-major packed RGB8 bytes (`width * height * 3`).
    InlineRgb(#[serde(with = "crate::raster::base64_bytes")] Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub pixels: PixelSource,
}

impl ImageRef {
    pub fn from_rgb(id: impl Into<String>, img: &RgbImage) -> Self {
        ImageRef {
            id: id.into(),
            width: img.width(),
            height: img.height(),
            pixels: PixelSource::InlineRgb(img.as_raw().clone()),
        }
    }

    /// Decode the pixels and check them against the declared dimensions.
    pub fn load_rgb(&self) -> Result<RgbImage> {
        let img = match &self.pixels {
            PixelSource::Path(p) => image::open(p)
                .map_err(|e| Error::Codec(format!("{}: {e}", p.display())))?
                .to_rgb8(),
            PixelSource::InlineRgb(bytes) => {
                RgbImage::from_raw(self.width, self.height, bytes.clone()).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "image {}: inline buffer has {} bytes, expected {}",
                        self.id,
                        bytes.len(),
                        self.width as usize * self.height as usize * 3
                    ))
                })?
            }
        };
        if img.dimensions() != (self.width, self.height) {
            return Err(Error::InvalidInput(format!(
                "image {}: declared {}x{}, decoded {}x{}",
                self.id,
                self.width,
                self.height,
                img.width(),
                img.height()
            )));
        }
        Ok(img)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push(Violation::EmptyImageId);
        }
        if self.width == 0 || self.height == 0 {
            out.push(Violation::EmptyImage {
                width: self.width,
                height: self.height,
            });
        }
        out
    }
}

/// A per-pixel map with values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid<f64>", into = "RawGrid<f64>")]
pub struct SaliencyMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGrid<T> {
    width: u32,
    height: u32,
    values: Vec<T>,
}

impl TryFrom<RawGrid<f64>> for SaliencyMap {
    type Error = Error;
    fn try_from(raw: RawGrid<f64>) -> Result<Self> {
        SaliencyMap::new(raw.width, raw.height, raw.values)
    }
}

impl From<SaliencyMap> for RawGrid<f64> {
    fn from(m: SaliencyMap) -> Self {
        RawGrid {
            width: m.width,
            height: m.height,
            values: m.values,
        }
    }
}

impl SaliencyMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "saliency value out of [0,1]: {v} at index {i}"
            )));
        }
        Ok(SaliencyMap {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, vec![0.0; width as usize * height as usize])
    }

    /// Build a map from a generator evaluated at every `(x, y)`.
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f64) -> Result<Self> {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, values)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Rescale so that the maximum is exactly 1. All-zero maps are returned unchanged.
    pub fn peak_normalized(&self) -> SaliencyMap {
        let peak = self.max();
        if peak <= 0.0 {
            return self.clone();
        }
        SaliencyMap {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v / peak).collect(),
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn check_dims(width: u32, height: u32, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty grid dimensions {width}x{height}"
        )));
    }
    if len != width as usize * height as usize {
        return Err(Error::InvalidArgument(format!(
            "grid of {width}x{height} needs {} values, got {len}",
            width as usize * height as usize
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid<bool>", into = "RawGrid<bool>")]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl TryFrom<RawGrid<bool>> for BinaryMask {
    type Error = Error;
    fn try_from(raw: RawGrid<bool>) -> Result<Self> {
        BinaryMask::new(raw.width, raw.height, raw.values)
    }
}

impl From<BinaryMask> for RawGrid<bool> {
    fn from(m: BinaryMask) -> Self {
        RawGrid {
            width: m.width,
            height: m.height,
            values: m.bits,
        }
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Result<Self> {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

/// Axis-aligned box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min as f64 + self.x_max as f64) / 2.0,
            (self.y_min as f64 + self.y_max as f64) / 2.0,
        )
    }

    pub fn validate(&self, width: u32, height: u32) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.x_min > self.x_max || self.y_min > self.y_max {
            out.push(Violation::InvertedBox(*self));
        }
        if self.x_max >= width || self.y_max >= height {
            out.push(Violation::BoxOutOfBounds {
                bbox: *self,
                width,
                height,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Disk {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        Disk { cx, cy, radius }
    }

    /// Radius used by the annotation protocol: one twentieth of the image height.
    pub fn protocol_radius(image_height: u32) -> f64 {
        image_height as f64 / 20.0
    }

    pub fn validate(&self, width: u32, height: u32) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            out.push(Violation::NonPositiveRadius(self.radius));
        }
        let inside = self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < width as f64
            && self.cy < height as f64;
        if !inside {
            out.push(Violation::DiskOutOfBounds {
                cx: self.cx,
                cy: self.cy,
                width,
                height,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Artifact,
    EditingFailure,
}

impl RegionKind {
    pub const ALL: [RegionKind; 2] = [RegionKind::Artifact, RegionKind::EditingFailure];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionKind::Artifact => "artifact",
            RegionKind::EditingFailure => "editing_failure",
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One flawed semantic object: its enclosing box, the disks marking the
/// localized flaws inside it, and the annotator's description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    #[serde(default)]
    pub disks: Vec<Disk>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    pub image_id: String,
    pub region_kind: RegionKind,
    pub boxes: Vec<AnnotatedBox>,
}

impl RegionAnnotation {
    pub fn disks(&self) -> impl Iterator<Item = &Disk> {
        self.boxes.iter().flat_map(|b| b.disks.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlawDiagnosis {
    pub region_kind: RegionKind,
    pub flaw_type: String,
    pub reasoning: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl FlawDiagnosis {
    pub fn validate(&self, width: u32, height: u32) -> Vec<Violation> {
        let mut out = self.bbox.validate(width, height);
        if self.flaw_type.trim().is_empty() {
            out.push(Violation::EmptyFlawType);
        }
        out
    }
}

/// A broken invariant found while validating annotations or messages.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyImageId,
    EmptyImage { width: u32, height: u32 },
    ImageMismatch { annotation: String, image: String },
    BoxWithoutDisk { box_index: usize },
    InvertedBox(BoundingBox),
    BoxOutOfBounds { bbox: BoundingBox, width: u32, height: u32 },
    NonPositiveRadius(f64),
    DiskOutOfBounds { cx: f64, cy: f64, width: u32, height: u32 },
    EmptyFlawType,
    DuplicateImageId(String),
    UnknownImage(String),
    RatingOutOfRange(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyImageId => write!(f, "empty image id"),
            Violation::EmptyImage { width, height } => {
                write!(f, "empty image dimensions {width}x{height}")
            }
            Violation::ImageMismatch { annotation, image } => {
                write!(f, "annotation for {annotation} checked against image {image}")
            }
            Violation::BoxWithoutDisk { box_index } => {
                write!(f, "box without disk (box #{box_index})")
            }
            Violation::InvertedBox(b) => write!(f, "inverted box {b:?}"),
            Violation::BoxOutOfBounds {
                bbox,
                width,
                height,
            } => write!(f, "box out of bounds {bbox:?} in {width}x{height}"),
            Violation::NonPositiveRadius(r) => write!(f, "disk radius must be positive, got {r}"),
            Violation::DiskOutOfBounds {
                cx,
                cy,
                width,
                height,
            } => write!(f, "disk center ({cx}, {cy}) out of bounds in {width}x{height}"),
            Violation::EmptyFlawType => write!(f, "empty flaw type"),
            Violation::DuplicateImageId(id) => write!(f, "duplicate image id {id}"),
            Violation::UnknownImage(id) => write!(f, "annotation references unknown image {id}"),
            Violation::RatingOutOfRange(s) => write!(f, "rating {s} outside [1,5]"),
        }
    }
}

/// Check an annotation against the image it belongs to. Violations are
/// returned rather than raised; an empty list means the annotation is valid.
pub fn validate_annotation(a: &RegionAnnotation, img: &ImageRef) -> Vec<Violation> {
    let mut out = img.validate();
    if a.image_id != img.id {
        out.push(Violation::ImageMismatch {
            annotation: a.image_id.clone(),
            image: img.id.clone(),
        });
    }
    for (i, b) in a.boxes.iter().enumerate() {
        out.extend(b.bbox.validate(img.width, img.height));
        if b.disks.is_empty() {
            out.push(Violation::BoxWithoutDisk { box_index: i });
        }
        for d in &b.disks {
            out.extend(d.validate(img.width, img.height));
        }
    }
    out
}
