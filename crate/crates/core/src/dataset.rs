//! Patch and pixel datasets.
//!
//! Positive patches are centred on annotated line segments and carry the
//! full refinement ensemble as target. Negative patches come from random
//! debris-free locations and from ship positions. The forest is trained on
//! a roughly balanced pixel set drawn from those patches.

use std::fs;
use std::path::Path;

use log::info;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureVector, FEATURE_NAMES, N_FEATURES};
use crate::flat::FlatRaster;
use crate::raster::{FuzzyMask, Grid, Label, Mask, Patch, Scene};
use crate::refine::{LineAnnotationSet, RefinementResult};
use crate::rng;

/// Side length of training patches.
pub const PATCH_SIZE: usize = 128;
/// Positives and negatives drawn per patch for the pixel set.
pub const PIXELS_PER_IMAGE: usize = 5;
/// Draws allowed per requested random negative before giving up.
pub const NEGATIVE_DRAW_FACTOR: usize = 1000;

const DOMAIN_NEGATIVES: u64 = 20;
const DOMAIN_PIXELS: u64 = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Flobs,
    Marida,
    Ships,
    RandomNegative,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PatchTarget {
    /// Refinement ensemble cropped to the patch.
    Ensemble { masks: Vec<Mask>, average: FuzzyMask },
    Crisp(Mask),
}

impl PatchTarget {
    pub fn plane_count(&self) -> usize {
        match self {
            PatchTarget::Ensemble { masks, .. } => masks.len(),
            PatchTarget::Crisp(_) => 1,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            PatchTarget::Ensemble { average, .. } => average.width(),
            PatchTarget::Crisp(m) => m.width(),
        }
    }

    /// Pixel class used for sampling: ensemble consensus (mean >= 0.5) or
    /// the crisp label. `None` for unlabeled pixels.
    pub fn class_at(&self, i: usize) -> Option<Label> {
        match self {
            PatchTarget::Ensemble { average, .. } => Some(if average.data()[i] >= 0.5 {
                Label::Debris
            } else {
                Label::Other
            }),
            PatchTarget::Crisp(m) => match m.data()[i] {
                Label::Unlabeled => None,
                l => Some(l),
            },
        }
    }

    fn len(&self) -> usize {
        match self {
            PatchTarget::Ensemble { average, .. } => average.len(),
            PatchTarget::Crisp(m) => m.len(),
        }
    }

    /// Planes for storage: 1.0 debris, 0.0 other; the ensemble adds its mean.
    pub fn planes(&self) -> Vec<(String, Vec<f32>)> {
        match self {
            PatchTarget::Ensemble { masks, average } => masks
                .iter()
                .enumerate()
                .map(|(i, m)| (format!("target_{i:02}"), m.to_indicator().into_vec()))
                .chain(std::iter::once(("target_average".to_string(), average.data().to_vec())))
                .collect(),
            PatchTarget::Crisp(m) => vec![("target".to_string(), m.to_indicator().into_vec())],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    pub scene_id: String,
    pub patch: Patch,
    pub target: PatchTarget,
    pub source: SourceTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelOrigin {
    pub scene: String,
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPixel {
    pub features: FeatureVector,
    pub label: Label,
    pub origin: PixelOrigin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPoint {
    pub x: usize,
    pub y: usize,
    pub label: Label,
}

/// Point labels used for the centre-pixel evaluation protocol.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointAnnotationSet {
    pub points: Vec<AnnotatedPoint>,
}

impl PointAnnotationSet {
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        match self.points.iter().find(|p| p.x >= width || p.y >= height) {
            Some(p) => Err(Error::Window(format!(
                "point ({}, {}) outside {width}x{height}",
                p.x, p.y
            ))),
            None => Ok(()),
        }
    }
}

/// Midpoint of a segment, rounded half away from zero.
pub fn segment_midpoint(a: (i64, i64), b: (i64, i64)) -> (i64, i64) {
    let mid = |u: i64, v: i64| ((u + v) as f64 / 2.0).round() as i64;
    (mid(a.0, b.0), mid(a.1, b.1))
}

/// One patch per line segment, centred on the segment midpoint, with the
/// whole refinement ensemble as target.
pub fn patches_from_lines(
    scene: &Scene,
    scene_id: &str,
    lines: &LineAnnotationSet,
    refinement: &RefinementResult,
    size: usize,
) -> Result<Vec<LabeledPatch>> {
    if refinement.width() != scene.width() || refinement.height() != scene.height() {
        return Err(Error::Dimensions(format!(
            "refinement {}x{} vs scene {}x{}",
            refinement.width(),
            refinement.height(),
            scene.width(),
            scene.height()
        )));
    }
    lines
        .segments()
        .map(|(a, b)| {
            let patch = scene.window(segment_midpoint(a, b), size)?;
            let masks = refinement
                .masks
                .iter()
                .map(|m| patch.crop_grid(m))
                .collect::<Result<Vec<_>>>()?;
            Ok(LabeledPatch {
                scene_id: scene_id.to_string(),
                patch,
                target: PatchTarget::Ensemble {
                    masks,
                    average: patch.crop_grid(&refinement.average)?,
                },
                source: SourceTag::Flobs,
            })
        })
        .collect()
}

/// Summed-area table over a boolean mask.
struct Integral {
    width: usize,
    sums: Vec<u64>,
}

impl Integral {
    fn new(mask: &Mask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += mask.get(x, y).is_debris() as u64;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { width: w, sums }
    }

    fn window_sum(&self, p: &Patch) -> u64 {
        let s = self.width + 1;
        let (x0, y0, x1, y1) = (p.x0, p.y0, p.x0 + p.size, p.y0 + p.size);
        self.sums[y1 * s + x1] + self.sums[y0 * s + x0] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0]
    }
}

/// Random patches whose window contains no debris pixel of `debris`.
pub fn random_negatives(
    scene: &Scene,
    scene_id: &str,
    debris: &Mask,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<LabeledPatch>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if debris.width() != scene.width() || debris.height() != scene.height() {
        return Err(Error::Dimensions("debris mask and scene differ in extent".into()));
    }
    let integral = Integral::new(debris);
    let mut rng = rng::derive(seed, DOMAIN_NEGATIVES, 0);
    let budget = NEGATIVE_DRAW_FACTOR * count;
    let mut out = Vec::with_capacity(count);
    for _ in 0..budget {
        let cx = rng.random_range(0..scene.width()) as i64;
        let cy = rng.random_range(0..scene.height()) as i64;
        let patch = scene.window((cx, cy), size)?;
        if integral.window_sum(&patch) > 0 {
            continue;
        }
        out.push(LabeledPatch {
            scene_id: scene_id.to_string(),
            patch,
            target: PatchTarget::Crisp(Grid::new(size, size, Label::Other)),
            source: SourceTag::RandomNegative,
        });
        if out.len() == count {
            return Ok(out);
        }
    }
    Err(Error::SceneSaturated { draws: budget })
}

/// One all-other patch centred on each ship.
pub fn ship_negatives(
    scene: &Scene,
    scene_id: &str,
    centers: &[(i64, i64)],
    size: usize,
) -> Result<Vec<LabeledPatch>> {
    centers
        .iter()
        .map(|&(x, y)| {
            if !scene.contains(x, y) {
                return Err(Error::Window(format!(
                    "ship centre ({x}, {y}) outside {}x{}",
                    scene.width(),
                    scene.height()
                )));
            }
            Ok(LabeledPatch {
                scene_id: scene_id.to_string(),
                patch: scene.window((x, y), size)?,
                target: PatchTarget::Crisp(Grid::new(size, size, Label::Other)),
                source: SourceTag::Ships,
            })
        })
        .collect()
}

/// Up to `per_image` debris and `per_image` other pixels from each patch,
/// without replacement. Features are extracted from the parent scene.
pub fn pixel_dataset(
    scene: &Scene,
    patches: &[LabeledPatch],
    per_image: usize,
    seed: u64,
) -> Result<Vec<LabeledPixel>> {
    if patches.is_empty() {
        return Err(Error::InvalidParameter("no patches".into()));
    }
    let extractor = FeatureExtractor::new(scene)?;
    for p in patches {
        if p.patch.x0 + p.patch.size > scene.width() || p.patch.y0 + p.patch.size > scene.height() {
            return Err(Error::Window(format!("patch {:?} outside scene", p.patch)));
        }
        if p.target.len() != p.patch.size * p.patch.size {
            return Err(Error::Dimensions("patch target does not match patch size".into()));
        }
    }
    let per_patch: Vec<Vec<LabeledPixel>> = patches
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = rng::derive(seed, DOMAIN_PIXELS, k as u64);
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for i in 0..p.target.len() {
                match p.target.class_at(i) {
                    Some(Label::Debris) => pos.push(i),
                    Some(Label::Other) => neg.push(i),
                    _ => {}
                }
            }
            if pos.len() < per_image || neg.len() < per_image {
                info!(
                    "patch {k} ({:?}): {} debris / {} other pixels available",
                    p.source,
                    pos.len(),
                    neg.len()
                );
            }
            let mut out = Vec::with_capacity(2 * per_image);
            for (pool, label) in [(&pos, Label::Debris), (&neg, Label::Other)] {
                let take = per_image.min(pool.len());
                for j in index::sample(&mut rng, pool.len(), take).into_iter() {
                    let i = pool[j];
                    let x = p.patch.x0 + i % p.patch.size;
                    let y = p.patch.y0 + i / p.patch.size;
                    out.push(LabeledPixel {
                        features: extractor.extract(x, y),
                        label,
                        origin: PixelOrigin {
                            scene: p.scene_id.clone(),
                            x,
                            y,
                        },
                    });
                }
            }
            out
        })
        .collect();
    Ok(per_patch.into_iter().flatten().collect())
}

/// CSV with the 26 feature columns, `label`, `scene`, `x`, `y`.
pub fn write_pixels_csv(path: impl AsRef<Path>, pixels: &[LabeledPixel]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    header.extend(["label", "scene", "x", "y"]);
    w.write_record(&header)?;
    for p in pixels {
        let mut rec: Vec<String> = p.features.0.iter().map(|v| v.to_string()).collect();
        rec.push(label_name(p.label).to_string());
        rec.push(p.origin.scene.clone());
        rec.push(p.origin.x.to_string());
        rec.push(p.origin.y.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pixels_csv(path: impl AsRef<Path>) -> Result<Vec<LabeledPixel>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let headers = r.headers()?.clone();
    if headers.len() != N_FEATURES + 4 {
        return Err(Error::Schema(format!(
            "pixel CSV has {} columns, expected {}",
            headers.len(),
            N_FEATURES + 4
        )));
    }
    let parse_err = |what: &str, v: &str| Error::Schema(format!("bad {what} value {v:?}"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut f = [0.0; N_FEATURES];
        for (slot, v) in f.iter_mut().zip(rec.iter()) {
            *slot = v.parse().map_err(|_| parse_err("feature", v))?;
        }
        let label = parse_label(&rec[N_FEATURES])?;
        let x = rec[N_FEATURES + 2].parse().map_err(|_| parse_err("x", &rec[N_FEATURES + 2]))?;
        let y = rec[N_FEATURES + 3].parse().map_err(|_| parse_err("y", &rec[N_FEATURES + 3]))?;
        out.push(LabeledPixel {
            features: FeatureVector(f),
            label,
            origin: PixelOrigin {
                scene: rec[N_FEATURES + 1].to_string(),
                x,
                y,
            },
        });
    }
    Ok(out)
}

pub fn label_name(label: Label) -> &'static str {
    match label {
        Label::Debris => "debris",
        Label::Other => "other",
        Label::Unlabeled => "unlabeled",
    }
}

pub fn parse_label(s: &str) -> Result<Label> {
    match s.trim().to_ascii_lowercase().as_str() {
        "debris" | "marine_debris" | "marine debris" | "1" => Ok(Label::Debris),
        "other" | "0" => Ok(Label::Other),
        other => Err(Error::Schema(format!("unknown label {other:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub scene: String,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    pub source: SourceTag,
    pub target_planes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchManifest {
    pub patches: Vec<ManifestEntry>,
}

/// Writes each patch as a DSCN file (scene bands followed by target planes)
/// plus `manifest.json`.
pub fn write_patch_dir(scene: &Scene, patches: &[LabeledPatch], dir: impl AsRef<Path>) -> Result<PatchManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(patches.len());
    for (i, p) in patches.iter().enumerate() {
        let crop = p.patch.extract(scene)?;
        let mut flat = FlatRaster::from_scene(&crop);
        let target = p.target.planes();
        let target_planes = target.len();
        for (name, plane) in target {
            flat.names.push(name);
            flat.planes.push(plane);
        }
        let file = format!("patch_{i:05}.dscn");
        flat.write(dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            scene: p.scene_id.clone(),
            x0: p.patch.x0,
            y0: p.patch.y0,
            size: p.patch.size,
            source: p.source,
            target_planes,
        });
    }
    let manifest = PatchManifest { patches: entries };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
