//! Threshold calibration, tiled scene scoring and detection extraction.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::flat::FlatRaster;
use crate::forest::RandomForestModel;
use crate::geotiff;
use crate::raster::{GeoTransform, Grid, Scene};

pub const DEFAULT_TILE: usize = 480;
pub const DEFAULT_OVERLAP: usize = 64;
pub const DEFAULT_MIN_DISTANCE: usize = 3;

pub const PROBABILITY_PLANE: &str = "probability";

// ---------------------------------------------------------------------------
// calibration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    pub tau: f64,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl CalibratedThreshold {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: CalibratedThreshold = serde_json::from_str(&text)?;
        if !(t.tau > 0.0 && t.tau < 1.0) {
            return Err(Error::Schema(format!("threshold {} outside (0, 1)", t.tau)));
        }
        Ok(t)
    }
}

/// Precision, recall and F1 when predicting positive for `score >= tau`.
pub fn precision_recall_f1(scores: &[(f64, bool)], tau: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut pos) = (0usize, 0usize, 0usize);
    for &(s, l) in scores {
        pos += l as usize;
        if s >= tau {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    prf_from_counts(tp, fp, pos)
}

fn prf_from_counts(tp: usize, fp: usize, positives: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Ordering used to pick among candidate thresholds: smaller
/// `|precision - recall|`, then higher F1, then lower threshold.
pub fn calibration_key(tau: f64, precision: f64, recall: f64, f1: f64) -> (f64, f64, f64) {
    ((precision - recall).abs(), -f1, tau)
}

/// Picks the midpoint between consecutive distinct scores that best balances
/// precision and recall.
pub fn calibrate_threshold(scores: &[(f64, bool)]) -> Result<CalibratedThreshold> {
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(&s.0)) {
        return Err(Error::InvalidParameter(format!("score {} outside [0, 1]", s.0)));
    }
    let positives = scores.iter().filter(|s| s.1).count();
    if positives == 0 || positives == scores.len() {
        return Err(Error::SingleClass);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<((f64, f64, f64), CalibratedThreshold)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if i == sorted.len() {
            break;
        }
        let tau = 0.5 * (v + sorted[i].0);
        let (precision, recall, f1) = prf_from_counts(tp, fp, positives);
        let key = calibration_key(tau, precision, recall, f1);
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((
                key,
                CalibratedThreshold {
                    tau,
                    method: "balanced-precision-recall".into(),
                    precision,
                    recall,
                    f1,
                },
            ));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::InvalidParameter("fewer than two distinct scores".into()))
}

/// Validation-optimal thresholds reported for the reference models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceThresholds {
    pub random_forest: f64,
    pub unet_plus_plus: Vec<f64>,
}

impl ReferenceThresholds {
    pub const BUILTIN_JSON: &'static str = include_str!("../fixtures/reference_thresholds.json");

    pub fn builtin() -> Self {
        Self::from_json(Self::BUILTIN_JSON).expect("bundled reference thresholds are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ReferenceThresholds = serde_json::from_str(text)?;
        for t in std::iter::once(&r.random_forest).chain(&r.unet_plus_plus) {
            if !(*t > 0.0 && *t < 1.0) {
                return Err(Error::Schema(format!("reference threshold {t} outside (0, 1)")));
            }
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// scorers

/// Rectangular pixel window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// Produces debris probabilities for a window of a scene.
pub trait PixelScorer: Sync {
    fn id(&self) -> String;

    /// Grid of exactly `window.width x window.height` values in `[0, 1]`.
    fn score(&self, scene: &Scene, window: Window) -> Result<Grid<f32>>;
}

/// Same probability everywhere.
pub struct ConstantScorer(pub f32);

impl PixelScorer for ConstantScorer {
    fn id(&self) -> String {
        format!("constant:{}", self.0)
    }

    fn score(&self, _scene: &Scene, w: Window) -> Result<Grid<f32>> {
        Ok(Grid::new(w.width, w.height, self.0))
    }
}

/// Evaluates `f(scene, x, y)` independently for each pixel.
pub struct FnScorer<F> {
    pub name: String,
    pub f: F,
}

impl<F> PixelScorer for FnScorer<F>
where
    F: Fn(&Scene, usize, usize) -> f32 + Sync,
{
    fn id(&self) -> String {
        self.name.clone()
    }

    fn score(&self, scene: &Scene, w: Window) -> Result<Grid<f32>> {
        Ok(Grid::from_fn(w.width, w.height, |x, y| {
            (self.f)(scene, w.x0 + x, w.y0 + y)
        }))
    }
}

/// Pass-through of a precomputed probability raster, e.g. from a deep model.
pub struct RasterScorer {
    pub name: String,
    pub map: Grid<f32>,
}

impl PixelScorer for RasterScorer {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn score(&self, scene: &Scene, w: Window) -> Result<Grid<f32>> {
        if self.map.width() != scene.width() || self.map.height() != scene.height() {
            return Err(Error::Dimensions(format!(
                "probability raster {}x{} vs scene {}x{}",
                self.map.width(),
                self.map.height(),
                scene.width(),
                scene.height()
            )));
        }
        self.map.crop(w.x0, w.y0, w.width, w.height)
    }
}

/// Random-forest probability from the 26-feature descriptor. Texture windows
/// read the full scene, so results do not depend on tiling.
pub struct ForestScorer<'m> {
    pub model: &'m RandomForestModel,
}

impl PixelScorer for ForestScorer<'_> {
    fn id(&self) -> String {
        format!("random-forest:{}trees:seed{}", self.model.trees.len(), self.model.seed)
    }

    fn score(&self, scene: &Scene, w: Window) -> Result<Grid<f32>> {
        let extractor = FeatureExtractor::new(scene)?;
        let mut out = vec![0.0f32; w.width * w.height];
        out.par_chunks_mut(w.width)
            .enumerate()
            .try_for_each(|(dy, row)| -> Result<()> {
                for (dx, slot) in row.iter_mut().enumerate() {
                    let f = extractor.extract(w.x0 + dx, w.y0 + dy);
                    *slot = self.model.predict_row(f.as_slice())? as f32;
                }
                Ok(())
            })?;
        Grid::from_vec(w.width, w.height, out)
    }
}

// ---------------------------------------------------------------------------
// tiled prediction

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub values: Grid<f32>,
    pub geotransform: GeoTransform,
    pub crs: String,
    pub scorer: String,
}

impl ProbabilityMap {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        *self.values.get(x, y)
    }

    pub fn to_flat(&self) -> FlatRaster {
        FlatRaster {
            width: self.width(),
            height: self.height(),
            names: vec![PROBABILITY_PLANE.into()],
            planes: vec![self.values.data().to_vec()],
            geotransform: self.geotransform,
            crs: self.crs.clone(),
            level: None,
        }
    }

    pub fn from_flat(flat: FlatRaster, scorer: impl Into<String>) -> Result<Self> {
        if flat.planes.len() != 1 {
            return Err(Error::Schema(format!(
                "probability raster needs one plane, found {}",
                flat.planes.len()
            )));
        }
        let values = flat.plane_grid(0)?;
        check_probabilities(values.data())?;
        Ok(ProbabilityMap {
            values,
            geotransform: flat.geotransform,
            crs: flat.crs,
            scorer: scorer.into(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_flat().write(path)
    }

    /// Reads a DSCN file, or a single-band float GeoTIFF for `.tif`/`.tiff`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let tiff = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"));
        let name = format!("external:{}", path.display());
        if !tiff {
            return Self::from_flat(FlatRaster::read(path)?, name);
        }
        let raw = geotiff::read_raw(path)?;
        if raw.planes.len() != 1 {
            return Err(Error::Schema(format!(
                "probability GeoTIFF needs one band, found {}",
                raw.planes.len()
            )));
        }
        if raw.integer {
            return Err(Error::Unsupported("probability GeoTIFF must store floats".into()));
        }
        let values = Grid::from_vec(raw.width, raw.height, raw.planes.into_iter().next().unwrap())?;
        check_probabilities(values.data())?;
        Ok(ProbabilityMap {
            values,
            geotransform: raw.geotransform,
            crs: raw.crs,
            scorer: name,
        })
    }
}

fn check_probabilities(values: &[f32]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::ScorerContract(format!("probability {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Tile origins along one axis: stride `tile - 2 * overlap`, last tile
/// shifted to end at the border. A single tile covers extents up to `tile`.
pub fn tile_origins(extent: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let stride = tile - 2 * overlap;
    let n = 1 + (extent - tile).div_ceil(stride);
    (0..n).map(|k| (k * stride).min(extent - tile)).collect()
}

/// Pixel ranges owned by each tile: every pixel goes to the tile whose
/// centre is nearest (lower tile on ties).
pub fn tile_ownership(extent: usize, tile: usize, origins: &[usize]) -> Vec<std::ops::Range<usize>> {
    let t = tile.min(extent) as f64;
    let centers: Vec<f64> = origins.iter().map(|&o| o as f64 + t / 2.0).collect();
    let mut ranges = vec![0..0; origins.len()];
    let mut k = 0;
    for p in 0..extent {
        let c = p as f64 + 0.5;
        while k + 1 < centers.len() && (centers[k + 1] - c).abs() < (centers[k] - c).abs() {
            k += 1;
        }
        if ranges[k].is_empty() {
            ranges[k] = p..p + 1;
        } else {
            ranges[k].end = p + 1;
        }
    }
    ranges
}

/// Scores the scene tile by tile and stitches the centre crops.
pub fn predict_scene(
    scene: &Scene,
    scorer: &dyn PixelScorer,
    tile: usize,
    overlap: usize,
) -> Result<ProbabilityMap> {
    if tile == 0 || tile <= 2 * overlap {
        return Err(Error::InvalidParameter(format!(
            "tile {tile} must exceed twice the overlap {overlap}"
        )));
    }
    let (w, h) = (scene.width(), scene.height());
    let (tw, th) = (tile.min(w), tile.min(h));
    let xs = tile_origins(w, tile, overlap);
    let ys = tile_origins(h, tile, overlap);
    let x_own = tile_ownership(w, tile, &xs);
    let y_own = tile_ownership(h, tile, &ys);

    let mut out = vec![0.0f32; w * h];
    // disjoint row bands, one per tile row
    let mut bands = Vec::with_capacity(ys.len());
    let mut rest: &mut [f32] = &mut out;
    for r in &y_own {
        let (band, tail) = rest.split_at_mut(r.len() * w);
        bands.push(band);
        rest = tail;
    }
    bands
        .into_par_iter()
        .enumerate()
        .try_for_each(|(ty, band)| -> Result<()> {
            let rows = &y_own[ty];
            for (tx, cols) in x_own.iter().enumerate() {
                let window = Window {
                    x0: xs[tx],
                    y0: ys[ty],
                    width: tw,
                    height: th,
                };
                let scores = scorer.score(scene, window)?;
                if scores.width() != tw || scores.height() != th {
                    return Err(Error::ScorerContract(format!(
                        "scorer returned {}x{} for a {tw}x{th} window",
                        scores.width(),
                        scores.height()
                    )));
                }
                for y in rows.clone() {
                    let src = scores.row(y - window.y0);
                    let dst = &mut band[(y - rows.start) * w..(y - rows.start + 1) * w];
                    for x in cols.clone() {
                        let v = src[x - window.x0];
                        if !(0.0..=1.0).contains(&v) {
                            return Err(Error::ScorerContract(format!(
                                "probability {v} at ({x}, {y}) outside [0, 1]"
                            )));
                        }
                        dst[x] = v;
                    }
                }
            }
            Ok(())
        })?;
    Ok(ProbabilityMap {
        values: Grid::from_vec(w, h, out)?,
        geotransform: scene.geotransform(),
        crs: scene.crs().to_string(),
        scorer: scorer.id(),
    })
}

// ---------------------------------------------------------------------------
// detections

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub map_x: f64,
    pub map_y: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub tau: f64,
    pub min_distance: usize,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

#[inline]
fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Pixels `>= tau` that are not exceeded anywhere within Chebyshev radius
/// `radius`, as `(value, x, y)` in row-major order.
pub fn local_maxima(values: &Grid<f32>, tau: f64, radius: usize) -> Vec<(f32, usize, usize)> {
    let (w, h) = (values.width(), values.height());
    (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let row = values.row(y);
            let y0 = y.saturating_sub(radius);
            let y1 = (y + radius + 1).min(h);
            row.iter()
                .enumerate()
                .filter(move |(_, v)| **v as f64 >= tau)
                .filter_map(move |(x, &v)| {
                    let x0 = x.saturating_sub(radius);
                    let x1 = (x + radius + 1).min(w);
                    let dominated = (y0..y1).any(|yy| values.row(yy)[x0..x1].iter().any(|&n| n > v));
                    (!dominated).then_some((v, x, y))
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Local maxima above `tau`, greedily suppressed in descending probability
/// (row-major order on ties) so that detections lie more than
/// `min_distance` apart in Chebyshev distance.
pub fn detect(map: &ProbabilityMap, tau: f64, min_distance: usize) -> Result<DetectionSet> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau {tau} outside (0, 1)")));
    }
    let mut candidates = local_maxima(&map.values, tau, min_distance);
    // stable sort keeps row-major order among equal values
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));

    let cell = min_distance + 1;
    let mut buckets: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    let mut detections = Vec::new();
    for (v, x, y) in candidates {
        let (bx, by) = (x / cell, y / cell);
        let blocked = (by.saturating_sub(1)..=by + 1).any(|cy| {
            (bx.saturating_sub(1)..=bx + 1).any(|cx| {
                buckets
                    .get(&(cx, cy))
                    .is_some_and(|pts| pts.iter().any(|&p| chebyshev(p, (x, y)) <= min_distance))
            })
        });
        if blocked {
            continue;
        }
        buckets.entry((bx, by)).or_default().push((x, y));
        let (map_x, map_y) = map.geotransform.pixel_center(x, y);
        detections.push(Detection {
            x,
            y,
            map_x,
            map_y,
            probability: v as f64,
        });
    }
    Ok(DetectionSet {
        detections,
        tau,
        min_distance,
    })
}

/// GeoJSON FeatureCollection of Points at pixel centres.
pub fn detections_geojson(set: &DetectionSet, geotransform: &GeoTransform) -> serde_json::Value {
    let features: Vec<_> = set
        .detections
        .iter()
        .map(|d| {
            let (mx, my) = geotransform.pixel_center(d.x, d.y);
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [mx, my]},
                "properties": {"probability": d.probability, "pixel_x": d.x, "pixel_y": d.y},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn export_detections(set: &DetectionSet, geotransform: &GeoTransform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&detections_geojson(set, geotransform))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// CSV with columns `x, y, map_x, map_y, probability`; map coordinates are
/// pixel centres.
pub fn export_detections_csv(set: &DetectionSet, geotransform: &GeoTransform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "map_x", "map_y", "probability"])?;
    for d in &set.detections {
        let (mx, my) = geotransform.pixel_center(d.x, d.y);
        w.write_record([
            d.x.to_string(),
            d.y.to_string(),
            mx.to_string(),
            my.to_string(),
            d.probability.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detections_csv(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
