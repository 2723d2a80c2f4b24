//! GeoJSON ingestion of line and point annotations.
//!
//! Coordinates are either pixel coordinates (column, row with pixel corners
//! at integers) or map coordinates converted through the scene
//! geotransform. A coordinate maps to the pixel that contains it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{parse_label, AnnotatedPoint, PointAnnotationSet};
use crate::error::{Error, Result};
use crate::raster::GeoTransform;
use crate::refine::{LineAnnotationSet, Vertex};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateSpace {
    Pixel,
    #[default]
    Map,
}

fn to_pixel(coord: &Value, space: CoordinateSpace, gt: &GeoTransform) -> Result<Vertex> {
    let arr = coord
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::GeoJson(format!("position {coord} is not [x, y]")))?;
    let x = arr[0]
        .as_f64()
        .ok_or_else(|| Error::GeoJson(format!("non-numeric coordinate {}", arr[0])))?;
    let y = arr[1]
        .as_f64()
        .ok_or_else(|| Error::GeoJson(format!("non-numeric coordinate {}", arr[1])))?;
    let (px, py) = match space {
        CoordinateSpace::Pixel => (x, y),
        CoordinateSpace::Map => gt.map_to_pixel(x, y)?,
    };
    if !px.is_finite() || !py.is_finite() {
        return Err(Error::GeoJson(format!("non-finite position {coord}")));
    }
    Ok((px.floor() as i64, py.floor() as i64))
}

fn features(doc: &Value) -> Result<Vec<&Value>> {
    match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => Ok(doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::GeoJson("FeatureCollection without features array".into()))?
            .iter()
            .collect()),
        Some("Feature") => Ok(vec![doc]),
        other => Err(Error::GeoJson(format!(
            "expected FeatureCollection or Feature, got {other:?}"
        ))),
    }
}

fn geometry(feature: &Value) -> Result<(&str, &Value)> {
    let g = feature
        .get("geometry")
        .ok_or_else(|| Error::GeoJson("feature without geometry".into()))?;
    let kind = g
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::GeoJson("geometry without type".into()))?;
    let coords = g
        .get("coordinates")
        .ok_or_else(|| Error::GeoJson(format!("{kind} without coordinates")))?;
    Ok((kind, coords))
}

/// LineString and MultiLineString features become polylines; other
/// geometries are skipped.
pub fn parse_lines(text: &str, space: CoordinateSpace, gt: &GeoTransform) -> Result<LineAnnotationSet> {
    let doc: Value = serde_json::from_str(text)?;
    let mut lines = Vec::new();
    for f in features(&doc)? {
        let (kind, coords) = geometry(f)?;
        let parts: Vec<&Value> = match kind {
            "LineString" => vec![coords],
            "MultiLineString" => coords
                .as_array()
                .ok_or_else(|| Error::GeoJson("MultiLineString coordinates not an array".into()))?
                .iter()
                .collect(),
            _ => continue,
        };
        for part in parts {
            let line = part
                .as_array()
                .ok_or_else(|| Error::GeoJson("LineString coordinates not an array".into()))?
                .iter()
                .map(|c| to_pixel(c, space, gt))
                .collect::<Result<Vec<_>>>()?;
            lines.push(line);
        }
    }
    LineAnnotationSet::new(lines)
}

pub fn read_lines(path: impl AsRef<Path>, space: CoordinateSpace, gt: &GeoTransform) -> Result<LineAnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lines(&text, space, gt)
}

/// Point and MultiPoint features with their `label` (or `class`) property
/// when present.
pub fn parse_points(
    text: &str,
    space: CoordinateSpace,
    gt: &GeoTransform,
) -> Result<Vec<(Vertex, Option<String>)>> {
    let doc: Value = serde_json::from_str(text)?;
    let mut out = Vec::new();
    for f in features(&doc)? {
        let (kind, coords) = geometry(f)?;
        let label = f
            .get("properties")
            .and_then(|p| p.get("label").or_else(|| p.get("class")))
            .and_then(Value::as_str)
            .map(str::to_string);
        match kind {
            "Point" => out.push((to_pixel(coords, space, gt)?, label)),
            "MultiPoint" => {
                for c in coords
                    .as_array()
                    .ok_or_else(|| Error::GeoJson("MultiPoint coordinates not an array".into()))?
                {
                    out.push((to_pixel(c, space, gt)?, label.clone()));
                }
            }
            _ => continue,
        }
    }
    Ok(out)
}

pub fn read_points(
    path: impl AsRef<Path>,
    space: CoordinateSpace,
    gt: &GeoTransform,
) -> Result<Vec<(Vertex, Option<String>)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text, space, gt)
}

/// Labeled points; every feature must carry a `label` of debris or other
/// and lie inside `width x height`.
pub fn read_point_annotations(
    path: impl AsRef<Path>,
    space: CoordinateSpace,
    gt: &GeoTransform,
    width: usize,
    height: usize,
) -> Result<PointAnnotationSet> {
    let mut points = Vec::new();
    for ((x, y), label) in read_points(path, space, gt)? {
        let label = label.ok_or_else(|| Error::GeoJson(format!("point ({x}, {y}) has no label")))?;
        if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
            return Err(Error::Window(format!("point ({x}, {y}) outside {width}x{height}")));
        }
        points.push(AnnotatedPoint {
            x: x as usize,
            y: y as usize,
            label: parse_label(&label)?,
        });
    }
    Ok(PointAnnotationSet { points })
}
