//! Run configuration: one JSON file, relative paths resolved against the
//! file's directory, flag overrides applied on top.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use driftscan::features::N_FEATURES;
use driftscan::forest::ForestConfig;
use driftscan::geojson::CoordinateSpace;
use driftscan::ProcessingLevel;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// Invalid configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Explicit probability cut or the calibrated one from the threshold file.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum TauSetting {
    #[default]
    Calibrate,
    Value(f64),
}

impl Serialize for TauSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TauSetting::Calibrate => s.serialize_str("calibrate"),
            TauSetting::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for TauSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = TauSetting;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number in (0, 1) or \"calibrate\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<TauSetting, E> {
                Ok(TauSetting::Value(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<TauSetting, E> {
                Ok(TauSetting::Value(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<TauSetting, E> {
                Ok(TauSetting::Value(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<TauSetting, E> {
                if v == "calibrate" {
                    Ok(TauSetting::Calibrate)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub id: String,
    pub path: PathBuf,
    /// GeoJSON LineStrings drawn over debris.
    pub lines: PathBuf,
    /// GeoJSON Points at ship centres.
    #[serde(default)]
    pub ships: Option<PathBuf>,
    #[serde(default)]
    pub level: Option<ProcessingLevel>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsEntry {
    pub id: String,
    pub path: PathBuf,
    /// GeoJSON Points with a `label` property.
    pub points: PathBuf,
    #[serde(default)]
    pub level: Option<ProcessingLevel>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub patch_size: usize,
    pub pixels_per_image: usize,
    /// Random negative patches per scene; defaults to the number of line
    /// segments.
    pub random_negatives: Option<usize>,
    /// Where to keep the sampled pixel table, if anywhere.
    pub pixels_csv: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            patch_size: driftscan::dataset::PATCH_SIZE,
            pixels_per_image: driftscan::dataset::PIXELS_PER_IMAGE,
            random_negatives: None,
            pixels_csv: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub level: ProcessingLevel,
    /// Coordinate space of every annotation file.
    pub coordinates: CoordinateSpace,
    pub scenes: Vec<SceneEntry>,
    pub validation: Vec<PointsEntry>,
    pub refined_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub forest: ForestConfig,
    pub model: PathBuf,
    pub threshold: PathBuf,
    pub tau: TauSetting,
    pub tile: usize,
    pub overlap: usize,
    pub min_distance: usize,
    pub predict_scene: Option<PathBuf>,
    pub probability: PathBuf,
    pub detections: PathBuf,
    pub evaluation_points: Option<PathBuf>,
    pub metrics: PathBuf,
    pub metrics_table: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            level: ProcessingLevel::L1C,
            coordinates: CoordinateSpace::Map,
            scenes: Vec::new(),
            validation: Vec::new(),
            refined_dir: "refined".into(),
            dataset: DatasetConfig::default(),
            forest: ForestConfig::default(),
            model: "model.json".into(),
            threshold: "threshold.json".into(),
            tau: TauSetting::Calibrate,
            tile: driftscan::inference::DEFAULT_TILE,
            overlap: driftscan::inference::DEFAULT_OVERLAP,
            min_distance: driftscan::inference::DEFAULT_MIN_DISTANCE,
            predict_scene: None,
            probability: "probability.dscn".into(),
            detections: "detections.geojson".into(),
            evaluation_points: None,
            metrics: "metrics.json".into(),
            metrics_table: None,
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| bad(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    /// Makes every relative path relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.scenes {
            fix(&mut s.path);
            fix(&mut s.lines);
            if let Some(p) = &mut s.ships {
                fix(p);
            }
        }
        for v in &mut self.validation {
            fix(&mut v.path);
            fix(&mut v.points);
        }
        for p in [
            &mut self.refined_dir,
            &mut self.model,
            &mut self.threshold,
            &mut self.probability,
            &mut self.detections,
            &mut self.metrics,
        ] {
            fix(p);
        }
        for p in [
            &mut self.dataset.pixels_csv,
            &mut self.predict_scene,
            &mut self.evaluation_points,
            &mut self.metrics_table,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Checks that do not depend on the command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let TauSetting::Value(t) = self.tau {
            check_tau(t)?;
        }
        if self.tile <= 2 * self.overlap {
            return Err(bad(format!("tile {} must exceed twice the overlap {}", self.tile, self.overlap)));
        }
        if self.threads == Some(0) {
            return Err(bad("threads must be at least 1"));
        }
        if self.dataset.patch_size == 0 || self.dataset.pixels_per_image == 0 {
            return Err(bad("patch_size and pixels_per_image must be positive"));
        }
        let f = &self.forest;
        if f.n_trees == 0 || f.min_leaf == 0 || f.features_per_split == 0 || f.features_per_split > N_FEATURES {
            return Err(bad(format!(
                "forest needs n_trees >= 1, min_leaf >= 1 and 1 <= features_per_split <= {N_FEATURES}"
            )));
        }
        let mut ids = HashSet::new();
        for id in self.scenes.iter().map(|s| &s.id).chain(self.validation.iter().map(|v| &v.id)) {
            if id.is_empty() || id.contains(['/', '\\']) {
                return Err(bad(format!("scene id {id:?} must be a non-empty file name")));
            }
            if !ids.insert(id) {
                return Err(bad(format!("duplicate scene id {id:?}")));
            }
        }
        Ok(())
    }

    pub fn refined_path(&self, id: &str) -> PathBuf {
        self.refined_dir.join(format!("{id}.dscn"))
    }

    pub fn scene_level(&self, level: Option<ProcessingLevel>) -> ProcessingLevel {
        level.unwrap_or(self.level)
    }
}

pub fn check_tau(t: f64) -> Result<(), ConfigError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(bad(format!("tau {t} outside (0, 1)")))
    }
}

/// Fails with the offending path unless every entry exists.
pub fn require_files<'a>(what: &str, paths: impl IntoIterator<Item = &'a Path>) -> Result<(), ConfigError> {
    for p in paths {
        if !p.exists() {
            return Err(bad(format!("{what} {} does not exist", p.display())));
        }
    }
    Ok(())
}
