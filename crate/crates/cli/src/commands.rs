//! One function per subcommand. Each validates its inputs first (returning
//! [`ConfigError`]), then runs a single library chain and writes its
//! outputs through [`Outputs`].

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use driftscan::dataset::{
    patches_from_lines, pixel_dataset, random_negatives, ship_negatives, write_pixels_csv, LabeledPixel,
};
use driftscan::features::FeatureExtractor;
use driftscan::flat::FlatRaster;
use driftscan::forest::{deserialize_model, serialize_model, train_forest};
use driftscan::geojson::{read_lines, read_point_annotations, read_points};
use driftscan::geotiff::load_scene;
use driftscan::inference::{
    calibrate_threshold, detect, export_detections, export_detections_csv, predict_scene, CalibratedThreshold,
    ForestScorer, ProbabilityMap,
};
use driftscan::metrics::{evaluate_points, MetricsReport};
use driftscan::raster::{Grid, Label};
use driftscan::refine::{refine_labels, RefinementResult};
use driftscan::rng::child_seed;
use serde_json::json;

use crate::config::{check_tau, require_files, ConfigError, PipelineConfig, TauSetting};
use crate::output::Outputs;

const DOMAIN_SCENE_REFINE: u64 = 1;
const DOMAIN_SCENE_NEGATIVES: u64 = 2;
const DOMAIN_SCENE_PIXELS: u64 = 3;
const DOMAIN_FOREST: u64 = 4;

/// Overrides taken from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tau: Option<f64>,
}

pub enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Runs `body`, deleting whatever it committed if it fails.
fn with_outputs(body: impl FnOnce(&mut Outputs) -> Result<()>) -> CmdResult {
    let mut out = Outputs::default();
    match body(&mut out) {
        Ok(()) => {
            for p in out.paths() {
                log::info!("wrote {}", p.display());
            }
            Ok(())
        }
        Err(e) => {
            out.discard();
            Err(Failure::Runtime(e))
        }
    }
}

fn scene_label(id: &str) -> String {
    format!("scene {id:?}")
}

pub fn refine(cfg: &PipelineConfig, ov: &Overrides) -> CmdResult {
    let selected: Vec<_> = match &ov.scene {
        Some(sel) => cfg
            .scenes
            .iter()
            .enumerate()
            .filter(|(_, s)| Path::new(&s.id) == sel.as_path() || s.path == *sel)
            .collect(),
        None => cfg.scenes.iter().enumerate().collect(),
    };
    if selected.is_empty() {
        return Err(ConfigError("no scenes to refine".into()).into());
    }
    for (_, s) in &selected {
        require_files("scene", [s.path.as_path()])?;
        require_files("line annotation file", [s.lines.as_path()])?;
    }
    let dir = ov.out.clone().unwrap_or_else(|| cfg.refined_dir.clone());

    with_outputs(|out| {
        let mut summary = Vec::new();
        for (i, s) in selected {
            let ctx = || scene_label(&s.id);
            let scene = load_scene(&s.path, cfg.scene_level(s.level)).with_context(ctx)?;
            let lines = read_lines(&s.lines, cfg.coordinates, &scene.geotransform()).with_context(ctx)?;
            log::info!("refining {} ({} segments)", ctx(), lines.segments().count());
            let result =
                refine_labels(&scene, &lines, child_seed(cfg.seed, DOMAIN_SCENE_REFINE, i as u64)).with_context(ctx)?;
            let path = dir.join(format!("{}.dscn", s.id));
            let flat = result.to_flat(scene.geotransform(), scene.crs());
            out.write(&path, |tmp| flat.write(tmp))?;
            summary.push(json!({
                "id": s.id,
                "output": path,
                "masks": result.masks.len(),
                "degenerate": result.degenerate,
                "agreement_fraction": result.agreement_fraction(),
                "consensus_debris_pixels": result.average.data().iter().filter(|&&v| v >= 0.5).count(),
            }));
        }
        let doc = json!({"seed": cfg.seed, "scenes": summary});
        out.write_text(&dir.join("refine_summary.json"), &serde_json::to_string_pretty(&doc)?)
    })
}

/// Debris in any ensemble member; random negatives must avoid all of it.
fn union_mask(r: &RefinementResult) -> Grid<Label> {
    Grid::from_fn(r.width(), r.height(), |x, y| {
        if r.masks.iter().any(|m| m.get(x, y).is_debris()) {
            Label::Debris
        } else {
            Label::Other
        }
    })
}

pub fn train(cfg: &PipelineConfig, ov: &Overrides) -> CmdResult {
    if cfg.scenes.is_empty() {
        return Err(ConfigError("no training scenes configured".into()).into());
    }
    for s in &cfg.scenes {
        require_files("scene", [s.path.as_path()])?;
        require_files("line annotation file", [s.lines.as_path()])?;
        require_files("ship file", s.ships.as_deref())?;
        require_files("refined masks (run `refine` first)", [cfg.refined_path(&s.id).as_path()])?;
    }
    let model_path = ov.out.clone().unwrap_or_else(|| cfg.model.clone());
    let ds = &cfg.dataset;

    with_outputs(|out| {
        let mut pixels: Vec<LabeledPixel> = Vec::new();
        for (i, s) in cfg.scenes.iter().enumerate() {
            let ctx = || scene_label(&s.id);
            let scene = load_scene(&s.path, cfg.scene_level(s.level)).with_context(ctx)?;
            let gt = scene.geotransform();
            let lines = read_lines(&s.lines, cfg.coordinates, &gt).with_context(ctx)?;
            let refined = RefinementResult::from_flat(&FlatRaster::read(cfg.refined_path(&s.id))?).with_context(ctx)?;
            let mut patches = patches_from_lines(&scene, &s.id, &lines, &refined, ds.patch_size).with_context(ctx)?;
            let n_negative = ds.random_negatives.unwrap_or(patches.len());
            let seed = child_seed(cfg.seed, DOMAIN_SCENE_NEGATIVES, i as u64);
            patches.extend(
                random_negatives(&scene, &s.id, &union_mask(&refined), n_negative, ds.patch_size, seed)
                    .with_context(ctx)?,
            );
            if let Some(ships) = &s.ships {
                let centers: Vec<(i64, i64)> =
                    read_points(ships, cfg.coordinates, &gt).with_context(ctx)?.into_iter().map(|p| p.0).collect();
                patches.extend(ship_negatives(&scene, &s.id, &centers, ds.patch_size).with_context(ctx)?);
            }
            let seed = child_seed(cfg.seed, DOMAIN_SCENE_PIXELS, i as u64);
            let sampled = pixel_dataset(&scene, &patches, ds.pixels_per_image, seed).with_context(ctx)?;
            log::info!("{}: {} patches, {} pixels", ctx(), patches.len(), sampled.len());
            pixels.extend(sampled);
        }
        if let Some(csv) = &ds.pixels_csv {
            out.write(csv, |tmp| write_pixels_csv(tmp, &pixels))?;
        }
        let debris = pixels.iter().filter(|p| p.label == Label::Debris).count();
        log::info!("training on {} pixels ({} debris)", pixels.len(), debris);
        let model = train_forest(&pixels, cfg.forest, child_seed(cfg.seed, DOMAIN_FOREST, 0))?;
        out.write(&model_path, |tmp| serialize_model(&model, tmp))
    })
}

pub fn calibrate(cfg: &PipelineConfig, ov: &Overrides) -> CmdResult {
    if cfg.validation.is_empty() {
        return Err(ConfigError("calibration needs at least one validation scene".into()).into());
    }
    require_files("model", [cfg.model.as_path()])?;
    for v in &cfg.validation {
        require_files("scene", [v.path.as_path()])?;
        require_files("point annotation file", [v.points.as_path()])?;
    }
    let path = ov.out.clone().unwrap_or_else(|| cfg.threshold.clone());

    with_outputs(|out| {
        let model = deserialize_model(&cfg.model)?;
        let mut scores = Vec::new();
        for v in &cfg.validation {
            let ctx = || scene_label(&v.id);
            let scene = load_scene(&v.path, cfg.scene_level(v.level)).with_context(ctx)?;
            let points = read_point_annotations(
                &v.points,
                cfg.coordinates,
                &scene.geotransform(),
                scene.width(),
                scene.height(),
            )
            .with_context(ctx)?;
            let extractor = FeatureExtractor::new(&scene).with_context(ctx)?;
            for p in &points.points {
                let s = model.predict_row(extractor.extract(p.x, p.y).as_slice())?;
                scores.push((s, p.label.is_debris()));
            }
        }
        let t = calibrate_threshold(&scores).context("calibrating on the validation points")?;
        log::info!(
            "tau {} (precision {:.4}, recall {:.4}, f1 {:.4}) from {} points",
            t.tau,
            t.precision,
            t.recall,
            t.f1,
            scores.len()
        );
        out.write(&path, |tmp| t.save(tmp))
    })
}

pub fn predict(cfg: &PipelineConfig, ov: &Overrides) -> CmdResult {
    let scene_path = ov
        .scene
        .clone()
        .or_else(|| cfg.predict_scene.clone())
        .ok_or_else(|| ConfigError("no scene to predict: pass --scene or set predict_scene".into()))?;
    require_files("scene", [scene_path.as_path()])?;
    require_files("model", [cfg.model.as_path()])?;
    let path = ov.out.clone().unwrap_or_else(|| cfg.probability.clone());

    with_outputs(|out| {
        let model = deserialize_model(&cfg.model)?;
        let scene = load_scene(&scene_path, cfg.level)?;
        log::info!(
            "predicting {}x{} scene, tile {} overlap {}",
            scene.width(),
            scene.height(),
            cfg.tile,
            cfg.overlap
        );
        let map = predict_scene(&scene, &ForestScorer { model: &model }, cfg.tile, cfg.overlap)?;
        out.write(&path, |tmp| map.write(tmp))
    })
}

/// `--tau`, then an explicit config value, then the calibrated threshold.
fn resolve_tau(cfg: &PipelineConfig, ov: &Overrides) -> std::result::Result<f64, Failure> {
    if let Some(t) = ov.tau {
        check_tau(t)?;
        return Ok(t);
    }
    match cfg.tau {
        TauSetting::Value(t) => Ok(t),
        TauSetting::Calibrate => {
            require_files("threshold file (run `calibrate` or pass --tau)", [cfg.threshold.as_path()])?;
            let t = CalibratedThreshold::load(&cfg.threshold).map_err(|e| ConfigError(e.to_string()))?;
            Ok(t.tau)
        }
    }
}

fn probability_input(cfg: &PipelineConfig, ov: &Overrides) -> std::result::Result<PathBuf, Failure> {
    let p = ov.scene.clone().unwrap_or_else(|| cfg.probability.clone());
    require_files("probability raster", [p.as_path()])?;
    Ok(p)
}

pub fn detect_cmd(cfg: &PipelineConfig, ov: &Overrides) -> CmdResult {
    let input = probability_input(cfg, ov)?;
    let tau = resolve_tau(cfg, ov)?;
    let path = ov.out.clone().unwrap_or_else(|| cfg.detections.clone());
    let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));

    with_outputs(|out| {
        let map = ProbabilityMap::read(&input)?;
        let set = detect(&map, tau, cfg.min_distance)?;
        log::info!("{} detections at tau {tau}, min distance {}", set.len(), cfg.min_distance);
        if csv {
            out.write(&path, |tmp| export_detections_csv(&set, &map.geotransform, tmp))
        } else {
            out.write(&path, |tmp| export_detections(&set, &map.geotransform, tmp))
        }
    })
}

pub fn evaluate(cfg: &PipelineConfig, ov: &Overrides) -> CmdResult {
    let input = probability_input(cfg, ov)?;
    let points_path = cfg
        .evaluation_points
        .clone()
        .ok_or_else(|| ConfigError("evaluation_points is not set".into()))?;
    require_files("point annotation file", [points_path.as_path()])?;
    let tau = resolve_tau(cfg, ov)?;
    let path = ov.out.clone().unwrap_or_else(|| cfg.metrics.clone());

    with_outputs(|out| {
        let map = ProbabilityMap::read(&input)?;
        let points =
            read_point_annotations(&points_path, cfg.coordinates, &map.geotransform, map.width(), map.height())?;
        let report = evaluate_points(&map, &points, tau)?;
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        log::info!(
            "{} points: accuracy {} f-score {} auroc {} jaccard {} kappa {}",
            report.samples,
            f(report.accuracy),
            f(report.f_score),
            f(report.auroc),
            f(report.jaccard),
            f(report.kappa)
        );
        out.write_text(&path, &report.to_json()?)?;
        if let Some(table) = &cfg.metrics_table {
            let name = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.write_text(table, &MetricsReport::table(&[(&name, &report)]))?;
        }
        Ok(())
    })
}

pub fn show_config(cfg: &PipelineConfig) -> CmdResult {
    let text = serde_json::to_string_pretty(cfg).map_err(|e| anyhow!(e))?;
    println!("{text}");
    Ok(())
}
