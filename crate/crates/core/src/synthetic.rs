//! Synthetic 12-band scenes with implanted debris lines and ships, used by
//! tests, benchmarks and the demo configuration.

use rand::Rng;

use crate::dataset::{AnnotatedPoint, PointAnnotationSet};
use crate::error::Result;
use crate::raster::{BandId, GeoTransform, Grid, Label, Mask, ProcessingLevel, Scene};
use crate::refine::{bresenham, LineAnnotationSet, Vertex};
use crate::rng;

/// Reflectance per band in [`BandId::ALL`] order.
pub type Spectrum = [f32; 12];

/// Open water: dark, NIR absorbed.
pub const WATER: Spectrum = [
    0.060, 0.050, 0.040, 0.030, 0.025, 0.020, 0.018, 0.015, 0.014, 0.010, 0.005, 0.003,
];

/// Floating material: raised NIR and red-edge, positive FDI.
pub const DEBRIS: Spectrum = [
    0.065, 0.058, 0.052, 0.045, 0.060, 0.070, 0.085, 0.095, 0.090, 0.040, 0.030, 0.018,
];

/// Ship hulls: bright everywhere, flat spectrum.
pub const SHIP: Spectrum = [
    0.200, 0.210, 0.220, 0.230, 0.235, 0.240, 0.245, 0.250, 0.248, 0.150, 0.230, 0.200,
];

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub width: usize,
    pub height: usize,
    pub lines: usize,
    pub line_length: (usize, usize),
    /// Chebyshev half-width of the painted debris around each line.
    pub line_radius: usize,
    pub ships: usize,
    /// Uniform noise amplitude added to every band.
    pub noise: f32,
    /// Debris points sampled on the painted lines.
    pub debris_points: usize,
    /// Water points plus one point per ship.
    pub water_points: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            width: 512,
            height: 512,
            lines: 12,
            line_length: (24, 60),
            line_radius: 1,
            ships: 8,
            noise: 0.004,
            debris_points: 60,
            water_points: 60,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub scene: Scene,
    /// Centre lines of the painted debris.
    pub lines: LineAnnotationSet,
    pub truth: Mask,
    pub ships: Vec<Vertex>,
    pub points: PointAnnotationSet,
}

const MARGIN: i64 = 8;
const SHIP_HALF: (i64, i64) = (1, 3);
const SHIP_CLEARANCE: usize = 12;

fn paint(planes: &mut [Vec<f32>], width: usize, x: usize, y: usize, s: &Spectrum) {
    for (p, v) in planes.iter_mut().zip(s) {
        p[y * width + x] = *v;
    }
}

/// Scene with straight debris lines of random direction, compact ships well
/// clear of them, and labeled evaluation points.
pub fn debris_scene(cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = rng::derive(cfg.seed, 100, 0);
    let mut planes: Vec<Vec<f32>> = WATER.iter().map(|&v| vec![v; w * h]).collect();
    let mut truth: Mask = Grid::new(w, h, Label::Other);

    let mut lines = Vec::with_capacity(cfg.lines);
    let mut centre_pixels = Vec::new();
    while lines.len() < cfg.lines {
        let len = rng.random_range(cfg.line_length.0..=cfg.line_length.1) as f64;
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let x0 = rng.random_range(MARGIN..w as i64 - MARGIN);
        let y0 = rng.random_range(MARGIN..h as i64 - MARGIN);
        let x1 = x0 + (len * angle.cos()).round() as i64;
        let y1 = y0 + (len * angle.sin()).round() as i64;
        if x1 < MARGIN || y1 < MARGIN || x1 >= w as i64 - MARGIN || y1 >= h as i64 - MARGIN {
            continue;
        }
        let px = bresenham((x0, y0), (x1, y1));
        // keep lines apart so each annotation sees its own ridge
        let r = cfg.line_radius as i64 + 4;
        let crowded = px.iter().any(|&(x, y)| {
            (-r..=r).any(|dy| (-r..=r).any(|dx| truth.get((x + dx) as usize, (y + dy) as usize).is_debris()))
        });
        if crowded {
            continue;
        }
        let r = cfg.line_radius as i64;
        for &(x, y) in &px {
            for dy in -r..=r {
                for dx in -r..=r {
                    truth.set((x + dx) as usize, (y + dy) as usize, Label::Debris);
                }
            }
        }
        centre_pixels.extend(px.iter().copied());
        lines.push(vec![(x0, y0), (x1, y1)]);
    }
    for (i, l) in truth.data().iter().enumerate() {
        if l.is_debris() {
            paint(&mut planes, w, i % w, i / w, &DEBRIS);
        }
    }

    let near_debris = |x: i64, y: i64, r: i64| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (u, v) = (x + dx, y + dy);
                u >= 0 && v >= 0 && (u as usize) < w && (v as usize) < h && truth.get(u as usize, v as usize).is_debris()
            })
        })
    };

    let mut ships = Vec::with_capacity(cfg.ships);
    let mut ship_mask = vec![false; w * h];
    while ships.len() < cfg.ships {
        let cx = rng.random_range(MARGIN..w as i64 - MARGIN);
        let cy = rng.random_range(MARGIN..h as i64 - MARGIN);
        if near_debris(cx, cy, SHIP_CLEARANCE as i64) || ships.iter().any(|&(x, y): &Vertex| (x - cx).abs().max((y - cy).abs()) < 12) {
            continue;
        }
        for dy in -SHIP_HALF.1..=SHIP_HALF.1 {
            for dx in -SHIP_HALF.0..=SHIP_HALF.0 {
                let (x, y) = ((cx + dx) as usize, (cy + dy) as usize);
                paint(&mut planes, w, x, y, &SHIP);
                ship_mask[y * w + x] = true;
            }
        }
        ships.push((cx, cy));
    }

    if cfg.noise > 0.0 {
        for p in planes.iter_mut() {
            for v in p.iter_mut() {
                *v = (*v + rng.random_range(-cfg.noise..=cfg.noise)).max(0.0);
            }
        }
    }

    let mut points = Vec::new();
    for _ in 0..cfg.debris_points {
        let (x, y) = centre_pixels[rng.random_range(0..centre_pixels.len())];
        points.push(AnnotatedPoint {
            x: x as usize,
            y: y as usize,
            label: Label::Debris,
        });
    }
    let mut water = 0;
    while water < cfg.water_points {
        let x = rng.random_range(0..w as i64);
        let y = rng.random_range(0..h as i64);
        if near_debris(x, y, 4) || ship_mask[y as usize * w + x as usize] {
            continue;
        }
        points.push(AnnotatedPoint {
            x: x as usize,
            y: y as usize,
            label: Label::Other,
        });
        water += 1;
    }
    for &(x, y) in &ships {
        points.push(AnnotatedPoint {
            x: x as usize,
            y: y as usize,
            label: Label::Other,
        });
    }

    let planes = planes
        .into_iter()
        .map(|p| Grid::from_vec(w, h, p))
        .collect::<Result<Vec<_>>>()?;
    let scene = Scene::new(
        BandId::ALL.to_vec(),
        planes,
        GeoTransform([500_000.0, 10.0, 0.0, 4_000_000.0, 0.0, -10.0]),
        "EPSG:32630",
        ProcessingLevel::L1C,
    )?;
    Ok(SyntheticScene {
        scene,
        lines: LineAnnotationSet::new(lines)?,
        truth,
        ships,
        points: PointAnnotationSet { points },
    })
}

/// Water scene with one horizontal debris ridge `2 * radius + 1` pixels
/// tall centred on row `height / 2`, annotated by a single line along that
/// row. Returns the scene, the annotation and the ridge mask.
pub fn ridge_scene(width: usize, height: usize, radius: usize) -> Result<(Scene, LineAnnotationSet, Mask)> {
    let cy = height / 2;
    let (x0, x1) = (width / 8, width - width / 8);
    let ridge: Mask = Grid::from_fn(width, height, |x, y| {
        if (x0..x1).contains(&x) && y.abs_diff(cy) <= radius {
            Label::Debris
        } else {
            Label::Other
        }
    });
    let planes = (0..12)
        .map(|b| {
            ridge.map(|l| if l.is_debris() { DEBRIS[b] } else { WATER[b] })
        })
        .collect();
    let scene = Scene::new(BandId::ALL.to_vec(), planes, GeoTransform::IDENTITY, "", ProcessingLevel::L1C)?;
    let lines = LineAnnotationSet::new(vec![vec![
        (x0 as i64 + 2, cy as i64),
        (x1 as i64 - 3, cy as i64),
    ]])?;
    Ok((scene, lines, ridge))
}
