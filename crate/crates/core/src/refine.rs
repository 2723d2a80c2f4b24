//! Label refinement: hand-drawn debris lines become an ensemble of pixel
//! masks.
//!
//! For every parameter configuration the chain is
//!
//! 1. rasterize the lines and dilate them by `buffer_px`,
//! 2. Otsu-threshold the FDI inside that buffer to get a preliminary region,
//! 3. sample debris markers inside the region and other markers outside it,
//! 4. solve a random-walker Dirichlet problem on the FDI image,
//! 5. cut the walker probabilities at 0.5.
//!
//! The 24 configurations (3 buffers x 4 densities x 2 betas) plus the
//! unbuffered line raster give 25 masks whose mean is the fuzzy label.

use std::collections::VecDeque;

use log::warn;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat::FlatRaster;
use crate::raster::{FuzzyMask, GeoTransform, Grid, Label, Mask, Scene};
use crate::rng;
use crate::solver::{conjugate_gradient, CgOptions, CsrMatrix};
use crate::spectral::{self, IndexRaster};

pub const BUFFER_GRID: [u8; 3] = [0, 1, 2];
pub const BETA_GRID: [f64; 2] = [1.0, 10.0];
pub const DEBRIS_DENSITY_GRID: [f64; 4] = [0.05, 0.25, 0.50, 0.75];
pub const OTHER_MARKER_DENSITY: f64 = 0.05;

/// Number of masks in a refinement ensemble.
pub const ENSEMBLE_SIZE: usize = 25;

const OTSU_BINS: usize = 256;
const MARKER_ATTEMPTS: u64 = 1000;
const DOMAIN_MARKERS: u64 = 1;
const DOMAIN_CONFIG: u64 = 2;

pub type Vertex = (i64, i64);

/// Polylines in pixel coordinates, all of class debris.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineAnnotationSet {
    pub lines: Vec<Vec<Vertex>>,
}

impl LineAnnotationSet {
    pub fn new(lines: Vec<Vec<Vertex>>) -> Result<Self> {
        if let Some(l) = lines.iter().find(|l| l.len() < 2) {
            return Err(Error::InvalidParameter(format!(
                "polyline with {} vertices; at least 2 required",
                l.len()
            )));
        }
        Ok(LineAnnotationSet { lines })
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Consecutive vertex pairs of every polyline.
    pub fn segments(&self) -> impl Iterator<Item = (Vertex, Vertex)> + '_ {
        self.lines
            .iter()
            .flat_map(|l| l.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for &(x, y) in self.lines.iter().flatten() {
            if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
                return Err(Error::VertexOutOfBounds {
                    x,
                    y,
                    width,
                    height,
                });
            }
        }
        Ok(())
    }
}

/// Pixels on the Bresenham line from `a` to `b`, both ends included.
pub fn bresenham(a: Vertex, b: Vertex) -> Vec<Vertex> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Line pixels become debris, everything else other.
pub fn rasterize_lines(lines: &LineAnnotationSet, width: usize, height: usize) -> Result<Mask> {
    if width == 0 || height == 0 {
        return Err(Error::Dimensions("extent must be positive".into()));
    }
    lines.check_bounds(width, height)?;
    let mut mask = Grid::new(width, height, Label::Other);
    for (a, b) in lines.segments() {
        for (x, y) in bresenham(a, b) {
            mask.set(x as usize, y as usize, Label::Debris);
        }
    }
    Ok(mask)
}

/// Square (Chebyshev) dilation of the debris pixels by `radius`.
/// Non-debris pixels the dilation does not reach keep their label.
pub fn buffer_mask(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    // separable max filter: rows, then columns
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let row = mask.row(y);
        // prefix count of debris pixels in the row
        let mut prefix = vec![0usize; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x].is_debris() as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(w);
            rows[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = mask.clone();
    for x in 0..w {
        let mut prefix = vec![0usize; h + 1];
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius + 1).min(h);
            if prefix[hi] > prefix[lo] {
                out.set(x, y, Label::Debris);
            }
        }
    }
    out
}

/// Otsu threshold over a 256-bin histogram spanning `[min, max]` of the
/// finite values. Returns the upper edge of the bin that maximizes the
/// between-class variance; ties resolve to the lowest edge.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values.iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo || !(hi - lo).is_finite() {
        return Err(Error::DegenerateHistogram);
    }
    let span = hi - lo;
    let mut counts = [0u64; OTSU_BINS];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let bin = (((v - lo) / span) * OTSU_BINS as f64) as usize;
        counts[bin.min(OTSU_BINS - 1)] += 1;
    }
    let total: u64 = counts.iter().sum();
    let total_moment: u64 = counts.iter().enumerate().map(|(k, &c)| k as u64 * c).sum();

    // Between-class variance in bin-index units, scaled by total^2, is
    // num^2 / (n0 * n1) with num = n * s0 - n0 * s. Candidates are compared
    // exactly by cross-multiplying in wide integers.
    let (mut n0, mut s0) = (0u64, 0u64);
    let (mut best_k, mut best): (usize, Option<(u128, u128)>) = (0, None);
    for (k, &c) in counts.iter().enumerate() {
        n0 += c;
        s0 += k as u64 * c;
        let n1 = total - n0;
        let (num, den) = if n0 == 0 || n1 == 0 {
            (0u128, 1u128)
        } else {
            let num = (total as i128 * s0 as i128 - n0 as i128 * total_moment as i128).unsigned_abs();
            (num, n0 as u128 * n1 as u128)
        };
        let better = match best {
            None => true,
            Some((bn, bd)) => wide::cmp_ratio_sq(num, den, bn, bd) == std::cmp::Ordering::Greater,
        };
        if better {
            best = Some((num, den));
            best_k = k;
        }
    }
    Ok(lo + span * ((best_k + 1) as f64 / OTSU_BINS as f64))
}

mod wide {
    //! Exact comparison of `a^2 / b` against `c^2 / d` on little-endian
    //! 64-bit limbs.

    use std::cmp::Ordering;

    fn limbs(v: u128) -> [u64; 2] {
        [v as u64, (v >> 64) as u64]
    }

    fn mul(a: &[u64], b: &[u64]) -> Vec<u64> {
        let mut out = vec![0u64; a.len() + b.len()];
        for (i, &x) in a.iter().enumerate() {
            let mut carry = 0u128;
            for (j, &y) in b.iter().enumerate() {
                let t = x as u128 * y as u128 + out[i + j] as u128 + carry;
                out[i + j] = t as u64;
                carry = t >> 64;
            }
            out[i + b.len()] = carry as u64;
        }
        out
    }

    fn cmp(a: &[u64], b: &[u64]) -> Ordering {
        debug_assert_eq!(a.len(), b.len());
        a.iter().rev().cmp(b.iter().rev())
    }

    pub fn cmp_ratio_sq(a: u128, b: u128, c: u128, d: u128) -> Ordering {
        let (a, b, c, d) = (limbs(a), limbs(b), limbs(c), limbs(d));
        cmp(&mul(&mul(&a, &a), &d), &mul(&mul(&c, &c), &b))
    }

}

/// Debris where the FDI exceeds the Otsu threshold computed over the
/// buffered region, restricted to that region.
pub fn preliminary_region(fdi: &IndexRaster, buffered: &Mask) -> Result<Mask> {
    if !fdi.values.same_extent(buffered) {
        return Err(Error::Dimensions(format!(
            "FDI {}x{} vs mask {}x{}",
            fdi.width(),
            fdi.height(),
            buffered.width(),
            buffered.height()
        )));
    }
    let inside: Vec<f64> = fdi
        .values
        .data()
        .iter()
        .zip(buffered.data())
        .filter(|(_, l)| l.is_debris())
        .map(|(v, _)| *v as f64)
        .collect();
    if inside.is_empty() {
        return Ok(Grid::new(buffered.width(), buffered.height(), Label::Other));
    }
    let threshold = otsu_threshold(&inside)?;
    let data = fdi
        .values
        .data()
        .iter()
        .zip(buffered.data())
        .map(|(v, l)| {
            if l.is_debris() && (*v as f64) > threshold {
                Label::Debris
            } else {
                Label::Other
            }
        })
        .collect();
    Grid::from_vec(buffered.width(), buffered.height(), data)
}

/// One refinement configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementParams {
    pub buffer_px: u8,
    pub beta: f64,
    pub debris_marker_density: f64,
    pub other_marker_density: f64,
}

impl RefinementParams {
    /// On-grid configuration; every value must come from the published grids.
    pub fn new(buffer_px: u8, beta: f64, debris_marker_density: f64) -> Result<Self> {
        if !BUFFER_GRID.contains(&buffer_px) {
            return Err(Error::InvalidParameter(format!(
                "buffer {buffer_px} not in {BUFFER_GRID:?}"
            )));
        }
        if !BETA_GRID.contains(&beta) {
            return Err(Error::InvalidParameter(format!(
                "beta {beta} not in {BETA_GRID:?}"
            )));
        }
        if !DEBRIS_DENSITY_GRID.contains(&debris_marker_density) {
            return Err(Error::InvalidParameter(format!(
                "debris marker density {debris_marker_density} not in {DEBRIS_DENSITY_GRID:?}"
            )));
        }
        Ok(RefinementParams {
            buffer_px,
            beta,
            debris_marker_density,
            other_marker_density: OTHER_MARKER_DENSITY,
        })
    }

    /// Off-grid configuration for experiments. Densities must lie in (0, 1]
    /// and beta must be positive.
    pub fn custom(
        buffer_px: u8,
        beta: f64,
        debris_marker_density: f64,
        other_marker_density: f64,
    ) -> Result<Self> {
        for d in [debris_marker_density, other_marker_density] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "marker density {d} outside (0, 1]"
                )));
            }
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta {beta} must be positive")));
        }
        Ok(RefinementParams {
            buffer_px,
            beta,
            debris_marker_density,
            other_marker_density,
        })
    }

    /// The 24 on-grid configurations, buffer-major, then density, then beta.
    pub fn grid() -> Vec<RefinementParams> {
        let mut out = Vec::with_capacity(24);
        for &b in &BUFFER_GRID {
            for &d in &DEBRIS_DENSITY_GRID {
                for &beta in &BETA_GRID {
                    out.push(RefinementParams::new(b, beta, d).expect("on-grid"));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Marker {
    Unlabeled,
    Debris,
    Other,
}

pub type MarkerMap = Grid<Marker>;

/// Bernoulli marker sampling: debris markers inside the preliminary region
/// at the debris density, other markers outside it at the other density.
/// Redraws on a fresh substream until both classes are present.
pub fn sample_markers(preliminary: &Mask, params: &RefinementParams, seed: u64) -> Result<MarkerMap> {
    let debris = preliminary.debris_count();
    if debris == 0 || debris == preliminary.len() {
        return Err(Error::Markers(format!(
            "preliminary region has {debris} debris pixels of {}; both classes required",
            preliminary.len()
        )));
    }
    for attempt in 0..MARKER_ATTEMPTS {
        let mut rng = rng::derive(seed, DOMAIN_MARKERS, attempt);
        let (mut n_debris, mut n_other) = (0usize, 0usize);
        let markers = preliminary.map(|l| {
            let u: f64 = rng.random();
            if l.is_debris() {
                if u < params.debris_marker_density {
                    n_debris += 1;
                    return Marker::Debris;
                }
            } else if u < params.other_marker_density {
                n_other += 1;
                return Marker::Other;
            }
            Marker::Unlabeled
        });
        if n_debris > 0 && n_other > 0 {
            return Ok(markers);
        }
    }
    Err(Error::Markers(format!(
        "no draw produced both marker classes in {MARKER_ATTEMPTS} attempts"
    )))
}

/// Walker probabilities and solve diagnostics.
#[derive(Clone, Debug)]
pub struct WalkerSolution {
    /// Debris probability per pixel.
    pub probabilities: Grid<f64>,
    /// Unlabeled pixels in components that touch no marker; set to 0.5.
    pub isolated: usize,
    pub iterations: usize,
    pub residual: f64,
}

const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[inline]
fn neighbors(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    NEIGHBORS.into_iter().filter_map(move |(dx, dy)| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
            .then_some((nx as usize, ny as usize))
    })
}

/// Min-max normalization to `[0, 1]`; a constant image maps to zeros.
pub fn normalize_guidance(guidance: &Grid<f32>) -> Grid<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in guidance.data() {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    let span = hi - lo;
    guidance.map(|&v| if span > 0.0 { (v as f64 - lo) / span } else { 0.0 })
}

/// Debris probability from a random walk on the 4-connected pixel lattice.
///
/// Edge weights are `exp(-beta * (g_i - g_j)^2)` on the min-max normalized
/// guidance `g`. Unmarked pixels solve `L_U x = -B m` where `m` indicates the
/// debris markers.
pub fn random_walker(guidance: &Grid<f32>, markers: &MarkerMap, beta: f64) -> Result<Grid<f64>> {
    random_walker_detailed(guidance, markers, beta).map(|s| s.probabilities)
}

pub fn random_walker_detailed(
    guidance: &Grid<f32>,
    markers: &MarkerMap,
    beta: f64,
) -> Result<WalkerSolution> {
    if !guidance.same_extent(markers) {
        return Err(Error::Dimensions("guidance and markers differ in extent".into()));
    }
    if guidance.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("guidance contains non-finite values".into()));
    }
    let has = |m: Marker| markers.data().contains(&m);
    if !has(Marker::Debris) || !has(Marker::Other) {
        return Err(Error::Markers("walker needs markers of both classes".into()));
    }
    let (w, h) = (guidance.width(), guidance.height());
    let g = normalize_guidance(guidance);
    let weight = |a: usize, b: usize| {
        let d = g.data()[a] - g.data()[b];
        (-beta * d * d).exp()
    };

    let mut probs = markers.map(|m| match m {
        Marker::Debris => 1.0,
        Marker::Other => 0.0,
        Marker::Unlabeled => f64::NAN,
    });

    // Components of unlabeled pixels; those never touching a marker have a
    // singular Laplacian block and get 0.5.
    let mut component = vec![usize::MAX; w * h];
    let mut anchored = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if markers.data()[start] != Marker::Unlabeled || component[start] != usize::MAX {
            continue;
        }
        let id = anchored.len();
        let mut touches = false;
        component[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for (nx, ny) in neighbors(p % w, p / w, w, h) {
                let q = ny * w + nx;
                if markers.data()[q] != Marker::Unlabeled {
                    touches = true;
                } else if component[q] == usize::MAX {
                    component[q] = id;
                    queue.push_back(q);
                }
            }
        }
        anchored.push(touches);
    }

    let mut unknown = vec![usize::MAX; w * h];
    let mut pixels = Vec::new();
    let mut isolated = 0;
    for p in 0..w * h {
        if markers.data()[p] != Marker::Unlabeled {
            continue;
        }
        if anchored[component[p]] {
            unknown[p] = pixels.len();
            pixels.push(p);
        } else {
            probs.data_mut()[p] = 0.5;
            isolated += 1;
        }
    }
    if isolated > 0 {
        warn!("random walker: {isolated} unlabeled pixels unreachable from any marker, set to 0.5");
    }
    if pixels.is_empty() {
        return Ok(WalkerSolution {
            probabilities: probs,
            isolated,
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut rows = Vec::with_capacity(pixels.len());
    let mut rhs = vec![0.0; pixels.len()];
    for (i, &p) in pixels.iter().enumerate() {
        let mut row = Vec::with_capacity(5);
        let mut degree = 0.0;
        for (nx, ny) in neighbors(p % w, p / w, w, h) {
            let q = ny * w + nx;
            let wpq = weight(p, q);
            degree += wpq;
            match markers.data()[q] {
                Marker::Unlabeled => row.push((unknown[q], -wpq)),
                Marker::Debris => rhs[i] += wpq,
                Marker::Other => {}
            }
        }
        row.push((i, degree));
        rows.push(row);
    }
    let system = CsrMatrix::from_rows(rows);
    let sol = conjugate_gradient(&system, &rhs, None, CgOptions::default())?;
    for (&p, &v) in pixels.iter().zip(&sol.x) {
        probs.data_mut()[p] = v.clamp(0.0, 1.0);
    }
    Ok(WalkerSolution {
        probabilities: probs,
        isolated,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// Debris where the walker probability exceeds 0.5.
pub fn crisp_from_probabilities(probs: &Grid<f64>) -> Mask {
    probs.map(|&p| if p > 0.5 { Label::Debris } else { Label::Other })
}

/// The 25-mask ensemble and its mean.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementResult {
    /// 24 walker masks in [`RefinementParams::grid`] order, then the
    /// rasterized original.
    pub masks: Vec<Mask>,
    pub average: FuzzyMask,
    pub params: Vec<RefinementParams>,
    /// Configuration indices whose chain degenerated and fell back to the
    /// original line raster.
    pub degenerate: Vec<usize>,
}

impl RefinementResult {
    pub fn all_degenerate(&self) -> bool {
        self.degenerate.len() == self.params.len()
    }

    pub fn width(&self) -> usize {
        self.average.width()
    }

    pub fn height(&self) -> usize {
        self.average.height()
    }

    /// Fraction of pixels on which all masks agree.
    pub fn agreement_fraction(&self) -> f64 {
        let agree = self
            .average
            .data()
            .iter()
            .filter(|&&v| v == 0.0 || v == 1.0)
            .count();
        agree as f64 / self.average.len() as f64
    }

    /// 25 crisp planes (`mask_00` .. `mask_24`, 1 = debris) and an `average`
    /// plane.
    pub fn to_flat(&self, geotransform: GeoTransform, crs: &str) -> FlatRaster {
        let mut names: Vec<String> = (0..self.masks.len()).map(|i| format!("mask_{i:02}")).collect();
        names.push("average".into());
        let mut planes: Vec<Vec<f32>> = self.masks.iter().map(|m| m.to_indicator().into_vec()).collect();
        planes.push(self.average.data().to_vec());
        FlatRaster {
            width: self.width(),
            height: self.height(),
            names,
            planes,
            geotransform,
            crs: crs.to_string(),
            level: None,
        }
    }

    /// Inverse of [`to_flat`](Self::to_flat). Parameters are restored from
    /// the grid; degeneracy flags are not stored and come back empty.
    pub fn from_flat(flat: &FlatRaster) -> Result<Self> {
        if flat.planes.len() != ENSEMBLE_SIZE + 1 || flat.names.last().map(String::as_str) != Some("average") {
            return Err(Error::Schema(format!(
                "refinement raster needs {} mask planes and an average plane, found {} planes",
                ENSEMBLE_SIZE,
                flat.planes.len()
            )));
        }
        let masks = (0..ENSEMBLE_SIZE)
            .map(|i| {
                flat.plane_grid(i)
                    .map(|g| g.map(|&v| if v >= 0.5 { Label::Debris } else { Label::Other }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RefinementResult {
            masks,
            average: flat.plane_grid(ENSEMBLE_SIZE)?,
            params: RefinementParams::grid(),
            degenerate: Vec::new(),
        })
    }
}

/// Mean of the debris indicators.
pub fn average_masks(masks: &[Mask]) -> FuzzyMask {
    let (w, h) = (masks[0].width(), masks[0].height());
    let mut sum = vec![0u32; w * h];
    for m in masks {
        for (s, l) in sum.iter_mut().zip(m.data()) {
            *s += l.is_debris() as u32;
        }
    }
    let n = masks.len() as f32;
    Grid::from_vec(w, h, sum.into_iter().map(|s| s as f32 / n).collect()).expect("extent")
}

/// Runs one configuration on a shared FDI image and preliminary region.
pub fn refine_one(
    fdi: &IndexRaster,
    preliminary: &Mask,
    params: &RefinementParams,
    seed: u64,
) -> Result<Mask> {
    let markers = sample_markers(preliminary, params, seed)?;
    let probs = random_walker(&fdi.values, &markers, params.beta)?;
    Ok(crisp_from_probabilities(&probs))
}

/// Marker seed of configuration `index` under the scene seed.
pub fn config_seed(seed: u64, index: usize) -> u64 {
    rng::derive(seed, DOMAIN_CONFIG, index as u64).next_u64()
}

/// Full refinement chain for one scene.
pub fn refine_labels(scene: &Scene, lines: &LineAnnotationSet, seed: u64) -> Result<RefinementResult> {
    if lines.is_empty() {
        return Err(Error::InvalidParameter("no line annotations".into()));
    }
    let fdi = spectral::fdi(scene)?;
    let original = rasterize_lines(lines, scene.width(), scene.height())?;

    let preliminaries: Vec<Mask> = BUFFER_GRID
        .iter()
        .map(|&b| {
            let buffered = buffer_mask(&original, b as usize);
            match preliminary_region(&fdi, &buffered) {
                Ok(p) => Ok(p),
                Err(Error::DegenerateHistogram) => {
                    warn!("constant FDI inside {b}-px buffer; using the buffer as preliminary region");
                    Ok(buffered)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let params = RefinementParams::grid();
    let outcomes: Vec<Result<Mask>> = params
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let config_seed = config_seed(seed, i);
            let b = BUFFER_GRID.iter().position(|&v| v == p.buffer_px).expect("on-grid");
            refine_one(&fdi, &preliminaries[b], p, config_seed)
        })
        .collect();

    let mut masks = Vec::with_capacity(ENSEMBLE_SIZE);
    let mut degenerate = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(m) => masks.push(m),
            Err(Error::Markers(msg)) => {
                warn!("refinement configuration {i} degenerated: {msg}");
                degenerate.push(i);
                masks.push(original.clone());
            }
            Err(e) => return Err(e),
        }
    }
    if degenerate.len() == params.len() {
        warn!("every refinement configuration degenerated; ensemble is the original mask");
    }
    masks.push(original);
    let average = average_masks(&masks);
    Ok(RefinementResult {
        masks,
        average,
        params,
        degenerate,
    })
}
