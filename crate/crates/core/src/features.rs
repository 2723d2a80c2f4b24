//! The 26-value pixel descriptor fed to the random forest.
//!
//! Layout (index: name):
//!
//! * 0..11: reflectance of B1, B2, B3, B4, B5, B6, B7, B8, B8A, B11, B12
//! * 11..19: NDVI, FAI, FDI, SI, NDWI, NRD, NDMI, BSI
//! * 19..26: GLCM contrast, dissimilarity, homogeneity, energy, correlation,
//!   mean, variance
//!
//! Index formulas:
//!
//! ```text
//! NDVI = (B8 - B4) / (B8 + B4)
//! FAI  = B8 - (B4 + (B11 - B4) * (λB8 - λB4) / (λB11 - λB4))
//! FDI  = B8 - (B6 + (B11 - B6) * (λB8 - λB4) / (λB11 - λB4) * 10)
//! SI   = cbrt((1 - B2) * (1 - B3) * (1 - B4))
//! NDWI = (B3 - B8) / (B3 + B8)
//! NRD  = B8 - B4
//! NDMI = (B8 - B11) / (B8 + B11)
//! BSI  = ((B11 + B4) - (B8 + B2)) / ((B11 + B4) + (B8 + B2))
//! ```
//!
//! Normalized differences with a zero denominator evaluate to 0.
//!
//! Texture comes from a symmetric, normalized co-occurrence matrix of NDVI
//! quantized to 16 levels over `[-1, 1]`, built in the 5x5 window around
//! the pixel (truncated at scene borders) for the offsets one column right
//! and one row down. Each statistic is computed per offset and the two are
//! averaged. ASM is not included since it is the square of energy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BandId, Scene};
use crate::spectral::{fdi_value, ndvi_value, normalized_difference};

pub const N_FEATURES: usize = 26;

pub const GLCM_LEVELS: usize = 16;
pub const TEXTURE_RADIUS: usize = 2;

/// Bands read by the extractor, in feature order.
pub const FEATURE_BANDS: [BandId; 11] = [
    BandId::B1,
    BandId::B2,
    BandId::B3,
    BandId::B4,
    BandId::B5,
    BandId::B6,
    BandId::B7,
    BandId::B8,
    BandId::B8A,
    BandId::B11,
    BandId::B12,
];

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12", "NDVI", "FAI", "FDI",
    "SI", "NDWI", "NRD", "NDMI", "BSI", "CON", "DIS", "HOMO", "ENER", "COR", "MEAN", "VAR",
];

// positions within FEATURE_BANDS
const I_B2: usize = 1;
const I_B3: usize = 2;
const I_B4: usize = 3;
const I_B6: usize = 5;
const I_B8: usize = 7;
const I_B11: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; N_FEATURES] = values.try_into().map_err(|_| Error::FeatureLength {
            expected: N_FEATURES,
            got: values.len(),
        })?;
        Ok(FeatureVector(arr))
    }
}

/// Floating Algae Index: B8 above the red-to-SWIR baseline.
pub fn fai_value(b4: f64, b8: f64, b11: f64) -> f64 {
    let l4 = BandId::B4.center_wavelength_nm();
    let l8 = BandId::B8.center_wavelength_nm();
    let l11 = BandId::B11.center_wavelength_nm();
    b8 - (b4 + (b11 - b4) * (l8 - l4) / (l11 - l4))
}

/// NDVI level in `0..GLCM_LEVELS` over the fixed range `[-1, 1]`.
#[inline]
pub fn quantize_ndvi(ndvi: f64) -> u8 {
    let scaled = ((ndvi + 1.0) * 0.5 * GLCM_LEVELS as f64).floor();
    scaled.clamp(0.0, (GLCM_LEVELS - 1) as f64) as u8
}

/// Texture statistics of one normalized symmetric GLCM.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GlcmStats {
    pub contrast: f64,
    pub dissimilarity: f64,
    pub homogeneity: f64,
    pub energy: f64,
    pub correlation: f64,
    pub mean: f64,
    pub variance: f64,
}

impl GlcmStats {
    /// Statistics of a symmetric co-occurrence count matrix (row-major,
    /// `GLCM_LEVELS^2` cells). An empty matrix is treated as `fallback_level`
    /// occurring alone.
    pub fn from_counts(counts: &[u32; GLCM_LEVELS * GLCM_LEVELS], fallback_level: u8) -> Self {
        let total: u32 = counts.iter().sum();
        if total == 0 {
            return GlcmStats {
                contrast: 0.0,
                dissimilarity: 0.0,
                homogeneity: 1.0,
                energy: 1.0,
                correlation: 1.0,
                mean: fallback_level as f64,
                variance: 0.0,
            };
        }
        let total = total as f64;
        let mut s = GlcmStats::default();
        let mut asm = 0.0;
        for (cell, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let p = c as f64 / total;
            let d = (cell / GLCM_LEVELS) as f64 - (cell % GLCM_LEVELS) as f64;
            s.contrast += p * d * d;
            s.dissimilarity += p * d.abs();
            s.homogeneity += p / (1.0 + d * d);
            asm += p * p;
            s.mean += p * (cell / GLCM_LEVELS) as f64;
        }
        s.energy = asm.sqrt();
        let mut cov = 0.0;
        for (cell, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let p = c as f64 / total;
            let di = (cell / GLCM_LEVELS) as f64 - s.mean;
            let dj = (cell % GLCM_LEVELS) as f64 - s.mean;
            s.variance += p * di * di;
            cov += p * di * dj;
        }
        s.correlation = if s.variance < 1e-15 { 1.0 } else { cov / s.variance };
        s
    }

    fn average(a: GlcmStats, b: GlcmStats) -> GlcmStats {
        GlcmStats {
            contrast: 0.5 * (a.contrast + b.contrast),
            dissimilarity: 0.5 * (a.dissimilarity + b.dissimilarity),
            homogeneity: 0.5 * (a.homogeneity + b.homogeneity),
            energy: 0.5 * (a.energy + b.energy),
            correlation: 0.5 * (a.correlation + b.correlation),
            mean: 0.5 * (a.mean + b.mean),
            variance: 0.5 * (a.variance + b.variance),
        }
    }
}

/// Borrowing extractor; validates band availability once.
pub struct FeatureExtractor<'a> {
    width: usize,
    height: usize,
    planes: [&'a [f32]; 11],
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(scene: &'a Scene) -> Result<Self> {
        scene.require(&FEATURE_BANDS)?;
        let mut planes: [&[f32]; 11] = [&[]; 11];
        for (slot, band) in planes.iter_mut().zip(FEATURE_BANDS) {
            *slot = scene.band(band)?.data();
        }
        Ok(FeatureExtractor {
            width: scene.width(),
            height: scene.height(),
            planes,
        })
    }

    #[inline]
    fn level_at(&self, i: usize) -> u8 {
        quantize_ndvi(ndvi_value(
            self.planes[I_B8][i] as f64,
            self.planes[I_B4][i] as f64,
        ))
    }

    /// Co-occurrence statistics of the window around `(x, y)`, averaged over
    /// the two offsets.
    pub fn texture(&self, x: usize, y: usize) -> GlcmStats {
        let x0 = x.saturating_sub(TEXTURE_RADIUS);
        let y0 = y.saturating_sub(TEXTURE_RADIUS);
        let x1 = (x + TEXTURE_RADIUS + 1).min(self.width);
        let y1 = (y + TEXTURE_RADIUS + 1).min(self.height);
        let mut levels = [0u8; (2 * TEXTURE_RADIUS + 1) * (2 * TEXTURE_RADIUS + 1)];
        let ww = x1 - x0;
        for yy in y0..y1 {
            for xx in x0..x1 {
                levels[(yy - y0) * ww + xx - x0] = self.level_at(yy * self.width + xx);
            }
        }
        let wh = y1 - y0;
        let center = self.level_at(y * self.width + x);
        let mut stats = [GlcmStats::default(); 2];
        for (k, (dx, dy)) in [(1usize, 0usize), (0, 1)].into_iter().enumerate() {
            let mut counts = [0u32; GLCM_LEVELS * GLCM_LEVELS];
            for yy in 0..wh.saturating_sub(dy) {
                for xx in 0..ww.saturating_sub(dx) {
                    let a = levels[yy * ww + xx] as usize;
                    let b = levels[(yy + dy) * ww + xx + dx] as usize;
                    counts[a * GLCM_LEVELS + b] += 1;
                    counts[b * GLCM_LEVELS + a] += 1;
                }
            }
            stats[k] = GlcmStats::from_counts(&counts, center);
        }
        GlcmStats::average(stats[0], stats[1])
    }

    pub fn extract(&self, x: usize, y: usize) -> FeatureVector {
        let i = y * self.width + x;
        let mut f = [0.0; N_FEATURES];
        for (slot, plane) in f.iter_mut().zip(&self.planes) {
            *slot = plane[i] as f64;
        }
        let (b2, b3, b4, b6, b8, b11) = (f[I_B2], f[I_B3], f[I_B4], f[I_B6], f[I_B8], f[I_B11]);
        f[11] = ndvi_value(b8, b4);
        f[12] = fai_value(b4, b8, b11);
        f[13] = fdi_value(b6, b8, b11);
        f[14] = ((1.0 - b2) * (1.0 - b3) * (1.0 - b4)).cbrt();
        f[15] = normalized_difference(b3, b8);
        f[16] = b8 - b4;
        f[17] = normalized_difference(b8, b11);
        f[18] = normalized_difference(b11 + b4, b8 + b2);
        let t = self.texture(x, y);
        f[19] = t.contrast;
        f[20] = t.dissimilarity;
        f[21] = t.homogeneity;
        f[22] = t.energy;
        f[23] = t.correlation;
        f[24] = t.mean;
        f[25] = t.variance;
        FeatureVector(f)
    }
}

/// Descriptor of pixel `(x, y)`.
pub fn extract_features(scene: &Scene, x: usize, y: usize) -> Result<FeatureVector> {
    if x >= scene.width() || y >= scene.height() {
        return Err(Error::Window(format!(
            "pixel ({x}, {y}) outside {}x{}",
            scene.width(),
            scene.height()
        )));
    }
    Ok(FeatureExtractor::new(scene)?.extract(x, y))
}
