//! Per-pixel spectral indices.
//!
//! NDVI contrasts near-infrared against red. The Floating Debris Index
//! compares B8 against a baseline interpolated between the red-edge band B6
//! and SWIR band B11:
//!
//! ```text
//! B8' = B6 + (B11 - B6) * (λB8 - λB4) / (λB11 - λB4) * 10
//! FDI = B8 - B8'
//! ```
//!
//! Wavelengths come from [`BandId::center_wavelength_nm`].

use rayon::prelude::*;

use crate::error::Result;
use crate::raster::{BandId, Grid, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexKind {
    Ndvi,
    Fdi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexRaster {
    pub kind: IndexKind,
    pub values: Grid<f32>,
}

impl IndexRaster {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        *self.values.get(x, y)
    }
}

/// `(a - b) / (a + b)`, or 0 when the denominator vanishes.
#[inline]
pub fn normalized_difference(a: f64, b: f64) -> f64 {
    let den = a + b;
    if den == 0.0 {
        0.0
    } else {
        (a - b) / den
    }
}

#[inline]
pub fn ndvi_value(b8: f64, b4: f64) -> f64 {
    normalized_difference(b8, b4)
}

/// Weight of the B6->B11 slope in the FDI baseline.
pub fn fdi_slope_factor() -> f64 {
    let l4 = BandId::B4.center_wavelength_nm();
    let l8 = BandId::B8.center_wavelength_nm();
    let l11 = BandId::B11.center_wavelength_nm();
    (l8 - l4) / (l11 - l4) * 10.0
}

#[inline]
pub fn fdi_value(b6: f64, b8: f64, b11: f64) -> f64 {
    b8 - (b6 + (b11 - b6) * fdi_slope_factor())
}

fn per_pixel(
    scene: &Scene,
    inputs: &[BandId],
    kind: IndexKind,
    f: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<IndexRaster> {
    let planes = inputs
        .iter()
        .map(|b| scene.band(*b).map(|g| g.data()))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f32> = (0..scene.width() * scene.height())
        .into_par_iter()
        .map_init(
            || vec![0.0; inputs.len()],
            |buf, i| {
                for (slot, p) in buf.iter_mut().zip(&planes) {
                    *slot = p[i] as f64;
                }
                f(buf) as f32
            },
        )
        .collect();
    Ok(IndexRaster {
        kind,
        values: Grid::from_vec(scene.width(), scene.height(), values)?,
    })
}

pub fn ndvi(scene: &Scene) -> Result<IndexRaster> {
    per_pixel(scene, &[BandId::B8, BandId::B4], IndexKind::Ndvi, |v| {
        ndvi_value(v[0], v[1])
    })
}

pub fn fdi(scene: &Scene) -> Result<IndexRaster> {
    per_pixel(
        scene,
        &[BandId::B6, BandId::B8, BandId::B11],
        IndexKind::Fdi,
        |v| fdi_value(v[0], v[1], v[2]),
    )
}
