//! Scenes, grids, masks and windows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the twelve Sentinel-2 bands used by the pipeline. The cirrus band
/// B10 carries no surface signal and is deliberately absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    B8A,
    B9,
    B11,
    B12,
}

impl BandId {
    /// Canonical storage order for 12-band files without a sidecar.
    pub const ALL: [BandId; 12] = [
        BandId::B1,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B9,
        BandId::B11,
        BandId::B12,
    ];

    /// Sentinel-2A central wavelength in nanometres.
    pub const fn center_wavelength_nm(self) -> f64 {
        match self {
            BandId::B1 => 442.7,
            BandId::B2 => 492.4,
            BandId::B3 => 559.8,
            BandId::B4 => 664.6,
            BandId::B5 => 704.1,
            BandId::B6 => 740.5,
            BandId::B7 => 782.8,
            BandId::B8 => 832.8,
            BandId::B8A => 864.7,
            BandId::B9 => 945.1,
            BandId::B11 => 1613.7,
            BandId::B12 => 2202.4,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            BandId::B1 => "B1",
            BandId::B2 => "B2",
            BandId::B3 => "B3",
            BandId::B4 => "B4",
            BandId::B5 => "B5",
            BandId::B6 => "B6",
            BandId::B7 => "B7",
            BandId::B8 => "B8",
            BandId::B8A => "B8A",
            BandId::B9 => "B9",
            BandId::B11 => "B11",
            BandId::B12 => "B12",
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        // accept zero-padded names such as "B01" and "B08"
        let normalized = match upper.strip_prefix("B0") {
            Some(rest) if !rest.is_empty() => format!("B{rest}"),
            _ => upper,
        };
        BandId::ALL
            .into_iter()
            .find(|b| b.name() == normalized)
            .ok_or_else(|| Error::UnknownBand(s.to_string()))
    }
}

/// Sentinel-2 processing level of the reflectances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessingLevel {
    /// Top-of-atmosphere.
    L1C,
    /// Bottom-of-atmosphere, atmospherically corrected.
    L2A,
}

impl FromStr for ProcessingLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L1C" => Ok(ProcessingLevel::L1C),
            "L2A" => Ok(ProcessingLevel::L2A),
            other => Err(Error::InvalidParameter(format!(
                "unknown processing level {other:?}"
            ))),
        }
    }
}

/// GDAL-style affine transform:
/// `map_x = c[0] + col * c[1] + row * c[2]`, `map_y = c[3] + col * c[4] + row * c[5]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform(pub [f64; 6]);

impl Default for GeoTransform {
    fn default() -> Self {
        GeoTransform::IDENTITY
    }
}

impl GeoTransform {
    /// Map coordinates equal pixel coordinates.
    pub const IDENTITY: GeoTransform = GeoTransform([0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    /// Map position of a fractional pixel coordinate (pixel corners at integers).
    pub fn pixel_to_map(&self, col: f64, row: f64) -> (f64, f64) {
        let c = &self.0;
        (
            c[0] + col * c[1] + row * c[2],
            c[3] + col * c[4] + row * c[5],
        )
    }

    /// Map position of the centre of pixel `(x, y)`.
    pub fn pixel_center(&self, x: usize, y: usize) -> (f64, f64) {
        self.pixel_to_map(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Inverse of [`pixel_to_map`](Self::pixel_to_map).
    pub fn map_to_pixel(&self, mx: f64, my: f64) -> Result<(f64, f64)> {
        let c = &self.0;
        let det = c[1] * c[5] - c[2] * c[4];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Georeference("singular geotransform".into()));
        }
        let dx = mx - c[0];
        let dy = my - c[3];
        Ok(((c[5] * dx - c[2] * dy) / det, (c[1] * dy - c[4] * dx) / det))
    }

    /// Transform of a sub-window starting at pixel `(x0, y0)`.
    pub fn offset(&self, x0: usize, y0: usize) -> GeoTransform {
        let (ox, oy) = self.pixel_to_map(x0 as f64, y0 as f64);
        let c = self.0;
        GeoTransform([ox, c[1], c[2], oy, c[4], c[5]])
    }
}

/// Dense row-major 2-D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimensions(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_extent<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Copy of the `width x height` block starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Grid<T>> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Window(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let start = y * self.width + x0;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }
}

/// Crisp label of a mask pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Other,
    Debris,
    Unlabeled,
}

impl Label {
    pub fn is_debris(self) -> bool {
        self == Label::Debris
    }
}

/// Crisp three-state mask.
pub type Mask = Grid<Label>;

/// Fuzzy mask with values in `[0, 1]`.
pub type FuzzyMask = Grid<f32>;

impl Mask {
    pub fn debris_count(&self) -> usize {
        self.data().iter().filter(|l| l.is_debris()).count()
    }

    /// 1.0 for debris, 0.0 otherwise.
    pub fn to_indicator(&self) -> Grid<f32> {
        self.map(|l| if l.is_debris() { 1.0 } else { 0.0 })
    }
}

/// Square window into a parent scene. Holds only geometry; use
/// [`Patch::extract`] to copy the pixels out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl Patch {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.size && y >= self.y0 && y < self.y0 + self.size
    }

    pub fn extract(&self, scene: &Scene) -> Result<Scene> {
        scene.crop(self.x0, self.y0, self.size, self.size)
    }

    pub fn crop_grid<T: Clone>(&self, grid: &Grid<T>) -> Result<Grid<T>> {
        grid.crop(self.x0, self.y0, self.size, self.size)
    }
}

/// Square window of `size` centred at `center`, shifted inside
/// `width x height` when it would cross an edge.
pub fn window_in(
    width: usize,
    height: usize,
    center: (i64, i64),
    size: usize,
) -> Result<Patch> {
    if size == 0 {
        return Err(Error::Window("window size must be at least 1".into()));
    }
    if size > width || size > height {
        return Err(Error::Window(format!(
            "window size {size} exceeds scene extent {width}x{height}"
        )));
    }
    let half = (size / 2) as i64;
    let clamp = |c: i64, extent: usize| -> usize {
        (c - half).clamp(0, (extent - size) as i64) as usize
    };
    Ok(Patch {
        x0: clamp(center.0, width),
        y0: clamp(center.1, height),
        size,
    })
}

/// Multi-band reflectance raster with georeferencing.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    width: usize,
    height: usize,
    bands: Vec<BandId>,
    planes: Vec<Grid<f32>>,
    geotransform: GeoTransform,
    crs: String,
    level: ProcessingLevel,
}

impl Scene {
    /// Validates extents, band uniqueness and the absence of NaN.
    pub fn new(
        bands: Vec<BandId>,
        planes: Vec<Grid<f32>>,
        geotransform: GeoTransform,
        crs: impl Into<String>,
        level: ProcessingLevel,
    ) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::MissingBand("scene has no bands".into()));
        }
        if bands.len() != planes.len() {
            return Err(Error::Dimensions(format!(
                "{} band ids for {} planes",
                bands.len(),
                planes.len()
            )));
        }
        for (i, b) in bands.iter().enumerate() {
            if bands[..i].contains(b) {
                return Err(Error::DuplicateBand(*b));
            }
        }
        let (width, height) = (planes[0].width(), planes[0].height());
        if width == 0 || height == 0 {
            return Err(Error::Dimensions("empty scene".into()));
        }
        for (band, plane) in bands.iter().zip(&planes) {
            if plane.width() != width || plane.height() != height {
                return Err(Error::Dimensions(format!(
                    "band {band} is {}x{}, expected {width}x{height}",
                    plane.width(),
                    plane.height()
                )));
            }
            if let Some(i) = plane.data().iter().position(|v| v.is_nan()) {
                return Err(Error::NanValue {
                    band: band.to_string(),
                    x: i % width,
                    y: i / width,
                });
            }
        }
        Ok(Scene {
            width,
            height,
            bands,
            planes,
            geotransform,
            crs: crs.into(),
            level,
        })
    }

    /// Scene where every listed band is filled with `value`.
    pub fn filled(
        width: usize,
        height: usize,
        bands: &[BandId],
        value: f32,
        level: ProcessingLevel,
    ) -> Result<Self> {
        let planes = bands.iter().map(|_| Grid::new(width, height, value)).collect();
        Scene::new(bands.to_vec(), planes, GeoTransform::IDENTITY, "", level)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> &[BandId] {
        &self.bands
    }

    pub fn planes(&self) -> &[Grid<f32>] {
        &self.planes
    }

    pub fn geotransform(&self) -> GeoTransform {
        self.geotransform
    }

    pub fn crs(&self) -> &str {
        &self.crs
    }

    pub fn level(&self) -> ProcessingLevel {
        self.level
    }

    pub fn with_georeference(mut self, geotransform: GeoTransform, crs: impl Into<String>) -> Self {
        self.geotransform = geotransform;
        self.crs = crs.into();
        self
    }

    pub fn has_band(&self, band: BandId) -> bool {
        self.bands.contains(&band)
    }

    pub fn band(&self, band: BandId) -> Result<&Grid<f32>> {
        self.bands
            .iter()
            .position(|b| *b == band)
            .map(|i| &self.planes[i])
            .ok_or_else(|| Error::MissingBand(band.to_string()))
    }

    /// Fails with the first band of `required` the scene lacks.
    pub fn require(&self, required: &[BandId]) -> Result<()> {
        match required.iter().find(|b| !self.has_band(**b)) {
            Some(b) => Err(Error::MissingBand(b.to_string())),
            None => Ok(()),
        }
    }

    pub fn value(&self, band: BandId, x: usize, y: usize) -> Result<f32> {
        Ok(*self.band(band)?.get(x, y))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Scene> {
        let planes = self
            .planes
            .iter()
            .map(|p| p.crop(x0, y0, width, height))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            width,
            height,
            bands: self.bands.clone(),
            planes,
            geotransform: self.geotransform.offset(x0, y0),
            crs: self.crs.clone(),
            level: self.level,
        })
    }

    /// Square window of `size` centred at `center` (pixel `(x, y)`), shifted
    /// inside the scene when it would cross an edge.
    pub fn window(&self, center: (i64, i64), size: usize) -> Result<Patch> {
        window_in(self.width, self.height, center, size)
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_registry_has_twelve_increasing_wavelengths() {
        assert_eq!(BandId::ALL.len(), 12);
        for pair in BandId::ALL.windows(2) {
            assert!(pair[0].center_wavelength_nm() < pair[1].center_wavelength_nm());
        }
        assert!("B10".parse::<BandId>().is_err());
        assert_eq!("b08".parse::<BandId>().unwrap(), BandId::B8);
        assert_eq!("B8A".parse::<BandId>().unwrap(), BandId::B8A);
    }

    #[test]
    fn window_examples() {
        let p = window_in(256, 256, (128, 128), 128).unwrap();
        assert_eq!((p.x0, p.y0), (64, 64));
        let p = window_in(256, 256, (0, 0), 128).unwrap();
        assert_eq!((p.x0, p.y0), (0, 0));
        let p = window_in(256, 256, (255, 250), 128).unwrap();
        assert_eq!((p.x0, p.y0), (128, 128));
        assert!(window_in(256, 256, (128, 128), 512).is_err());
        assert!(window_in(256, 256, (128, 128), 0).is_err());
    }

    #[test]
    fn scene_rejects_nan_and_duplicates() {
        let mut g = Grid::new(2, 2, 0.0f32);
        g.set(1, 1, f32::NAN);
        let err = Scene::new(vec![BandId::B1], vec![g], GeoTransform::IDENTITY, "", ProcessingLevel::L1C);
        assert!(matches!(err, Err(Error::NanValue { x: 1, y: 1, .. })));

        let g = Grid::new(2, 2, -0.01f32);
        let err = Scene::new(
            vec![BandId::B1, BandId::B1],
            vec![g.clone(), g.clone()],
            GeoTransform::IDENTITY,
            "",
            ProcessingLevel::L2A,
        );
        assert!(matches!(err, Err(Error::DuplicateBand(BandId::B1))));
        // small negatives are legitimate after atmospheric correction
        assert!(Scene::new(vec![BandId::B1], vec![g], GeoTransform::IDENTITY, "", ProcessingLevel::L2A).is_ok());
    }

    #[test]
    fn scene_rejects_mismatched_planes() {
        let err = Scene::new(
            vec![BandId::B1, BandId::B2],
            vec![Grid::new(2, 2, 0.0), Grid::new(3, 2, 0.0)],
            GeoTransform::IDENTITY,
            "",
            ProcessingLevel::L1C,
        );
        assert!(matches!(err, Err(Error::Dimensions(_))));
    }

    #[test]
    fn geotransform_inverse() {
        let gt = GeoTransform([500_000.0, 10.0, 0.0, 4_000_000.0, 0.0, -10.0]);
        let (mx, my) = gt.pixel_center(3, 7);
        assert_eq!((mx, my), (500_035.0, 3_999_925.0));
        let (px, py) = gt.map_to_pixel(mx, my).unwrap();
        assert!((px - 3.5).abs() < 1e-9 && (py - 7.5).abs() < 1e-9);
        assert_eq!(gt.offset(2, 3).pixel_to_map(0.0, 0.0), gt.pixel_to_map(2.0, 3.0));
    }

    #[test]
    fn crop_shifts_georeference() {
        let s = Scene::filled(8, 8, &[BandId::B2], 0.1, ProcessingLevel::L1C)
            .unwrap()
            .with_georeference(GeoTransform([100.0, 10.0, 0.0, 200.0, 0.0, -10.0]), "EPSG:32633");
        let c = s.crop(2, 3, 4, 4).unwrap();
        assert_eq!(c.geotransform().pixel_to_map(0.0, 0.0), (120.0, 170.0));
        assert_eq!(c.crs(), "EPSG:32633");
    }
}
