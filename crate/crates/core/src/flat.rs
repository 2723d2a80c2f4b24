//! "DSCN" flat raster format.
//!
//! Little-endian layout:
//!
//! ```text
//! offset  size            field
//! 0       4               magic "DSCN"
//! 4       4               u32 width
//! 8       4               u32 height
//! 12      4               u32 band count N
//! 16      ...             N x (u16 name length, UTF-8 name bytes)
//! ...     48              6 x f64 geotransform (GDAL order)
//! ...     2 + n           u16 CRS length, UTF-8 CRS bytes
//! ...     1               processing level: 0 = L1C, 1 = L2A, 255 = none
//! ...     N*W*H*4         band planes, f32, row-major, in band order
//! ```
//!
//! The file length must equal the header length plus the plane payload
//! exactly; anything else is rejected as a bad length.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{BandId, GeoTransform, Grid, ProcessingLevel, Scene};

pub const MAGIC: &[u8; 4] = b"DSCN";

const LEVEL_NONE: u8 = 255;

/// Generic named-plane raster as stored in a DSCN file. Band names are free
/// text, so refined-mask stacks and probability maps share the format with
/// scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatRaster {
    pub width: usize,
    pub height: usize,
    pub names: Vec<String>,
    pub planes: Vec<Vec<f32>>,
    pub geotransform: GeoTransform,
    pub crs: String,
    pub level: Option<ProcessingLevel>,
}

impl FlatRaster {
    pub fn header_len(&self) -> usize {
        16 + self.names.iter().map(|n| 2 + n.len()).sum::<usize>() + 48 + 2 + self.crs.len() + 1
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let plane_len = self.width * self.height;
        if self.names.len() != self.planes.len() {
            return Err(Error::Dimensions(format!(
                "{} names for {} planes",
                self.names.len(),
                self.planes.len()
            )));
        }
        if let Some(p) = self.planes.iter().find(|p| p.len() != plane_len) {
            return Err(Error::Dimensions(format!(
                "plane of {} values in a {}x{} raster",
                p.len(),
                self.width,
                self.height
            )));
        }
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Dimensions(format!("{what} {v} exceeds u32")))
        };
        let to_u16 = |s: &str| {
            u16::try_from(s.len())
                .map_err(|_| Error::Dimensions(format!("string of {} bytes exceeds u16", s.len())))
        };

        let mut out = Vec::with_capacity(self.header_len() + 4 * plane_len * self.planes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&to_u32(self.width, "width")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.height, "height")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.names.len(), "band count")?.to_le_bytes());
        for name in &self.names {
            out.extend_from_slice(&to_u16(name)?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for c in self.geotransform.0 {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&to_u16(&self.crs)?.to_le_bytes());
        out.extend_from_slice(self.crs.as_bytes());
        out.push(match self.level {
            Some(ProcessingLevel::L1C) => 0,
            Some(ProcessingLevel::L2A) => 1,
            None => LEVEL_NONE,
        });
        for plane in &self.planes {
            for v in plane {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut names = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let n = r.u16()? as usize;
            names.push(r.string(n)?);
        }
        let mut gt = [0.0; 6];
        for c in &mut gt {
            *c = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
        let crs_len = r.u16()? as usize;
        let crs = r.string(crs_len)?;
        let level = match r.take(1)?[0] {
            0 => Some(ProcessingLevel::L1C),
            1 => Some(ProcessingLevel::L2A),
            LEVEL_NONE => None,
            other => return Err(Error::Schema(format!("unknown processing level byte {other}"))),
        };

        let plane_len = width
            .checked_mul(height)
            .ok_or_else(|| Error::BadLength("extent overflows".into()))?;
        let expected = plane_len
            .checked_mul(count)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::BadLength("payload size overflows".into()))?;
        let remaining = bytes.len() - r.pos;
        if remaining != expected {
            return Err(Error::BadLength(format!(
                "expected {expected} payload bytes, found {remaining}"
            )));
        }
        let payload = &bytes[r.pos..];
        let planes = (0..count)
            .map(|b| {
                payload[b * plane_len * 4..(b + 1) * plane_len * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect()
            })
            .collect();
        Ok(FlatRaster {
            width,
            height,
            names,
            planes,
            geotransform: GeoTransform(gt),
            crs,
            level,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FlatRaster::from_bytes(&bytes)
    }

    pub fn from_scene(scene: &Scene) -> Self {
        FlatRaster {
            width: scene.width(),
            height: scene.height(),
            names: scene.bands().iter().map(|b| b.name().to_string()).collect(),
            planes: scene.planes().iter().map(|p| p.data().to_vec()).collect(),
            geotransform: scene.geotransform(),
            crs: scene.crs().to_string(),
            level: Some(scene.level()),
        }
    }

    /// Interprets the planes as Sentinel-2 bands. A raster without a stored
    /// processing level is tagged `fallback_level`.
    pub fn into_scene(self, fallback_level: ProcessingLevel) -> Result<Scene> {
        let bands = self
            .names
            .iter()
            .map(|n| n.parse::<BandId>())
            .collect::<Result<Vec<_>>>()?;
        let planes = self
            .planes
            .into_iter()
            .map(|p| Grid::from_vec(self.width, self.height, p))
            .collect::<Result<Vec<_>>>()?;
        Scene::new(
            bands,
            planes,
            self.geotransform,
            self.crs,
            self.level.unwrap_or(fallback_level),
        )
    }

    pub fn plane(&self, name: &str) -> Option<Grid<f32>> {
        let i = self.names.iter().position(|n| n == name)?;
        Grid::from_vec(self.width, self.height, self.planes[i].clone()).ok()
    }

    pub fn plane_grid(&self, index: usize) -> Result<Grid<f32>> {
        let plane = self
            .planes
            .get(index)
            .ok_or_else(|| Error::Dimensions(format!("no plane {index}")))?;
        Grid::from_vec(self.width, self.height, plane.clone())
    }
}

pub fn write_flat(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    FlatRaster::from_scene(scene).write(path)
}

pub fn read_flat(path: impl AsRef<Path>) -> Result<Scene> {
    FlatRaster::read(path)?.into_scene(ProcessingLevel::L1C)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::BadLength(format!(
                "header truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Schema("band name is not UTF-8".into()))
    }
}
