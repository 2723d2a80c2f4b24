//! GeoTIFF ingestion.
//!
//! Decoding is delegated to the `tiff` crate; this module adds band
//! semantics, DN scaling and georeferencing. Supported payloads are
//! uncompressed or DEFLATE, striped or tiled, chunky or planar, with 8/16-bit
//! integer or 32-bit float samples.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use tiff::decoder::{Decoder, Limits};
use tiff::tags::{SampleFormat, Tag};

use crate::error::{Error, Result};
use crate::raster::{BandId, GeoTransform, Grid, ProcessingLevel, Scene};

/// Integer digital numbers are divided by this to obtain reflectance.
pub const DN_SCALE: f32 = 10_000.0;

const GEOKEY_GEOGRAPHIC_TYPE: u16 = 2048;
const GEOKEY_PROJECTED_CS_TYPE: u16 = 3072;

/// Decoded planes of a GeoTIFF before any band interpretation.
#[derive(Clone, Debug)]
pub struct RawRaster {
    pub width: usize,
    pub height: usize,
    pub planes: Vec<Vec<f32>>,
    /// True when samples were stored as integers.
    pub integer: bool,
    pub geotransform: GeoTransform,
    pub crs: String,
}

/// Sidecar holding the band order: `<file>.bands.json`, a JSON array of
/// band names such as `["B2", "B3", "B4", "B8"]`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".bands.json");
    PathBuf::from(name)
}

/// `.tif`/`.tiff` files go through [`load_geotiff`]; anything else is read
/// as DSCN, with `level` used when the file does not record one.
pub fn load_scene(path: impl AsRef<Path>, level: ProcessingLevel) -> Result<Scene> {
    let path = path.as_ref();
    let is_tiff = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"));
    if is_tiff {
        load_geotiff(path, level)
    } else {
        crate::flat::FlatRaster::read(path)?.into_scene(level)
    }
}

/// Loads a reflectance scene. Integer files are scaled by 1/10000, float
/// files pass through. Without a sidecar the file must hold exactly the 12
/// bands in canonical order.
pub fn load_geotiff(path: impl AsRef<Path>, level: ProcessingLevel) -> Result<Scene> {
    let path = path.as_ref();
    let raw = read_raw(path)?;

    let sidecar = sidecar_path(path);
    let bands: Vec<BandId> = if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let names: Vec<String> = serde_json::from_str(&text)?;
        names.iter().map(|n| n.parse()).collect::<Result<_>>()?
    } else {
        BandId::ALL.to_vec()
    };
    if raw.planes.len() < bands.len() {
        let missing = bands[raw.planes.len()..]
            .iter()
            .map(|b| b.name())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::MissingBand(format!(
            "{} holds {} bands; missing {missing}",
            path.display(),
            raw.planes.len()
        )));
    }
    if raw.planes.len() > bands.len() {
        return Err(Error::Dimensions(format!(
            "{} holds {} bands but the band order names {}",
            path.display(),
            raw.planes.len(),
            bands.len()
        )));
    }

    let planes = raw
        .planes
        .into_iter()
        .map(|p| {
            let values = if raw.integer {
                p.into_iter().map(|v| v / DN_SCALE).collect()
            } else {
                p
            };
            Grid::from_vec(raw.width, raw.height, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Scene::new(bands, planes, raw.geotransform, raw.crs, level)
}

/// Decodes every sample plane of the first image in the file.
pub fn read_raw(path: impl AsRef<Path>) -> Result<RawRaster> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file))?.with_limits(Limits::unlimited());

    let (w, h) = decoder.dimensions()?;
    let (width, height) = (w as usize, h as usize);
    let samples = decoder
        .find_tag_unsigned::<u16>(Tag::SamplesPerPixel)?
        .unwrap_or(1) as usize;
    let bits = decoder.colortype()?.bit_depth();
    let format = match decoder.find_tag_unsigned_vec::<u16>(Tag::SampleFormat)? {
        Some(v) if !v.is_empty() => SampleFormat::from_u16(v[0]).unwrap_or(SampleFormat::Uint),
        _ => SampleFormat::Uint,
    };
    let geotransform = read_geotransform(&mut decoder)?;
    let crs = read_crs(&mut decoder)?;

    let layout = decoder.image_buffer_layout()?;
    let mut buffer = vec![0u8; layout.complete_len];
    decoder.read_image_bytes(&mut buffer)?;

    let bytes_per_sample = (bits as usize).div_ceil(8);
    let convert: fn(&[u8]) -> f32 = match (format, bits) {
        (SampleFormat::Uint, 8) => |b| b[0] as f32,
        (SampleFormat::Int, 8) => |b| b[0] as i8 as f32,
        (SampleFormat::Uint, 16) => |b| u16::from_ne_bytes([b[0], b[1]]) as f32,
        (SampleFormat::Int, 16) => |b| i16::from_ne_bytes([b[0], b[1]]) as f32,
        (SampleFormat::IEEEFP, 32) => |b| f32::from_ne_bytes([b[0], b[1], b[2], b[3]]),
        (f, b) => {
            return Err(Error::Unsupported(format!(
                "{b}-bit {f:?} samples in {}",
                path.display()
            )))
        }
    };
    let integer = !matches!(format, SampleFormat::IEEEFP);
    let n = width * height;

    let planes: Vec<Vec<f32>> = if layout.planes > 1 {
        let stride = layout.plane_stride.map_or(0, |s| s.get());
        (0..layout.planes)
            .map(|p| {
                buffer[p * stride..p * stride + n * bytes_per_sample]
                    .chunks_exact(bytes_per_sample)
                    .map(convert)
                    .collect()
            })
            .collect()
    } else {
        let mut planes = vec![Vec::with_capacity(n); samples];
        for (i, chunk) in buffer[..n * samples * bytes_per_sample]
            .chunks_exact(bytes_per_sample)
            .enumerate()
        {
            planes[i % samples].push(convert(chunk));
        }
        planes
    };
    if planes.len() != samples || planes.iter().any(|p| p.len() != n) {
        return Err(Error::Dimensions(format!(
            "decoded {} planes for {samples} samples in {}",
            planes.len(),
            path.display()
        )));
    }
    Ok(RawRaster {
        width,
        height,
        planes,
        integer,
        geotransform,
        crs,
    })
}

fn read_geotransform<R: std::io::Read + std::io::Seek>(
    decoder: &mut Decoder<R>,
) -> Result<GeoTransform> {
    if let Some(v) = decoder.find_tag(Tag::ModelTransformationTag)? {
        let m = v.into_f64_vec()?;
        if m.len() != 16 {
            return Err(Error::Georeference(format!(
                "model transformation has {} entries, expected 16",
                m.len()
            )));
        }
        return Ok(GeoTransform([m[3], m[0], m[1], m[7], m[4], m[5]]));
    }
    let scale = decoder.find_tag(Tag::ModelPixelScaleTag)?;
    let tie = decoder.find_tag(Tag::ModelTiepointTag)?;
    match (scale, tie) {
        (Some(scale), Some(tie)) => {
            let s = scale.into_f64_vec()?;
            let t = tie.into_f64_vec()?;
            if s.len() < 2 || t.len() < 6 {
                return Err(Error::Georeference(
                    "pixel scale or tie point too short".into(),
                ));
            }
            if s[0] == 0.0 || s[1] == 0.0 {
                return Err(Error::Georeference("zero pixel scale".into()));
            }
            let (i, j, x, y) = (t[0], t[1], t[3], t[4]);
            Ok(GeoTransform([x - i * s[0], s[0], 0.0, y + j * s[1], 0.0, -s[1]]))
        }
        (None, None) => Err(Error::Georeference(
            "no ModelTransformation or ModelPixelScale/ModelTiepoint tags".into(),
        )),
        _ => Err(Error::Georeference(
            "ModelPixelScale and ModelTiepoint must appear together".into(),
        )),
    }
}

fn read_crs<R: std::io::Read + std::io::Seek>(decoder: &mut Decoder<R>) -> Result<String> {
    let Some(dir) = decoder.find_tag(Tag::GeoKeyDirectoryTag)? else {
        return Ok(String::new());
    };
    let keys = dir.into_u16_vec()?;
    if keys.len() < 4 || keys.len() < 4 + 4 * keys[3] as usize {
        return Err(Error::Georeference("truncated GeoKey directory".into()));
    }
    let mut geographic = None;
    for entry in keys[4..4 + 4 * keys[3] as usize].chunks_exact(4) {
        // location 0 means the value is stored inline
        if entry[1] != 0 {
            continue;
        }
        match entry[0] {
            GEOKEY_PROJECTED_CS_TYPE => return Ok(format!("EPSG:{}", entry[3])),
            GEOKEY_GEOGRAPHIC_TYPE => geographic = Some(entry[3]),
            _ => {}
        }
    }
    Ok(geographic.map(|c| format!("EPSG:{c}")).unwrap_or_default())
}
