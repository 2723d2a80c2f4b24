//! Marine-debris detection on 12-band Sentinel-2 reflectance rasters.
//!
//! The crate covers the whole classical pipeline:
//!
//! 1. [`raster`], [`flat`] and [`geotiff`]: scenes, masks and their on-disk formats.
//! 2. [`spectral`]: NDVI and the Floating Debris Index.
//! 3. [`refine`]: expansion of hand-drawn line annotations into an ensemble of
//!    25 pixel masks (buffer, Otsu on FDI, random-walker segmentation).
//! 4. [`dataset`]: debris-centred, random and ship-centred patches plus the
//!    balanced pixel set used by the forest.
//! 5. [`features`] and [`forest`]: the 26-value pixel descriptor and a CART
//!    random forest trained from scratch.
//! 6. [`inference`]: threshold calibration, tiled scene prediction and
//!    local-maximum detection extraction.
//! 7. [`metrics`]: accuracy, F-score, AUROC, Jaccard and Cohen's kappa, plus
//!    the centre-pixel point protocol.

pub mod dataset;
pub mod error;
pub mod features;
pub mod flat;
pub mod forest;
pub mod geojson;
pub mod geotiff;
pub mod inference;
pub mod metrics;
pub mod raster;
pub mod refine;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};
pub use raster::{BandId, GeoTransform, Grid, Label, Mask, FuzzyMask, Patch, ProcessingLevel, Scene};
