//! Image representation, 12-bit TIFF I/O, RGB→panchromatic conversion, patch
//! extraction, synthetic edge-target rendering, and dataset manifests.
//!
//! [`PanImage`] is the universal currency between pipeline stages: a
//! single-band, row-major raster of radiance values (W/m²/sr/µm) with a
//! ground-sampling-distance tag. Values are always finite and non-negative.

mod tiff_io;

pub use tiff_io::{load_tiff, save_tiff};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Single-band radiance raster.
#[derive(Clone, Debug, PartialEq)]
pub struct PanImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    gsd: f64,
    bit_depth_hint: u8,
}

impl PanImage {
    /// Builds an image from row-major radiance samples, validating invariants:
    /// the pixel count matches `width × height`, every value is finite and
    /// non-negative, and `gsd` is positive.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, gsd: f64) -> Result<Self> {
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidImage("width × height overflows".into()))?;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "pixel count {} != {width}×{height}",
                pixels.len()
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-sized image".into()));
        }
        if !(gsd > 0.0) {
            return Err(Error::InvalidImage(format!("gsd must be positive, got {gsd}")));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidImage(format!(
                "pixel values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self { width, height, pixels, gsd, bit_depth_hint: 12 })
    }

    /// Constructor for internal paths that preserve the invariants by
    /// construction (e.g. convolution of a valid image with a unit-sum kernel
    /// followed by a non-negativity clamp).
    pub(crate) fn from_parts(width: usize, height: usize, pixels: Vec<f64>, gsd: f64, bit_depth_hint: u8) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        debug_assert!(pixels.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self { width, height, pixels, gsd, bit_depth_hint }
    }

    /// Uniform image of the given value.
    pub fn uniform(width: usize, height: usize, value: f64, gsd: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], gsd)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major radiance samples.
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Meters of ground per pixel.
    pub fn gsd(&self) -> f64 {
        self.gsd
    }

    /// Container bit depth the data is meant for (12 by default: 12-bit DN
    /// payloads in 16-bit files).
    pub fn bit_depth_hint(&self) -> u8 {
        self.bit_depth_hint
    }

    pub fn with_bit_depth_hint(mut self, hint: u8) -> Self {
        self.bit_depth_hint = hint;
        self
    }

    /// Sample at `(x, y)`; caller guarantees bounds.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// One row of samples.
    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Mean radiance over the frame.
    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Rectangular crop; the window must lie inside the frame.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<PanImage> {
        if x + w > self.width || y + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidParameter(format!(
                "crop {w}x{h}+{x}+{y} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            pixels.extend_from_slice(&self.pixels[row * self.width + x..row * self.width + x + w]);
        }
        Ok(PanImage::from_parts(w, h, pixels, self.gsd, self.bit_depth_hint))
    }
}

/// Linear DN↔radiance mapping for fixed-point storage.
///
/// The defaults place a 12-bit payload (DN 0..=4095) on a radiance axis where
/// typical scene luminances sit mid-range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiometricScale {
    pub dn_max: u16,
    pub radiance_at_dn_max: f64,
}

impl Default for RadiometricScale {
    fn default() -> Self {
        Self { dn_max: 4095, radiance_at_dn_max: 163.84 }
    }
}

impl RadiometricScale {
    pub fn validate(&self) -> Result<()> {
        if self.dn_max == 0 {
            return Err(Error::InvalidParameter("dn_max must be positive".into()));
        }
        if !(self.radiance_at_dn_max > 0.0) || !self.radiance_at_dn_max.is_finite() {
            return Err(Error::InvalidParameter("radiance_at_dn_max must be positive".into()));
        }
        Ok(())
    }

    /// DN to radiance.
    #[inline]
    pub fn to_radiance(&self, dn: u16) -> f64 {
        f64::from(dn) * self.radiance_at_dn_max / f64::from(self.dn_max)
    }

    /// Radiance to nearest DN, clamping into `[0, dn_max]`; the flag reports
    /// whether clamping occurred.
    #[inline]
    pub fn to_dn(&self, radiance: f64) -> (u16, bool) {
        let clamped = radiance.clamp(0.0, self.radiance_at_dn_max);
        let dn = (clamped / self.radiance_at_dn_max * f64::from(self.dn_max)).round() as u16;
        (dn, clamped != radiance)
    }
}

/// Per-band average of three equally sized rasters.
///
/// The conversion is linear in each band and invariant under band
/// permutation; geometry metadata is taken from the first band.
pub fn rgb_to_pan(r: &PanImage, g: &PanImage, b: &PanImage) -> Result<PanImage> {
    if r.width != g.width || r.height != g.height || r.width != b.width || r.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "rgb bands {}x{}, {}x{}, {}x{}",
            r.width, r.height, g.width, g.height, b.width, b.height
        )));
    }
    let pixels = r
        .pixels
        .iter()
        .zip(&g.pixels)
        .zip(&b.pixels)
        .map(|((r, g), b)| (r + g + b) / 3.0)
        .collect();
    Ok(PanImage::from_parts(r.width, r.height, pixels, r.gsd, r.bit_depth_hint))
}

/// Row-major tiling into `patch × patch` windows every `stride` pixels.
/// Border windows that would overrun the frame are dropped, so the count is
/// `floor((W−patch)/stride+1) × floor((H−patch)/stride+1)`.
pub fn extract_patches(img: &PanImage, patch: usize, stride: usize) -> Result<Vec<PanImage>> {
    if patch == 0 || patch > img.width.min(img.height) {
        return Err(Error::InvalidParameter(format!(
            "patch {patch} exceeds image {}x{}",
            img.width, img.height
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be ≥ 1".into()));
    }
    let nx = (img.width - patch) / stride + 1;
    let ny = (img.height - patch) / stride + 1;
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            out.push(img.crop(ix * stride, iy * stride, patch, patch)?);
        }
    }
    Ok(out)
}

/// Angular validity range (degrees off-vertical) for slanted-edge work.
pub const EDGE_ANGLE_MIN_DEG: f64 = 2.0;
pub const EDGE_ANGLE_MAX_DEG: f64 = 15.0;

/// Renders an ideal near-vertical step edge, anti-aliased by exact
/// area-weighted pixel coverage: `low` radiance left of the edge, `high`
/// right of it, the edge passing through the frame center tilted `angle`
/// degrees off vertical.
///
/// `low == high` degenerates to a uniform frame; `low > high` is rejected.
pub fn render_slanted_edge(size: usize, angle_deg: f64, low: f64, high: f64) -> Result<PanImage> {
    render_slanted_edge_rect(size, size, angle_deg, low, high)
}

/// [`render_slanted_edge`] with independent height/width (taller frames give
/// the edge estimator more rows to average).
pub fn render_slanted_edge_rect(
    height: usize,
    width: usize,
    angle_deg: f64,
    low: f64,
    high: f64,
) -> Result<PanImage> {
    if width < 64 || height < 64 {
        return Err(Error::InvalidParameter(format!(
            "edge target must be at least 64 px on a side, got {width}x{height}"
        )));
    }
    if !(EDGE_ANGLE_MIN_DEG..=EDGE_ANGLE_MAX_DEG).contains(&angle_deg) {
        return Err(Error::InvalidParameter(format!(
            "edge angle {angle_deg}° outside the slanted-edge validity range \
             [{EDGE_ANGLE_MIN_DEG}°, {EDGE_ANGLE_MAX_DEG}°]"
        )));
    }
    if !(low.is_finite() && high.is_finite()) || low < 0.0 {
        return Err(Error::InvalidParameter("edge radiances must be finite and ≥ 0".into()));
    }
    if low > high {
        return Err(Error::InvalidParameter(format!("edge contrast inverted: low {low} > high {high}")));
    }

    let t = angle_deg.to_radians().tan();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(width * height);
    // Coverage of the high side over the unit pixel square: with the edge at
    // x_e(y) = cx + t·(y − cy), the covered fraction of pixel (ix, iy) is the
    // integral over the pixel's y-extent of clamp(ix + ½ − x_e(y), 0, 1).
    // Substituting z = ix + ½ − x_e(y), z sweeps linearly across [z₀ − t, z₀]
    // and the integral has the closed form (G(z_hi) − G(z_lo)) / t with
    // G(z) = ∫ clamp(z,0,1) dz.
    let g = |z: f64| -> f64 {
        if z <= 0.0 {
            0.0
        } else if z >= 1.0 {
            z - 0.5
        } else {
            0.5 * z * z
        }
    };
    for iy in 0..height {
        let a = -(cx + t * (iy as f64 - cy)) + 0.5;
        for ix in 0..width {
            let z_hi = ix as f64 + a + 0.5 * t;
            let z_lo = z_hi - t;
            // Exact flats away from the edge; the closed form cancels
            // catastrophically at large |z| and would leave ~1e-11 ripple.
            let coverage = if z_lo >= 1.0 {
                1.0
            } else if z_hi <= 0.0 {
                0.0
            } else if t > 0.0 {
                ((g(z_hi) - g(z_lo)) / t).clamp(0.0, 1.0)
            } else {
                z_hi.clamp(0.0, 1.0)
            };
            pixels.push(low + (high - low) * coverage);
        }
    }
    Ok(PanImage::from_parts(width, height, pixels, 1.0, 12))
}

/// Which split of a dataset a manifest describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One degraded/reference pair plus the degradation parameters that produced
/// it and the RNG seed of its noise stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub degraded: String,
    pub reference: String,
    pub mtf_nyq: f64,
    pub snr0: f64,
    pub snr1: f64,
    pub seed: u64,
}

/// Paired-patch listing for one dataset split. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub patch: u32,
    pub split: Split,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that every pair exists under `base` and that the two images of
    /// each pair share dimensions.
    pub fn validate(&self, base: &Path, scale: RadiometricScale) -> Result<()> {
        for e in &self.entries {
            let d = load_tiff(&base.join(&e.degraded), scale)?;
            let r = load_tiff(&base.join(&e.reference), scale)?;
            if d.width() != r.width() || d.height() != r.height() {
                return Err(Error::DimensionMismatch(format!(
                    "pair {} / {}: {}x{} vs {}x{}",
                    e.degraded,
                    e.reference,
                    d.width(),
                    d.height(),
                    r.width(),
                    r.height()
                )));
            }
        }
        Ok(())
    }
}
