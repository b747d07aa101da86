//! Baseline TIFF I/O: single-band 16-bit unsigned little-endian storage with
//! linear DN↔radiance mapping; 8-bit and RGB inputs are accepted on read.

use super::{rgb_to_pan, PanImage, RadiometricScale};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

/// Reads a grayscale or RGB TIFF, mapping DN linearly to radiance via
/// `scale`. RGB inputs are averaged into a single pan band. The ground
/// sampling distance is not stored in the files this module writes, so loaded
/// images carry `gsd = 1.0`.
pub fn load_tiff(path: &Path, scale: RadiometricScale) -> Result<PanImage> {
    scale.validate()?;
    let file = File::open(path)
        .map_err(|e| Error::Tiff(format!("cannot open {}: {e}", path.display())))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| Error::Tiff(format!("{}: {e}", path.display())))?;
    let (w, h) = dec
        .dimensions()
        .map_err(|e| Error::Tiff(format!("{}: {e}", path.display())))?;
    let (width, height) = (w as usize, h as usize);
    width
        .checked_mul(height)
        .filter(|n| *n < u32::MAX as usize)
        .ok_or_else(|| Error::Tiff(format!("{}: dimension overflow {w}x{h}", path.display())))?;
    let color = dec
        .colortype()
        .map_err(|e| Error::Tiff(format!("{}: {e}", path.display())))?;
    let data = dec
        .read_image()
        .map_err(|e| Error::Tiff(format!("{}: {e}", path.display())))?;

    let dn: Vec<f64> = match data {
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        _ => {
            return Err(Error::Tiff(format!(
                "{}: unsupported sample format (expected 8- or 16-bit unsigned)",
                path.display()
            )))
        }
    };
    let hint = match color {
        ColorType::Gray(8) | ColorType::RGB(8) => 8,
        _ => 12,
    };

    let radiance = |dn: f64| dn * scale.radiance_at_dn_max / f64::from(scale.dn_max);
    match color {
        ColorType::Gray(8) | ColorType::Gray(16) => {
            if dn.len() != width * height {
                return Err(Error::Tiff(format!("{}: truncated raster", path.display())));
            }
            let pixels = dn.into_iter().map(radiance).collect();
            Ok(PanImage::new(width, height, pixels, 1.0)?.with_bit_depth_hint(hint))
        }
        ColorType::RGB(8) | ColorType::RGB(16) => {
            if dn.len() != width * height * 3 {
                return Err(Error::Tiff(format!("{}: truncated raster", path.display())));
            }
            let band = |offset: usize| -> Result<PanImage> {
                let px: Vec<f64> = dn[offset..].iter().step_by(3).copied().map(radiance).collect();
                PanImage::new(width, height, px, 1.0).map_err(Into::into)
            };
            let pan = rgb_to_pan(&band(0)?, &band(1)?, &band(2)?)?;
            Ok(pan.with_bit_depth_hint(hint))
        }
        other => Err(Error::Tiff(format!(
            "{}: unsupported color type {other:?} (expected grayscale or RGB)",
            path.display()
        ))),
    }
}

/// Writes the image as an uncompressed single-band 16-bit unsigned TIFF,
/// clamping radiance into `[0, radiance_at_dn_max]` and quantizing to the
/// nearest DN. Returns how many pixels the clamp altered.
pub fn save_tiff(img: &PanImage, path: &Path, scale: RadiometricScale) -> Result<usize> {
    scale.validate()?;
    let mut clamped = 0usize;
    let dn: Vec<u16> = img
        .pixels()
        .iter()
        .map(|&v| {
            let (d, c) = scale.to_dn(v);
            clamped += usize::from(c);
            d
        })
        .collect();
    let file = File::create(path)
        .map_err(|e| Error::Tiff(format!("cannot create {}: {e}", path.display())))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file))
        .map_err(|e| Error::Tiff(format!("{}: {e}", path.display())))?;
    enc.write_image::<colortype::Gray16>(img.width() as u32, img.height() as u32, &dn)
        .map_err(|e| Error::Tiff(format!("{}: {e}", path.display())))?;
    Ok(clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tmp(name: &str) -> tempfile::TempDir {
        tempfile::Builder::new().prefix(name).tempdir().unwrap()
    }

    #[test]
    fn uniform_endpoints_map_exactly() {
        let dir = tmp("tiff-endpoints");
        let scale = RadiometricScale::default();
        for (value, dn_expected) in [(163.84, 4095u16), (0.0, 0)] {
            let img = PanImage::uniform(9, 7, value, 1.0).unwrap();
            let p = dir.path().join(format!("u{dn_expected}.tif"));
            let clamped = save_tiff(&img, &p, scale).unwrap();
            assert_eq!(clamped, 0);
            let back = load_tiff(&p, scale).unwrap();
            assert_eq!(back.width(), 9);
            assert_eq!(back.height(), 7);
            for &v in back.pixels() {
                assert_eq!(v, value);
            }
        }
    }

    #[test]
    fn random_dn_rasters_round_trip_exactly() {
        let dir = tmp("tiff-roundtrip");
        let scale = RadiometricScale::default();
        let mut rng = crate::rng::stream(21, 0);
        for case in 0..8 {
            let dn: Vec<u16> = (0..32 * 32).map(|_| rng.random_range(0..=4095)).collect();
            let px: Vec<f64> = dn.iter().map(|&d| scale.to_radiance(d)).collect();
            let img = PanImage::new(32, 32, px, 1.0).unwrap();
            let p = dir.path().join(format!("r{case}.tif"));
            save_tiff(&img, &p, scale).unwrap();
            let back = load_tiff(&p, scale).unwrap();
            let dn_back: Vec<u16> = back.pixels().iter().map(|&v| scale.to_dn(v).0).collect();
            assert_eq!(dn, dn_back);
            // Double round-trip is the identity on DN (and radiance) values.
            let p2 = dir.path().join(format!("r{case}b.tif"));
            save_tiff(&back, &p2, scale).unwrap();
            assert_eq!(load_tiff(&p2, scale).unwrap().pixels(), back.pixels());
        }
    }

    #[test]
    fn out_of_range_radiance_is_clamped_and_counted() {
        let dir = tmp("tiff-clamp");
        let scale = RadiometricScale::default();
        let mut px = vec![10.0; 16];
        px[3] = 500.0;
        px[9] = 164.0;
        let img = PanImage::new(4, 4, px, 1.0).unwrap();
        let p = dir.path().join("c.tif");
        assert_eq!(save_tiff(&img, &p, scale).unwrap(), 2);
        let back = load_tiff(&p, scale).unwrap();
        assert_eq!(back.pixels()[3], 163.84);
        assert_eq!(back.pixels()[9], 163.84);
    }

    #[test]
    fn missing_file_errors() {
        let err = load_tiff(Path::new("/nonexistent/x.tif"), RadiometricScale::default());
        assert!(matches!(err, Err(Error::Tiff(_))));
    }
}
