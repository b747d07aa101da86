//! Paired-patch corpus construction: deterministic synthetic source scenes,
//! per-source reference and degraded renditions, aligned patch tiling, and
//! per-split manifests with degradation sidecars.
//!
//! A corpus is built from a directory of source TIFFs (gray or RGB; RGB is
//! pan-converted on load). Each source is degraded twice at the same
//! oversampling ratio — once with a fixed reference recipe and once with
//! parameters sampled per image from a ranged config — so the two frames stay
//! pixel-aligned. Both frames are tiled on the same patch grid, and the
//! resulting pairs are assigned to train/val/test **whole sources at a
//! time**, never splitting one source image across splits, which keeps
//! spatially overlapping content out of held-out sets.
//!
//! Every output — patch TIFFs, sidecar JSONs, manifests — is a deterministic
//! function of the source directory contents and the explicit seeds, so
//! reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{
    extract_patches, load_tiff, save_tiff, DatasetManifest, ManifestEntry, PanImage,
    RadiometricScale, Split,
};
use crate::rng;
use crate::sensor::{degrade, sample_config, AppliedDegradation, DegradationConfig};

/// Radiance floor of synthetic scenes; keeps the signal-dependent noise model
/// away from its degenerate dark limit.
pub const SCENE_RADIANCE_MIN: f64 = 5.0;
/// Radiance ceiling of synthetic scenes; stays below the default radiometric
/// maximum so encoding to DN never clamps.
pub const SCENE_RADIANCE_MAX: f64 = 160.0;

/// Train/val/test proportions for whole-source split assignment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "split fraction {name} must lie in [0, 1], got {v}"
                )));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Sources per split: train and val round to nearest, test takes the
    /// remainder, so the three counts always partition `n`.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let train = ((n as f64 * self.train).round() as usize).min(n);
        let val = ((n as f64 * self.val).round() as usize).min(n - train);
        [train, val, n - train - val]
    }
}

/// Corpus construction knobs beyond the two degradation recipes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildOptions {
    /// Patch side in pixels.
    pub patch: u32,
    /// Patch grid step in pixels; equal to `patch` for disjoint tiles.
    pub stride: u32,
    pub fractions: SplitFractions,
    /// Radiometric scale used to decode sources and encode patches.
    pub scale: RadiometricScale,
    /// Governs split assignment only; degradation draws derive from the
    /// `seed` fields of the two degradation configs.
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            patch: 128,
            stride: 128,
            fractions: SplitFractions::default(),
            scale: RadiometricScale::default(),
            seed: 0,
        }
    }
}

impl BuildOptions {
    pub fn validate(&self) -> Result<()> {
        if self.patch < 8 {
            return Err(Error::InvalidParameter(format!(
                "patch side must be at least 8 pixels, got {}",
                self.patch
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be ≥ 1".into()));
        }
        self.fractions.validate()?;
        self.scale.validate()
    }
}

/// Corpus construction summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub sources: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub patch: u32,
    pub stride: u32,
    /// Pixels clamped at zero while noising, summed over both renditions.
    pub noise_clamped: usize,
    /// Pixels clamped into DN range while encoding patch TIFFs.
    pub dn_clamped: usize,
    /// Manifest files written under the output directory, train/val/test
    /// order.
    pub manifests: [String; 3],
}

/// Builds a paired training corpus under `out_dir` from every TIFF found in
/// `src_dir`.
///
/// Per source image: load (RGB pan-converts), degrade with the fixed
/// `reference_cfg` recipe and with per-image parameters sampled from `cfg`,
/// both at the same oversampling ratio so the frames align; tile both frames
/// on the same patch grid; write the patch pairs plus one degradation
/// sidecar JSON per rendition. Sources are assigned whole to train/val/test,
/// and `train.json`, `val.json`, `test.json` manifests are written under
/// `out_dir` with paths relative to it.
pub fn build_corpus(
    src_dir: &Path,
    out_dir: &Path,
    cfg: &DegradationConfig,
    reference_cfg: &DegradationConfig,
    opts: &BuildOptions,
) -> Result<BuildReport> {
    opts.validate()?;
    cfg.validate()?;
    reference_cfg.validate()?;
    if cfg.oversampling != reference_cfg.oversampling {
        return Err(Error::InvalidParameter(format!(
            "degraded and reference recipes must share one oversampling ratio so pairs align, \
             got {} vs {}",
            cfg.oversampling, reference_cfg.oversampling
        )));
    }

    let sources = list_sources(src_dir)?;
    if sources.is_empty() {
        return Err(Error::Empty(format!("no TIFF sources in {}", src_dir.display())));
    }

    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir)?;

    // Whole-source split assignment: shuffle source indices, then cut the
    // shuffled order by the fraction counts.
    let [n_train, n_val, _] = opts.fractions.counts(sources.len());
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.shuffle(&mut rng::stream(opts.seed, 0));
    let mut assignment = vec![Split::Test; sources.len()];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    // Independent per-source seed streams, one per purpose, so the two
    // renditions never share noise and a config change on one side leaves
    // the other side's draws untouched.
    let mut sample_seeds = rng::stream(cfg.seed, 1);
    let mut noise_seeds = rng::stream(cfg.seed, 2);
    let mut ref_sample_seeds = rng::stream(reference_cfg.seed, 1);
    let mut ref_noise_seeds = rng::stream(reference_cfg.seed, 2);

    let mut entries: [Vec<ManifestEntry>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut noise_clamped = 0usize;
    let mut dn_clamped = 0usize;

    for (i, src) in sources.iter().enumerate() {
        let pan = load_tiff(src, opts.scale)?;
        let prefix = source_prefix(i, src);

        let (ref_mtf, ref_noise) = sample_config(reference_cfg, ref_sample_seeds.random())?;
        let (ref_img, ref_rec) =
            degrade(&pan, ref_mtf, ref_noise, reference_cfg.oversampling, ref_noise_seeds.random())?;
        let (deg_mtf, deg_noise) = sample_config(cfg, sample_seeds.random())?;
        let (deg_img, deg_rec) =
            degrade(&pan, deg_mtf, deg_noise, cfg.oversampling, noise_seeds.random())?;

        if deg_img.width() != ref_img.width() || deg_img.height() != ref_img.height() {
            return Err(Error::DimensionMismatch(format!(
                "renditions of {} diverged: {}x{} vs {}x{}",
                src.display(),
                deg_img.width(),
                deg_img.height(),
                ref_img.width(),
                ref_img.height()
            )));
        }
        noise_clamped += deg_rec.noise_clamped + ref_rec.noise_clamped;

        write_sidecar(&img_dir.join(format!("{prefix}_deg.json")), &deg_rec)?;
        write_sidecar(&img_dir.join(format!("{prefix}_ref.json")), &ref_rec)?;

        let patch = opts.patch as usize;
        let stride = opts.stride as usize;
        let deg_patches = extract_patches(&deg_img, patch, stride)?;
        let ref_patches = extract_patches(&ref_img, patch, stride)?;
        debug_assert_eq!(deg_patches.len(), ref_patches.len());

        let split = assignment[i];
        for (k, (dp, rp)) in deg_patches.iter().zip(&ref_patches).enumerate() {
            let d_rel = format!("images/{prefix}_{k:03}_deg.tif");
            let r_rel = format!("images/{prefix}_{k:03}_ref.tif");
            dn_clamped += save_tiff(dp, &out_dir.join(&d_rel), opts.scale)?;
            dn_clamped += save_tiff(rp, &out_dir.join(&r_rel), opts.scale)?;
            entries[split_index(split)].push(ManifestEntry {
                degraded: d_rel,
                reference: r_rel,
                mtf_nyq: deg_rec.mtf_nyq,
                snr0: deg_rec.snr0,
                snr1: deg_rec.snr1,
                seed: deg_rec.seed,
            });
        }
    }

    let splits = [Split::Train, Split::Val, Split::Test];
    let names = ["train.json", "val.json", "test.json"];
    let mut pair_counts = [0usize; 3];
    for s in 0..3 {
        pair_counts[s] = entries[s].len();
        let manifest = DatasetManifest {
            entries: std::mem::take(&mut entries[s]),
            patch: opts.patch,
            split: splits[s],
        };
        manifest.save(&out_dir.join(names[s]))?;
    }

    Ok(BuildReport {
        sources: sources.len(),
        train_pairs: pair_counts[0],
        val_pairs: pair_counts[1],
        test_pairs: pair_counts[2],
        patch: opts.patch,
        stride: opts.stride,
        noise_clamped,
        dn_clamped,
        manifests: names.map(str::to_string),
    })
}

/// TIFF files directly under `dir`, sorted by path for a stable processing
/// order.
fn list_sources(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_tiff = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"));
        if path.is_file() && is_tiff {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Unique file-name prefix for one source: its position in the sorted source
/// list plus its sanitized stem.
fn source_prefix(index: usize, path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("source");
    let clean: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:03}_{clean}")
}

fn write_sidecar(path: &Path, record: &AppliedDegradation) -> Result<()> {
    let mut text = serde_json::to_string_pretty(record)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn split_index(s: Split) -> usize {
    match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

/// Renders a deterministic synthetic scene in radiance units: a smooth
/// multi-directional sinusoid field overlaid with opaque rectangles, disks,
/// and thin bright bars, so degraded/reference pairs carry both low-frequency
/// shading and sharp high-contrast structure. Values span
/// [[`SCENE_RADIANCE_MIN`], [`SCENE_RADIANCE_MAX`]].
pub fn synthesize_source(width: usize, height: usize, gsd: f64, seed: u64) -> Result<PanImage> {
    if width < 32 || height < 32 {
        return Err(Error::InvalidParameter(format!(
            "synthetic scenes need at least 32×32 pixels, got {width}x{height}"
        )));
    }
    if !(gsd > 0.0) || !gsd.is_finite() {
        return Err(Error::InvalidParameter(format!("gsd must be positive, got {gsd}")));
    }
    let mut r = rng::stream(seed, 0);

    // Smooth base: directional sinusoids with wavelengths well above the
    // pixel pitch.
    let waves: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            let theta = r.random_range(0.0..std::f64::consts::PI);
            let wavelength = r.random_range(12.0..96.0);
            let phase = r.random_range(0.0..std::f64::consts::TAU);
            let amplitude = r.random_range(6.0..14.0);
            let k = std::f64::consts::TAU / wavelength;
            [k * theta.cos(), k * theta.sin(), phase, amplitude]
        })
        .collect();
    let mut pixels = vec![0.0f64; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut v = 70.0;
            for &[kx, ky, phase, amp] in &waves {
                v += amp * (kx * x as f64 + ky * y as f64 + phase).sin();
            }
            pixels[y * width + x] = v;
        }
    }

    // Opaque rectangles.
    for _ in 0..5 {
        let cx = r.random_range(0..width);
        let cy = r.random_range(0..height);
        let hw = r.random_range(3..=(width / 6).max(4));
        let hh = r.random_range(3..=(height / 6).max(4));
        let value = r.random_range(15.0..150.0);
        for y in cy.saturating_sub(hh)..(cy + hh).min(height) {
            for x in cx.saturating_sub(hw)..(cx + hw).min(width) {
                pixels[y * width + x] = value;
            }
        }
    }

    // Opaque disks.
    for _ in 0..4 {
        let cx = r.random_range(0..width) as i64;
        let cy = r.random_range(0..height) as i64;
        let radius = r.random_range(3.0..(width.min(height) as f64 / 8.0).max(4.0));
        let value = r.random_range(15.0..150.0);
        let rr = radius * radius;
        let reach = radius.ceil() as i64;
        for y in (cy - reach).max(0)..(cy + reach + 1).min(height as i64) {
            for x in (cx - reach).max(0)..(cx + reach + 1).min(width as i64) {
                let (dx, dy) = ((x - cx) as f64, (y - cy) as f64);
                if dx * dx + dy * dy <= rr {
                    pixels[y as usize * width + x as usize] = value;
                }
            }
        }
    }

    // Thin bright bars: 1–2 px thick, half the span long — the sharpest
    // structure in the scene.
    for _ in 0..3 {
        let horizontal = r.random_range(0..2u32) == 0;
        let thickness = r.random_range(1..=2usize);
        let value = r.random_range(120.0..155.0);
        if horizontal {
            let y0 = r.random_range(0..height - thickness);
            let x0 = r.random_range(0..width / 2);
            for y in y0..y0 + thickness {
                for x in x0..x0 + width / 2 {
                    pixels[y * width + x] = value;
                }
            }
        } else {
            let x0 = r.random_range(0..width - thickness);
            let y0 = r.random_range(0..height / 2);
            for y in y0..y0 + height / 2 {
                for x in x0..x0 + thickness {
                    pixels[y * width + x] = value;
                }
            }
        }
    }

    for v in &mut pixels {
        *v = v.clamp(SCENE_RADIANCE_MIN, SCENE_RADIANCE_MAX);
    }
    Ok(PanImage::from_parts(width, height, pixels, gsd, 12))
}

/// Writes `count` synthetic square scenes of side `size` into `dir` as
/// 16-bit gray TIFFs named `src_000.tif`, `src_001.tif`, … and returns their
/// paths in name order. Scene seeds derive from `seed`, so reruns write
/// byte-identical files.
pub fn synthesize_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::InvalidParameter("corpus needs at least one scene".into()));
    }
    fs::create_dir_all(dir)?;
    let scale = RadiometricScale::default();
    let mut seeder = rng::stream(seed, 0);
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = synthesize_source(size, size, 1.0, seeder.random())?;
        let path = dir.join(format!("src_{i:03}.tif"));
        save_tiff(&img, &path, scale)?;
        paths.push(path);
    }
    Ok(paths)
}
