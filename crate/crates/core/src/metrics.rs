//! Full-reference quality metrics (PSNR, SSIM) and physical estimators
//! (slanted-edge MTF, variance-based SNR), plus the JSON report types the
//! evaluation tooling emits.
//!
//! The two physical estimators are the measurement half of the
//! simulate→measure loop: applying a degradation recipe and measuring the
//! result must recover the recipe's MTF and SNR figures within the
//! tolerances pinned in this module's tests.

use crate::error::{Error, Result};
use crate::fft::fft1;
use crate::imagery::{PanImage, EDGE_ANGLE_MAX_DEG, EDGE_ANGLE_MIN_DEG};
use crate::sensor::sinc;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Reported instead of +∞ when the mean squared error underflows
/// `peak²·1e−10`.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SNR values above this are reported as exactly this cap.
pub const SNR_CAP: f64 = 1e6;

/// Peak signal-to-noise ratio in decibels: `10·log10(peak²/MSE)`, capped at
/// [`PSNR_CAP_DB`] when the MSE drops below `peak²·1e−10`.
pub fn psnr(x: &PanImage, y: &PanImage, peak: f64) -> Result<f64> {
    check_same_dims(x, y)?;
    check_peak(peak)?;
    let n = x.pixels().len() as f64;
    let mse = x
        .pixels()
        .iter()
        .zip(y.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse < peak * peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_SIDE: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean structural similarity over all fully-interior 11×11 Gaussian
/// (σ = 1.5) windows, with the canonical K₁ = 0.01, K₂ = 0.03 stabilizers
/// and `peak` as the dynamic range. Returns a value in [−1, 1].
pub fn ssim(x: &PanImage, y: &PanImage, peak: f64) -> Result<f64> {
    check_same_dims(x, y)?;
    check_peak(peak)?;
    let (w, h) = (x.width(), x.height());
    if w < SSIM_SIDE || h < SSIM_SIDE {
        return Err(Error::InvalidImage(format!(
            "ssim needs at least {SSIM_SIDE}×{SSIM_SIDE} pixels, got {w}x{h}"
        )));
    }
    let taps = gaussian_taps();
    let filt = |field: &[f64]| gauss_valid(field, w, h, &taps);

    let a = x.pixels();
    let b = y.pixels();
    let mul = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mu_x = filt(a);
    let mu_y = filt(b);
    let e_xx = filt(&mul(a, a));
    let e_yy = filt(&mul(b, b));
    let e_xy = filt(&mul(a, b));

    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = (e_xx[i] - mx * mx).max(0.0);
        let vy = (e_yy[i] - my * my).max(0.0);
        let cov = e_xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(acc / mu_x.len() as f64)
}

fn gaussian_taps() -> [f64; SSIM_SIDE] {
    let mut taps = [0.0; SSIM_SIDE];
    let c = (SSIM_SIDE / 2) as f64;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *t;
    }
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable "valid" windowed filter: output is `(w−10) × (h−10)`.
fn gauss_valid(field: &[f64], w: usize, h: usize, taps: &[f64; SSIM_SIDE]) -> Vec<f64> {
    let ow = w - (SSIM_SIDE - 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &field[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * row[x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let oh = h - (SSIM_SIDE - 1);
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn check_same_dims(x: &PanImage, y: &PanImage) -> Result<()> {
    if x.width() != y.width() || x.height() != y.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    Ok(())
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
    }
    Ok(())
}

/// What a region of interest contains, which decides how it is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiKind {
    Edge,
    Flat,
}

/// Rectangular region of interest, supplied via JSON sidecars.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub kind: RoiKind,
}

pub const FLAT_ROI_MIN: u32 = 16;
pub const EDGE_ROI_MIN: u32 = 32;

impl Roi {
    /// Geometry checks: inside the image and at least the minimum size for
    /// its kind (16 px for flat/SNR regions, 32 px for edge regions).
    pub fn validate(&self, img: &PanImage) -> Result<()> {
        let min = match self.kind {
            RoiKind::Edge => EDGE_ROI_MIN,
            RoiKind::Flat => FLAT_ROI_MIN,
        };
        if self.w < min || self.h < min {
            return Err(Error::InvalidParameter(format!(
                "{:?} roi {}x{} below the {min} px minimum",
                self.kind, self.w, self.h
            )));
        }
        let (ex, ey) = (self.x as u64 + self.w as u64, self.y as u64 + self.h as u64);
        if ex > img.width() as u64 || ey > img.height() as u64 {
            return Err(Error::InvalidParameter(format!(
                "roi [{},{} {}x{}] exceeds image {}x{}",
                self.x,
                self.y,
                self.w,
                self.h,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    fn crop(&self, img: &PanImage) -> Result<PanImage> {
        img.crop(self.x as usize, self.y as usize, self.w as usize, self.h as usize)
    }

    /// Reads a sidecar: a JSON array of `{"x","y","w","h","kind"}` objects.
    pub fn load_list(path: &Path) -> Result<Vec<Roi>> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes a sidecar readable by [`Roi::load_list`].
    pub fn save_list(rois: &[Roi], path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(rois)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Least-squares edge line `x = offset + slope·y` fitted to per-row
/// centroids of the squared horizontal gradient.
#[derive(Clone, Copy, Debug)]
pub struct EdgeFit {
    pub offset: f64,
    pub slope: f64,
}

impl EdgeFit {
    /// Slant from vertical, in degrees (signed).
    pub fn angle_deg(&self) -> f64 {
        self.slope.atan().to_degrees()
    }
}

/// Minimum number of rows that must carry gradient energy for a fit.
const EDGE_MIN_ROWS: usize = 8;
/// Second-pass centroid window half-width around the first-pass line, px.
const EDGE_REFIT_WINDOW: f64 = 16.0;

/// Locates a near-vertical edge: per-row centroids of the squared central
/// horizontal gradient, least-squares line fit, then one refit restricted to
/// a ±16 px band around the first line (squared weights plus the second pass
/// keep broadband noise from biasing the slope toward zero).
pub fn fit_edge(img: &PanImage) -> Result<EdgeFit> {
    let (w, h) = (img.width(), img.height());
    if w < 16 || h < EDGE_MIN_ROWS {
        return Err(Error::EdgeMeasurement(format!("region {w}x{h} too small for an edge fit")));
    }
    let mut weights = vec![0.0; w * h];
    for y in 0..h {
        let row = img.row(y);
        for x in 1..w - 1 {
            let g = 0.5 * (row[x + 1] - row[x - 1]);
            weights[y * w + x] = g * g;
        }
    }
    let centroids = |window: Option<&EdgeFit>| -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(h);
        for y in 0..h {
            let (mut lo, mut hi) = (0usize, w);
            if let Some(fit) = window {
                let center = fit.offset + fit.slope * y as f64;
                lo = (center - EDGE_REFIT_WINDOW).floor().max(0.0) as usize;
                hi = ((center + EDGE_REFIT_WINDOW).ceil() as usize + 1).min(w);
                if lo >= hi {
                    continue;
                }
            }
            let row = &weights[y * w + lo..y * w + hi];
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                continue;
            }
            let cx: f64 = row.iter().enumerate().map(|(i, &v)| (lo + i) as f64 * v).sum::<f64>() / sum;
            pts.push((y as f64, cx));
        }
        pts
    };
    let fit_line = |pts: &[(f64, f64)]| -> Result<EdgeFit> {
        if pts.len() < EDGE_MIN_ROWS {
            return Err(Error::EdgeMeasurement(format!(
                "no edge found: only {} rows carry gradient energy",
                pts.len()
            )));
        }
        let n = pts.len() as f64;
        let sy: f64 = pts.iter().map(|p| p.0).sum();
        let sx: f64 = pts.iter().map(|p| p.1).sum();
        let syy: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let syx: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let det = n * syy - sy * sy;
        if det.abs() < 1e-12 {
            return Err(Error::EdgeMeasurement("degenerate edge fit".into()));
        }
        let slope = (n * syx - sy * sx) / det;
        let offset = (sx - slope * sy) / n;
        Ok(EdgeFit { offset, slope })
    };
    let first = fit_line(&centroids(None))?;
    fit_line(&centroids(Some(&first)))
}

/// ESF binning factor: bins are 1/4 pixel wide along the edge normal.
const MTF_OVERSAMPLE: f64 = 4.0;
/// Hamming window length cap over the LSF, in bins.
const MTF_MAX_WINDOW_BINS: usize = 257;
/// Zero-padded DFT length; with 1/4-px bins the spacing is 1/512 cycles/px
/// and the Nyquist frequency lands exactly on bin 256.
const MTF_DFT_LEN: usize = 2048;
/// Smoothing span for the monotonicity gate on the binned ESF.
const ESF_GATE_SPAN: usize = 9;
/// Monotonicity slack as a fraction of the windowed ESF amplitude.
const ESF_GATE_SLACK: f64 = 0.02;

/// System MTF curve measured from a slanted edge, sampled on
/// `[0, 0.5]` cycles/pixel.
#[derive(Clone, Debug, Serialize)]
pub struct MtfCurve {
    frequencies: Vec<f64>,
    values: Vec<f64>,
    mtf_at_nyquist: f64,
    angle_deg: f64,
}

impl MtfCurve {
    /// Sample frequencies in cycles/pixel, ascending from 0 to 0.5.
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// MTF values; `values()[0]` is 1 by DC normalization.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The curve linearly interpolated at 0.5 cycles/pixel.
    pub fn mtf_at_nyquist(&self) -> f64 {
        self.mtf_at_nyquist
    }

    /// Fitted edge slant from vertical, degrees.
    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }

    fn interpolate(frequencies: &[f64], values: &[f64], f: f64) -> f64 {
        match frequencies.binary_search_by(|p| p.partial_cmp(&f).unwrap()) {
            Ok(i) => values[i],
            Err(i) => {
                let (i0, i1) = (i - 1, i);
                let t = (f - frequencies[i0]) / (frequencies[i1] - frequencies[i0]);
                values[i0] + t * (values[i1] - values[i0])
            }
        }
    }
}

/// Measures the system MTF from a single near-vertical slanted edge inside
/// `roi`:
///
/// 1. edge line by per-row gradient centroids + least-squares ([`fit_edge`]);
/// 2. all ROI pixels projected onto signed edge-normal distance and binned
///    into a 4×-oversampled ESF (empty bins linearly interpolated);
/// 3. central-difference LSF;
/// 4. Hamming window centered on the LSF peak;
/// 5. zero-padded DFT, magnitude normalized by DC;
/// 6. curve reported on [0, 0.5] cycles/pixel after dividing out the
///    scene-pixel aperture, the bin aperture, and the finite-difference
///    response.
pub fn slanted_edge_mtf(img: &PanImage, roi: Roi) -> Result<MtfCurve> {
    if roi.kind != RoiKind::Edge {
        return Err(Error::InvalidParameter("slanted_edge_mtf needs an edge roi".into()));
    }
    roi.validate(img)?;
    let crop = roi.crop(img)?;
    let fit = fit_edge(&crop)?;
    let angle = fit.angle_deg();
    if !(EDGE_ANGLE_MIN_DEG..=EDGE_ANGLE_MAX_DEG).contains(&angle.abs()) {
        return Err(Error::EdgeMeasurement(format!(
            "edge slant {angle:.2}° outside the validity range \
             [{EDGE_ANGLE_MIN_DEG}°, {EDGE_ANGLE_MAX_DEG}°]"
        )));
    }

    // Signed edge-normal distance for every pixel, binned at 4×.
    let (w, h) = (crop.width(), crop.height());
    let bin_w = 1.0 / MTF_OVERSAMPLE;
    let cos_t = fit.slope.atan().cos();
    let mut dists = Vec::with_capacity(w * h);
    let mut dmin = f64::MAX;
    for y in 0..h {
        let line_x = fit.offset + fit.slope * y as f64;
        for x in 0..w {
            let d = (x as f64 - line_x) * cos_t;
            dmin = dmin.min(d);
            dists.push(d);
        }
    }
    let nb = dists.iter().map(|d| ((d - dmin) / bin_w).floor() as usize).max().unwrap() + 1;
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0u32; nb];
    for (d, &v) in dists.iter().zip(crop.pixels()) {
        let b = ((d - dmin) / bin_w).floor() as usize;
        sums[b] += v;
        counts[b] += 1;
    }
    let mut esf = vec![0.0; nb];
    for i in 0..nb {
        if counts[i] > 0 {
            esf[i] = sums[i] / counts[i] as f64;
        }
    }
    // Linear interpolation across interior gaps (the extreme bins hold the
    // min/max-distance pixels by construction).
    let mut prev_nz = 0;
    for i in 1..nb {
        if counts[i] > 0 {
            if i > prev_nz + 1 {
                let (v0, v1) = (esf[prev_nz], esf[i]);
                let span = (i - prev_nz) as f64;
                for (k, slot) in esf[prev_nz + 1..i].iter_mut().enumerate() {
                    *slot = v0 + (v1 - v0) * (k + 1) as f64 / span;
                }
            }
            prev_nz = i;
        }
    }

    // LSF by central difference, then locate the transition.
    let mut lsf = vec![0.0; nb];
    for i in 1..nb - 1 {
        lsf[i] = (esf[i + 1] - esf[i - 1]) / (2.0 * bin_w);
    }
    let peak = lsf
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let half = peak.min(nb - 1 - peak).min(MTF_MAX_WINDOW_BINS / 2);
    if half < 16 {
        return Err(Error::EdgeMeasurement(
            "edge transition too close to the region boundary".into(),
        ));
    }
    let (w0, w1) = (peak - half, peak + half + 1);

    esf_monotone_gate(&esf[w0..w1])?;

    // Hamming-windowed LSF segment, zero-padded DFT, DC-normalized.
    let m = w1 - w0;
    let mut buf = vec![Complex::new(0.0, 0.0); MTF_DFT_LEN];
    for i in 0..m {
        let wnd = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (m - 1) as f64).cos();
        buf[i] = Complex::new(lsf[w0 + i] * wnd, 0.0);
    }
    fft1(&mut buf, false);
    let dc = buf[0].norm();
    if dc <= 0.0 {
        return Err(Error::EdgeMeasurement("no edge found: zero net transition".into()));
    }

    // Keep [0, 0.5] cycles/px and divide out the measurement chain: the
    // scene-raster aperture sinc(f), the bin aperture sinc(f/4), and the
    // central-difference derivative response sinc(f/2).
    let keep = MTF_DFT_LEN / 8 + 1;
    let mut frequencies = Vec::with_capacity(keep);
    let mut values = Vec::with_capacity(keep);
    for (k, c) in buf.iter().enumerate().take(keep) {
        let f = k as f64 / (MTF_DFT_LEN as f64 * bin_w);
        let corr = sinc(f) * sinc(f * bin_w) * sinc(2.0 * f * bin_w);
        frequencies.push(f);
        values.push(c.norm() / dc / corr);
    }
    let dc_val = values[0];
    for v in &mut values {
        *v /= dc_val;
    }
    let mtf_at_nyquist = MtfCurve::interpolate(&frequencies, &values, 0.5);
    Ok(MtfCurve { frequencies, values, mtf_at_nyquist, angle_deg: angle })
}

/// The windowed ESF must be monotone after smoothing: a 9-bin moving average
/// may move against the transition direction by at most 2% of the window's
/// amplitude. Rejects bars, blobs, and noise masquerading as edges.
fn esf_monotone_gate(esf: &[f64]) -> Result<()> {
    let n = esf.len();
    let half = ESF_GATE_SPAN / 2;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            esf[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let lo = smooth.iter().cloned().fold(f64::MAX, f64::min);
    let hi = smooth.iter().cloned().fold(f64::MIN, f64::max);
    let amplitude = hi - lo;
    if amplitude <= 0.0 {
        return Err(Error::EdgeMeasurement("no edge found: flat region".into()));
    }
    let slack = ESF_GATE_SLACK * amplitude;
    let rising = smooth[n - 1] >= smooth[0];
    for pair in smooth.windows(2) {
        let step = pair[1] - pair[0];
        if (rising && step < -slack) || (!rising && step > slack) {
            return Err(Error::EdgeMeasurement(
                "edge-spread function is not monotone: region is not a single clean edge".into(),
            ));
        }
    }
    Ok(())
}

/// Per-ROI first- and second-moment statistics.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RoiStat {
    pub mean: f64,
    pub std: f64,
    /// `mean/std`, capped at [`SNR_CAP`] for (near-)zero std.
    pub snr: f64,
}

/// Noise-law fit from homogeneous regions:
/// `SNR(L) = L / √(α̂·L + β̂)` at the two reporting anchors.
#[derive(Clone, Debug, Serialize)]
pub struct SnrEstimate {
    pub per_roi: Vec<RoiStat>,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub snr_at_l0: f64,
    pub snr_at_l1: f64,
    /// All regions had (numerically) zero variance; the anchors carry the cap.
    pub noiseless: bool,
}

/// Fits the signal-dependent noise law from ≥ 3 homogeneous ROIs whose means
/// span at least a 2× range: least squares of sample variance against sample
/// mean gives `(α̂, β̂)`, from which the SNR at the `l0` and `l1` anchors is
/// reported.
pub fn variance_snr(img: &PanImage, rois: &[Roi], l0: f64, l1: f64) -> Result<SnrEstimate> {
    if !(l0 > 0.0) || !(l1 > 0.0) {
        return Err(Error::InvalidParameter("snr anchors must be positive".into()));
    }
    if rois.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "variance_snr needs at least 3 flat rois, got {}",
            rois.len()
        )));
    }
    let mut stats = Vec::with_capacity(rois.len());
    for roi in rois {
        if roi.kind != RoiKind::Flat {
            return Err(Error::InvalidParameter("variance_snr needs flat rois".into()));
        }
        roi.validate(img)?;
        let crop = roi.crop(img)?;
        let n = crop.pixels().len() as f64;
        let mean = crop.mean();
        let var = crop.pixels().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        stats.push((mean, var));
    }
    let min_mean = stats.iter().map(|s| s.0).fold(f64::MAX, f64::min);
    let max_mean = stats.iter().map(|s| s.0).fold(f64::MIN, f64::max);
    if !(max_mean > 0.0) || max_mean < 2.0 * min_mean {
        return Err(Error::Calibration(format!(
            "insufficient luminance spread: roi means span [{min_mean:.3}, {max_mean:.3}], need 2×"
        )));
    }

    let noiseless_std = |mean: f64, var: f64| var.sqrt() <= 1e-9 * mean.abs().max(1.0);
    let per_roi: Vec<RoiStat> = stats
        .iter()
        .map(|&(mean, var)| {
            let std = var.sqrt();
            let snr = if noiseless_std(mean, var) { SNR_CAP } else { (mean / std).min(SNR_CAP) };
            RoiStat { mean, std, snr }
        })
        .collect();
    let noiseless = stats.iter().all(|&(m, v)| noiseless_std(m, v));

    // Least squares: variance = α̂·mean + β̂.
    let n = stats.len() as f64;
    let sm: f64 = stats.iter().map(|s| s.0).sum();
    let sv: f64 = stats.iter().map(|s| s.1).sum();
    let smm: f64 = stats.iter().map(|s| s.0 * s.0).sum();
    let smv: f64 = stats.iter().map(|s| s.0 * s.1).sum();
    let det = n * smm - sm * sm;
    if det.abs() < 1e-12 {
        return Err(Error::Calibration("degenerate variance fit: identical roi means".into()));
    }
    let alpha_hat = (n * smv - sm * sv) / det;
    let beta_hat = (sv - alpha_hat * sm) / n;

    let snr_at = |l: f64| -> Result<f64> {
        if noiseless {
            return Ok(SNR_CAP);
        }
        let var = alpha_hat * l + beta_hat;
        if var <= 0.0 {
            return Err(Error::Calibration(format!(
                "fitted variance law is non-positive at anchor L = {l}"
            )));
        }
        Ok((l / var.sqrt()).min(SNR_CAP))
    };
    Ok(SnrEstimate {
        per_roi,
        alpha_hat,
        beta_hat,
        snr_at_l0: snr_at(l0)?,
        snr_at_l1: snr_at(l1)?,
        noiseless,
    })
}

/// Full-reference metrics for one test/reference pair, with slots for the
/// physical estimators and externally supplied perceptual scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mtf_at_nyquist: Option<f64>,
    pub snr_l0: Option<f64>,
    pub snr_l1: Option<f64>,
    /// Never computed here; carried through when supplied externally.
    pub lpips: Option<f64>,
    /// Never computed here; carried through when supplied externally.
    pub dists: Option<f64>,
}

/// PSNR and SSIM for a pair. The physical-estimator and perceptual slots
/// start empty; callers with ROI sidecars or external scores fill them in.
pub fn evaluate_pair(test: &PanImage, reference: &PanImage, peak: f64) -> Result<PairMetrics> {
    Ok(PairMetrics {
        psnr_db: psnr(test, reference, peak)?,
        ssim: ssim(test, reference, peak)?,
        mtf_at_nyquist: None,
        snr_l0: None,
        snr_l1: None,
        lpips: None,
        dists: None,
    })
}

/// Per-pair reports plus their field-wise aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pairs: Vec<PairMetrics>,
    pub aggregate: PairMetrics,
}

impl EvaluationReport {
    /// Aggregates per-pair reports by field-wise arithmetic mean; optional
    /// fields average over the pairs where they are present.
    pub fn from_pairs(pairs: Vec<PairMetrics>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("no pairs to aggregate".into()));
        }
        let n = pairs.len() as f64;
        let mean_opt = |get: &dyn Fn(&PairMetrics) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = pairs.iter().filter_map(|p| get(p)).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        let aggregate = PairMetrics {
            psnr_db: pairs.iter().map(|p| p.psnr_db).sum::<f64>() / n,
            ssim: pairs.iter().map(|p| p.ssim).sum::<f64>() / n,
            mtf_at_nyquist: mean_opt(&|p| p.mtf_at_nyquist),
            snr_l0: mean_opt(&|p| p.snr_l0),
            snr_l1: mean_opt(&|p| p.snr_l1),
            lpips: mean_opt(&|p| p.lpips),
            dists: mean_opt(&|p| p.dists),
        };
        Ok(Self { pairs, aggregate })
    }

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
}
