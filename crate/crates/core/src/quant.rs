//! Simulated INT8 post-training quantization of the restoration network and
//! drift measurement against the float model.
//!
//! The scheme is symmetric per-tensor fake quantization: conv weights and
//! every conv's output activations are snapped to a signed integer grid
//! (round-half-to-even, clamped to ±qmax, zero point fixed at 0) and
//! immediately dequantized, with all arithmetic carried out in float.
//! Rectifiers and skip-connection adds consume dequantized values unchanged.
//! Weight scales use the max-abs statistic; activation scales use a high
//! percentile of |activation| collected by running the float model over a
//! calibration set. Biases stay in float — they feed accumulators, matching
//! common INT8 deployment practice, and keep the zero-weight identity exact.
//!
//! This reproduces reduced-precision numerics well enough to measure output
//! drift without committing to integer kernels; hardware-specific integer
//! pipelines are out of scope.

use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{load_tiff, DatasetManifest, PanImage, RadiometricScale};
use crate::metrics;
use crate::net::{self, kernel, NetworkParams, Tensor};

/// Magic bytes of the quantized-model file format.
pub const QUANT_MAGIC: [u8; 4] = *b"CBQ8";
/// Version written into quantized-model files.
pub const QUANT_VERSION: u32 = 1;
/// Shipping bit width.
pub const DEFAULT_BITS: u8 = 8;
/// Percentile of |activation| that sets activation scales (outlier-robust).
pub const CALIBRATION_PERCENTILE: f64 = 99.9;
/// Smallest admissible scale; applied when a tensor is all zeros.
pub const SCALE_FLOOR: f32 = 1e-8;
/// Minimum number of calibration patches accepted by [`calibrate`].
pub const MIN_CALIBRATION_PATCHES: usize = 8;

// ---------------------------------------------------------------------------
// Quantizer primitive
// ---------------------------------------------------------------------------

/// Symmetric quantizer for one tensor: a positive scale, zero point fixed at
/// 0, and a signed bit width. Representable values are `q·scale` for integer
/// `q` in `[−qmax, qmax]` with `qmax = 2^(bits−1) − 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub bits: u8,
}

impl QuantParams {
    pub fn new(scale: f32, bits: u8) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "quantizer scale must be positive and finite, got {scale}"
            )));
        }
        if !(2..=16).contains(&bits) {
            return Err(Error::InvalidParameter(format!(
                "quantizer bit width must be in 2..=16, got {bits}"
            )));
        }
        Ok(Self { scale, bits })
    }

    /// Largest representable integer magnitude (127 at 8 bits).
    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    /// Rounds to the integer grid: round-half-to-even, clamped symmetric.
    pub fn quantize(&self, v: f32) -> i32 {
        let m = self.qmax() as f32;
        (v / self.scale).round_ties_even().clamp(-m, m) as i32
    }

    pub fn dequantize(&self, q: i32) -> f32 {
        q as f32 * self.scale
    }

    /// quantize∘dequantize in one step: snaps a float onto its grid value.
    /// Idempotent — grid values round back to themselves (the relative
    /// rounding error of `q·scale` is far below half a grid step).
    pub fn apply(&self, v: f32) -> f32 {
        self.dequantize(self.quantize(v))
    }
}

/// Scale that maps a maximum magnitude onto the top of the integer range,
/// floored so all-zero tensors stay representable.
fn scale_for(max_mag: f32, bits: u8) -> f32 {
    let qmax = ((1i32 << (bits - 1)) - 1) as f32;
    (max_mag / qmax).max(SCALE_FLOOR)
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Provenance of a calibration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    /// Number of calibration images observed.
    pub images: usize,
    /// Percentile of |activation| used for activation scales.
    pub percentile: f64,
    /// Bit width the scales were computed for.
    pub bits: u8,
}

/// A float parameter set plus the per-conv weight and output-activation
/// quantizers derived from calibration. Every conv has exactly one weight
/// quantizer and one output-activation quantizer, in canonical layer order
/// (`head`, `block00.conv1`, `block00.conv2`, …, `body_end`, `tail`).
#[derive(Clone, Debug)]
pub struct QuantModel {
    /// Float reference parameters.
    pub params: NetworkParams,
    /// One weight quantizer per conv.
    pub weight_q: Vec<QuantParams>,
    /// One output-activation quantizer per conv.
    pub act_q: Vec<QuantParams>,
    /// How the scales were obtained.
    pub summary: CalibrationSummary,
}

fn check_model(qm: &QuantModel) -> Result<()> {
    let n_convs = qm.params.convs().len();
    if qm.weight_q.len() != n_convs || qm.act_q.len() != n_convs {
        return Err(Error::InvalidParameter(format!(
            "quantized model must carry one weight and one activation quantizer per conv: \
             {n_convs} convs, {} weight scales, {} activation scales",
            qm.weight_q.len(),
            qm.act_q.len()
        )));
    }
    for q in qm.weight_q.iter().chain(&qm.act_q) {
        QuantParams::new(q.scale, q.bits)?;
        if q.bits != qm.summary.bits {
            return Err(Error::InvalidParameter(format!(
                "mixed bit widths in quantized model: {} vs summary {}",
                q.bits, qm.summary.bits
            )));
        }
    }
    Ok(())
}

/// Nearest-rank percentile: the smallest element whose cumulative share of
/// the sorted sample is ≥ p percent. Sort-based and exact.
fn percentile(mut values: Vec<f32>, p: f64) -> f32 {
    debug_assert!(!values.is_empty());
    values.sort_by(f32::total_cmp);
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    values[rank.clamp(1, n) - 1]
}

/// Derives INT8 quantizers for `params` from a calibration run.
///
/// Weight scales are `max|w| / qmax` per conv; activation scales are the
/// 99.9th percentile of `|a|` over every conv's output across all
/// calibration patches, divided by qmax. Both are floored at
/// [`SCALE_FLOOR`]. Requires at least [`MIN_CALIBRATION_PATCHES`] patches.
pub fn calibrate(params: &NetworkParams, calib: &[Tensor]) -> Result<QuantModel> {
    calibrate_with_bits(params, calib, DEFAULT_BITS)
}

/// [`calibrate`] generalized over the bit width, for precision sweeps.
pub fn calibrate_with_bits(
    params: &NetworkParams,
    calib: &[Tensor],
    bits: u8,
) -> Result<QuantModel> {
    QuantParams::new(1.0, bits)?;
    if calib.is_empty() {
        return Err(Error::Empty("calibration set is empty".into()));
    }
    let images: usize = calib.iter().map(|t| t.shape().0).sum();
    if images < MIN_CALIBRATION_PATCHES {
        return Err(Error::InvalidParameter(format!(
            "calibration needs at least {MIN_CALIBRATION_PATCHES} patches, got {images}"
        )));
    }
    params.ensure_finite("calibration parameters")?;

    let convs = params.convs();
    let weight_q: Vec<QuantParams> = convs
        .iter()
        .map(|(_, conv)| {
            let max = conv.weight.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
            QuantParams { scale: scale_for(max, bits), bits }
        })
        .collect();

    // Sequential pass over the float model, pooling |a| per conv output.
    let mut mags: Vec<Vec<f32>> = vec![Vec::new(); convs.len()];
    for t in calib {
        net::validate_input(params, t)?;
        let (b, _, h, w) = t.shape();
        for bi in 0..b {
            let out = walk_sample(params, t.image(bi), h, w, &mut |ci, a: &mut [f32]| {
                mags[ci].extend(a.iter().map(|v| v.abs()));
            });
            kernel::ensure_finite(&out, "calibration forward")?;
        }
    }
    let act_q: Vec<QuantParams> = mags
        .into_iter()
        .map(|m| QuantParams {
            scale: scale_for(percentile(m, CALIBRATION_PERCENTILE), bits),
            bits,
        })
        .collect();

    Ok(QuantModel {
        params: params.clone(),
        weight_q,
        act_q,
        summary: CalibrationSummary { images, percentile: CALIBRATION_PERCENTILE, bits },
    })
}

// ---------------------------------------------------------------------------
// Quantized inference
// ---------------------------------------------------------------------------

/// Walks the network topology for one sample, invoking `tap` on every conv
/// output (canonical order) with a mutable view, so callers can observe or
/// rewrite activations in place. With an identity `tap` this reproduces the
/// float forward pass operation for operation.
fn walk_sample(
    params: &NetworkParams,
    x: &[f32],
    h: usize,
    w: usize,
    tap: &mut impl FnMut(usize, &mut [f32]),
) -> Vec<f32> {
    let n = h * w;
    let c = params.channels;
    let mut head_out = vec![0f32; c * n];
    kernel::conv_forward(&params.head, x, h, w, &mut head_out);
    tap(0, &mut head_out);
    let mut cur = head_out.clone();
    let mut c1 = vec![0f32; c * n];
    let mut c2 = vec![0f32; c * n];
    let mut ci = 1;
    for block in &params.blocks {
        kernel::conv_forward(&block.conv1, &cur, h, w, &mut c1);
        tap(ci, &mut c1);
        ci += 1;
        for v in c1.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        kernel::conv_forward(&block.conv2, &c1, h, w, &mut c2);
        tap(ci, &mut c2);
        ci += 1;
        for (a, &b) in cur.iter_mut().zip(&c2) {
            *a += b;
        }
    }
    let mut body = vec![0f32; c * n];
    kernel::conv_forward(&params.body_end, &cur, h, w, &mut body);
    tap(ci, &mut body);
    ci += 1;
    for (a, &b) in body.iter_mut().zip(&head_out) {
        *a += b;
    }
    let mut out = vec![0f32; n];
    kernel::conv_forward(&params.tail, &body, h, w, &mut out);
    tap(ci, &mut out);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += xi;
    }
    out
}

fn fake_quant(data: &mut [f32], q: &QuantParams) {
    for v in data.iter_mut() {
        *v = q.apply(*v);
    }
}

/// The model's weights snapped onto their integer grids; biases unchanged.
pub fn quantized_weights(qm: &QuantModel) -> NetworkParams {
    let mut p = qm.params.clone();
    for (ci, (_, conv)) in p.convs_mut().into_iter().enumerate() {
        let q = &qm.weight_q[ci];
        for v in conv.weight.iter_mut() {
            *v = q.apply(*v);
        }
    }
    p
}

/// Runs the network with fake-quantization semantics: quantized-dequantized
/// weights, every conv output snapped to its activation grid, arithmetic in
/// float, rectifiers and skip adds on dequantized values. Input images are
/// not quantized — only layer boundaries are.
pub fn quantized_forward(qm: &QuantModel, x: &Tensor) -> Result<Tensor> {
    check_model(qm)?;
    net::validate_input(&qm.params, x)?;
    let qparams = quantized_weights(qm);
    let (b, _, h, w) = x.shape();
    let mut out = Tensor::zeros(b, 1, h, w);
    for bi in 0..b {
        let y = walk_sample(&qparams, x.image(bi), h, w, &mut |ci, a: &mut [f32]| {
            fake_quant(a, &qm.act_q[ci]);
        });
        out.image_mut(bi).copy_from_slice(&y);
    }
    out.ensure_finite("quantized network output")?;
    Ok(out)
}

/// Quantized analog of the float restorer: normalize radiance by the
/// radiometric scale, run the fake-quantized forward pass, de-normalize, and
/// clamp into the representable radiance range, mirroring the float path.
pub fn quantized_restore(
    qm: &QuantModel,
    img: &PanImage,
    scale: RadiometricScale,
) -> Result<PanImage> {
    scale.validate()?;
    let inv = 1.0 / scale.radiance_at_dn_max;
    let data: Vec<f32> = img.pixels().iter().map(|&v| (v * inv) as f32).collect();
    let x = Tensor::from_vec(1, 1, img.height(), img.width(), data)?;
    let y = quantized_forward(qm, &x)?;
    let pixels: Vec<f64> =
        y.data()
        .iter()
        .map(|&v| (v as f64 * scale.radiance_at_dn_max).clamp(0.0, scale.radiance_at_dn_max))
        .collect();
    Ok(PanImage::from_parts(img.width(), img.height(), pixels, img.gsd(), img.bit_depth_hint()))
}

// ---------------------------------------------------------------------------
// Drift measurement
// ---------------------------------------------------------------------------

/// Float-vs-INT8 drift for one evaluation pair. Drift statistics are in
/// normalized units (radiance divided by the radiometric full-scale value).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairDrift {
    pub degraded: String,
    /// Mean |float − int8| per pixel.
    pub mae: f64,
    /// Standard deviation of (float − int8).
    pub drift_std: f64,
    pub psnr_float_db: f64,
    pub psnr_int8_db: f64,
    pub ssim_float: f64,
    pub ssim_int8: f64,
}

/// Aggregate drift report: per-pair rows, their means, and the model payload
/// accounting (float: 4 bytes per parameter; int8: 1 byte per parameter plus
/// 4 bytes per scale).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    pub pairs: Vec<PairDrift>,
    pub mae: f64,
    pub drift_std: f64,
    pub psnr_float_db: f64,
    pub psnr_int8_db: f64,
    pub ssim_float: f64,
    pub ssim_int8: f64,
    pub payload_bytes_float: u64,
    pub payload_bytes_int8: u64,
    /// Raw payload ratio float/int8 (≈ 4; excludes any container overhead).
    pub payload_ratio: f64,
}

/// Nominal float payload: 4 bytes per parameter.
pub fn payload_bytes_float(param_count: usize) -> u64 {
    4 * param_count as u64
}

/// Nominal int8 payload: 1 byte per parameter plus 4 bytes per scale.
pub fn payload_bytes_int8(param_count: usize, scales: usize) -> u64 {
    param_count as u64 + 4 * scales as u64
}

/// Restores every degraded image of `manifest` (paths resolved against
/// `root`) with both the float and the fake-quantized model and reports
/// per-pair and mean drift, fidelity against the reference, and payload
/// sizes.
pub fn compare(
    qm: &QuantModel,
    manifest: &DatasetManifest,
    root: &Path,
    scale: RadiometricScale,
) -> Result<DriftReport> {
    check_model(qm)?;
    if manifest.entries.is_empty() {
        return Err(Error::Empty("drift comparison needs at least one pair".into()));
    }
    let inv = 1.0 / scale.radiance_at_dn_max;
    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let degraded = load_tiff(&root.join(&e.degraded), scale)?;
        let reference = load_tiff(&root.join(&e.reference), scale)?;
        let f = net::restore_full(&qm.params, &degraded, scale)?;
        let q = quantized_restore(qm, &degraded, scale)?;
        let n = (f.width() * f.height()) as f64;
        let diffs: Vec<f64> =
            f.pixels().iter().zip(q.pixels()).map(|(&a, &b)| (a - b) * inv).collect();
        let mae = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        pairs.push(PairDrift {
            degraded: e.degraded.clone(),
            mae,
            drift_std: var.sqrt(),
            psnr_float_db: metrics::psnr(&f, &reference, scale.radiance_at_dn_max)?,
            psnr_int8_db: metrics::psnr(&q, &reference, scale.radiance_at_dn_max)?,
            ssim_float: metrics::ssim(&f, &reference, scale.radiance_at_dn_max)?,
            ssim_int8: metrics::ssim(&q, &reference, scale.radiance_at_dn_max)?,
        });
    }
    let m = pairs.len() as f64;
    let scales = qm.weight_q.len() + qm.act_q.len();
    let bytes_float = payload_bytes_float(qm.params.param_count());
    let bytes_int8 = payload_bytes_int8(qm.params.param_count(), scales);
    Ok(DriftReport {
        mae: pairs.iter().map(|p| p.mae).sum::<f64>() / m,
        drift_std: pairs.iter().map(|p| p.drift_std).sum::<f64>() / m,
        psnr_float_db: pairs.iter().map(|p| p.psnr_float_db).sum::<f64>() / m,
        psnr_int8_db: pairs.iter().map(|p| p.psnr_int8_db).sum::<f64>() / m,
        ssim_float: pairs.iter().map(|p| p.ssim_float).sum::<f64>() / m,
        ssim_int8: pairs.iter().map(|p| p.ssim_int8).sum::<f64>() / m,
        payload_bytes_float: bytes_float,
        payload_bytes_int8: bytes_int8,
        payload_ratio: bytes_float as f64 / bytes_int8 as f64,
        pairs,
    })
}

// ---------------------------------------------------------------------------
// Quantized-model persistence
// ---------------------------------------------------------------------------

/// Exact byte size of a quantized-model file for a given shape: 21-byte
/// header, scale table, and per-tensor records with int8 weight payloads and
/// f32 bias payloads.
pub fn quantized_size(channels: usize, blocks: usize) -> usize {
    let layout = net::tensor_layout(channels, blocks);
    let n_convs = layout.len() / 2;
    let mut size = 4 + 4 + 4 + 4 + 1 + 4; // magic, version, channels, blocks, bits, images
    size += 4 + n_convs * 8; // scale-table length + (weight, activation) scale pairs
    for (name, dims) in layout {
        let count: usize = dims.iter().product();
        let elem = if name.ends_with(".weight") { 1 } else { 4 };
        size += 2 + name.len() + 4 * dims.len() + elem * count;
    }
    size
}

/// Serializes a quantized model: magic `CBQ8`, u32 version, u32 channels,
/// u32 blocks, u8 bit width, u32 calibration images, a scale table
/// (u32 conv count, then f32 weight scale + f32 activation scale per conv),
/// then per-tensor records in canonical order — weights as int8 grid
/// indices, biases as f32.
///
/// The on-disk payload is 8-bit; wider sweeps are in-memory only.
pub fn save_quantized(qm: &QuantModel, path: &Path) -> Result<()> {
    check_model(qm)?;
    if qm.summary.bits > 8 {
        return Err(Error::InvalidParameter(format!(
            "the quantized file format stores 8-bit payloads; model uses {} bits",
            qm.summary.bits
        )));
    }
    qm.params.ensure_finite("quantized model save")?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&QUANT_MAGIC)?;
    w.write_all(&QUANT_VERSION.to_le_bytes())?;
    w.write_all(&(qm.params.channels as u32).to_le_bytes())?;
    w.write_all(&(qm.params.blocks.len() as u32).to_le_bytes())?;
    w.write_all(&[qm.summary.bits])?;
    w.write_all(&(qm.summary.images as u32).to_le_bytes())?;
    w.write_all(&(qm.weight_q.len() as u32).to_le_bytes())?;
    for (wq, aq) in qm.weight_q.iter().zip(&qm.act_q) {
        w.write_all(&wq.scale.to_le_bytes())?;
        w.write_all(&aq.scale.to_le_bytes())?;
    }
    for (ci, (name, conv)) in qm.params.convs().into_iter().enumerate() {
        let q = &qm.weight_q[ci];
        let wname = format!("{name}.weight");
        w.write_all(&[wname.len() as u8])?;
        w.write_all(wname.as_bytes())?;
        w.write_all(&[4u8])?;
        for d in [conv.out_c, conv.in_c, 3, 3] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let payload: Vec<u8> = conv.weight.iter().map(|&v| q.quantize(v) as i8 as u8).collect();
        w.write_all(&payload)?;

        let bname = format!("{name}.bias");
        w.write_all(&[bname.len() as u8])?;
        w.write_all(bname.as_bytes())?;
        w.write_all(&[1u8])?;
        w.write_all(&(conv.out_c as u32).to_le_bytes())?;
        let mut bias_bytes = Vec::with_capacity(conv.bias.len() * 4);
        for &v in &conv.bias {
            bias_bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bias_bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a quantized model written by [`save_quantized`]. The returned
/// model's float reference holds the dequantized (grid-aligned) weights, so
/// quantized inference reproduces the saved model bit for bit; the original
/// float weights are not recoverable from the file.
pub fn load_quantized(path: &Path) -> Result<QuantModel> {
    let buf = std::fs::read(path)?;
    let mut r = net::ByteReader { buf: &buf, pos: 0 };
    if r.take(4)? != QUANT_MAGIC {
        return Err(Error::ModelFile("bad quantized-model magic".into()));
    }
    let version = r.u32()?;
    if version != QUANT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported quantized-model version {version}, expected {QUANT_VERSION}"
        )));
    }
    let channels = r.u32()? as usize;
    let blocks = r.u32()? as usize;
    if channels == 0 || channels > 4096 || blocks > 4096 {
        return Err(Error::ModelFile(format!(
            "implausible quantized-model shape: {channels} channels, {blocks} blocks"
        )));
    }
    let bits = r.u8()?;
    if !(2..=8).contains(&bits) {
        return Err(Error::ModelFile(format!("implausible quantized bit width {bits}")));
    }
    let images = r.u32()? as usize;
    let layout = net::tensor_layout(channels, blocks);
    let n_convs = layout.len() / 2;
    if r.u32()? as usize != n_convs {
        return Err(Error::ModelFile("scale table length does not match model shape".into()));
    }
    let mut weight_q = Vec::with_capacity(n_convs);
    let mut act_q = Vec::with_capacity(n_convs);
    for _ in 0..n_convs {
        let ws = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let as_ = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        weight_q.push(
            QuantParams::new(ws, bits)
                .map_err(|_| Error::ModelFile(format!("invalid weight scale {ws}")))?,
        );
        act_q.push(
            QuantParams::new(as_, bits)
                .map_err(|_| Error::ModelFile(format!("invalid activation scale {as_}")))?,
        );
    }

    let mut params = NetworkParams::zeros(channels, blocks);
    for (ti, (expect_name, expect_dims)) in layout.iter().enumerate() {
        let name_len = r.u8()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::ModelFile("tensor name is not UTF-8".into()))?;
        if name != expect_name {
            return Err(Error::ModelFile(format!(
                "tensor order mismatch: found {name}, expected {expect_name}"
            )));
        }
        let rank = r.u8()? as usize;
        if rank != expect_dims.len() {
            return Err(Error::ModelFile(format!(
                "tensor {name}: rank {rank}, expected {}",
                expect_dims.len()
            )));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        if &dims != expect_dims {
            return Err(Error::ModelFile(format!(
                "tensor {name}: dims {dims:?}, expected {expect_dims:?}"
            )));
        }
        let count: usize = dims.iter().product();
        let is_weight = name.ends_with(".weight");
        let bytes = r.take(if is_weight { count } else { count * 4 })?;
        let name = name.to_owned();
        let dst = net::locate_tensor(&mut params, &name)?;
        debug_assert_eq!(dst.len(), count);
        if is_weight {
            let q = &weight_q[ti / 2];
            for (v, &b) in dst.iter_mut().zip(bytes) {
                *v = q.dequantize(b as i8 as i32);
            }
        } else {
            for (i, v) in dst.iter_mut().enumerate() {
                *v = f32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
            }
        }
    }
    if r.pos != buf.len() {
        return Err(Error::ModelFile(format!(
            "quantized model has {} trailing bytes",
            buf.len() - r.pos
        )));
    }
    params.ensure_finite("quantized model load")?;
    Ok(QuantModel {
        params,
        weight_q,
        act_q,
        summary: CalibrationSummary { images, percentile: CALIBRATION_PERCENTILE, bits },
    })
}
