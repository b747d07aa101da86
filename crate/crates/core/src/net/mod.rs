//! Residual restoration network: forward pass, exact reverse-mode
//! gradients, composite loss (pixel L1 + optional perceptual hook +
//! frequency-domain L1), Adam, the training loop over paired patches,
//! tiled inference for large frames, and checkpoint persistence.
//!
//! The production model is a 16-block, 64-channel EDSR-style body with a
//! body-level skip and a global input→output skip, 1,219,841 trainable
//! scalars in total. All arithmetic is `f32` here; see [`highprec`] for the
//! `f64` instantiation used by numerical verification.

pub(crate) mod kernel;
pub mod highprec;

pub use kernel::{BlockG, ConvG, ParamsG, TensorG};

use crate::error::{Error, Result};
use crate::imagery::{load_tiff, DatasetManifest, PanImage, RadiometricScale};
use crate::metrics;
use crate::rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};

/// Production tensor: NCHW, `f32`, contiguous.
pub type Tensor = TensorG<f32>;
/// Production parameter set (`f32`).
pub type NetworkParams = ParamsG<f32>;

/// Channel width of the production network.
pub const DEFAULT_CHANNELS: usize = 64;
/// Residual block count of the production network.
pub const DEFAULT_BLOCKS: usize = 16;
/// Trainable scalars in the production network.
pub const PARAM_COUNT: usize = 1_219_841;
/// Checkpoint file magic.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CBRS";
/// Checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;
/// Smallest legal inference tile.
pub const TILE_MIN: usize = 64;
/// Smallest legal tile overlap.
pub const OVERLAP_MIN: usize = 16;
/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominators' stabilizer.
pub const ADAM_EPSILON: f64 = 1e-8;

/// Kaiming-initialized production network (64 channels, 16 blocks), biases
/// zero; bit-deterministic per seed.
pub fn init_params(seed: u64) -> NetworkParams {
    NetworkParams::init(DEFAULT_CHANNELS, DEFAULT_BLOCKS, seed)
}

// ---------------------------------------------------------------------------
// Training configuration and loss bookkeeping
// ---------------------------------------------------------------------------

/// Training hyperparameters. The serialized form uses the keys
/// `epochs`, `batch`, `lr`, `lambda_l1`, `lambda_p`, `lambda_fft`, `seed`,
/// `patch`; unknown keys are rejected and omitted keys take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda_l1: f64,
    #[serde(rename = "lambda_p")]
    pub lambda_perceptual: f64,
    pub lambda_fft: f64,
    pub seed: u64,
    /// Training patch edge in pixels (dataset-builder input; the loop itself
    /// trains on whatever size the manifest pairs have).
    pub patch: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 16,
            lr: 1e-4,
            lambda_l1: 1.0,
            lambda_perceptual: 0.5,
            lambda_fft: 0.1,
            seed: 0,
            patch: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be ≥ 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParameter("batch must be ≥ 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidParameter(format!("lr must be finite and ≥ 0, got {}", self.lr)));
        }
        for (name, v) in [
            ("lambda_l1", self.lambda_l1),
            ("lambda_p", self.lambda_perceptual),
            ("lambda_fft", self.lambda_fft),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "loss weight {name} must be finite and ≥ 0, got {v}"
                )));
            }
        }
        if self.patch < 3 {
            return Err(Error::InvalidParameter("patch must be ≥ 3".into()));
        }
        Ok(())
    }
}

/// Loss parts of one batch or epoch; `total` always recombines as
/// `λ₁·l1 + λ_p·perceptual + λ_f·fft`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub perceptual: f64,
    pub fft: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(l1: f64, perceptual: f64, fft: f64, cfg: &TrainConfig) -> Self {
        Self {
            l1,
            perceptual,
            fft,
            total: cfg.lambda_l1 * l1
                + cfg.lambda_perceptual * perceptual
                + cfg.lambda_fft * fft,
        }
    }
}

/// Optional perceptual-feature hook. No implementation ships by default;
/// when absent the perceptual term is exactly zero.
///
/// Implementations must be pure functions of their input. `features` maps a
/// single-image tensor (batch 1, 1 channel) to feature maps φ_l;
/// `layer_weights` supplies w_l (same length); `vjp` pulls cotangent tensors
/// on the feature maps back to a gradient on the input image, making the
/// hook differentiable alongside the analytic losses.
pub trait FeatureExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
    fn layer_weights(&self) -> Vec<f64>;
    fn vjp(&self, x: &Tensor, cotangents: &[Tensor]) -> Result<Tensor>;
}

// ---------------------------------------------------------------------------
// Forward and losses
// ---------------------------------------------------------------------------

pub(crate) fn validate_input(params: &NetworkParams, x: &Tensor) -> Result<()> {
    let (b, c, h, w) = x.shape();
    if c != 1 {
        return Err(Error::DimensionMismatch(format!("network input must have 1 channel, got {c}")));
    }
    if b == 0 {
        return Err(Error::Empty("network input batch is empty".into()));
    }
    if h < 3 || w < 3 {
        return Err(Error::InvalidParameter(format!("network input must be at least 3×3, got {h}×{w}")));
    }
    if params.channels == 0 {
        return Err(Error::InvalidParameter("network must have at least 1 channel".into()));
    }
    x.ensure_finite("network input")
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "tensor shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Runs the network on a batch of normalized single-channel images.
///
/// Topology: `h = head(x)`; `b = body_end(blocks(h)) + h`; `out = tail(b) + x`.
/// Each block is conv→ReLU→conv plus its input (no normalization, no
/// residual scaling). Output shape equals input shape; with all-zero
/// parameters the map is exactly the identity.
pub fn forward(params: &NetworkParams, x: &Tensor) -> Result<Tensor> {
    validate_input(params, x)?;
    let (b, _, h, w) = x.shape();
    let mut out = Tensor::zeros(b, 1, h, w);
    for bi in 0..b {
        let (y, _) = kernel::forward_sample(params, x.image(bi), h, w, false)?;
        out.image_mut(bi).copy_from_slice(&y);
    }
    Ok(out)
}

/// Mean absolute difference over all elements.
pub fn loss_l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape(a, b)?;
    Ok(kernel::l1_value(a.data(), b.data()))
}

/// Frequency-domain L1: per-image unnormalized 2-D DFT of the difference,
/// then the mean of |Re| + |Im| over all bins (averaged over the batch).
/// The map is linear, so gradients flow through it exactly.
pub fn loss_fft(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let (batch, c, h, w) = a.shape();
    if c != 1 {
        return Err(Error::DimensionMismatch(format!(
            "frequency-domain loss expects single-channel tensors, got {c} channels"
        )));
    }
    let mut sum = 0.0;
    for bi in 0..batch {
        sum += kernel::fft_l1_sample::<f32>(a.image(bi), b.image(bi), h, w, None);
    }
    Ok(sum / batch as f64)
}

fn perceptual_pair(
    hook: &dyn FeatureExtractor,
    xhat: &Tensor,
    x: &Tensor,
) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    let fx = hook.features(x)?;
    let fy = hook.features(xhat)?;
    let ws = hook.layer_weights();
    if fx.len() != fy.len() || fx.len() != ws.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature hook returned {} maps for the reference, {} for the estimate, {} weights",
            fx.len(),
            fy.len(),
            ws.len()
        )));
    }
    let mut value = 0.0;
    for ((a, b), wl) in fy.iter().zip(&fx).zip(&ws) {
        check_same_shape(a, b)?;
        let n = a.data().len() as f64;
        let sq: f64 =
            a.data().iter().zip(b.data()).map(|(p, q)| ((p - q) as f64).powi(2)).sum();
        value += wl * sq / n;
    }
    Ok((value, fy, fx))
}

/// Perceptual term for one batch: mean over images of
/// `Σ_l w_l · mean((φ_l(x) − φ_l(x̂))²)`.
fn perceptual_value(hook: &dyn FeatureExtractor, xhat: &Tensor, x: &Tensor) -> Result<f64> {
    let (batch, _, h, w) = xhat.shape();
    let mut sum = 0.0;
    for bi in 0..batch {
        let a = Tensor::from_vec(1, 1, h, w, xhat.image(bi).to_vec())?;
        let b = Tensor::from_vec(1, 1, h, w, x.image(bi).to_vec())?;
        sum += perceptual_pair(hook, &a, &b)?.0;
    }
    Ok(sum / batch as f64)
}

/// Weighted composite loss. Without a hook the perceptual part is exactly 0
/// and `lambda_p` has no effect.
pub fn loss_total(
    xhat: &Tensor,
    x: &Tensor,
    cfg: &TrainConfig,
    hook: Option<&dyn FeatureExtractor>,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    check_same_shape(xhat, x)?;
    let l1 = loss_l1(xhat, x)?;
    let fft = loss_fft(xhat, x)?;
    let perceptual = match hook {
        Some(hook) => perceptual_value(hook, xhat, x)?,
        None => 0.0,
    };
    Ok(LossBreakdown::assemble(l1, perceptual, fft, cfg))
}

// ---------------------------------------------------------------------------
// Reverse mode
// ---------------------------------------------------------------------------

/// Exact reverse-mode gradients of [`loss_total`]`(forward(params, x),
/// target)` with respect to every parameter, plus the loss value itself.
/// Deterministic: samples are accumulated in batch order.
pub fn backward(
    params: &NetworkParams,
    x: &Tensor,
    target: &Tensor,
    cfg: &TrainConfig,
    hook: Option<&dyn FeatureExtractor>,
) -> Result<(NetworkParams, LossBreakdown)> {
    cfg.validate()?;
    validate_input(params, x)?;
    check_same_shape(x, target)?;
    target.ensure_finite("loss target")?;
    let (batch, _, h, w) = x.shape();
    let n = h * w;
    let inv_b = 1.0 / batch as f64;
    let mut grads = NetworkParams::zeros(params.channels, params.blocks.len());
    let (mut l1_sum, mut perc_sum, mut fft_sum) = (0.0, 0.0, 0.0);
    for bi in 0..batch {
        let xs = x.image(bi);
        let ts = target.image(bi);
        let (y, cache) = kernel::forward_sample(params, xs, h, w, true)?;
        let cache = cache.expect("cache requested");
        let mut d_out = vec![0f32; n];

        l1_sum += kernel::l1_value(&y, ts);
        kernel::l1_grad_into(&y, ts, (cfg.lambda_l1 * inv_b) as f32, &mut d_out);

        fft_sum += kernel::fft_l1_sample(
            &y,
            ts,
            h,
            w,
            Some(((cfg.lambda_fft * inv_b) as f32, &mut d_out[..])),
        );

        if let Some(hook) = hook {
            let yt = Tensor::from_vec(1, 1, h, w, y.clone())?;
            let tt = Tensor::from_vec(1, 1, h, w, ts.to_vec())?;
            let (value, fy, fx) = perceptual_pair(hook, &yt, &tt)?;
            perc_sum += value;
            // d(perc)/dφ_l(x̂) = 2·w_l·(φ_l(x̂) − φ_l(x))/N_l, then pulled
            // back through the hook; λ_p and the batch mean fold in here.
            let ws = hook.layer_weights();
            let mut cotangents = Vec::with_capacity(fy.len());
            for (l, (a, b)) in fy.iter().zip(&fx).enumerate() {
                let (fb, fc, fh, fw) = a.shape();
                let scale = (2.0 * ws[l] * cfg.lambda_perceptual * inv_b
                    / a.data().len() as f64) as f32;
                let data: Vec<f32> =
                    a.data().iter().zip(b.data()).map(|(p, q)| scale * (p - q)).collect();
                cotangents.push(Tensor::from_vec(fb, fc, fh, fw, data)?);
            }
            let dx = hook.vjp(&yt, &cotangents)?;
            if dx.shape() != (1, 1, h, w) {
                return Err(Error::DimensionMismatch(format!(
                    "feature hook pullback shape {:?}, expected {:?}",
                    dx.shape(),
                    (1, 1, h, w)
                )));
            }
            for (g, d) in d_out.iter_mut().zip(dx.data()) {
                *g += *d;
            }
        }

        kernel::backward_sample(params, xs, h, w, &cache, &d_out, &mut grads);
    }
    grads.ensure_finite("parameter gradients")?;
    let breakdown =
        LossBreakdown::assemble(l1_sum * inv_b, perc_sum * inv_b, fft_sum * inv_b, cfg);
    Ok((grads, breakdown))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam moment buffers, flattened in the canonical tensor order.
#[derive(Clone, Debug)]
pub struct AdamState {
    t: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let n = params.param_count();
        Self { t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Completed steps.
    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One Adam update (β₁ = 0.9, β₂ = 0.999, ε = 1e−8, bias-corrected),
/// in place on `params`. Deterministic elementwise arithmetic.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.param_count() != grads.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "parameter count {} vs gradient count {}",
            params.param_count(),
            grads.param_count()
        )));
    }
    if state.m.len() != params.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "optimizer state holds {} scalars, parameters {}",
            state.m.len(),
            params.param_count()
        )));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidParameter(format!("lr must be finite and ≥ 0, got {lr}")));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let mut off = 0usize;
    let mut gslices: Vec<&[f32]> = Vec::new();
    for (_, g) in grads.convs() {
        gslices.push(&g.weight);
        gslices.push(&g.bias);
    }
    let mut idx = 0usize;
    for (_, p) in params.convs_mut() {
        for pslice in [&mut p.weight, &mut p.bias] {
            let gs = gslices[idx];
            idx += 1;
            for (pi, (pv, &gv)) in pslice.iter_mut().zip(gs).enumerate() {
                let k = off + pi;
                let g = gv as f64;
                let m = ADAM_BETA1 * state.m[k] as f64 + (1.0 - ADAM_BETA1) * g;
                let v = ADAM_BETA2 * state.v[k] as f64 + (1.0 - ADAM_BETA2) * g * g;
                state.m[k] = m as f32;
                state.v[k] = v as f32;
                let update = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPSILON);
                *pv = (*pv as f64 - update) as f32;
            }
            off += pslice.len();
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One line of the training log (serialized as JSON-lines, one per epoch).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    /// Mean PSNR of restored validation patches against their references,
    /// in dB; absent when no validation split was given.
    pub val_psnr_db: Option<f64>,
}

/// Knobs of [`train`] beyond the manifest and hyperparameters.
pub struct TrainOptions<'a> {
    /// Directory against which relative manifest paths resolve.
    pub data_root: Option<&'a Path>,
    /// When set, receives `training_log.jsonl`, one `epoch_NNN.cbrs`
    /// checkpoint per completed epoch, and `final.cbrs`.
    pub out_dir: Option<&'a Path>,
    /// DN↔radiance mapping used to normalize pairs into [0, 1].
    pub scale: RadiometricScale,
    /// Optional perceptual-feature hook.
    pub hook: Option<&'a dyn FeatureExtractor>,
    /// Starting parameters; defaults to [`init_params`]`(cfg.seed)`.
    pub init: Option<NetworkParams>,
    /// Early-stop predicate, checked after each epoch's log entry.
    pub stop: Option<&'a dyn Fn(&EpochLog) -> bool>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            data_root: None,
            out_dir: None,
            scale: RadiometricScale::default(),
            hook: None,
            init: None,
            stop: None,
        }
    }
}

/// Trained parameters plus the per-epoch log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<EpochLog>,
    /// Path of `final.cbrs` when an output directory was given.
    pub final_checkpoint: Option<PathBuf>,
}

fn normalized_slab(img: &PanImage, scale: RadiometricScale) -> Vec<f32> {
    let inv = 1.0 / scale.radiance_at_dn_max;
    img.pixels().iter().map(|&v| (v * inv) as f32).collect()
}

/// Shuffled mini-batch Adam over the manifest's degraded→reference pairs.
///
/// Pairs are normalized to [0, 1] by `opts.scale` on load; every pair must
/// share one patch size. Each epoch shuffles deterministically from
/// `cfg.seed`, averages the composite loss over its batches, evaluates
/// validation PSNR (restored via [`restore_full`], range-clamped),
/// appends a JSONL log line, and writes a checkpoint. A non-finite batch
/// loss aborts training with an error; checkpoints of completed epochs stay
/// on disk, so the last good state remains recoverable.
pub fn train(
    manifest: &DatasetManifest,
    val: Option<&DatasetManifest>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    opts.scale.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::Empty("training manifest has no pairs".into()));
    }
    let root = opts.data_root.unwrap_or_else(|| Path::new(""));

    let mut dims: Option<(usize, usize)> = None;
    let mut pairs: Vec<(Vec<f32>, Vec<f32>)> = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let d = load_tiff(&root.join(&e.degraded), opts.scale)?;
        let r = load_tiff(&root.join(&e.reference), opts.scale)?;
        let hw = (d.height(), d.width());
        if (r.height(), r.width()) != hw {
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
        match dims {
            None => dims = Some(hw),
            Some(prev) if prev != hw => {
                return Err(Error::DimensionMismatch(format!(
                    "manifest mixes patch sizes {}x{} and {}x{}",
                    prev.1, prev.0, hw.1, hw.0
                )))
            }
            _ => {}
        }
        pairs.push((normalized_slab(&d, opts.scale), normalized_slab(&r, opts.scale)));
    }
    let (h, w) = dims.expect("non-empty manifest");
    if h < 3 || w < 3 {
        return Err(Error::InvalidParameter(format!("patches must be at least 3×3, got {h}×{w}")));
    }

    let mut val_pairs: Vec<(PanImage, PanImage)> = Vec::new();
    if let Some(vm) = val {
        for e in &vm.entries {
            let d = load_tiff(&root.join(&e.degraded), opts.scale)?;
            let r = load_tiff(&root.join(&e.reference), opts.scale)?;
            val_pairs.push((d, r));
        }
    }

    let mut params = match &opts.init {
        Some(p) => p.clone(),
        None => init_params(cfg.seed),
    };
    let mut state = AdamState::new(&params);
    if let Some(dir) = opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log_file = match opts.out_dir {
        Some(dir) => Some(BufWriter::new(std::fs::File::create(dir.join("training_log.jsonl"))?)),
        None => None,
    };

    let n = pairs.len();
    let mut log: Vec<EpochLog> = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut erng = rng::stream(cfg.seed, 1_000 + epoch as u64);
        order.shuffle(&mut erng);

        let (mut l1_s, mut perc_s, mut fft_s) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch) {
            let mut x = Tensor::zeros(chunk.len(), 1, h, w);
            let mut t = Tensor::zeros(chunk.len(), 1, h, w);
            for (slot, &pi) in chunk.iter().enumerate() {
                x.image_mut(slot).copy_from_slice(&pairs[pi].0);
                t.image_mut(slot).copy_from_slice(&pairs[pi].1);
            }
            let (grads, loss) = backward(&params, &x, &t, cfg, opts.hook)?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}: batch loss {}",
                    loss.total
                )));
            }
            adam_step(&mut params, &grads, &mut state, cfg.lr)?;
            let k = chunk.len() as f64;
            l1_s += loss.l1 * k;
            perc_s += loss.perceptual * k;
            fft_s += loss.fft * k;
        }
        let mean = LossBreakdown::assemble(
            l1_s / n as f64,
            perc_s / n as f64,
            fft_s / n as f64,
            cfg,
        );

        let val_psnr_db = if val_pairs.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for (d, r) in &val_pairs {
                let restored = restore_full(&params, d, opts.scale)?;
                sum += metrics::psnr(&restored, r, opts.scale.radiance_at_dn_max)?;
            }
            Some(sum / val_pairs.len() as f64)
        };

        let entry = EpochLog { epoch, loss: mean, val_psnr_db };
        if let Some(f) = log_file.as_mut() {
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        if let Some(dir) = opts.out_dir {
            save_checkpoint(&params, &dir.join(format!("epoch_{epoch:03}.cbrs")))?;
        }
        let stop_now = opts.stop.map(|s| s(&entry)).unwrap_or(false);
        log.push(entry);
        if stop_now {
            break;
        }
    }

    let final_checkpoint = match opts.out_dir {
        Some(dir) => {
            let p = dir.join("final.cbrs");
            save_checkpoint(&params, &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(TrainOutcome { params, log, final_checkpoint })
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Single full-frame pass: normalize, forward, de-normalize, and clamp into
/// the representable radiance range `[0, scale.radiance_at_dn_max]` — the
/// restored product is a DN raster, so out-of-range values could not survive
/// encoding anyway, and clamping here keeps in-memory results equal to their
/// persisted form (up to DN rounding).
pub fn restore_full(
    params: &NetworkParams,
    img: &PanImage,
    scale: RadiometricScale,
) -> Result<PanImage> {
    scale.validate()?;
    let (h, w) = (img.height(), img.width());
    if h < 3 || w < 3 {
        return Err(Error::InvalidParameter(format!("image must be at least 3×3, got {w}x{h}")));
    }
    let norm = normalized_slab(img, scale);
    let (y, _) = kernel::forward_sample(params, &norm, h, w, false)?;
    let pixels: Vec<f64> = y
        .iter()
        .map(|&v| (v as f64 * scale.radiance_at_dn_max).clamp(0.0, scale.radiance_at_dn_max))
        .collect();
    Ok(PanImage::from_parts(w, h, pixels, img.gsd(), img.bit_depth_hint()))
}

/// Number of tile evaluations `(columns, rows)` that [`infer_tiled`] runs on
/// a `width × height` frame, for throughput accounting. Frames smaller than
/// one tile in either direction run as a single full-frame pass.
pub fn tile_grid(width: usize, height: usize, tile: usize, overlap: usize) -> (usize, usize) {
    if width < tile || height < tile || tile == 0 || tile <= 2 * overlap {
        return (1, 1);
    }
    (
        tile_positions(width, tile, overlap).len(),
        tile_positions(height, tile, overlap).len(),
    )
}

/// Tile start offsets along one axis: every `tile − overlap` pixels, with
/// the final tile clamped flush to the far edge.
fn tile_positions(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    let step = tile - overlap;
    let mut out = Vec::new();
    let mut p = 0usize;
    loop {
        if p + tile >= len {
            out.push(len - tile);
            break;
        }
        out.push(p);
        p += step;
    }
    out
}

/// Half-open output interval a tile owns along one axis: interior seams sit
/// `overlap/2` inside each tile (the halo a tile discards), so every output
/// pixel is written by exactly one tile.
fn kept_range(positions: &[usize], i: usize, halo: usize, len: usize) -> (usize, usize) {
    let lo = if i == 0 { 0 } else { positions[i] + halo };
    let hi = if i + 1 == positions.len() { len } else { positions[i + 1] + halo };
    (lo, hi)
}

/// Restores a frame tile by tile so memory stays bounded on large inputs.
///
/// Tiles are processed independently (read-only parameters, parallel over
/// tiles) and each discards an `overlap/2` halo at interior seams; the kept
/// interiors partition the frame, so output never depends on traversal
/// order. Frames smaller than one tile in either dimension fall back to a
/// single full-frame pass. Output is de-normalized radiance clamped into
/// the representable range (as in [`restore_full`]), with input geometry
/// metadata.
pub fn infer_tiled(
    params: &NetworkParams,
    img: &PanImage,
    tile: usize,
    overlap: usize,
    scale: RadiometricScale,
) -> Result<PanImage> {
    scale.validate()?;
    if tile < TILE_MIN {
        return Err(Error::InvalidParameter(format!("tile must be ≥ {TILE_MIN}, got {tile}")));
    }
    if overlap < OVERLAP_MIN {
        return Err(Error::InvalidParameter(format!(
            "overlap must be ≥ {OVERLAP_MIN}, got {overlap}"
        )));
    }
    if tile <= 2 * overlap {
        return Err(Error::InvalidParameter(format!(
            "tile − 2·overlap must be positive, got tile {tile}, overlap {overlap}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if w < tile || h < tile {
        return restore_full(params, img, scale);
    }

    let norm = normalized_slab(img, scale);
    let xs = tile_positions(w, tile, overlap);
    let ys = tile_positions(h, tile, overlap);
    let halo = overlap / 2;

    let jobs: Vec<(usize, usize)> =
        (0..ys.len()).flat_map(|iy| (0..xs.len()).map(move |ix| (iy, ix))).collect();
    let tiles: Vec<Result<Vec<f32>>> = jobs
        .par_iter()
        .map(|&(iy, ix)| {
            let (x0, y0) = (xs[ix], ys[iy]);
            let mut patch = vec![0f32; tile * tile];
            for ty in 0..tile {
                let src = (y0 + ty) * w + x0;
                patch[ty * tile..(ty + 1) * tile].copy_from_slice(&norm[src..src + tile]);
            }
            Ok(kernel::forward_sample(params, &patch, tile, tile, false)?.0)
        })
        .collect();

    let mut out = vec![0f32; w * h];
    for (&(iy, ix), tile_out) in jobs.iter().zip(tiles) {
        let tile_out = tile_out?;
        let (x0, y0) = (xs[ix], ys[iy]);
        let (kx0, kx1) = kept_range(&xs, ix, halo, w);
        let (ky0, ky1) = kept_range(&ys, iy, halo, h);
        for y in ky0..ky1 {
            let src = (y - y0) * tile + (kx0 - x0);
            let dst = y * w + kx0;
            out[dst..dst + (kx1 - kx0)].copy_from_slice(&tile_out[src..src + (kx1 - kx0)]);
        }
    }

    let pixels: Vec<f64> = out
        .iter()
        .map(|&v| (v as f64 * scale.radiance_at_dn_max).clamp(0.0, scale.radiance_at_dn_max))
        .collect();
    Ok(PanImage::from_parts(w, h, pixels, img.gsd(), img.bit_depth_hint()))
}

// ---------------------------------------------------------------------------
// Checkpoint persistence
// ---------------------------------------------------------------------------

fn write_tensor(
    w: &mut impl IoWrite,
    name: &str,
    dims: &[usize],
    data: &[f32],
) -> Result<()> {
    debug_assert!(name.len() <= u8::MAX as usize);
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    w.write_all(&[name.len() as u8])?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(data.len() * 4);
    for &v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

/// Expected `(name, dims)` records, in canonical order, for a given shape.
pub(crate) fn tensor_layout(channels: usize, blocks: usize) -> Vec<(String, Vec<usize>)> {
    let p = ParamsG::<f32>::zeros(channels, blocks);
    let mut out = Vec::new();
    for (name, conv) in p.convs() {
        out.push((format!("{name}.weight"), vec![conv.out_c, conv.in_c, 3, 3]));
        out.push((format!("{name}.bias"), vec![conv.out_c]));
    }
    out
}

/// Exact byte size of a checkpoint for a given shape: 16-byte header plus
/// per-tensor descriptors plus 4 bytes per parameter.
pub fn checkpoint_size(channels: usize, blocks: usize) -> usize {
    let mut size = 16usize;
    for (name, dims) in tensor_layout(channels, blocks) {
        size += 2 + name.len() + 4 * dims.len() + 4 * dims.iter().product::<usize>();
    }
    size
}

/// Serializes parameters: magic `CBRS`, u32 version, u32 channels,
/// u32 blocks, then per-tensor records `{u8 name length, name, u8 rank,
/// u32 dims…, f32 little-endian payload}` in canonical order (`head`,
/// `block00.conv1`, `block00.conv2`, …, `body_end`, `tail`; weight before
/// bias).
pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    params.ensure_finite("checkpoint save")?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.channels as u32).to_le_bytes())?;
    w.write_all(&(params.blocks.len() as u32).to_le_bytes())?;
    for (name, conv) in params.convs() {
        write_tensor(&mut w, &format!("{name}.weight"), &[conv.out_c, conv.in_c, 3, 3], &conv.weight)?;
        write_tensor(&mut w, &format!("{name}.bias"), &[conv.out_c], &conv.bias)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) struct ByteReader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ModelFile(format!(
                "checkpoint truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint written by [`save_checkpoint`]. Bad magic, unknown
/// version, name/shape drift, truncation, or trailing bytes all fail without
/// returning partial parameters.
pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let buf = std::fs::read(path)?;
    let mut r = ByteReader { buf: &buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::ModelFile("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let channels = r.u32()? as usize;
    let blocks = r.u32()? as usize;
    if channels == 0 || channels > 4096 || blocks > 4096 {
        return Err(Error::ModelFile(format!(
            "implausible checkpoint shape: {channels} channels, {blocks} blocks"
        )));
    }
    let mut params = ParamsG::<f32>::zeros(channels, blocks);
    for (expect_name, expect_dims) in tensor_layout(channels, blocks) {
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
        if dims != expect_dims {
            return Err(Error::ModelFile(format!(
                "tensor {name}: dims {dims:?}, expected {expect_dims:?}"
            )));
        }
        let count: usize = dims.iter().product();
        let bytes = r.take(count * 4)?;
        let dst = locate_tensor(&mut params, name)?;
        debug_assert_eq!(dst.len(), count);
        for (i, v) in dst.iter_mut().enumerate() {
            *v = f32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
        }
    }
    if r.pos != buf.len() {
        return Err(Error::ModelFile(format!(
            "checkpoint has {} trailing bytes",
            buf.len() - r.pos
        )));
    }
    params.ensure_finite("checkpoint load")?;
    Ok(params)
}

pub(crate) fn locate_tensor<'p>(
    params: &'p mut NetworkParams,
    name: &str,
) -> Result<&'p mut Vec<f32>> {
    let (conv_name, field) = name
        .rsplit_once('.')
        .ok_or_else(|| Error::ModelFile(format!("malformed tensor name {name}")))?;
    for (cname, conv) in params.convs_mut() {
        if cname == conv_name {
            return Ok(match field {
                "weight" => &mut conv.weight,
                "bias" => &mut conv.bias,
                _ => return Err(Error::ModelFile(format!("unknown tensor field {field}"))),
            });
        }
    }
    Err(Error::ModelFile(format!("unknown tensor {name}")))
}

#[cfg(test)]
mod tests;
