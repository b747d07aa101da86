//! Subcommand implementations: exhaustive config validation (every violation
//! reported, not only the first), upfront path checking, thin orchestration
//! over the library crate, and JSON reporting.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;
use serde_json::{json, Value};

use panrestore_core::dataset::{self, BuildOptions, SplitFractions};
use panrestore_core::imagery::{load_tiff, save_tiff};
use panrestore_core::metrics::{self, Roi, RoiKind};
use panrestore_core::net::{self, Tensor, TrainConfig, TrainOptions, OVERLAP_MIN, TILE_MIN};
use panrestore_core::quant;
use panrestore_core::sensor::{degrade, MTF_NYQ_CEILING, SNR_FLOOR};
use panrestore_core::{
    DatasetManifest, DegradationConfig, Error as CoreError, MtfConfig, NoiseConfig, PanImage,
    RadiometricScale,
};

use crate::{Cli, Command};

// ---------------------------------------------------------------------------
// Error reporting
// ---------------------------------------------------------------------------

/// Failure of a CLI run; serialized to stderr as a JSON object with the keys
/// `error` (human-readable message), `kind` (machine-readable category), and
/// `violations` (every configuration problem found, empty when the failure
/// is not configuration-shaped).
#[derive(Debug)]
pub enum CliError {
    /// The library rejected an operation.
    Core(CoreError),
    /// The effective configuration or a referenced path is invalid; all
    /// problems are listed.
    Config(Vec<String>),
    /// The command line itself is unusable (e.g. a required --out is
    /// missing).
    Usage(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(CoreError::Json(e))
    }
}

fn core_kind(e: &CoreError) -> &'static str {
    match e {
        CoreError::InvalidImage(_) => "invalid-image",
        CoreError::DimensionMismatch(_) => "dimension-mismatch",
        CoreError::InvalidParameter(_) => "invalid-parameter",
        CoreError::Calibration(_) => "calibration",
        CoreError::EdgeMeasurement(_) => "edge-measurement",
        CoreError::Numeric(_) => "numeric",
        CoreError::ModelFile(_) => "model-file",
        CoreError::Empty(_) => "empty",
        CoreError::Tiff(_) => "tiff",
        CoreError::Io(_) => "io",
        CoreError::Json(_) => "json",
    }
}

impl CliError {
    pub fn to_json(&self) -> String {
        let value = match self {
            CliError::Core(e) => json!({
                "error": e.to_string(),
                "kind": core_kind(e),
                "violations": [],
            }),
            CliError::Config(violations) => json!({
                "error": format!(
                    "invalid configuration: {} violation(s)",
                    violations.len()
                ),
                "kind": "config",
                "violations": violations,
            }),
            CliError::Usage(msg) => json!({
                "error": msg,
                "kind": "usage",
                "violations": [],
            }),
        };
        serde_json::to_string_pretty(&value).expect("error report serializes")
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(vec![format!("config {}: {e}", path.display())]))
}

fn require_out(cli: &Cli, cmd: &str) -> Result<PathBuf, CliError> {
    cli.out
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{cmd} requires --out <dir>")))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| {
        CliError::Usage(format!("cannot create output directory {}: {e}", path.display()))
    })
}

fn require_file(path: &Path, what: &str, v: &mut Vec<String>) {
    if !path.is_file() {
        v.push(format!("{what} {} is not a readable file", path.display()));
    }
}

fn require_dir(path: &Path, what: &str, v: &mut Vec<String>) {
    if !path.is_dir() {
        v.push(format!("{what} {} is not a directory", path.display()));
    }
}

fn bail_if(v: Vec<String>) -> Result<(), CliError> {
    if v.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(v))
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

// ---------------------------------------------------------------------------
// Field-level validators (mirror the library rules, but collect every
// violation instead of stopping at the first)
// ---------------------------------------------------------------------------

fn degradation_violations(prefix: &str, c: &DegradationConfig, v: &mut Vec<String>) {
    let ranges =
        [("mtf_range", c.mtf_range), ("snr0_range", c.snr0_range), ("snr1_range", c.snr1_range)];
    let mut ordered = [true; 3];
    for (i, (name, (lo, hi))) in ranges.into_iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            v.push(format!(
                "{prefix}.{name} must be an ordered finite range, got [{lo}, {hi}]"
            ));
            ordered[i] = false;
        }
    }
    if ordered[0] && (c.mtf_range.0 <= 0.0 || c.mtf_range.1 >= MTF_NYQ_CEILING) {
        v.push(format!(
            "{prefix}.mtf_range [{}, {}] outside (0, {MTF_NYQ_CEILING:.5})",
            c.mtf_range.0, c.mtf_range.1
        ));
    }
    for (i, (name, hi)) in
        [("snr0_range", c.snr0_range.1), ("snr1_range", c.snr1_range.1)].into_iter().enumerate()
    {
        if ordered[i + 1] && hi < SNR_FLOOR {
            v.push(format!(
                "{prefix}.{name} is empty after clamping to the SNR floor {SNR_FLOOR}"
            ));
        }
    }
    if c.oversampling < 1 {
        v.push(format!("{prefix}.oversampling must be ≥ 1, got {}", c.oversampling));
    }
    if !(c.l0.is_finite() && c.l0 > 0.0)
        || !(c.l1.is_finite() && c.l1 > 0.0)
        || c.l0 == c.l1
    {
        v.push(format!(
            "{prefix}.l0 and {prefix}.l1 must be positive, finite, and distinct, got {} and {}",
            c.l0, c.l1
        ));
    }
}

fn scale_violations(c: &RadiometricScale, v: &mut Vec<String>) {
    if c.dn_max == 0 {
        v.push("scale.dn_max must be ≥ 1".into());
    }
    if !c.radiance_at_dn_max.is_finite() || !(c.radiance_at_dn_max > 0.0) {
        v.push(format!(
            "scale.radiance_at_dn_max must be positive and finite, got {}",
            c.radiance_at_dn_max
        ));
    }
}

fn fraction_violations(c: &SplitFractions, v: &mut Vec<String>) {
    let mut in_range = true;
    for (name, f) in [("train", c.train), ("val", c.val), ("test", c.test)] {
        if !f.is_finite() || !(0.0..=1.0).contains(&f) {
            v.push(format!("fractions.{name} must lie in [0, 1], got {f}"));
            in_range = false;
        }
    }
    let sum = c.train + c.val + c.test;
    if in_range && (sum - 1.0).abs() > 1e-6 {
        v.push(format!("fractions must sum to 1, got {sum}"));
    }
}

fn tiling_violations(tile: usize, overlap: usize, v: &mut Vec<String>) {
    if tile < TILE_MIN {
        v.push(format!("tile must be ≥ {TILE_MIN}, got {tile}"));
    }
    if overlap < OVERLAP_MIN {
        v.push(format!("overlap must be ≥ {OVERLAP_MIN}, got {overlap}"));
    }
    if tile <= 2 * overlap {
        v.push(format!("tile must exceed twice the overlap, got {tile} vs 2×{overlap}"));
    }
}

fn positive_finite(name: &str, value: f64, v: &mut Vec<String>) {
    if !value.is_finite() || !(value > 0.0) {
        v.push(format!("{name} must be positive and finite, got {value}"));
    }
}

fn weight_violations(name: &str, value: f64, v: &mut Vec<String>) {
    if !value.is_finite() || value < 0.0 {
        v.push(format!("{name} must be finite and ≥ 0, got {value}"));
    }
}

fn kind_name(kind: RoiKind) -> &'static str {
    match kind {
        RoiKind::Edge => "edge",
        RoiKind::Flat => "flat",
    }
}

/// Reads a JSON array of regions, requiring at least `min` of them and a
/// uniform `expect` kind; problems land in `v`.
fn load_rois(path: &Path, expect: RoiKind, min: usize, v: &mut Vec<String>) -> Vec<Roi> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            v.push(format!("rois file {}: {e}", path.display()));
            return Vec::new();
        }
    };
    let rois: Vec<Roi> = match serde_json::from_str(&text) {
        Ok(r) => r,
        Err(e) => {
            v.push(format!("rois file {}: {e}", path.display()));
            return Vec::new();
        }
    };
    if rois.len() < min {
        v.push(format!(
            "rois file {} must list at least {min} {} region(s), got {}",
            path.display(),
            kind_name(expect),
            rois.len()
        ));
    }
    for (i, r) in rois.iter().enumerate() {
        if r.kind != expect {
            v.push(format!("rois[{i}] must have kind \"{}\"", kind_name(expect)));
        }
    }
    rois
}

/// Normalizes an image into the network's [0, 1] input domain as a 1×1×H×W
/// tensor.
fn patch_tensor(img: &PanImage, scale: RadiometricScale) -> Result<Tensor, CliError> {
    let inv = 1.0 / scale.radiance_at_dn_max;
    let data: Vec<f32> = img.pixels().iter().map(|&p| (p * inv) as f32).collect();
    Ok(Tensor::from_vec(1, 1, img.height(), img.width(), data)?)
}

// ---------------------------------------------------------------------------
// Per-command configs
// ---------------------------------------------------------------------------

/// Reference recipe with its own defaults (high MTF, high SNR, degenerate
/// ranges), so a partially specified `reference` object falls back to
/// reference-grade values rather than the degradation band.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ReferenceRecipe {
    mtf_range: (f64, f64),
    snr0_range: (f64, f64),
    snr1_range: (f64, f64),
    oversampling: u32,
    l0: f64,
    l1: f64,
    seed: u64,
}

impl Default for ReferenceRecipe {
    fn default() -> Self {
        Self {
            mtf_range: (0.25, 0.25),
            snr0_range: (80.0, 80.0),
            snr1_range: (170.0, 170.0),
            oversampling: 1,
            l0: 25.0,
            l1: 100.0,
            seed: 2,
        }
    }
}

impl From<ReferenceRecipe> for DegradationConfig {
    fn from(r: ReferenceRecipe) -> Self {
        DegradationConfig {
            mtf_range: r.mtf_range,
            snr0_range: r.snr0_range,
            snr1_range: r.snr1_range,
            oversampling: r.oversampling,
            l0: r.l0,
            l1: r.l1,
            seed: r.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DatasetBuildConfig {
    degraded: DegradationConfig,
    reference: ReferenceRecipe,
    patch: u32,
    stride: u32,
    fractions: SplitFractions,
    scale: RadiometricScale,
    seed: u64,
}

impl Default for DatasetBuildConfig {
    fn default() -> Self {
        Self {
            degraded: DegradationConfig::default(),
            reference: ReferenceRecipe::default(),
            patch: 128,
            stride: 128,
            fractions: SplitFractions::default(),
            scale: RadiometricScale::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimulateConfig {
    mtf_nyq: f64,
    l0: f64,
    snr0: f64,
    l1: f64,
    snr1: f64,
    oversampling: u32,
    scale: RadiometricScale,
    seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            mtf_nyq: 0.05,
            l0: 25.0,
            snr0: 50.0,
            l1: 100.0,
            snr1: 110.0,
            oversampling: 1,
            scale: RadiometricScale::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainCliConfig {
    epochs: usize,
    batch: usize,
    lr: f64,
    lambda_l1: f64,
    lambda_p: f64,
    lambda_fft: f64,
    patch: u32,
    seed: u64,
    init: Option<PathBuf>,
    scale: RadiometricScale,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            lambda_l1: t.lambda_l1,
            lambda_p: t.lambda_perceptual,
            lambda_fft: t.lambda_fft,
            patch: t.patch,
            seed: t.seed,
            init: None,
            scale: RadiometricScale::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RestoreConfig {
    /// `null` runs a single full-frame pass.
    tile: Option<usize>,
    overlap: usize,
    scale: RadiometricScale,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self { tile: Some(256), overlap: 32, scale: RadiometricScale::default() }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ScaleOnlyConfig {
    scale: RadiometricScale,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SnrCliConfig {
    l0: f64,
    l1: f64,
    scale: RadiometricScale,
}

impl Default for SnrCliConfig {
    fn default() -> Self {
        Self { l0: 25.0, l1: 100.0, scale: RadiometricScale::default() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct QuantizeConfig {
    bits: u8,
    scale: RadiometricScale,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        Self { bits: 8, scale: RadiometricScale::default() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BenchConfig {
    width: usize,
    height: usize,
    tile: usize,
    overlap: usize,
    seed: u64,
    scale: RadiometricScale,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            width: 1360,
            height: 900,
            tile: 256,
            overlap: 32,
            seed: 0,
            scale: RadiometricScale::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

pub fn run(cli: &Cli) -> Result<Value, CliError> {
    match &cli.command {
        Command::DatasetBuild { src } => dataset_build(cli, src),
        Command::Simulate { input } => simulate(cli, input),
        Command::Train { data } => train(cli, data),
        Command::Restore { model, input } => restore(cli, model, input),
        Command::Evaluate { image, reference } => evaluate(cli, image, reference),
        Command::Mtf { input, rois } => mtf(cli, input, rois),
        Command::Snr { input, rois } => snr(cli, input, rois),
        Command::Quantize { model, calib, pairs } => quantize(cli, model, calib, pairs.as_deref()),
        Command::Bench { model } => bench(cli, model.as_deref()),
    }
}

fn dataset_build(cli: &Cli, src: &Path) -> Result<Value, CliError> {
    let out = require_out(cli, "dataset-build")?;
    let mut cfg: DatasetBuildConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let reference: DegradationConfig = cfg.reference.into();

    let mut v = Vec::new();
    degradation_violations("degraded", &cfg.degraded, &mut v);
    degradation_violations("reference", &reference, &mut v);
    if cfg.degraded.oversampling != reference.oversampling {
        v.push(format!(
            "degraded.oversampling and reference.oversampling must match so pairs align, \
             got {} vs {}",
            cfg.degraded.oversampling, reference.oversampling
        ));
    }
    if cfg.patch < 8 {
        v.push(format!("patch must be ≥ 8, got {}", cfg.patch));
    }
    if cfg.stride == 0 {
        v.push("stride must be ≥ 1".into());
    }
    fraction_violations(&cfg.fractions, &mut v);
    scale_violations(&cfg.scale, &mut v);
    require_dir(src, "--src", &mut v);
    bail_if(v)?;
    ensure_dir(&out)?;

    let opts = BuildOptions {
        patch: cfg.patch,
        stride: cfg.stride,
        fractions: cfg.fractions,
        scale: cfg.scale,
        seed: cfg.seed,
    };
    let report = dataset::build_corpus(src, &out, &cfg.degraded, &reference, &opts)?;
    write_json(&out.join("build_report.json"), &report)?;
    Ok(json!({
        "out": out.display().to_string(),
        "report": report,
    }))
}

fn simulate(cli: &Cli, input: &Path) -> Result<Value, CliError> {
    let out = require_out(cli, "simulate")?;
    let mut cfg: SimulateConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let mut v = Vec::new();
    if !cfg.mtf_nyq.is_finite() || cfg.mtf_nyq <= 0.0 || cfg.mtf_nyq >= MTF_NYQ_CEILING {
        v.push(format!(
            "mtf_nyq must lie in (0, {MTF_NYQ_CEILING:.5}), got {}",
            cfg.mtf_nyq
        ));
    }
    positive_finite("l0", cfg.l0, &mut v);
    positive_finite("l1", cfg.l1, &mut v);
    positive_finite("snr0", cfg.snr0, &mut v);
    positive_finite("snr1", cfg.snr1, &mut v);
    if cfg.l0 == cfg.l1 {
        v.push(format!("l0 and l1 must be distinct, both are {}", cfg.l0));
    }
    if cfg.oversampling < 1 {
        v.push(format!("oversampling must be ≥ 1, got {}", cfg.oversampling));
    }
    scale_violations(&cfg.scale, &mut v);
    require_file(input, "--input", &mut v);
    bail_if(v)?;
    ensure_dir(&out)?;

    let img = load_tiff(input, cfg.scale)?;
    let (degraded, record) = degrade(
        &img,
        MtfConfig { mtf_nyq: cfg.mtf_nyq },
        NoiseConfig { l0: cfg.l0, snr0: cfg.snr0, l1: cfg.l1, snr1: cfg.snr1 },
        cfg.oversampling,
        cfg.seed,
    )?;
    let stem = stem_of(input);
    let tif = out.join(format!("{stem}_degraded.tif"));
    let sidecar = out.join(format!("{stem}_degraded.json"));
    let dn_clamped = save_tiff(&degraded, &tif, cfg.scale)?;
    write_json(&sidecar, &record)?;
    Ok(json!({
        "degraded": tif.display().to_string(),
        "sidecar": sidecar.display().to_string(),
        "width": degraded.width(),
        "height": degraded.height(),
        "dn_clamped": dn_clamped,
        "record": record,
    }))
}

fn train(cli: &Cli, data: &Path) -> Result<Value, CliError> {
    let out = require_out(cli, "train")?;
    let mut cfg: TrainCliConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let mut v = Vec::new();
    if cfg.epochs == 0 {
        v.push("epochs must be ≥ 1".into());
    }
    if cfg.batch == 0 {
        v.push("batch must be ≥ 1".into());
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        v.push(format!("lr must be finite and ≥ 0, got {}", cfg.lr));
    }
    weight_violations("lambda_l1", cfg.lambda_l1, &mut v);
    weight_violations("lambda_p", cfg.lambda_p, &mut v);
    weight_violations("lambda_fft", cfg.lambda_fft, &mut v);
    if cfg.patch < 3 {
        v.push(format!("patch must be ≥ 3, got {}", cfg.patch));
    }
    scale_violations(&cfg.scale, &mut v);
    require_dir(data, "--data", &mut v);
    let train_manifest = data.join("train.json");
    if data.is_dir() {
        require_file(&train_manifest, "training manifest", &mut v);
    }
    if let Some(init) = &cfg.init {
        require_file(init, "init checkpoint", &mut v);
    }
    bail_if(v)?;
    ensure_dir(&out)?;

    let manifest = DatasetManifest::load(&train_manifest)?;
    let val_path = data.join("val.json");
    let val = if val_path.is_file() { Some(DatasetManifest::load(&val_path)?) } else { None };
    let init = cfg.init.as_deref().map(net::load_checkpoint).transpose()?;

    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        lr: cfg.lr,
        lambda_l1: cfg.lambda_l1,
        lambda_perceptual: cfg.lambda_p,
        lambda_fft: cfg.lambda_fft,
        seed: cfg.seed,
        patch: cfg.patch,
    };
    let opts = TrainOptions {
        data_root: Some(data),
        out_dir: Some(&out),
        scale: cfg.scale,
        hook: None,
        init,
        stop: None,
    };
    let outcome = net::train(&manifest, val.as_ref(), &train_cfg, &opts)?;
    let report = json!({
        "epochs_run": outcome.log.len(),
        "final_epoch": outcome.log.last(),
        "final_checkpoint": outcome.final_checkpoint.as_ref().map(|p| p.display().to_string()),
        "param_count": outcome.params.param_count(),
        "train_pairs": manifest.entries.len(),
        "val_pairs": val.as_ref().map_or(0, |m| m.entries.len()),
    });
    write_json(&out.join("train_report.json"), &report)?;
    Ok(report)
}

fn restore(cli: &Cli, model: &Path, input: &Path) -> Result<Value, CliError> {
    let out = require_out(cli, "restore")?;
    let cfg: RestoreConfig = load_config(cli.config.as_deref())?;

    let mut v = Vec::new();
    if let Some(tile) = cfg.tile {
        tiling_violations(tile, cfg.overlap, &mut v);
    }
    scale_violations(&cfg.scale, &mut v);
    require_file(model, "--model", &mut v);
    require_file(input, "--input", &mut v);
    bail_if(v)?;
    ensure_dir(&out)?;

    let params = net::load_checkpoint(model)?;
    let img = load_tiff(input, cfg.scale)?;
    let restored = match cfg.tile {
        Some(tile) => net::infer_tiled(&params, &img, tile, cfg.overlap, cfg.scale)?,
        None => net::restore_full(&params, &img, cfg.scale)?,
    };
    let tif = out.join(format!("{}_restored.tif", stem_of(input)));
    let dn_clamped = save_tiff(&restored, &tif, cfg.scale)?;
    Ok(json!({
        "restored": tif.display().to_string(),
        "width": restored.width(),
        "height": restored.height(),
        "tile": cfg.tile,
        "overlap": cfg.overlap,
        "dn_clamped": dn_clamped,
    }))
}

fn evaluate(cli: &Cli, image: &Path, reference: &Path) -> Result<Value, CliError> {
    let cfg: ScaleOnlyConfig = load_config(cli.config.as_deref())?;

    let mut v = Vec::new();
    scale_violations(&cfg.scale, &mut v);
    require_file(image, "--image", &mut v);
    require_file(reference, "--reference", &mut v);
    bail_if(v)?;

    let a = load_tiff(image, cfg.scale)?;
    let b = load_tiff(reference, cfg.scale)?;
    let pair = metrics::evaluate_pair(&a, &b, cfg.scale.radiance_at_dn_max)?;
    let report = serde_json::to_value(&pair)?;
    if let Some(out) = &cli.out {
        ensure_dir(out)?;
        write_json(&out.join("evaluate_report.json"), &report)?;
    }
    Ok(report)
}

fn mtf(cli: &Cli, input: &Path, rois_path: &Path) -> Result<Value, CliError> {
    let cfg: ScaleOnlyConfig = load_config(cli.config.as_deref())?;

    let mut v = Vec::new();
    scale_violations(&cfg.scale, &mut v);
    require_file(input, "--input", &mut v);
    let rois = if rois_path.is_file() {
        load_rois(rois_path, RoiKind::Edge, 1, &mut v)
    } else {
        v.push(format!("--rois {} is not a readable file", rois_path.display()));
        Vec::new()
    };
    bail_if(v)?;

    let img = load_tiff(input, cfg.scale)?;
    let mut per_roi = Vec::with_capacity(rois.len());
    let mut mean = 0.0;
    for roi in &rois {
        let curve = metrics::slanted_edge_mtf(&img, *roi)?;
        mean += curve.mtf_at_nyquist();
        per_roi.push(json!({
            "roi": roi,
            "angle_deg": curve.angle_deg(),
            "mtf_at_nyquist": curve.mtf_at_nyquist(),
            "frequencies": curve.frequencies(),
            "values": curve.values(),
        }));
    }
    mean /= rois.len() as f64;
    let report = json!({
        "per_roi": per_roi,
        "mean_mtf_at_nyquist": mean,
    });
    if let Some(out) = &cli.out {
        ensure_dir(out)?;
        write_json(&out.join("mtf_report.json"), &report)?;
    }
    Ok(report)
}

fn snr(cli: &Cli, input: &Path, rois_path: &Path) -> Result<Value, CliError> {
    let cfg: SnrCliConfig = load_config(cli.config.as_deref())?;

    let mut v = Vec::new();
    positive_finite("l0", cfg.l0, &mut v);
    positive_finite("l1", cfg.l1, &mut v);
    scale_violations(&cfg.scale, &mut v);
    require_file(input, "--input", &mut v);
    let rois = if rois_path.is_file() {
        load_rois(rois_path, RoiKind::Flat, 3, &mut v)
    } else {
        v.push(format!("--rois {} is not a readable file", rois_path.display()));
        Vec::new()
    };
    bail_if(v)?;

    let img = load_tiff(input, cfg.scale)?;
    let estimate = metrics::variance_snr(&img, &rois, cfg.l0, cfg.l1)?;
    let report = serde_json::to_value(&estimate)?;
    if let Some(out) = &cli.out {
        ensure_dir(out)?;
        write_json(&out.join("snr_report.json"), &report)?;
    }
    Ok(report)
}

fn quantize(
    cli: &Cli,
    model: &Path,
    calib: &Path,
    pairs: Option<&Path>,
) -> Result<Value, CliError> {
    let out = require_out(cli, "quantize")?;
    let cfg: QuantizeConfig = load_config(cli.config.as_deref())?;

    let mut v = Vec::new();
    if !(2..=8).contains(&cfg.bits) {
        v.push(format!("bits must lie in [2, 8], got {}", cfg.bits));
    }
    scale_violations(&cfg.scale, &mut v);
    require_file(model, "--model", &mut v);
    require_file(calib, "--calib", &mut v);
    if let Some(p) = pairs {
        require_file(p, "--pairs", &mut v);
    }
    bail_if(v)?;
    ensure_dir(&out)?;

    let params = net::load_checkpoint(model)?;
    let calib_manifest = DatasetManifest::load(calib)?;
    let calib_root = manifest_root(calib);
    let mut tensors = Vec::with_capacity(calib_manifest.entries.len());
    for entry in &calib_manifest.entries {
        let img = load_tiff(&calib_root.join(&entry.degraded), cfg.scale)?;
        tensors.push(patch_tensor(&img, cfg.scale)?);
    }
    let qm = quant::calibrate_with_bits(&params, &tensors, cfg.bits)?;
    let model_path = out.join("quantized.cbq8");
    quant::save_quantized(&qm, &model_path)?;

    let drift = match pairs {
        Some(p) => {
            let pair_manifest = DatasetManifest::load(p)?;
            let report = quant::compare(&qm, &pair_manifest, &manifest_root(p), cfg.scale)?;
            write_json(&out.join("drift_report.json"), &report)?;
            Some(report)
        }
        None => None,
    };
    Ok(json!({
        "quantized": model_path.display().to_string(),
        "bits": cfg.bits,
        "calibration_images": tensors.len(),
        "drift": drift,
    }))
}

fn manifest_root(manifest: &Path) -> PathBuf {
    match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn bench(cli: &Cli, model: Option<&Path>) -> Result<Value, CliError> {
    let mut cfg: BenchConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let mut v = Vec::new();
    if cfg.width < 32 || cfg.height < 32 {
        v.push(format!(
            "frame must be at least 32×32 pixels, got {}×{}",
            cfg.width, cfg.height
        ));
    }
    tiling_violations(cfg.tile, cfg.overlap, &mut v);
    scale_violations(&cfg.scale, &mut v);
    if let Some(m) = model {
        require_file(m, "--model", &mut v);
    }
    bail_if(v)?;

    let params = match model {
        Some(m) => net::load_checkpoint(m)?,
        None => net::init_params(cfg.seed),
    };
    let frame = dataset::synthesize_source(cfg.width, cfg.height, 1.0, cfg.seed)?;
    let started = Instant::now();
    let restored = net::infer_tiled(&params, &frame, cfg.tile, cfg.overlap, cfg.scale)?;
    let elapsed = started.elapsed().as_secs_f64();

    let (nx, ny) = net::tile_grid(cfg.width, cfg.height, cfg.tile, cfg.overlap);
    let tiles = nx * ny;
    let pixels = cfg.width * cfg.height;
    Ok(json!({
        "width": cfg.width,
        "height": cfg.height,
        "tile": cfg.tile,
        "overlap": cfg.overlap,
        "tiles": tiles,
        "elapsed_s": elapsed,
        "tiles_per_s": tiles as f64 / elapsed,
        "px_per_s": pixels as f64 / elapsed,
        "mean_radiance": restored.mean(),
        "model": model.map(|m| m.display().to_string()),
    }))
}
