//! The `dualex` command line.
//!
//! Everything a run produces lives under one output directory:
//!
//! ```text
//! dataset/                 index.jsonl + images/ (unless dataset.path is set)
//! classifier.dxw           classifier_history.csv, classifier_timing.csv
//! generators/<preset>.dxw  <preset>_history.csv, <preset>_timing.csv
//! maps/<tag>/              <id>.png, <id>.f32, <id>.json, timing.csv
//! eval/<tag>/              localization.json, table.txt, generator_quality.json
//! report.md
//! manifests/<command>.json
//! ```
//!
//! `<tag>` is the explainer name, suffixed with `-aug` for augmented maps.
//! Passing a manifest to `--config` replays the command it records.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, NAIVE_PRESET};
use crate::error::{Error, Result};
use crate::explain::{
    explain_with, AugmentationSpec, DualExplainer, ExplanationMap, Explainer, GradientExplainer, Method, NaiveExplainer, Provenance,
};
use crate::losses::LossWeights;
use crate::metrics::{
    evaluate_localization, fidelity_from_scores, generator_quality, localization_table, psnr, ssim, LocalizationInput,
    LocalizationReport,
};
use crate::nn::{AdversarialGenerator, ClassifierNet, GeneratorPair};
use crate::synth::{generate_dataset, gt_mask, load_dataset, save_dataset, split_dataset, write_png16, Dataset};
use crate::tensor::{Image, Shape, Tensor};
use crate::train::{classifier_auc, thread_pool, train_classifier, train_generators, train_naive, TrainHistory};

pub const EXIT_OK: i32 = 0;
/// Bad flags, config, or missing/incompatible inputs.
pub const EXIT_VALIDATION: i32 = 2;
/// A computation failed (divergence, non-finite values).
pub const EXIT_RUNTIME: i32 = 3;
/// `report --strict` on an incomplete run.
pub const EXIT_INCOMPLETE: i32 = 4;

pub const MANIFEST_DIR: &str = "manifests";
pub const REPORT_FILE: &str = "report.md";

/// Row order of the summary table.
pub const REPORT_ROWS: [(Method, bool); 6] = [
    (Method::Dual, false),
    (Method::Dual, true),
    (Method::Naive, false),
    (Method::Naive, true),
    (Method::Gradient, false),
    (Method::Gradient, true),
];

#[derive(Debug, Parser)]
#[command(name = "dualex", version, about = "Dual-generator visual explanations on a synthetic benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run config, or a manifest JSON to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Sets both the training seed and the dataset seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Augmented copies averaged per explanation (0 = none).
    #[arg(long, global = true)]
    pub augment: Option<usize>,
    #[arg(long, global = true)]
    pub explainer: Option<Method>,
    /// Fail `report` when any table cell is missing.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Train the classifier.
    TrainClassifier,
    /// Train the generator pair of the preset (or the single adversary for `adv-ae-tv`).
    TrainGenerators,
    /// Write one explanation map per test image.
    Explain,
    /// Score the maps of one explainer.
    Evaluate,
    /// Summarize every evaluated explainer.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::TrainClassifier => "train-classifier",
            Command::TrainGenerators => "train-generators",
            Command::Explain => "explain",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Command,
    pub preset: String,
    pub seed: u64,
    pub explainer: Method,
    pub augment: usize,
    pub strict: bool,
    /// The resolved run config as TOML.
    pub config: String,
    /// SHA-256 of every file written, keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    Missing(String),
    Incomplete(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Lib(_) => EXIT_RUNTIME,
            CliError::Missing(_) => EXIT_VALIDATION,
            CliError::Incomplete(_) => EXIT_INCOMPLETE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => e.fmt(f),
            CliError::Missing(m) | CliError::Incomplete(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn main_entry() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolved inputs of one invocation.
struct Ctx {
    command: Command,
    cfg: RunConfig,
    explainer: Method,
    augment: usize,
    strict: bool,
    outputs: BTreeMap<String, String>,
}

fn resolve(cli: &Cli) -> CliResult<Ctx> {
    let (mut cfg, mut explainer, mut augment, mut strict) = (RunConfig::default(), None, None, cli.strict);
    if let Some(path) = &cli.config {
        if path.extension().is_some_and(|e| e == "json") {
            let m = read_manifest(path)?;
            if m.command != cli.command {
                return Err(Error::Config(format!("{} records `{}`, not `{}`", path.display(), m.command.name(), cli.command.name())).into());
            }
            cfg = RunConfig::from_toml(&m.config)?;
            explainer = Some(m.explainer);
            augment = Some(m.augment);
            strict |= m.strict;
        } else {
            cfg = RunConfig::load(path)?;
        }
    }
    if let Some(p) = &cli.preset {
        cfg.generator.preset = p.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.dataset.spec.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(e) = cli.explainer.or(explainer) {
        cfg.explain.explainer = e;
    }
    if let Some(n) = cli.augment.or(augment) {
        cfg.explain.augment = n;
    }
    if cli.command == Command::Synth {
        if let Some(p) = &cfg.dataset.path {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
    }
    cfg.validate()?;
    Ok(Ctx { command: cli.command, explainer: cfg.explain.explainer, augment: cfg.explain.augment, strict, cfg, outputs: BTreeMap::new() })
}

fn execute(cli: &Cli) -> CliResult<()> {
    let mut ctx = resolve(cli)?;
    fs::create_dir_all(&ctx.cfg.out).map_err(|e| Error::io(&ctx.cfg.out, e))?;
    let result = match ctx.command {
        Command::Synth => cmd_synth(&mut ctx),
        Command::TrainClassifier => cmd_train_classifier(&mut ctx),
        Command::TrainGenerators => cmd_train_generators(&mut ctx),
        Command::Explain => cmd_explain(&mut ctx),
        Command::Evaluate => cmd_evaluate(&mut ctx),
        Command::Report => cmd_report(&mut ctx),
    };
    // the manifest is written even when the command fails, so partial runs can be replayed
    write_manifest(&ctx)?;
    result
}

pub fn manifest_path(out: &Path, command: Command, explainer: Method, augment: usize, preset: &str) -> PathBuf {
    let name = match command {
        Command::Explain | Command::Evaluate => format!("{}-{}.json", command.name(), map_tag(explainer, augment)),
        Command::TrainGenerators => format!("{}-{preset}.json", command.name()),
        _ => format!("{}.json", command.name()),
    };
    out.join(MANIFEST_DIR).join(name)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn write_manifest(ctx: &Ctx) -> Result<()> {
    let m = Manifest {
        command: ctx.command,
        preset: ctx.cfg.generator.preset.clone(),
        seed: ctx.cfg.seed,
        explainer: ctx.explainer,
        augment: ctx.augment,
        strict: ctx.strict,
        config: ctx.cfg.to_toml(),
        outputs: ctx.outputs.clone(),
    };
    let path = manifest_path(&ctx.cfg.out, ctx.command, ctx.explainer, ctx.augment, &m.preset);
    write_file(&path, serde_json::to_string_pretty(&m).expect("manifest serializes").as_bytes())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Ctx {
    fn out(&self) -> &Path {
        &self.cfg.out
    }

    /// Writes `bytes` under the output directory and records its hash.
    fn emit(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.out().join(rel), bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a file some other routine already wrote.
    fn record(&mut self, rel: &str) -> Result<()> {
        let path = self.out().join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn dataset_dir(&self) -> PathBuf {
        self.cfg.dataset.path.clone().unwrap_or_else(|| self.out().join("dataset"))
    }

    fn splits(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let ds = load_dataset(&self.dataset_dir())?;
        split_dataset(&ds, self.cfg.dataset.split, self.cfg.seed)
    }

    fn classifier(&self, shape: Shape) -> Result<ClassifierNet> {
        ClassifierNet::load(&self.out().join("classifier.dxw"), &self.cfg.classifier_arch(shape))
    }

    fn pair(&self, shape: Shape) -> Result<GeneratorPair> {
        let mode = self.cfg.generator_mode()?;
        GeneratorPair::load(&self.out().join(generator_file(&self.cfg.generator.preset)), mode, &self.cfg.generator_arch(shape))
    }

    fn adversary(&self, shape: Shape) -> Result<AdversarialGenerator> {
        AdversarialGenerator::load(&self.out().join(generator_file(NAIVE_PRESET)), &self.cfg.generator_arch(shape))
    }
}

pub fn generator_file(preset: &str) -> String {
    format!("generators/{preset}.dxw")
}

/// Directory name of one explainer's maps and evaluation.
pub fn map_tag(method: Method, augment: usize) -> String {
    if augment > 0 {
        format!("{method}-aug")
    } else {
        method.to_string()
    }
}

fn shape_of(ds: &Dataset) -> Result<Shape> {
    ds.shape().ok_or_else(|| Error::InvalidSpec { field: "dataset", reason: "empty".into() })
}

fn cmd_synth(ctx: &mut Ctx) -> CliResult<()> {
    let ds = generate_dataset(&ctx.cfg.dataset.spec)?;
    let dir = ctx.dataset_dir();
    save_dataset(&ds, &dir)?;
    if ctx.cfg.dataset.path.is_none() {
        ctx.record("dataset/index.jsonl")?;
        for smp in &ds.samples {
            ctx.record(&format!("dataset/images/{}.png", smp.id))?;
        }
    }
    println!("{} samples ({} pathological, {} healthy) written to {}", ds.len(), ds.pathological(), ds.len() - ds.pathological(), dir.display());
    Ok(())
}

fn emit_history(ctx: &mut Ctx, stem: &str, h: &TrainHistory) -> Result<()> {
    ctx.emit(&format!("{stem}_history.csv"), h.to_csv().as_bytes())?;
    // wall times differ between runs, so they are not hashed into the manifest
    write_file(&ctx.out().join(format!("{stem}_timing.csv")), h.timing_csv().as_bytes())
}

/// Keeps the partial history of a diverged run before failing.
fn on_diverged(ctx: &mut Ctx, stem: &str, e: Error) -> CliError {
    if let Error::Diverged { history, .. } = &e {
        if let Err(w) = emit_history(ctx, stem, history) {
            return w.into();
        }
    }
    e.into()
}

fn cmd_train_classifier(ctx: &mut Ctx) -> CliResult<()> {
    let (train, val, test) = ctx.splits()?;
    let arch = ctx.cfg.classifier_arch(shape_of(&train)?);
    let tc = ctx.cfg.train_config(&ctx.cfg.classifier_training, LossWeights::default());
    let (net, history) = match train_classifier(arch, &train, &val, &tc) {
        Ok(r) => r,
        Err(e) => return Err(on_diverged(ctx, "classifier", e)),
    };
    net.save(&ctx.out().join("classifier.dxw"))?;
    ctx.record("classifier.dxw")?;
    emit_history(ctx, "classifier", &history)?;
    let test_auc = match classifier_auc(&net, &test) {
        Ok(a) => format!("{a:.4}"),
        Err(Error::UndefinedMetric(_)) => "undefined".into(),
        Err(e) => return Err(e.into()),
    };
    println!("classifier: best epoch {} validation metric {:.4} test AUC {test_auc}", history.best_epoch, history.best_metric);
    Ok(())
}

fn cmd_train_generators(ctx: &mut Ctx) -> CliResult<()> {
    let (train, val, _) = ctx.splits()?;
    let shape = shape_of(&train)?;
    let clf = ctx.classifier(shape)?;
    let preset = ctx.cfg.generator.preset.clone();
    let file = generator_file(&preset);
    let stem = format!("generators/{preset}");
    let arch = ctx.cfg.generator_arch(shape);
    let history = if preset == NAIVE_PRESET {
        let tc = ctx.cfg.train_config(&ctx.cfg.naive_training, ctx.cfg.naive_weights());
        let (g, h) = match train_naive(&clf, &train, &val, &tc, arch) {
            Ok(r) => r,
            Err(e) => return Err(on_diverged(ctx, &stem, e)),
        };
        g.save(&ctx.out().join(&file))?;
        h
    } else {
        let tc = ctx.cfg.train_config(&ctx.cfg.generator_training, ctx.cfg.loss_weights()?);
        let (p, h) = match train_generators(&clf, &train, &val, &tc, ctx.cfg.generator_mode()?, arch) {
            Ok(r) => r,
            Err(e) => return Err(on_diverged(ctx, &stem, e)),
        };
        p.save(&ctx.out().join(&file))?;
        h
    };
    ctx.record(&file)?;
    emit_history(ctx, &stem, &history)?;
    println!("{preset}: best epoch {} validation loss {:.6}", history.best_epoch, history.best_metric);
    Ok(())
}

/// Per-image sidecar next to every map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub id: String,
    pub label: u8,
    pub provenance: String,
    pub height: usize,
    pub width: usize,
    pub fc_x: f64,
    pub fc_xs: Option<f64>,
    pub fc_xa: Option<f64>,
    /// Range mapped onto 0..=65535 in the PNG.
    pub png_min: f64,
    pub png_max: f64,
}

/// Seed of the augmentation draws for the `index`-th test image.
pub fn augment_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

struct Explained {
    map: ExplanationMap,
    secs: f64,
    fc_xs: Option<f64>,
    fc_xa: Option<f64>,
}

fn cmd_explain(ctx: &mut Ctx) -> CliResult<()> {
    let (_, _, test) = ctx.splits()?;
    let shape = shape_of(&test)?;
    let clf = ctx.classifier(shape)?;
    let (method, n) = (ctx.explainer, ctx.augment);
    let spec = AugmentationSpec { n, ..ctx.cfg.augmentation.clone() };
    let seed = ctx.cfg.seed;
    let pair = if method == Method::Dual { Some(ctx.pair(shape)?) } else { None };
    let adv = if method == Method::Naive { Some(ctx.adversary(shape)?) } else { None };
    let explainer: Box<dyn Explainer + '_> = match method {
        Method::Dual => Box::new(DualExplainer(pair.as_ref().expect("loaded"))),
        Method::Naive => Box::new(NaiveExplainer(adv.as_ref().expect("loaded"))),
        Method::Gradient => Box::new(GradientExplainer(&clf)),
    };
    let results = thread_pool()?.install(|| {
        test.samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let aug = (n > 0).then(|| (&spec, augment_seed(seed, i)));
                let started = Instant::now();
                let map = explain_with(explainer.as_ref(), &s.image, aug)?;
                let secs = started.elapsed().as_secs_f64();
                let (fc_xs, fc_xa) = match (&pair, &adv) {
                    (Some(p), _) => {
                        let (xs, xa) = p.forward(&s.image)?;
                        (Some(clf.score(&xs)?), Some(clf.score(&xa)?))
                    }
                    (_, Some(a)) => (None, Some(clf.score(&a.forward(&s.image)?)?)),
                    _ => (None, None),
                };
                Ok(Explained { map, secs, fc_xs, fc_xa })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let tag = map_tag(method, n);
    let mut timing = String::from("id,seconds\n");
    for (s, r) in test.samples.iter().zip(&results) {
        let (lo, hi) = (r.map.values().iter().copied().fold(f64::INFINITY, f64::min), r.map.max());
        let scaled = Tensor::from_vec(
            Shape::new(1, r.map.height(), r.map.width()),
            r.map.values().iter().map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect(),
        )?;
        let png = ctx.out().join(format!("maps/{tag}/{}.png", s.id));
        if let Some(dir) = png.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_png16(&png, &scaled)?;
        ctx.record(&format!("maps/{tag}/{}.png", s.id))?;
        let raw: Vec<u8> = r.map.values().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        ctx.emit(&format!("maps/{tag}/{}.f32", s.id), &raw)?;
        let side = MapSidecar {
            id: s.id.clone(),
            label: s.label,
            provenance: r.map.provenance().to_string(),
            height: r.map.height(),
            width: r.map.width(),
            fc_x: clf.score(&s.image)?,
            fc_xs: r.fc_xs,
            fc_xa: r.fc_xa,
            png_min: lo,
            png_max: hi,
        };
        ctx.emit(&format!("maps/{tag}/{}.json", s.id), serde_json::to_string_pretty(&side).expect("sidecar serializes").as_bytes())?;
        timing.push_str(&format!("{},{:.9}\n", s.id, r.secs));
    }
    write_file(&ctx.out().join(format!("maps/{tag}/timing.csv")), timing.as_bytes())?;
    let mean = results.iter().map(|r| r.secs).sum::<f64>() / results.len() as f64;
    println!("{tag}: {} maps, mean {:.6} s per image", results.len(), mean);
    Ok(())
}

/// Reads a raw little-endian `f32` map.
pub fn read_raw_map(path: &Path, height: usize, width: usize, provenance: Provenance) -> Result<ExplanationMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * height * width {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 4 * height * width, bytes.len())));
    }
    let values = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    ExplanationMap::new(height, width, values, provenance)
}

/// Similarity and fidelity of the single adversary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryQuality {
    pub ssim_x_xa: f64,
    pub psnr_x_xa: f64,
    pub auc_a: f64,
}

fn adversary_quality(clf: &ClassifierNet, g: &AdversarialGenerator, ds: &Dataset) -> Result<AdversaryQuality> {
    let (mut s, mut p) = (0.0, 0.0);
    let (mut fx, mut fa) = (Vec::new(), Vec::new());
    for smp in &ds.samples {
        let xa: Image = g.forward(&smp.image)?;
        s += ssim(&smp.image, &xa)?;
        p += psnr(&smp.image, &xa)?;
        fx.push(clf.score(&smp.image)?);
        fa.push(clf.score(&xa)?);
    }
    let n = ds.len() as f64;
    let (_, auc_a) = fidelity_from_scores(&fx, &fx, &fa)?;
    Ok(AdversaryQuality { ssim_x_xa: s / n, psnr_x_xa: p / n, auc_a })
}

fn cmd_evaluate(ctx: &mut Ctx) -> CliResult<()> {
    let (_, _, test) = ctx.splits()?;
    let shape = shape_of(&test)?;
    let (method, n) = (ctx.explainer, ctx.augment);
    let tag = map_tag(method, n);
    let provenance = if n > 0 { Provenance::Augmented { base: method, n } } else { method.into() };
    let dir = ctx.out().join("maps").join(&tag);
    let mut maps = Vec::new();
    let mut missing = Vec::new();
    for s in &test.samples {
        let path = dir.join(format!("{}.f32", s.id));
        if path.is_file() {
            maps.push((s, read_raw_map(&path, shape.height, shape.width, provenance)?));
        } else if s.label == 1 {
            missing.push(s.id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Missing(format!("{}: no map for pathological samples {}", dir.display(), missing.join(", "))));
    }
    let gts: Vec<_> = maps.iter().map(|(s, _)| gt_mask(&s.boxes, shape.height, shape.width)).collect();
    let items: Vec<LocalizationInput<'_>> =
        maps.iter().zip(&gts).map(|((s, m), gt)| LocalizationInput { id: &s.id, map: m, gt }).collect();
    let report = evaluate_localization(&items)?;
    ctx.emit(&format!("eval/{tag}/localization.json"), serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    let table = localization_table(&[(label_of(method, n > 0), Some(&report))]);
    ctx.emit(&format!("eval/{tag}/table.txt"), table.as_bytes())?;

    let clf = ctx.classifier(shape)?;
    let quality = match method {
        Method::Dual => generator_quality(&clf, &ctx.pair(shape)?, &test).map(|q| serde_json::to_value(q).expect("serializes")),
        Method::Naive => adversary_quality(&clf, &ctx.adversary(shape)?, &test).map(|q| serde_json::to_value(q).expect("serializes")),
        Method::Gradient => Ok(serde_json::Value::Null),
    };
    let quality = match quality {
        Err(Error::UndefinedMetric(m)) => {
            eprintln!("warning: generator quality undefined: {m}");
            serde_json::Value::Null
        }
        other => other?,
    };
    ctx.emit(&format!("eval/{tag}/generator_quality.json"), serde_json::to_string_pretty(&quality).expect("serializes").as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn label_of(method: Method, augmented: bool) -> String {
    if augmented {
        format!("{method}+aug")
    } else {
        method.to_string()
    }
}

pub fn read_localization(path: &Path) -> Result<LocalizationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn cmd_report(ctx: &mut Ctx) -> CliResult<()> {
    let mut rows = Vec::new();
    for (method, aug) in REPORT_ROWS {
        let tag = map_tag(method, usize::from(aug));
        let path = ctx.out().join(format!("eval/{tag}/localization.json"));
        let rep = if path.is_file() { Some(read_localization(&path)?) } else { None };
        rows.push((label_of(method, aug), rep));
    }
    let missing: Vec<&str> = rows.iter().filter(|(_, r)| r.is_none()).map(|(n, _)| n.as_str()).collect();
    if missing.len() == rows.len() {
        return Err(CliError::Missing(format!("{}: no evaluation results", ctx.out().join("eval").display())));
    }
    let refs: Vec<(String, Option<&LocalizationReport>)> = rows.iter().map(|(n, r)| (n.clone(), r.as_ref())).collect();
    let mut doc = String::from("# Localization summary\n\n```\n");
    doc.push_str(&localization_table(&refs));
    doc.push_str("```\n");
    let quality = ctx.out().join("eval/dual/generator_quality.json");
    if quality.is_file() {
        let text = fs::read_to_string(&quality).map_err(|e| Error::io(&quality, e))?;
        doc.push_str(&format!("\n## Generators ({})\n\n```\n{}\n```\n", ctx.cfg.generator.preset, text.trim_end()));
    }
    doc.push_str(&format!("\nseed: {}\n", ctx.cfg.seed));
    ctx.emit(REPORT_FILE, doc.as_bytes())?;
    print!("{doc}");
    if ctx.strict && !missing.is_empty() {
        return Err(CliError::Incomplete(format!("missing rows: {}", missing.join(", "))));
    }
    Ok(())
}
