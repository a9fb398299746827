//! Config-driven experiments: the two-stage pipeline, ablations, margin sweeps,
//! cross-modal runs and gradient checks.
//!
//! A run directory produced by [`run_pipeline`] looks like
//!
//! ```text
//! <output_dir>/
//!   config.toml          resolved configuration
//!   manifest.json        seeds, loss names, loss histories, counts, status
//!   semantic.ckpt        label network
//!   dictionary.csv       label keys with their codes and features
//!   image.ckpt           feature network
//!   metrics/summary.json
//!   metrics/pr_curve.csv
//!   metrics/topk.csv
//! ```
//!
//! Nothing in it depends on wall-clock time, so the same config reproduces every
//! file byte for byte.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::crossmodal::{crossmodal_report, train_crossmodal, DirectionResult};
use crate::data::{
    generate_bimodal, generate_synthetic, make_split, BiModalDataset, LabelVector, MultiLabelDataset, SplitParams,
    SplitSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, Labeled, RetrievalRun, TrainedHashModel};
use crate::gradcheck::{finite_difference_check, Evaluation, GradCheckConfig, GradCheckReport};
use crate::image::{j_img_loss, train_image, ImageNetConfig, ImageTraining, MarginSource, Variant};
use crate::linalg::Matrix;
use crate::nn::{Architecture, MlpNetwork};
use crate::semantic::{
    build_dictionaries, j_lab_loss, label_matrix, train_semantic, SemanticDictionary, SemanticNetConfig,
    SemanticTraining,
};

/// Loss name recorded in manifests for the label network.
pub const SEMANTIC_LOSS: &str = "semantic_margin_cosine";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// CSV files as read by [`MultiLabelDataset::load`].
    Files { features: PathBuf, labels: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec {
            n_per_class: 550,
            classes: 4,
            dim: 32,
            multi_label_prob: 0.0,
            noise_sigma: 0.1,
            seed: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Constant margin of the `mars` row.
    pub mars_margin: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: vec![0], mars_margin: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub margins: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { margins: vec![0.0, 0.1, 0.2, 0.3], seeds: vec![0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossModalConfig {
    /// Width of the synthetic text view.
    pub text_dim: usize,
    /// Text features for file-backed data (same row order and ids as the main features).
    pub text_features: Option<PathBuf>,
}

impl Default for CrossModalConfig {
    fn default() -> Self {
        Self { text_dim: 64, text_features: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub hash_bits: usize,
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub split: SplitParams,
    pub semantic: SemanticNetConfig,
    pub image: ImageNetConfig,
    pub eval: EvalOptions,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
    pub crossmodal: CrossModalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hash_bits: 16,
            output_dir: PathBuf::from("runs/default"),
            data: DataSource::default(),
            split: SplitParams { per_class_query: 50, per_class_train: 100, seed: 0, train_in_database: true },
            semantic: SemanticNetConfig::default(),
            image: ImageNetConfig::default(),
            eval: EvalOptions::default(),
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
            crossmodal: CrossModalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML and fall
    /// back to plain strings, so `image.variant=sym` and `hash_bits=32` both work.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) =
                o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let mut path: Vec<&str> = key.trim().split('.').collect();
            let last = path.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {o:?}")))?;
            let mut table = root.as_table_mut().expect("config serializes to a table");
            for part in path {
                table = table
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{part:?} in {key:?} is not a section")))?;
            }
            table.insert(last.to_string(), value);
        }
        root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// The same experiment with every seed (data, split, both networks) set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        if let DataSource::Synthetic(s) = &mut c.data {
            s.seed = seed;
        }
        c.split.seed = seed;
        c.semantic.seed = seed;
        c.image.seed = seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.hash_bits == 0 {
            return Err(Error::Config("hash_bits must be positive".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        if self.split.per_class_query == 0 || self.split.per_class_train == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        self.semantic.validate()?;
        self.image.validate()?;
        let needs_q = self.image.gamma > 0.0 && matches!(self.image.variant, Variant::Full | Variant::Mars(_))
            || self.image.margin_source == MarginSource::Features;
        if needs_q && self.image.trunk.last() != self.semantic.trunk.last() {
            return Err(Error::Config(format!(
                "image.trunk must end at the semantic feature width {:?}, got {:?}",
                self.semantic.trunk.last(),
                self.image.trunk.last()
            )));
        }
        if self.eval.topk.contains(&0) {
            return Err(Error::Config("eval.topk entries must be positive".into()));
        }
        if let Some(m) = self.sweep.margins.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::Config(format!("sweep margin {m} is outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.ablation.mars_margin) {
            return Err(Error::Config(format!("ablation.mars_margin {} is outside [0, 1]", self.ablation.mars_margin)));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            data: match &self.data {
                DataSource::Synthetic(s) => Some(s.seed),
                DataSource::Files { .. } => None,
            },
            split: self.split.seed,
            semantic: self.semantic.seed,
            image: self.image.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: Option<u64>,
    pub split: u64,
    pub semantic: u64,
    pub image: u64,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<MultiLabelDataset> {
    match &cfg.data {
        DataSource::Synthetic(s) => generate_synthetic(s),
        DataSource::Files { features, labels } => MultiLabelDataset::load(features, labels),
    }
}

/// Validated config, dataset and split.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(MultiLabelDataset, SplitSpec)> {
    cfg.validate()?;
    let data = load_dataset(cfg).map_err(|e| e.in_stage("data"))?;
    let split = make_split(&data, &cfg.split).map_err(|e| e.in_stage("data"))?;
    Ok((data, split))
}

pub fn stage_semantic(
    cfg: &ExperimentConfig,
    data: &MultiLabelDataset,
    split: &SplitSpec,
) -> Result<(SemanticTraining, SemanticDictionary)> {
    let labels = data.label_rows(&split.train);
    let run = || {
        let t = train_semantic(&labels, cfg.hash_bits, &cfg.semantic)?;
        let d = build_dictionaries(&t.net, &labels)?;
        Ok((t, d))
    };
    run().map_err(|e: Error| e.in_stage("semantic"))
}

pub fn stage_image(
    cfg: &ExperimentConfig,
    data: &MultiLabelDataset,
    split: &SplitSpec,
    dict: &SemanticDictionary,
) -> Result<ImageTraining> {
    train_image(data, split, dict, &cfg.image).map_err(|e| e.in_stage("image"))
}

pub fn stage_eval(
    cfg: &ExperimentConfig,
    net: &MlpNetwork,
    data: &MultiLabelDataset,
    split: &SplitSpec,
) -> Result<RetrievalRun> {
    let run = || {
        let model = TrainedHashModel::new(net.clone());
        let q = model.encode_items(data, &split.query)?;
        let d = model.encode_items(data, &split.database)?;
        let (ql, dl) = (data.label_rows(&split.query), data.label_rows(&split.database));
        evaluate(Labeled::new(&q, &ql)?, Labeled::new(&d, &dl)?, &cfg.eval)
    };
    run().map_err(|e: Error| e.in_stage("eval"))
}

/// Retrieval with the label network itself: queries and database are encoded from
/// their label vectors.
pub fn semantic_retrieval(
    net: &MlpNetwork,
    query_labels: &[LabelVector],
    db_labels: &[LabelVector],
    opts: &EvalOptions,
) -> Result<RetrievalRun> {
    let model = TrainedHashModel::new(net.clone());
    let ids = |n: usize| (0..n as u64).collect::<Vec<_>>();
    let q = model.encode(&label_matrix(query_labels)?, &ids(query_labels.len()))?;
    let d = model.encode(&label_matrix(db_labels)?, &ids(db_labels.len()))?;
    evaluate(Labeled::new(&q, query_labels)?, Labeled::new(&d, db_labels)?, opts)
}

#[derive(Debug, Clone, Default, Serialize)]
struct Manifest {
    tool: String,
    version: String,
    status: String,
    failed_stage: Option<String>,
    error: Option<String>,
    seeds: Option<Seeds>,
    hash_bits: usize,
    variant: String,
    semantic_loss: String,
    image_loss: String,
    modalities: Vec<String>,
    dictionary_entries: Option<usize>,
    semantic_loss_history: Vec<f64>,
    image_loss_history: Vec<f64>,
    map: Option<f64>,
    evaluable_queries: Option<usize>,
    excluded_queries: Option<usize>,
    artifacts: Vec<String>,
    config: Option<serde_json::Value>,
}

impl Manifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "running".into(),
            seeds: Some(cfg.seeds()),
            hash_bits: cfg.hash_bits,
            variant: cfg.image.variant.to_string(),
            semantic_loss: SEMANTIC_LOSS.into(),
            image_loss: cfg.image.variant.loss_name().into(),
            config: serde_json::to_value(cfg).ok(),
            ..Self::default()
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut f = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

fn stage_name(e: &Error) -> String {
    match e {
        Error::Stage { stage, .. } => (*stage).to_string(),
        _ => "config".into(),
    }
}

/// Everything a pipeline run produced, also persisted under `dir`.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub dir: PathBuf,
    pub semantic: SemanticTraining,
    pub dictionary: SemanticDictionary,
    pub image: ImageTraining,
    pub run: RetrievalRun,
}

/// Stage 1, dictionaries, stage 2, encoding and evaluation. On failure the
/// manifest records the failing stage and the artifacts written so far are kept.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    let mut manifest = Manifest::new(cfg);
    manifest.artifacts.push("config.toml".into());
    match pipeline_body(cfg, &dir, &mut manifest) {
        Ok(outcome) => {
            manifest.status = "ok".into();
            manifest.write(&dir)?;
            Ok(outcome)
        }
        Err(e) => {
            manifest.status = "failed".into();
            manifest.failed_stage = Some(stage_name(&e));
            manifest.error = Some(e.to_string());
            manifest.write(&dir)?;
            Err(e)
        }
    }
}

fn pipeline_body(cfg: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> Result<PipelineOutcome> {
    let (data, split) = prepare(cfg)?;
    info!("data: {} items, {} train, {} query, {} database", data.len(), split.train.len(), split.query.len(), split.database.len());

    let (semantic, dictionary) = stage_semantic(cfg, &data, &split)?;
    manifest.semantic_loss_history = semantic.history.iter().map(|e| e.total).collect();
    manifest.dictionary_entries = Some(dictionary.len());
    let persist = |r: Result<()>, stage| r.map_err(|e| e.in_stage(stage));
    persist(checkpoint::save(&semantic.net, &dir.join("semantic.ckpt")), "semantic")?;
    persist(dictionary.save(&dir.join("dictionary.csv")), "semantic")?;
    manifest.artifacts.extend(["semantic.ckpt".into(), "dictionary.csv".into()]);
    info!("semantic: {} dictionary entries", dictionary.len());

    let image = stage_image(cfg, &data, &split, &dictionary)?;
    manifest.image_loss_history = image.history.iter().map(|e| e.total).collect();
    persist(checkpoint::save(&image.net, &dir.join("image.ckpt")), "image")?;
    manifest.artifacts.push("image.ckpt".into());

    let run = stage_eval(cfg, &image.net, &data, &split)?;
    persist(run.write(&dir.join("metrics"), cfg.eval.pr_sweep), "eval")?;
    manifest.artifacts.extend(["metrics/summary.json", "metrics/pr_curve.csv", "metrics/topk.csv"].map(String::from));
    manifest.map = Some(run.map);
    manifest.evaluable_queries = Some(run.evaluable_queries);
    manifest.excluded_queries = Some(run.excluded_queries);
    info!("eval: MAP {:.4} over {} queries", run.map, run.evaluable_queries);

    Ok(PipelineOutcome { dir: dir.to_path_buf(), semantic, dictionary, image, run })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub loss: String,
    pub maps: Vec<f64>,
    pub mean_map: f64,
}

/// The four variants in order `full, sym, mars, cos`.
pub fn ablation_variants(mars_margin: f64) -> [Variant; 4] {
    [Variant::Full, Variant::Sym, Variant::Mars(mars_margin), Variant::Cos]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One row per variant; each seed shares one trained label network across the
/// four feature networks. Writes `ablation.csv` under the output directory.
pub fn run_ablation_suite(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if cfg.ablation.seeds.is_empty() {
        return Err(Error::Config("ablation.seeds is empty".into()));
    }
    let variants = ablation_variants(cfg.ablation.mars_margin);
    let mut maps = vec![Vec::new(); variants.len()];
    for &seed in &cfg.ablation.seeds {
        let c = cfg.with_seed(seed);
        let (data, split) = prepare(&c)?;
        let (_, dict) = stage_semantic(&c, &data, &split)?;
        for (v, out) in variants.iter().zip(&mut maps) {
            let mut cv = c.clone();
            cv.image.variant = *v;
            let image = stage_image(&cv, &data, &split, &dict)?;
            let run = stage_eval(&cv, &image.net, &data, &split)?;
            info!("ablation seed {seed} {v}: MAP {:.4}", run.map);
            out.push(run.map);
        }
    }
    let rows: Vec<AblationRow> = variants
        .iter()
        .zip(maps)
        .map(|(v, m)| AblationRow { variant: v.to_string(), loss: v.loss_name().into(), mean_map: mean(&m), maps: m })
        .collect();

    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("ablation.csv"))?;
    let mut header = vec!["variant".to_string(), "loss".into(), "mean_map".into()];
    header.extend(cfg.ablation.seeds.iter().map(|s| format!("map_seed_{s}")));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.variant.clone(), r.loss.clone(), r.mean_map.to_string()];
        rec.extend(r.maps.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub margin: f64,
    pub semantic_maps: Vec<f64>,
    pub image_maps: Vec<f64>,
    pub semantic_mean: f64,
    pub image_mean: f64,
}

/// For each margin `m`: the label network retrained with margin `m` and evaluated
/// on label-encoded retrieval, and the feature network trained with the constant
/// margin `m` (variant `mars`) against the dictionaries of the configured label
/// network. Writes `margin_sweep.csv`.
pub fn run_margin_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.sweep.margins.is_empty() || cfg.sweep.seeds.is_empty() {
        return Err(Error::Config("sweep.margins and sweep.seeds must be non-empty".into()));
    }
    let n = cfg.sweep.margins.len();
    let (mut sem, mut img) = (vec![Vec::new(); n], vec![Vec::new(); n]);
    for &seed in &cfg.sweep.seeds {
        let c = cfg.with_seed(seed);
        let (data, split) = prepare(&c)?;
        let (_, dict) = stage_semantic(&c, &data, &split)?;
        let train_labels = data.label_rows(&split.train);
        let (ql, dl) = (data.label_rows(&split.query), data.label_rows(&split.database));
        for (i, &m) in cfg.sweep.margins.iter().enumerate() {
            let mut cm = c.clone();
            cm.semantic.margin = m;
            cm.image.variant = Variant::Mars(m);
            let s = train_semantic(&train_labels, cm.hash_bits, &cm.semantic)
                .and_then(|t| semantic_retrieval(&t.net, &ql, &dl, &cm.eval))
                .map_err(|e| e.in_stage("semantic"))?;
            let image = stage_image(&cm, &data, &split, &dict)?;
            let r = stage_eval(&cm, &image.net, &data, &split)?;
            info!("sweep seed {seed} m={m}: semantic MAP {:.4}, image MAP {:.4}", s.map, r.map);
            sem[i].push(s.map);
            img[i].push(r.map);
        }
    }
    let rows: Vec<SweepRow> = cfg
        .sweep
        .margins
        .iter()
        .zip(sem.into_iter().zip(img))
        .map(|(&margin, (s, i))| SweepRow {
            margin,
            semantic_mean: mean(&s),
            image_mean: mean(&i),
            semantic_maps: s,
            image_maps: i,
        })
        .collect();

    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("margin_sweep.csv"))?;
    w.write_record(["margin", "map_semantic", "map_image"])?;
    for r in &rows {
        w.write_record([r.margin.to_string(), r.semantic_mean.to_string(), r.image_mean.to_string()])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Spread (max - min) of a set of MAP values.
pub fn spread(values: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = values.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// The bimodal dataset described by the config: the synthetic generator's image and
/// text views, or the configured feature files plus `crossmodal.text_features`.
pub fn load_bimodal(cfg: &ExperimentConfig) -> Result<BiModalDataset> {
    match &cfg.data {
        DataSource::Synthetic(s) => generate_bimodal(s, cfg.crossmodal.text_dim),
        DataSource::Files { features, labels } => {
            let text = cfg
                .crossmodal
                .text_features
                .as_ref()
                .ok_or_else(|| Error::Config("crossmodal.text_features is required for file data".into()))?;
            let image = MultiLabelDataset::load(features, labels)?;
            let text = MultiLabelDataset::load(text, labels)?;
            BiModalDataset::new(vec![("image".into(), image), ("text".into(), text)])
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossModalOutcome {
    pub directions: [DirectionResult; 2],
    pub histories: Vec<(String, Vec<f64>)>,
}

/// Shared label network, one feature network per modality (same image config),
/// then image→text and text→image retrieval. Writes `crossmodal.json` and one
/// checkpoint per modality.
pub fn run_crossmodal(cfg: &ExperimentConfig) -> Result<CrossModalOutcome> {
    cfg.validate()?;
    let data = load_bimodal(cfg).map_err(|e| e.in_stage("data"))?;
    let (_, first) = &data.modalities()[0];
    let split = make_split(first, &cfg.split).map_err(|e| e.in_stage("data"))?;
    let (_, dict) = stage_semantic(cfg, first, &split)?;
    let cfgs = vec![cfg.image.clone(); data.modalities().len()];
    let trained = train_crossmodal(&data, &split, &dict, &cfgs).map_err(|e| e.in_stage("image"))?;
    let directions =
        crossmodal_report(&data, &trained, "image", "text", &split, &cfg.eval).map_err(|e| e.in_stage("eval"))?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    for t in &trained {
        checkpoint::save(&t.net, &cfg.output_dir.join(format!("{}.ckpt", t.name)))?;
    }
    let histories: Vec<(String, Vec<f64>)> =
        trained.iter().map(|t| (t.name.clone(), t.history.iter().map(|e| e.total).collect())).collect();
    let mut f = File::create(cfg.output_dir.join("crossmodal.json"))?;
    serde_json::to_writer_pretty(
        &mut f,
        &serde_json::json!({
            "image_loss": cfg.image.variant.loss_name(),
            "modalities": trained.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
            "directions": &directions,
            "loss_histories": &histories,
        }),
    )?;
    writeln!(f)?;
    Ok(CrossModalOutcome { directions, histories })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<LabelVector> {
    (0..n)
        .map(|_| {
            let mut ind: Vec<u8> = (0..classes).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
            ind[rng.random_range(0..classes)] = 1;
            LabelVector::new(ind).expect("at least one positive")
        })
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape by construction")
}

/// Finite-difference checks of the label-network loss and every feature-network
/// variant on small random networks (trunk 32→16, batch 8).
pub fn gradient_suite(seed: u64, check: &GradCheckConfig) -> Result<Vec<GradientCase>> {
    let (classes, bits, input, batch) = (5, 8, 12, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = random_labels(&mut rng, batch, classes);
    let sem_cfg = SemanticNetConfig { trunk: vec![32, 16], margin: 0.2, ..SemanticNetConfig::default() };
    let sem_net = MlpNetwork::new(sem_cfg.architecture(classes, bits), seed)?;
    let dict = build_dictionaries(&sem_net, &labels)?;
    let label_inputs = label_matrix(&labels)?;
    let x = random_matrix(&mut rng, batch, input);

    let eval_with = |net: &MlpNetwork, inputs: &Matrix, loss: &dyn Fn(&crate::nn::ForwardRecord) -> Result<crate::loss::BatchLoss>| {
        let rec = net.forward_batch(inputs)?;
        let l = loss(&rec)?;
        let gradient = net.backward(&rec, &l.d_features, &l.d_hash, &l.d_class)?;
        Ok(Evaluation { loss: l.breakdown.total, active_set: l.active_set, gradient })
    };

    let mut cases = Vec::new();
    let report = finite_difference_check(
        &sem_net,
        |net| eval_with(net, &label_inputs, &|rec| j_lab_loss(rec, &labels, &sem_cfg)),
        check,
    )?;
    cases.push(GradientCase { name: "j_lab".into(), report });

    let arch = Architecture { input, trunk: vec![32, 16], hash_bits: bits, classes };
    let img_net = MlpNetwork::new(arch, seed.wrapping_add(1))?;
    let mut configs: Vec<(String, ImageNetConfig)> = ablation_variants(0.5)
        .into_iter()
        .map(|v| (format!("j_img/{v}"), ImageNetConfig { variant: v, trunk: vec![32, 16], ..ImageNetConfig::default() }))
        .collect();
    configs.push((
        "j_img/full/feature-margins".into(),
        ImageNetConfig { margin_source: MarginSource::Features, trunk: vec![32, 16], ..ImageNetConfig::default() },
    ));
    for (name, cfg) in configs {
        let report = finite_difference_check(&img_net, |net| eval_with(net, &x, &|rec| j_img_loss(rec, &labels, &dict, &cfg)), check)?;
        cases.push(GradientCase { name, report });
    }
    Ok(cases)
}
