//! Training, evaluation protocol, baselines, auxiliary pretraining and ablations.
//!
//! Each seed trains for the configured number of epochs over individual trials and
//! is evaluated after every epoch. The reported score per seed is the maximum
//! accuracy reached over epochs (no model selection on dev); mean and population
//! standard deviation are taken over seeds.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stackdet_tensor::{Adam, AdamConfig, Tape};

use crate::dataset::{load_manifest, majority_vote, Dataset, Fold, Label, PairRecord, Relation, Source, TRIALS_PER_PAIR};
use crate::embeddings::{load_store, pair_embedding, EmbeddingDims, EmbeddingStore, PairEmbedding};
use crate::error::{CoreError, Result};
use crate::models::{transfer_pretrained, AblationMask, Model, ModelInput, ModelKind, ModelSpec};
use crate::scene::{load_delta, FrameDelta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub relation: Relation,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub lr: f64,
    pub batch_size: usize,
    pub base_filters: usize,
    pub hidden: usize,
    pub dropout_p: f64,
    pub manifest: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub mask: AblationMask,
    /// Initialize the projections from an object-only model trained on All Pairs.
    pub pretrain: bool,
    pub pretrain_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Ego,
            relation: Relation::In,
            epochs: 30,
            seeds: (0..10).collect(),
            lr: 0.01,
            batch_size: 32,
            base_filters: 8,
            hidden: 64,
            dropout_p: 0.3,
            manifest: None,
            store: None,
            mask: AblationMask::FULL,
            pretrain: false,
            pretrain_epochs: 30,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.epochs == 0 || self.pretrain_epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.pretrain && self.model != ModelKind::EgoObj {
            return bad("pretrain applies only to the ego_obj model");
        }
        self.mask.check().map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn spec(&self, kind: ModelKind, dims: EmbeddingDims, seed: u64) -> ModelSpec {
        ModelSpec {
            base_filters: self.base_filters,
            hidden: self.hidden,
            dropout_p: self.dropout_p,
            ..ModelSpec::new(kind, self.relation, dims, seed)
        }
    }
}

/// Everything a run reads, loaded once: difference images per trial and embeddings per pair.
/// Fields are public so tests can perturb inputs directly.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub dims: EmbeddingDims,
    pub deltas: HashMap<PathBuf, FrameDelta>,
    pub pair_embeddings: HashMap<(String, String), PairEmbedding>,
}

impl PreparedData {
    /// Computes pair embeddings for every listed pair. `deltas` must cover every robot trial.
    pub fn from_parts(dataset: Dataset, store: &EmbeddingStore, deltas: HashMap<PathBuf, FrameDelta>) -> Result<Self> {
        let mut pair_embeddings = HashMap::new();
        for p in &dataset.pairs {
            let key = (p.grasped.clone(), p.target.clone());
            if !pair_embeddings.contains_key(&key) {
                pair_embeddings.insert(key, pair_embedding(store, &p.grasped, &p.target)?);
            }
        }
        Ok(Self { dataset, dims: store.dims(), deltas, pair_embeddings })
    }

    /// Loads the manifest, the store and the difference images of every robot trial of `relation`.
    pub fn load(manifest: &Path, store: &Path, relation: Relation) -> Result<Self> {
        let dataset = load_manifest(manifest)?;
        let (store, report) = load_store(store)?;
        if !report.oov_tokens.is_empty() {
            log::info!("{} out-of-vocabulary tokens skipped", report.oov_tokens.len());
        }
        let dirs: Vec<&PathBuf> = dataset
            .pairs
            .iter()
            .filter(|p| p.source == Source::Robot && p.relation == relation)
            .flat_map(|p| &p.trials)
            .collect();
        let deltas = dirs
            .par_iter()
            .map(|d| Ok(((*d).clone(), load_delta(d)?)))
            .collect::<Result<HashMap<_, _>>>()?;
        Self::from_parts(dataset, &store, deltas)
    }

    pub fn pairs(&self, fold: Fold, relation: Relation, source: Source) -> Vec<&PairRecord> {
        self.dataset.select(fold, relation, source)
    }

    pub fn embedding(&self, pair: &PairRecord) -> Result<&PairEmbedding> {
        self.pair_embeddings
            .get(&(pair.grasped.clone(), pair.target.clone()))
            .ok_or_else(|| CoreError::Data(format!("{} has no pair embedding", pair.describe())))
    }

    /// Model inputs for each trial of a robot pair; errors unless all five are present.
    pub fn trial_inputs(&self, pair: &PairRecord) -> Result<Vec<ModelInput<'_>>> {
        if pair.trials.len() != TRIALS_PER_PAIR {
            return Err(CoreError::Data(format!(
                "{} has {} trials, robot evaluation needs {TRIALS_PER_PAIR}",
                pair.describe(),
                pair.trials.len()
            )));
        }
        let emb = self.embedding(pair)?;
        pair.trials
            .iter()
            .map(|t| {
                let delta = self
                    .deltas
                    .get(t)
                    .ok_or_else(|| CoreError::Data(format!("{}: trial {} not loaded", pair.describe(), t.display())))?;
                Ok(ModelInput { delta: Some(delta), pair: Some(emb) })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Per-trial predictions, majority vote over the five trials of each pair.
    Robot,
    /// One object-only prediction per crowd-annotated pair.
    AllPairs,
}

/// Anything that labels the inputs of one pair; returns one label per input.
pub trait Predictor {
    fn predict_pair(&self, pair: &PairRecord, inputs: &[ModelInput<'_>]) -> Result<Vec<Label>>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a Model<f32>,
    pub mask: AblationMask,
}

impl Predictor for ModelPredictor<'_> {
    fn predict_pair(&self, _pair: &PairRecord, inputs: &[ModelInput<'_>]) -> Result<Vec<Label>> {
        self.model.predict(inputs, self.mask)
    }
}

/// Fraction of pairs labelled correctly.
pub fn evaluate(predictor: &dyn Predictor, data: &PreparedData, pairs: &[&PairRecord], mode: EvalMode) -> Result<f64> {
    if pairs.is_empty() {
        return Err(CoreError::Data("no pairs to evaluate".into()));
    }
    let mut correct = 0usize;
    for &pair in pairs {
        let predicted = match mode {
            EvalMode::Robot => {
                let inputs = data.trial_inputs(pair)?;
                majority_vote(&predictor.predict_pair(pair, &inputs)?)?
            }
            EvalMode::AllPairs => {
                let input = ModelInput { delta: None, pair: Some(data.embedding(pair)?) };
                let out = predictor.predict_pair(pair, &[input])?;
                *out.first().ok_or_else(|| CoreError::Data("predictor returned nothing".into()))?
            }
        };
        correct += (predicted == pair.label) as usize;
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Predicts the training fold's majority label everywhere; ties go to `No`.
pub fn baseline_majority_class(train: &[&PairRecord], eval: &[&PairRecord]) -> Result<f64> {
    if train.is_empty() || eval.is_empty() {
        return Err(CoreError::Data("majority-class baseline needs nonempty folds".into()));
    }
    let yes = train.iter().filter(|p| p.label == Label::Yes).count();
    let majority = if 2 * yes > train.len() { Label::Yes } else { Label::No };
    Ok(eval.iter().filter(|p| p.label == majority).count() as f64 / eval.len() as f64)
}

/// Uniform coin flip per pair.
pub fn baseline_random(eval: &[&PairRecord], seed: u64) -> Result<f64> {
    if eval.is_empty() {
        return Err(CoreError::Data("random baseline needs a nonempty fold".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = eval.iter().filter(|p| Label::from_index(rng.random_range(0..2)) == p.label).count();
    Ok(hits as f64 / eval.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation (divides by N).
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub epochs: Vec<EpochMetrics>,
    pub examples_per_epoch: usize,
}

struct Example<'a> {
    input: ModelInput<'a>,
    label: Label,
}

fn robot_examples<'a>(data: &'a PreparedData, pairs: &[&'a PairRecord]) -> Result<Vec<Example<'a>>> {
    let mut out = Vec::new();
    for &p in pairs {
        for input in data.trial_inputs(p)? {
            out.push(Example { input, label: p.label });
        }
    }
    Ok(out)
}

fn annotation_examples<'a>(data: &'a PreparedData, pairs: &[&'a PairRecord]) -> Result<Vec<Example<'a>>> {
    pairs
        .iter()
        .map(|&p| Ok(Example { input: ModelInput { delta: None, pair: Some(data.embedding(p)?) }, label: p.label }))
        .collect()
}

fn nonempty<'a>(pairs: Vec<&'a PairRecord>, fold: Fold, relation: Relation, what: &str) -> Result<Vec<&'a PairRecord>> {
    if pairs.is_empty() {
        return Err(CoreError::Data(format!("fold {fold} has no {what} {relation}-pairs")));
    }
    Ok(pairs)
}

/// Trains one model from `seed`. Object-only models train on All Pairs, the others on robot trials.
pub fn train_run(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    kind: ModelKind,
    seed: u64,
    epochs: usize,
    pretrained: Option<&Model<f32>>,
) -> Result<TrainOutcome> {
    train_run_hooked(cfg, data, kind, seed, epochs, pretrained, &mut |_, _| {})
}

/// Like [`train_run`], calling `on_epoch` after each epoch's evaluation.
pub fn train_run_hooked(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    kind: ModelKind,
    seed: u64,
    epochs: usize,
    pretrained: Option<&Model<f32>>,
    on_epoch: &mut dyn FnMut(&EpochMetrics, &Model<f32>),
) -> Result<TrainOutcome> {
    let (source, what, mode) = match kind {
        ModelKind::ObjOnly => (Source::Annotation, "annotated", EvalMode::AllPairs),
        _ => (Source::Robot, "robot", EvalMode::Robot),
    };
    let rel = cfg.relation;
    let [train, dev, test] = Fold::ALL.map(|f| nonempty(data.pairs(f, rel, source), f, rel, what));
    let (train, dev, test) = (train?, dev?, test?);
    let examples = match mode {
        EvalMode::Robot => robot_examples(data, &train)?,
        EvalMode::AllPairs => annotation_examples(data, &train)?,
    };

    let mut model = Model::init(cfg.spec(kind, data.dims, seed))?;
    if let Some(src) = pretrained {
        transfer_pretrained(src, &mut model)?;
    }
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(epochs);

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let mut total = None;
            for &i in batch {
                let ex = &examples[i];
                let logits = model.forward(&mut tape, &bound, ex.input, cfg.mask, true, &mut rng)?;
                let l = tape.cross_entropy(logits, ex.label.index())?;
                total = Some(match total {
                    None => l,
                    Some(acc) => tape.add(acc, l)?,
                });
            }
            let total = total.expect("chunks are nonempty");
            let loss = tape.scale(total, 1.0 / batch.len() as f32);
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "{kind} seed {seed}: loss {value} at epoch {epoch}, batch {bi}"
                )));
            }
            loss_sum += value as f64 * batch.len() as f64;
            model.params.zero_grad();
            model.params.backward(&tape, loss, &bound)?;
            adam.step(&mut model.params)?;
        }
        let predictor = ModelPredictor { model: &model, mask: cfg.mask };
        history.push(EpochMetrics {
            epoch,
            loss: loss_sum / examples.len() as f64,
            train: evaluate(&predictor, data, &train, mode)?,
            dev: evaluate(&predictor, data, &dev, mode)?,
            test: evaluate(&predictor, data, &test, mode)?,
        });
        let m = history.last().expect("just pushed");
        log::debug!("{kind} seed {seed} epoch {epoch}: loss {:.4} dev {:.3}", m.loss, m.dev);
        on_epoch(m, &model);
    }
    Ok(TrainOutcome { model, epochs: history, examples_per_epoch: examples.len() })
}

pub struct PretrainOutcome {
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub best_dev: f64,
    pub epochs: Vec<EpochMetrics>,
}

/// Trains the object-only network on All Pairs and keeps the weights with the best dev
/// accuracy (earliest epoch on ties). Only its projection layers are used afterwards.
pub fn pretrain_auxiliary(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<PretrainOutcome> {
    let obj_cfg = ExperimentConfig { mask: AblationMask { ego: false, ..cfg.mask }, ..cfg.clone() };
    let mut best: Option<(usize, f64, Model<f32>)> = None;
    let out = train_run_hooked(&obj_cfg, data, ModelKind::ObjOnly, seed, cfg.pretrain_epochs, None, &mut |m, model| {
        if best.as_ref().is_none_or(|(_, d, _)| m.dev > *d) {
            best = Some((m.epoch, m.dev, model.clone()));
        }
    })?;
    let (best_epoch, best_dev, model) = best.expect("at least one epoch");
    Ok(PretrainOutcome { model, best_epoch, best_dev, epochs: out.epochs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub max_dev: f64,
    pub max_test: f64,
    pub pretrain_best_dev: Option<f64>,
    pub epochs: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelKind,
    pub relation: Relation,
    pub mask: AblationMask,
    pub pretrain: bool,
    pub examples_per_epoch: usize,
    pub seeds: Vec<SeedResult>,
    pub dev: Summary,
    pub test: Summary,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| CoreError::format("report", e.to_string()))
    }
}

fn run_seed(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<(SeedResult, usize, Model<f32>)> {
    let pre = if cfg.pretrain { Some(pretrain_auxiliary(cfg, data, seed)?) } else { None };
    let out = train_run(cfg, data, cfg.model, seed, cfg.epochs, pre.as_ref().map(|p| &p.model))?;
    let max = |f: fn(&EpochMetrics) -> f64| out.epochs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    Ok((
        SeedResult {
            seed,
            max_dev: max(|m| m.dev),
            max_test: max(|m| m.test),
            pretrain_best_dev: pre.map(|p| p.best_dev),
            epochs: out.epochs,
        },
        out.examples_per_epoch,
        out.model,
    ))
}

/// Trains every configured seed (in parallel) and summarizes the per-seed maxima.
pub fn run_protocol(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunReport> {
    run_protocol_models(cfg, data).map(|(report, _)| report)
}

/// [`run_protocol`], also returning each seed's final-epoch model in seed order.
pub fn run_protocol_models(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(RunReport, Vec<Model<f32>>)> {
    cfg.validate()?;
    let results = cfg.seeds.par_iter().map(|&s| run_seed(cfg, data, s)).collect::<Result<Vec<_>>>()?;
    let examples_per_epoch = results[0].1;
    let (seeds, models): (Vec<SeedResult>, Vec<Model<f32>>) = results.into_iter().map(|(r, _, m)| (r, m)).unzip();
    let dev = Summary::of(&seeds.iter().map(|s| s.max_dev).collect::<Vec<_>>());
    let test = Summary::of(&seeds.iter().map(|s| s.max_test).collect::<Vec<_>>());
    let report = RunReport {
        model: cfg.model,
        relation: cfg.relation,
        mask: cfg.mask,
        pretrain: cfg.pretrain,
        examples_per_epoch,
        seeds,
        dev,
        test,
    };
    Ok((report, models))
}

/// One row of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: AblationMask,
    pub pretrain: bool,
}

/// Ego off/on crossed with language-only, vision-only and both, each with and without pretraining.
pub fn ablation_grid() -> Vec<AblationRow> {
    let mut rows = Vec::with_capacity(12);
    for ego in [false, true] {
        for (language, vision) in [(true, false), (false, true), (true, true)] {
            for pretrain in [false, true] {
                rows.push(AblationRow { mask: AblationMask { ego, language, vision }, pretrain });
            }
        }
    }
    rows
}

/// Runs the protocol for every ablation row with the EgoObj architecture.
pub fn ablation_suite(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Vec<RunReport>> {
    ablation_grid()
        .into_iter()
        .map(|row| {
            let row_cfg = ExperimentConfig { model: ModelKind::EgoObj, mask: row.mask, pretrain: row.pretrain, ..cfg.clone() };
            run_protocol(&row_cfg, data)
        })
        .collect()
}

/// Fixed-width table with one row per report, in the layout of the paper's result tables.
pub fn render_table(reports: &[RunReport]) -> String {
    let mark = |on: bool| if on { "x" } else { "-" };
    let mut s = String::from("model     rel  ego  lang  vis  pre  dev            test\n");
    for r in reports {
        let uses_obj = r.model != ModelKind::Ego;
        let uses_ego = r.model != ModelKind::ObjOnly;
        s.push_str(&format!(
            "{:<9} {:<4} {:<4} {:<5} {:<4} {:<4} {:.2} ± {:.2}    {:.2} ± {:.2}\n",
            r.model.name(),
            r.relation.name(),
            mark(uses_ego && r.mask.ego),
            mark(uses_obj && r.mask.language),
            mark(uses_obj && r.mask.vision),
            mark(r.pretrain),
            r.dev.mean,
            r.dev.std,
            r.test.mean,
            r.test.std
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub relation: Relation,
    pub majority_dev: f64,
    pub majority_test: f64,
    pub random_dev: Summary,
    pub random_test: Summary,
}

pub fn baselines(data: &PreparedData, relation: Relation, seeds: &[u64]) -> Result<BaselineReport> {
    let [train, dev, test] = Fold::ALL.map(|f| data.pairs(f, relation, Source::Robot));
    let random = |pairs: &[&PairRecord]| -> Result<Summary> {
        let v = seeds.iter().map(|&s| baseline_random(pairs, s)).collect::<Result<Vec<_>>>()?;
        Ok(Summary::of(&v))
    };
    Ok(BaselineReport {
        relation,
        majority_dev: baseline_majority_class(&train, &dev)?,
        majority_test: baseline_majority_class(&train, &test)?,
        random_dev: random(&dev)?,
        random_test: random(&test)?,
    })
}

/// Mean dev (blue) and test (red) accuracy per epoch across seeds, on a fixed [0, 1] axis.
pub fn plot_report(report: &RunReport, path: &Path) -> Result<()> {
    const W: u32 = 640;
    const H: u32 = 400;
    const MARGIN: u32 = 30;
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    let n_epochs = report.seeds.iter().map(|s| s.epochs.len()).min().unwrap_or(0);
    let (pw, ph) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
    let to_px = |i: usize, acc: f64| {
        let x = MARGIN as f64 + pw * i as f64 / (n_epochs.max(2) - 1) as f64;
        let y = (H - MARGIN) as f64 - ph * acc.clamp(0.0, 1.0);
        (x.round() as i64, y.round() as i64)
    };
    let grey = image::Rgb([160, 160, 160]);
    draw_line(&mut img, to_px(0, 0.0), to_px(n_epochs.max(2) - 1, 0.0), grey);
    draw_line(&mut img, to_px(0, 0.0), to_px(0, 1.0), grey);
    draw_line(&mut img, to_px(0, 0.5), to_px(n_epochs.max(2) - 1, 0.5), image::Rgb([225, 225, 225]));
    let mean_at = |i: usize, f: fn(&EpochMetrics) -> f64| {
        report.seeds.iter().map(|s| f(&s.epochs[i])).sum::<f64>() / report.seeds.len() as f64
    };
    for (f, colour) in [
        ((|m: &EpochMetrics| m.dev) as fn(&EpochMetrics) -> f64, image::Rgb([30, 80, 200])),
        (|m: &EpochMetrics| m.test, image::Rgb([200, 40, 40])),
    ] {
        for i in 1..n_epochs {
            draw_line(&mut img, to_px(i - 1, mean_at(i - 1, f)), to_px(i, mean_at(i, f)), colour);
        }
    }
    img.save(path).map_err(|e| CoreError::format(path.display().to_string(), e.to_string()))
}

fn draw_line(img: &mut image::RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), colour: image::Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for k in 0..=steps {
        let x = x0 + (x1 - x0) * k / steps;
        let y = y0 + (y1 - y0) * k / steps;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, colour);
        }
    }
}
