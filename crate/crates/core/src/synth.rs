//! Deterministic synthetic datasets: latent object attributes, closed-form labels,
//! rendered RGB-D trials and an embedding store that encodes the latents.
//!
//! Every object has a size `s` and a flatness `f`, both in `0..=7`, and a container flag.
//!
//! * `in`: Yes iff the target is a container, the grasped object is not, and `s_T - s_G >= 2`.
//!   Containers never nest here, which keeps the rule linear in the pair deltas.
//! * `on`: Yes iff `(s_T - s_G) + (f_T - f_G) >= 1`.
//!
//! Vision embeddings carry `s/7`, `f/7` and the container flag in dims 0..3. Each expression
//! is "size-word flat-word noun", whose word vectors carry `3s/7`, `3f/7` and `3*container`
//! in dims 0..3, so the token mean reproduces the latents. Remaining dims are nuisance.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use stackdet_tensor::Tensor;

use crate::dataset::{
    enumerate_pairs, write_manifest, Dataset, Fold, Label, ObjectCatalog, ObjectRecord, PairRecord, Relation, Source,
    Vote, TRIALS_PER_PAIR,
};
use crate::embeddings::{write_store, EmbeddingDims, EmbeddingStore, ObjectFeatures, Token, VIEW_COUNT};
use crate::error::{CoreError, Result};
use crate::scene::{frame_delta, Frame, FrameDelta, Phase, FRAME_HEIGHT, FRAME_WIDTH};

pub const MAX_LEVEL: u8 = 7;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const STORE_FILE: &str = "embeddings.sdes";

const TABLE_DEPTH: f32 = 1.0;
const BACKGROUND: [f32; 3] = [0.55, 0.55, 0.52];
const RIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Separable,
    Noisy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_objects: usize,
    pub container_fraction: f64,
    pub relation: Relation,
    pub difficulty: Difficulty,
    pub image_noise_sigma: f64,
    pub vision_dim: usize,
    pub language_dim: usize,
    pub expressions_per_object: usize,
    /// Upper bound on robot pairs per fold (train, dev, test).
    pub robot_pairs: [usize; 3],
    /// Objects per fold (train, dev, test); empty means a 60/20/20 split.
    pub split: Vec<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_objects: 40,
            container_fraction: 0.4,
            relation: Relation::In,
            difficulty: Difficulty::Separable,
            image_noise_sigma: 0.0,
            vision_dim: 16,
            language_dim: 12,
            expressions_per_object: 3,
            robot_pairs: [16, 10, 10],
            split: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.n_objects < 4 {
            return bad(format!("n_objects must be at least 4, got {}", self.n_objects));
        }
        if !(self.container_fraction > 0.0 && self.container_fraction < 1.0) {
            return bad(format!("container_fraction must lie in (0,1), got {}", self.container_fraction));
        }
        if self.vision_dim < 3 || self.language_dim < 3 {
            return bad("embedding dims must be at least 3".into());
        }
        if !(self.image_noise_sigma >= 0.0 && self.image_noise_sigma.is_finite()) {
            return bad("image_noise_sigma must be finite and non-negative".into());
        }
        if self.expressions_per_object == 0 {
            return bad("expressions_per_object must be positive".into());
        }
        if !self.split.is_empty() && (self.split.len() != 3 || self.split.iter().sum::<usize>() != self.n_objects) {
            return bad(format!("split {:?} must list three fold sizes summing to n_objects", self.split));
        }
        Ok(())
    }

    pub fn dims(&self) -> EmbeddingDims {
        EmbeddingDims { vision: self.vision_dim, language: self.language_dim }
    }

    fn fold_sizes(&self) -> [usize; 3] {
        if self.split.len() == 3 {
            return [self.split[0], self.split[1], self.split[2]];
        }
        let dev = ((self.n_objects as f64) * 0.2).round().max(1.0) as usize;
        [self.n_objects - 2 * dev, dev, dev]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectLatent {
    pub id: String,
    pub fold: Fold,
    pub size: u8,
    pub flat: u8,
    pub container: bool,
    pub noun: String,
    pub color: [f32; 3],
}

impl ObjectLatent {
    fn half_extent(&self) -> (usize, usize) {
        let hw = 30 + 10 * self.size as usize;
        (hw, hw * 4 / 5)
    }

    fn height(&self) -> f32 {
        0.02 + 0.012 * (MAX_LEVEL - self.flat) as f32
    }
}

/// Ground-truth rule shared by robot and crowd labels.
pub fn latent_label(relation: Relation, grasped: &ObjectLatent, target: &ObjectLatent) -> Label {
    let ds = target.size as i32 - grasped.size as i32;
    let df = target.flat as i32 - grasped.flat as i32;
    let yes = match relation {
        Relation::In => target.container && !grasped.container && ds >= 2,
        Relation::On => ds + df >= 1,
    };
    if yes {
        Label::Yes
    } else {
        Label::No
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Independent stream for `key` under `seed`.
fn stream(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(key))
}

const SIZE_WORDS: [[&str; 2]; 8] = [
    ["tiny", "minuscule"],
    ["small", "little"],
    ["compact", "smallish"],
    ["modest", "midsize"],
    ["medium", "average"],
    ["large", "big"],
    ["huge", "bulky"],
    ["giant", "enormous"],
];
const FLAT_WORDS: [[&str; 2]; 8] = [
    ["tall", "towering"],
    ["upright", "lofty"],
    ["high", "elevated"],
    ["chunky", "thick"],
    ["stout", "squat"],
    ["low", "shallow"],
    ["flat", "level"],
    ["thin", "sheetlike"],
];
const CONTAINER_NOUNS: [&str; 6] = ["bowl", "box", "basket", "bin", "pot", "crate"];
const SOLID_NOUNS: [&str; 6] = ["block", "ball", "can", "bottle", "brick", "cube"];
const FILLERS: [&str; 4] = ["the", "a", "kind", "of"];

/// Rendered trial plus the generator's own masks (row-major 480x640).
#[derive(Clone, Debug)]
pub struct TrialRender {
    pub pre: Frame,
    pub post: Frame,
    pub target_mask: Vec<bool>,
    pub interior_mask: Vec<bool>,
    pub grasped_mask: Vec<bool>,
}

struct Canvas {
    rgb: Vec<f32>,
    depth: Vec<f32>,
}

#[derive(Clone, Copy)]
struct Rect {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Rect {
    fn centered(cx: i64, cy: i64, hw: usize, hh: usize) -> Self {
        let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
        Rect {
            x0: clip(cx - hw as i64, FRAME_WIDTH),
            x1: clip(cx + hw as i64, FRAME_WIDTH),
            y0: clip(cy - hh as i64, FRAME_HEIGHT),
            y1: clip(cy + hh as i64, FRAME_HEIGHT),
        }
    }

    fn shrink(self, by: usize) -> Self {
        Rect { x0: self.x0 + by, x1: self.x1.saturating_sub(by), y0: self.y0 + by, y1: self.y1.saturating_sub(by) }
    }

    fn mask(self) -> Vec<bool> {
        let mut m = vec![false; FRAME_HEIGHT * FRAME_WIDTH];
        self.for_each(|i| m[i] = true);
        m
    }

    fn for_each(self, mut f: impl FnMut(usize)) {
        for y in self.y0..self.y1 {
            for x in self.x0..self.x1 {
                f(y * FRAME_WIDTH + x);
            }
        }
    }
}

impl Canvas {
    fn table() -> Self {
        let plane = FRAME_HEIGHT * FRAME_WIDTH;
        let mut rgb = vec![0f32; 3 * plane];
        for c in 0..3 {
            rgb[c * plane..(c + 1) * plane].fill(BACKGROUND[c]);
        }
        Self { rgb, depth: vec![TABLE_DEPTH; plane] }
    }

    fn fill(&mut self, r: Rect, color: [f32; 3], depth: f32) {
        let plane = FRAME_HEIGHT * FRAME_WIDTH;
        r.for_each(|i| {
            for c in 0..3 {
                self.rgb[c * plane + i] = color[c];
            }
            self.depth[i] = depth;
        });
    }

    /// Adds sensor noise, then quantizes exactly as the capture files do.
    fn into_frame(mut self, sigma: f64, speckle: f64, rng: &mut ChaCha8Rng) -> Result<Frame> {
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("sigma validated");
            self.rgb.iter_mut().for_each(|v| *v += n.sample(rng) as f32);
            let dn = Normal::new(0.0, sigma * 0.05).expect("sigma validated");
            self.depth.iter_mut().for_each(|v| *v += dn.sample(rng) as f32);
        }
        if speckle > 0.0 {
            self.depth.iter_mut().for_each(|v| {
                if rng.random_bool(speckle) {
                    *v = 0.0;
                }
            });
        }
        self.rgb.iter_mut().for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        self.depth.iter_mut().for_each(|v| *v = (v.max(0.0) * 1000.0).round() / 1000.0);
        Frame::new(
            Tensor::new([3, FRAME_HEIGHT, FRAME_WIDTH], self.rgb)?,
            Tensor::new([1, FRAME_HEIGHT, FRAME_WIDTH], self.depth)?,
        )
    }
}

fn shade(color: [f32; 3], k: f32) -> [f32; 3] {
    color.map(|c| (c * k).clamp(0.0, 1.0))
}

/// Renders one trial. The target sits at the image center; the grasped object lands
/// inside it (`in`, Yes), on top of it (`on`, Yes) or beside it (No).
pub fn generate_trial(
    config: &SynthConfig,
    grasped: &ObjectLatent,
    target: &ObjectLatent,
    outcome: Label,
    trial_index: usize,
) -> Result<TrialRender> {
    let key = format!("trial/{}/{}/{}/{:?}/{trial_index}", grasped.id, target.id, config.relation, outcome);
    let mut rng = stream(config.seed, &key);
    let (cx, cy) = (FRAME_WIDTH as i64 / 2, FRAME_HEIGHT as i64 / 2);
    let (thw, thh) = target.half_extent();
    let target_rect = Rect::centered(cx, cy, thw, thh);
    let interior = target_rect.shrink(RIM);
    let top = TABLE_DEPTH - target.height();

    let mut pre = Canvas::table();
    pre.fill(target_rect, target.color, top);
    if target.container {
        pre.fill(interior, shade(target.color, 0.6), TABLE_DEPTH - 0.01);
    }

    let (ghw, ghh) = grasped.half_extent();
    let brightness = 1.0 + rng.random_range(-0.05f32..0.05);
    let gcolor = shade(grasped.color, brightness);
    let (gx, gy, gdepth) = match (outcome, config.relation) {
        (Label::Yes, Relation::In) => {
            let slack_x = (interior.x1 - interior.x0) as i64 / 2 - ghw as i64;
            let slack_y = (interior.y1 - interior.y0) as i64 / 2 - ghh as i64;
            let jx = rng.random_range(-slack_x.max(0)..=slack_x.max(0));
            let jy = rng.random_range(-slack_y.max(0)..=slack_y.max(0));
            let floor = TABLE_DEPTH - 0.01;
            (cx + jx, cy + jy, floor - grasped.height())
        }
        (Label::Yes, Relation::On) => {
            let j = rng.random_range(-6i64..=6);
            let k = rng.random_range(-6i64..=6);
            (cx + j, cy + k, top - grasped.height())
        }
        (Label::No, _) => {
            let side = if rng.random_bool(0.5) { 1 } else { -1 };
            let gap = 20 + rng.random_range(0..20) as i64;
            let dx = side * (thw as i64 + ghw as i64 + gap);
            let jy = rng.random_range(-40i64..=40);
            (cx + dx, cy + jy, TABLE_DEPTH - grasped.height())
        }
    };
    let grasped_rect = Rect::centered(gx, gy, ghw, ghh);
    let mut post = Canvas { rgb: pre.rgb.clone(), depth: pre.depth.clone() };
    post.fill(grasped_rect, gcolor, gdepth);

    let (sigma, speckle) = match config.difficulty {
        Difficulty::Separable => (config.image_noise_sigma, 0.0),
        Difficulty::Noisy => (config.image_noise_sigma, 0.01),
    };
    Ok(TrialRender {
        pre: pre.into_frame(sigma, speckle, &mut rng)?,
        post: post.into_frame(sigma, speckle, &mut rng)?,
        target_mask: target_rect.mask(),
        interior_mask: interior.mask(),
        grasped_mask: grasped_rect.mask(),
    })
}

/// A trial directory relative to the dataset root and what it shows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialSpec {
    pub path: PathBuf,
    pub grasped: String,
    pub target: String,
    pub outcome: Label,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub latents: Vec<ObjectLatent>,
    /// Trial paths are relative; see [`SynthDataset::dataset_at`].
    pub dataset: Dataset,
    pub store: EmbeddingStore,
    pub trials: Vec<TrialSpec>,
}

impl SynthDataset {
    pub fn latent(&self, id: &str) -> Result<&ObjectLatent> {
        self.latents.iter().find(|o| o.id == id).ok_or_else(|| CoreError::UnknownObject(id.to_string()))
    }

    /// The dataset with every trial path resolved under `root`.
    pub fn dataset_at(&self, root: &Path) -> Dataset {
        let mut ds = self.dataset.clone();
        ds.root = root.to_path_buf();
        for p in &mut ds.pairs {
            p.trials = p.trials.iter().map(|t| root.join(t)).collect();
        }
        ds
    }

    pub fn render(&self, trial: &TrialSpec) -> Result<TrialRender> {
        generate_trial(&self.config, self.latent(&trial.grasped)?, self.latent(&trial.target)?, trial.outcome, trial.index)
    }

    /// Difference images for every trial, keyed by the path under `root`, without touching disk.
    pub fn deltas_at(&self, root: &Path) -> Result<HashMap<PathBuf, FrameDelta>> {
        let mut out = HashMap::with_capacity(self.trials.len());
        for t in &self.trials {
            let r = self.render(t)?;
            out.insert(root.join(&t.path), frame_delta(&r.pre, &r.post)?);
        }
        Ok(out)
    }

    /// Writes `manifest.toml`, `embeddings.sdes` and every trial capture under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for t in &self.trials {
            let tdir = dir.join(&t.path);
            fs::create_dir_all(&tdir).map_err(|e| CoreError::io(&tdir, e))?;
            let r = self.render(t)?;
            r.pre.save(&tdir, Phase::Pre)?;
            r.post.save(&tdir, Phase::Post)?;
        }
        write_store(&dir.join(STORE_FILE), &self.store)?;
        write_manifest(&dir.join(MANIFEST_FILE), &self.dataset_at(dir))
    }
}

fn sample_latents(config: &SynthConfig) -> Vec<ObjectLatent> {
    let mut rng = stream(config.seed, "latents");
    let n = config.n_objects;
    let n_containers = ((n as f64 * config.container_fraction).round() as usize).clamp(1, n - 1);
    let mut is_container: Vec<bool> = (0..n).map(|i| i < n_containers).collect();
    is_container.shuffle(&mut rng);

    // containers are dealt first so every fold that can hold one gets one
    let sizes = config.fold_sizes();
    let container_share = deal(n_containers, sizes);
    let mut container_folds = folds_list(container_share);
    let mut solid_folds = folds_list([0, 1, 2].map(|i| sizes[i] - container_share[i]));
    container_folds.shuffle(&mut rng);
    solid_folds.shuffle(&mut rng);

    (0..n)
        .map(|i| {
            let container = is_container[i];
            let fold = if container { container_folds.pop() } else { solid_folds.pop() }.expect("counts match");
            let size = if container { rng.random_range(3..=MAX_LEVEL) } else { rng.random_range(0..=MAX_LEVEL) };
            let nouns: &[&str] = if container { &CONTAINER_NOUNS } else { &SOLID_NOUNS };
            ObjectLatent {
                id: format!("obj_{i:02}"),
                fold,
                size,
                flat: rng.random_range(0..=MAX_LEVEL),
                container,
                noun: nouns[rng.random_range(0..nouns.len())].to_string(),
                color: [rng.random_range(0.1..0.95), rng.random_range(0.1..0.95), rng.random_range(0.1..0.95)],
            }
        })
        .collect()
}

/// Splits `count` items over folds of the given sizes, proportionally, with at least
/// one per non-empty fold when there are enough items.
fn deal(count: usize, sizes: [usize; 3]) -> [usize; 3] {
    let n: usize = sizes.iter().sum();
    let mut share = sizes.map(|k| k * count / n);
    if count >= 3 {
        for i in 0..3 {
            if sizes[i] > 0 {
                share[i] = share[i].max(1);
            }
        }
    }
    while share.iter().sum::<usize>() > count {
        let i = (0..3).max_by_key(|&i| (share[i], std::cmp::Reverse(i))).expect("three folds");
        share[i] -= 1;
    }
    while share.iter().sum::<usize>() < count {
        let i = (0..3).find(|&i| share[i] < sizes[i]).expect("count <= total size");
        share[i] += 1;
    }
    share
}

fn folds_list(counts: [usize; 3]) -> Vec<Fold> {
    Fold::ALL.iter().zip(counts).flat_map(|(f, k)| std::iter::repeat_n(*f, k)).collect()
}

fn word_vector(config: &SynthConfig, word: &str, head: [f32; 3]) -> Vec<f32> {
    let mut rng = stream(config.seed, &format!("word/{word}"));
    let n = Normal::new(0.0f32, 0.5).expect("fixed sigma");
    let mut v: Vec<f32> = (0..config.language_dim).map(|_| n.sample(&mut rng)).collect();
    v[..3].copy_from_slice(&head);
    v
}

fn build_store(config: &SynthConfig, latents: &[ObjectLatent]) -> Result<EmbeddingStore> {
    let level = |x: u8| x as f32 / MAX_LEVEL as f32;
    let mut objects = BTreeMap::new();
    for o in latents {
        let mut rng = stream(config.seed, &format!("embed/{}", o.id));
        let nuisance = Normal::new(0.0f32, 0.5).expect("fixed sigma");
        let view_noise = Normal::new(0.0f32, 0.1).expect("fixed sigma");
        let mut base: Vec<f32> = (0..config.vision_dim).map(|_| nuisance.sample(&mut rng)).collect();
        base[..3].copy_from_slice(&[level(o.size), level(o.flat), o.container as u8 as f32]);
        // per-view perturbations sum to zero so the view mean is the base vector
        let mut noise: Vec<Vec<f32>> =
            (0..VIEW_COUNT).map(|_| (0..config.vision_dim).map(|_| view_noise.sample(&mut rng)).collect()).collect();
        for d in 0..config.vision_dim {
            let mean = noise.iter().map(|v| v[d]).sum::<f32>() / VIEW_COUNT as f32;
            noise.iter_mut().for_each(|v| v[d] -= mean);
        }
        let views = noise.into_iter().map(|e| base.iter().zip(e).map(|(b, e)| b + e).collect()).collect();

        let mut expressions = Vec::with_capacity(config.expressions_per_object);
        for k in 0..config.expressions_per_object {
            let size_word = SIZE_WORDS[o.size as usize][k % 2];
            let flat_word = FLAT_WORDS[o.flat as usize][(k / 2) % 2];
            let mut expr = vec![
                Token { text: size_word.into(), vector: Some(word_vector(config, size_word, [3.0 * level(o.size), 0.0, 0.0])) },
                Token { text: flat_word.into(), vector: Some(word_vector(config, flat_word, [0.0, 3.0 * level(o.flat), 0.0])) },
                Token {
                    text: o.noun.clone(),
                    vector: Some(word_vector(config, &o.noun, [0.0, 0.0, 3.0 * o.container as u8 as f32])),
                },
            ];
            if config.difficulty == Difficulty::Noisy {
                if rng.random_bool(0.3) {
                    let f = FILLERS[rng.random_range(0..FILLERS.len())];
                    expr.insert(0, Token { text: f.into(), vector: Some(word_vector(config, f, [0.0; 3])) });
                }
                if rng.random_bool(0.2) {
                    expr.push(Token { text: format!("{}x", o.noun), vector: None });
                }
            }
            expressions.push(expr);
        }
        objects.insert(o.id.clone(), ObjectFeatures { views, expressions });
    }
    Ok(EmbeddingStore::new(config.dims(), objects)?.0)
}

fn expression_text(expr: &[Token]) -> String {
    expr.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

fn crowd_votes(label: Label, difficulty: Difficulty, rng: &mut ChaCha8Rng) -> Vec<Vote> {
    match label {
        Label::Yes => vec![Vote::Yes; 3],
        Label::No => {
            let dissent = match difficulty {
                Difficulty::Separable => Vote::No,
                Difficulty::Noisy => [Vote::Yes, Vote::Maybe, Vote::YesIfRotated][rng.random_range(0..3)],
            };
            vec![Vote::No, dissent, Vote::No]
        }
    }
}

/// Objects, folds, robot pairs with five trials each, crowd-labelled All Pairs and the store.
pub fn generate_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let latents = sample_latents(config);
    let store = build_store(config, &latents)?;
    let by_id: HashMap<&str, &ObjectLatent> = latents.iter().map(|o| (o.id.as_str(), o)).collect();

    let catalog = ObjectCatalog::new(
        latents
            .iter()
            .map(|o| {
                Ok(ObjectRecord {
                    id: o.id.clone(),
                    fold: o.fold,
                    container: o.container,
                    expressions: store.object(&o.id)?.expressions.iter().map(|e| expression_text(e)).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    )?;

    let rel = config.relation;
    let mut pairs = Vec::new();
    let mut trials = Vec::new();
    for (fi, fold) in Fold::ALL.into_iter().enumerate() {
        let candidates = enumerate_pairs(&catalog, fold, rel);
        let mut rng = stream(config.seed, &format!("pairs/{fold}"));
        let labelled: Vec<(String, String, Label)> = candidates
            .into_iter()
            .map(|(g, t)| {
                let l = latent_label(rel, by_id[g.as_str()], by_id[t.as_str()]);
                (g, t, l)
            })
            .collect();

        // robot pairs: balanced where possible, capped per fold
        let cap = config.robot_pairs[fi];
        let mut yes: Vec<_> = labelled.iter().filter(|p| p.2 == Label::Yes).collect();
        let mut no: Vec<_> = labelled.iter().filter(|p| p.2 == Label::No).collect();
        yes.shuffle(&mut rng);
        no.shuffle(&mut rng);
        let n_yes = yes.len().min(cap / 2).max(cap.saturating_sub(no.len())).min(yes.len());
        let n_no = no.len().min(cap - n_yes);
        let mut robot: Vec<_> = yes[..n_yes].iter().chain(&no[..n_no]).copied().collect();
        robot.sort();
        for (g, t, label) in robot {
            let dir = PathBuf::from("trials").join(format!("{g}-{rel}-{t}"));
            let mut paths = Vec::with_capacity(TRIALS_PER_PAIR);
            for i in 0..TRIALS_PER_PAIR {
                let path = dir.join(i.to_string());
                trials.push(TrialSpec { path: path.clone(), grasped: g.clone(), target: t.clone(), outcome: *label, index: i });
                paths.push(path);
            }
            pairs.push(PairRecord {
                grasped: g.clone(),
                target: t.clone(),
                relation: rel,
                label: *label,
                source: Source::Robot,
                votes: vec![if *label == Label::Yes { Vote::Yes } else { Vote::No }; TRIALS_PER_PAIR],
                trials: paths,
            });
        }
        for (g, t, label) in &labelled {
            pairs.push(PairRecord {
                grasped: g.clone(),
                target: t.clone(),
                relation: rel,
                label: *label,
                source: Source::Annotation,
                votes: crowd_votes(*label, config.difficulty, &mut rng),
                trials: Vec::new(),
            });
        }
    }
    crate::dataset::validate_folds(&catalog, &pairs)?;
    Ok(SynthDataset {
        config: config.clone(),
        latents,
        dataset: Dataset { root: PathBuf::new(), catalog, pairs },
        store,
        trials,
    })
}
