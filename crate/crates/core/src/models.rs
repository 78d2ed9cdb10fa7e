//! Ego, EgoObj and object-only networks, ablation masks and projection transfer.
//!
//! Parameter names are stable and grouped by the prefix before the first dot:
//!
//! | group           | parameters                                              |
//! |-----------------|---------------------------------------------------------|
//! | `conv_rgb`      | `conv_rgb.{0,1,2}.{weight,bias}`, `conv_rgb.fc.{weight,bias}` |
//! | `conv_depth`    | same layout over the 1-channel depth delta              |
//! | `fc_head`       | `fc_head.hidden.*`, `fc_head.out.*`                     |
//! | `proj_vision`   | `proj_vision.{weight,bias}`                             |
//! | `proj_language` | `proj_language.{weight,bias}`                           |

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stackdet_tensor::{archive, Bindings, ParamSet, Scalar, Tape, Tensor, Var};

use crate::dataset::{Label, Relation};
use crate::embeddings::{EmbeddingDims, PairEmbedding};
use crate::error::{CoreError, Result};
use crate::scene::{FrameDelta, DELTA_HEIGHT, DELTA_WIDTH, RGB_DELTA_CHANNELS};

pub const CONV_STAGES: usize = 3;
pub const CONV_KERNEL: usize = 3;
pub const POOL_KERNEL: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ego,
    EgoObj,
    ObjOnly,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ego => "ego",
            ModelKind::EgoObj => "ego_obj",
            ModelKind::ObjOnly => "obj_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ego" => Ok(ModelKind::Ego),
            "ego_obj" => Ok(ModelKind::EgoObj),
            "obj_only" => Ok(ModelKind::ObjOnly),
            other => Err(CoreError::Argument(format!("unknown model kind {other:?}"))),
        }
    }

    fn has_ego(self) -> bool {
        self != ModelKind::ObjOnly
    }

    fn has_obj(self) -> bool {
        self != ModelKind::Ego
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub relation: Relation,
    pub base_filters: usize,
    pub hidden: usize,
    pub dropout_p: f64,
    pub seed: u64,
    /// Embedding widths; ignored by `Ego`.
    pub vision_dim: usize,
    pub language_dim: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, relation: Relation, dims: EmbeddingDims, seed: u64) -> Self {
        Self {
            kind,
            relation,
            base_filters: 8,
            hidden: 64,
            dropout_p: 0.3,
            seed,
            vision_dim: dims.vision,
            language_dim: dims.language,
        }
    }

    pub fn filters(&self) -> [usize; CONV_STAGES] {
        [self.base_filters, 2 * self.base_filters, 4 * self.base_filters]
    }

    fn conv_out_hw() -> (usize, usize) {
        let shrink = POOL_KERNEL.pow(CONV_STAGES as u32);
        (DELTA_HEIGHT / shrink, DELTA_WIDTH / shrink)
    }

    /// Width of a flattened conv branch output.
    pub fn conv_flat_len(&self) -> usize {
        let (h, w) = Self::conv_out_hw();
        self.filters()[CONV_STAGES - 1] * h * w
    }

    fn validate(&self) -> Result<()> {
        if self.base_filters == 0 || self.hidden == 0 {
            return Err(CoreError::Argument("base_filters and hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(CoreError::Argument(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.kind.has_obj() && (self.vision_dim == 0 || self.language_dim == 0) {
            return Err(CoreError::Argument("object models need nonzero embedding dims".into()));
        }
        Ok(())
    }

    /// Name and shape of every parameter, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let h = self.hidden;
        if self.kind.has_ego() {
            for (branch, c_in) in [("conv_rgb", RGB_DELTA_CHANNELS), ("conv_depth", 1)] {
                let mut prev = c_in;
                for (i, f) in self.filters().into_iter().enumerate() {
                    out.push((format!("{branch}.{i}.weight"), vec![f, prev, CONV_KERNEL, CONV_KERNEL]));
                    out.push((format!("{branch}.{i}.bias"), vec![f]));
                    prev = f;
                }
                out.push((format!("{branch}.fc.weight"), vec![h, self.conv_flat_len()]));
                out.push((format!("{branch}.fc.bias"), vec![h]));
            }
        }
        if self.kind.has_obj() {
            out.push(("proj_vision.weight".into(), vec![h, self.vision_dim]));
            out.push(("proj_vision.bias".into(), vec![h]));
            out.push(("proj_language.weight".into(), vec![h, self.language_dim]));
            out.push(("proj_language.bias".into(), vec![h]));
        }
        out.push(("fc_head.hidden.weight".into(), vec![h, h]));
        out.push(("fc_head.hidden.bias".into(), vec![h]));
        let head_in = if self.kind == ModelKind::EgoObj { 2 * h } else { h };
        out.push(("fc_head.out.weight".into(), vec![2, head_in]));
        out.push(("fc_head.out.bias".into(), vec![2]));
        out
    }
}

/// Group of a parameter name: the text before the first dot.
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Which inputs are live; inactive modalities are replaced by zero tensors.
/// Fields missing from a serialized mask default to active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationMask {
    pub ego: bool,
    pub language: bool,
    pub vision: bool,
}

impl AblationMask {
    pub const FULL: AblationMask = AblationMask { ego: true, language: true, vision: true };

    pub fn new(ego: bool, language: bool, vision: bool) -> Result<Self> {
        let m = Self { ego, language, vision };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.ego || self.language || self.vision) {
            return Err(CoreError::Argument("ablation mask must keep at least one modality".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let f = |on: bool, s: &'static str| if on { s } else { "-" };
        format!("{}/{}/{}", f(self.ego, "ego"), f(self.language, "lang"), f(self.vision, "vis"))
    }
}

impl Default for AblationMask {
    fn default() -> Self {
        Self::FULL
    }
}

/// Per-example inputs. Missing parts are only allowed for models or masks that do not read them.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModelInput<'a> {
    pub delta: Option<&'a FrameDelta>,
    pub pair: Option<&'a PairEmbedding>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn fan_in(shape: &[usize]) -> usize {
    shape[1..].iter().product::<usize>().max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar = f32> {
    pub spec: ModelSpec,
    pub params: ParamSet<T>,
}

impl Model<f32> {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero. Each parameter draws from its own
    /// stream keyed by seed and name, so adding a parameter never shifts the others.
    pub fn init(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in spec.param_shapes() {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let bound = 1.0 / (fan_in(&shape) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ fnv1a(&name));
                Tensor::from_fn(shape, |_| rng.random_range(-bound..bound) as f32)
            };
            params.insert(name, tensor);
        }
        Ok(Self { spec, params })
    }
}

impl<T: Scalar> Model<T> {
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { spec: self.spec.clone(), params: self.params.cast() }
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.params.names().map(|n| param_group(n).to_string()).collect();
        g.dedup();
        g
    }

    fn check_mask(&self, mask: AblationMask) -> Result<()> {
        mask.check()?;
        match self.spec.kind {
            ModelKind::Ego if !mask.ego => Err(CoreError::Argument("the ego model cannot mask its only input".into())),
            ModelKind::ObjOnly if !(mask.language || mask.vision) => {
                Err(CoreError::Argument("object-only model needs language or vision active".into()))
            }
            _ => Ok(()),
        }
    }

    fn conv_branch(&self, tape: &mut Tape<T>, p: &Bindings, branch: &str, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..CONV_STAGES {
            h = tape.conv2d(h, p.get(&format!("{branch}.{i}.weight"))?, p.get(&format!("{branch}.{i}.bias"))?, 1, 1)?;
            h = tape.relu(h);
            h = tape.max_pool2d(h, POOL_KERNEL, POOL_KERNEL)?;
        }
        let flat = tape.flatten(h)?;
        let fc = tape.linear(flat, p.get(&format!("{branch}.fc.weight"))?, p.get(&format!("{branch}.fc.bias"))?)?;
        Ok(tape.relu(fc))
    }

    fn object_vector(&self, tape: &mut Tape<T>, p: &Bindings, pair: &PairEmbedding, mask: AblationMask) -> Result<Var> {
        if pair.vision_delta.len() != self.spec.vision_dim || pair.language_delta.len() != self.spec.language_dim {
            return Err(CoreError::Argument(format!(
                "pair embedding dims ({}, {}) but model expects ({}, {})",
                pair.vision_delta.len(),
                pair.language_delta.len(),
                self.spec.vision_dim,
                self.spec.language_dim
            )));
        }
        let vision = masked_vector(&pair.vision_delta, mask.vision);
        let language = masked_vector(&pair.language_delta, mask.language);
        let v = tape.constant(vision);
        let l = tape.constant(language);
        let pv = tape.linear(v, p.get("proj_vision.weight")?, p.get("proj_vision.bias")?)?;
        let pv = tape.relu(pv);
        let pl = tape.linear(l, p.get("proj_language.weight")?, p.get("proj_language.bias")?)?;
        let pl = tape.relu(pl);
        Ok(tape.mul(pv, pl)?)
    }

    fn ego_hidden<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        delta: &FrameDelta,
        mask: AblationMask,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        delta.check_shape()?;
        let rgb = tape.constant(masked_tensor(&delta.rgb, mask.ego));
        let depth = tape.constant(masked_tensor(&delta.depth, mask.ego));
        let r = self.conv_branch(tape, p, "conv_rgb", rgb)?;
        let d = self.conv_branch(tape, p, "conv_depth", depth)?;
        let fused = tape.mul(r, d)?;
        let fused = tape.dropout(fused, self.spec.dropout_p, training, rng)?;
        let h = tape.linear(fused, p.get("fc_head.hidden.weight")?, p.get("fc_head.hidden.bias")?)?;
        Ok(tape.relu(h))
    }

    /// Records one forward pass and returns the 2-logit output.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        input: ModelInput<'_>,
        mask: AblationMask,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_mask(mask)?;
        let missing = |what: &str| CoreError::Argument(format!("{} model needs a {what} input", self.spec.kind));
        let drop_p = self.spec.dropout_p;
        let features = match self.spec.kind {
            ModelKind::Ego => {
                let delta = input.delta.ok_or_else(|| missing("frame delta"))?;
                self.ego_hidden(tape, p, delta, mask, training, rng)?
            }
            ModelKind::EgoObj => {
                let delta = input.delta.ok_or_else(|| missing("frame delta"))?;
                let pair = input.pair.ok_or_else(|| missing("pair embedding"))?;
                let ego = self.ego_hidden(tape, p, delta, mask, training, rng)?;
                let obj = self.object_vector(tape, p, pair, mask)?;
                tape.concat(&[ego, obj])?
            }
            ModelKind::ObjOnly => {
                let pair = input.pair.ok_or_else(|| missing("pair embedding"))?;
                let obj = self.object_vector(tape, p, pair, mask)?;
                let obj = tape.dropout(obj, drop_p, training, rng)?;
                let h = tape.linear(obj, p.get("fc_head.hidden.weight")?, p.get("fc_head.hidden.bias")?)?;
                tape.relu(h)
            }
        };
        let features = tape.dropout(features, drop_p, training, rng)?;
        Ok(tape.linear(features, p.get("fc_head.out.weight")?, p.get("fc_head.out.bias")?)?)
    }

    /// Eval-mode logits for a batch of inputs.
    pub fn logits(&self, inputs: &[ModelInput<'_>], mask: AblationMask) -> Result<Vec<[T; 2]>> {
        let mut tape = Tape::new();
        let p = self.params.bind_constants(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(inputs.len());
        for &input in inputs {
            let y = self.forward(&mut tape, &p, input, mask, false, &mut rng)?;
            let v = tape.value(y).data();
            out.push([v[0], v[1]]);
        }
        Ok(out)
    }

    pub fn predict(&self, inputs: &[ModelInput<'_>], mask: AblationMask) -> Result<Vec<Label>> {
        Ok(self
            .logits(inputs, mask)?
            .into_iter()
            .map(|z| if z[1] > z[0] { Label::Yes } else { Label::No })
            .collect())
    }

    /// Output of the shared projection sub-network, `relu(Pv dv) * relu(Pl dl)`.
    pub fn project(&self, pair: &PairEmbedding) -> Result<Vec<T>> {
        if !self.spec.kind.has_obj() {
            return Err(CoreError::Argument(format!("{} model has no projection layers", self.spec.kind)));
        }
        let mut tape = Tape::new();
        let p = self.params.filter_prefix("proj_").bind_constants(&mut tape);
        let v = self.object_vector(&mut tape, &p, pair, AblationMask::FULL)?;
        Ok(tape.value(v).data().to_vec())
    }
}

fn masked_tensor<T: Scalar>(t: &Tensor<f32>, active: bool) -> Tensor<T> {
    if active {
        t.cast()
    } else {
        Tensor::zeros(t.shape().to_vec())
    }
}

fn masked_vector<T: Scalar>(v: &[f32], active: bool) -> Tensor<T> {
    if active {
        Tensor::vector(v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect())
    } else {
        Tensor::zeros([v.len()])
    }
}

/// Copies `proj_vision` and `proj_language` from an object-only model into an EgoObj model.
pub fn transfer_pretrained<T: Scalar>(source: &Model<T>, dest: &mut Model<T>) -> Result<()> {
    if source.spec.kind != ModelKind::ObjOnly || dest.spec.kind != ModelKind::EgoObj {
        return Err(CoreError::Transfer(format!(
            "expected obj_only -> ego_obj, got {} -> {}",
            source.spec.kind, dest.spec.kind
        )));
    }
    let names: Vec<String> =
        dest.params.names().filter(|n| matches!(param_group(n), "proj_vision" | "proj_language")).map(String::from).collect();
    // check every shape before touching dest so a failure leaves it unchanged
    for name in &names {
        let src = source.params.get(name).ok_or_else(|| CoreError::Transfer(format!("source lacks {name}")))?;
        let dst = dest.params.get(name).expect("listed from dest");
        if src.shape() != dst.shape() {
            return Err(CoreError::Transfer(format!("{name}: source {:?} vs destination {:?}", src.shape(), dst.shape())));
        }
    }
    for name in &names {
        let src = source.params.get(name).expect("checked");
        let dst = dest.params.get_mut(name).expect("checked");
        dst.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}

fn spec_meta(spec: &ModelSpec) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("kind".to_string(), spec.kind.name().to_string()),
        ("relation".to_string(), spec.relation.name().to_string()),
        ("base_filters".to_string(), spec.base_filters.to_string()),
        ("hidden".to_string(), spec.hidden.to_string()),
        ("dropout_p".to_string(), spec.dropout_p.to_string()),
        ("seed".to_string(), spec.seed.to_string()),
        ("vision_dim".to_string(), spec.vision_dim.to_string()),
        ("language_dim".to_string(), spec.language_dim.to_string()),
    ])
}

pub fn save_model(path: &Path, model: &Model<f32>) -> Result<()> {
    archive::save(path, &spec_meta(&model.spec), &model.params)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    let ar = archive::load(path)?;
    let ctx = path.display().to_string();
    let field = |k: &str| ar.meta.get(k).ok_or_else(|| CoreError::format(ctx.clone(), format!("missing header {k:?}")));
    let num = |k: &str| -> Result<usize> {
        field(k)?.parse().map_err(|_| CoreError::format(ctx.clone(), format!("header {k:?} is not an integer")))
    };
    let spec = ModelSpec {
        kind: ModelKind::parse(field("kind")?)?,
        relation: Relation::parse(field("relation")?)?,
        base_filters: num("base_filters")?,
        hidden: num("hidden")?,
        dropout_p: field("dropout_p")?.parse().map_err(|_| CoreError::format(ctx.clone(), "bad dropout_p"))?,
        seed: field("seed")?.parse().map_err(|_| CoreError::format(ctx.clone(), "bad seed"))?,
        vision_dim: num("vision_dim")?,
        language_dim: num("language_dim")?,
    };
    spec.validate()?;
    let expected = spec.param_shapes();
    if expected.len() != ar.params.len() {
        return Err(CoreError::format(ctx, format!("{} tensors, {} expected for {}", ar.params.len(), expected.len(), spec.kind)));
    }
    for (name, shape) in &expected {
        match ar.params.get(name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => return Err(CoreError::format(ctx, format!("{name} has shape {:?}, expected {shape:?}", t.shape()))),
            None => return Err(CoreError::format(ctx, format!("missing tensor {name}"))),
        }
    }
    Ok(Model { spec, params: ar.params })
}
