//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackdet_core::dataset::{Label, Relation};
use stackdet_core::embeddings::{EmbeddingDims, PairEmbedding};
use stackdet_core::harness::PreparedData;
use stackdet_core::models::{AblationMask, Model, ModelInput, ModelKind, ModelSpec};
use stackdet_core::scene::FrameDelta;
use stackdet_core::synth::{generate_dataset, SynthConfig};
use stackdet_tensor::{check_params, ParamCheck, Tensor};

pub const GRAD_EPS: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

pub fn random_delta(rng: &mut ChaCha8Rng) -> FrameDelta {
    let mut d = FrameDelta::zeros();
    d.rgb.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    d.depth.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    d
}

pub fn random_pair(rng: &mut ChaCha8Rng, dims: EmbeddingDims) -> PairEmbedding {
    PairEmbedding {
        vision_delta: (0..dims.vision).map(|_| rng.random_range(-1.0..1.0)).collect(),
        language_delta: (0..dims.language).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Seeded model in f64 with small random biases so that no bias starts at a ReLU kink.
pub fn random_model_f64(kind: ModelKind, seed: u64, dims: EmbeddingDims) -> Model<f64> {
    let mut m = Model::init(ModelSpec::new(kind, Relation::In, dims, seed)).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for (name, t) in m.params.iter_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    m
}

/// Finite-difference check of the full network's cross-entropy loss with dropout off.
pub fn model_gradcheck(kind: ModelKind, seed: u64, coords_per_tensor: usize) -> Vec<ParamCheck> {
    let dims = EmbeddingDims { vision: 6, language: 5 };
    let model = random_model_f64(kind, seed, dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(99));
    let delta = random_delta(&mut rng);
    let pair = random_pair(&mut rng, dims);
    let label = Label::from_index(rng.random_range(0..2));
    let input = ModelInput {
        delta: (kind != ModelKind::ObjOnly).then_some(&delta),
        pair: (kind != ModelKind::Ego).then_some(&pair),
    };
    check_params(
        &model.params,
        |tape, p| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let logits = model.forward(tape, p, input, AblationMask::FULL, false, &mut r).map_err(to_tensor_err)?;
            tape.cross_entropy(logits, label.index())
        },
        GRAD_EPS,
        coords_per_tensor,
    )
    .unwrap()
}

fn to_tensor_err(e: stackdet_core::CoreError) -> stackdet_tensor::TensorError {
    match e {
        stackdet_core::CoreError::Tensor(t) => t,
        other => panic!("model error in gradcheck: {other}"),
    }
}

pub fn worst(report: &[ParamCheck]) -> f64 {
    report.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
}

/// Parameter count derived from the layer description alone: three 3x3 same-padded
/// conv + 2x2 pool stages per branch, then FC to `hidden`.
pub fn param_count_oracle(kind: ModelKind, base: usize, hidden: usize, dims: EmbeddingDims) -> usize {
    let branch = |c_in: usize| {
        let (mut h, mut w, mut c, mut n) = (48usize, 64usize, c_in, 0usize);
        for stage in 0..3 {
            let f = base << stage;
            n += f * c * 3 * 3 + f;
            c = f;
            h /= 2;
            w /= 2;
        }
        n + (c * h * w) * hidden + hidden
    };
    let ego = branch(4) + branch(1);
    let obj = (dims.vision + 1) * hidden + (dims.language + 1) * hidden;
    let hid = hidden * hidden + hidden;
    match kind {
        ModelKind::Ego => ego + hid + 2 * hidden + 2,
        ModelKind::EgoObj => ego + obj + hid + 2 * (2 * hidden) + 2,
        ModelKind::ObjOnly => obj + hid + 2 * hidden + 2,
    }
}

/// In-memory synthetic dataset: no trial files are written.
pub fn prepared(config: &SynthConfig) -> PreparedData {
    let s = generate_dataset(config).unwrap();
    let root = std::path::Path::new("");
    PreparedData::from_parts(s.dataset_at(root), &s.store, s.deltas_at(root).unwrap()).unwrap()
}

pub fn tensor_eq_bits(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}
