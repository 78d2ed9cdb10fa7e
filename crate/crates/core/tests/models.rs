mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackdet_core::embeddings::EmbeddingDims;
use stackdet_core::dataset::Relation;
use stackdet_core::models::*;

#[test]
fn full_graph_gradients() {
    for kind in [ModelKind::Ego, ModelKind::EgoObj, ModelKind::ObjOnly] {
        for seed in 0..20 {
            let report = model_gradcheck(kind, seed, 3);
            assert!(worst(&report) < GRAD_TOL, "{kind} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn every_group_receives_gradient() {
    for kind in [ModelKind::Ego, ModelKind::EgoObj, ModelKind::ObjOnly] {
        let report = model_gradcheck(kind, 7, 1);
        let model = random_model_f64(kind, 7, EmbeddingDims { vision: 6, language: 5 });
        for group in model.groups() {
            let live = report.iter().any(|c| param_group(&c.name) == group && c.max_abs_grad > 0.0);
            assert!(live, "{kind}: group {group} has an all-zero gradient");
        }
    }
}

#[test]
fn parameter_counts_match_oracle() {
    for dims in [EmbeddingDims { vision: 16, language: 12 }, EmbeddingDims { vision: 2048, language: 300 }] {
        for kind in [ModelKind::Ego, ModelKind::EgoObj, ModelKind::ObjOnly] {
            for (base, hidden) in [(8, 64), (4, 16), (16, 32)] {
                let spec = ModelSpec { base_filters: base, hidden, ..ModelSpec::new(kind, Relation::On, dims, 0) };
                let model = Model::init(spec).unwrap();
                assert_eq!(model.params.numel(), param_count_oracle(kind, base, hidden, dims), "{kind} {base} {hidden}");
            }
        }
    }
}

#[test]
fn paper_sized_store_dims_build() {
    let dims = EmbeddingDims { vision: 2048, language: 300 };
    let m = Model::init(ModelSpec::new(ModelKind::EgoObj, Relation::In, dims, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let delta = random_delta(&mut rng);
    let pair = random_pair(&mut rng, dims);
    let out = m.logits(&[ModelInput { delta: Some(&delta), pair: Some(&pair) }], AblationMask::FULL).unwrap();
    assert!(out[0].iter().all(|v| v.is_finite()));
    // the object vector and the ego penultimate layer have the same width
    assert_eq!(m.project(&pair).unwrap().len(), m.spec.hidden);
}

#[test]
fn transfer_is_idempotent() {
    let dims = EmbeddingDims { vision: 6, language: 5 };
    let src = Model::init(ModelSpec::new(ModelKind::ObjOnly, Relation::In, dims, 3)).unwrap();
    let mut dst = Model::init(ModelSpec::new(ModelKind::EgoObj, Relation::In, dims, 4)).unwrap();
    transfer_pretrained(&src, &mut dst).unwrap();
    let once = dst.clone();
    transfer_pretrained(&src, &mut dst).unwrap();
    assert_eq!(once, dst);
}
