//! Analytic gradients against central finite differences, 20 random
//! instances per op, fp64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackdet_tensor::{check_params, finite_diff_check, ParamSet, Tape, Tensor};

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum so that every output coordinate carries a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, y: stackdet_tensor::Var, seed: u64) -> stackdet_tensor::Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(random(&mut rng, &shape));
    let prod = tape.mul(y, w).unwrap();
    tape.sum(prod)
}

fn worst(report: &[stackdet_tensor::ParamCheck]) -> f64 {
    report.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
}

#[test]
fn linear_layer_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.insert("x", random(&mut rng, &[5]));
        p.insert("w", random(&mut rng, &[4, 5]));
        p.insert("b", random(&mut rng, &[4]));
        let report = check_params(
            &p,
            |t, b| {
                let y = t.linear(b.get("x")?, b.get("w")?, b.get("b")?)?;
                Ok(weighted_sum(t, y, seed))
            },
            1e-4,
            usize::MAX,
        )
        .unwrap();
        assert!(worst(&report) < 1e-6, "seed {seed}: {report:?}");
    }
}

#[test]
fn conv_relu_stack_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let stride = 1 + (seed % 2) as usize;
        let pad = (seed % 3 == 0) as usize;
        let mut p = ParamSet::new();
        p.insert("x", random(&mut rng, &[2, 7, 6]));
        p.insert("w1", random(&mut rng, &[3, 2, 3, 3]));
        p.insert("b1", random(&mut rng, &[3]));
        p.insert("w2", random(&mut rng, &[2, 3, 2, 2]));
        p.insert("b2", random(&mut rng, &[2]));
        let report = check_params(
            &p,
            |t, b| {
                let h = t.conv2d(b.get("x")?, b.get("w1")?, b.get("b1")?, stride, pad)?;
                let h = t.relu(h);
                let y = t.conv2d(h, b.get("w2")?, b.get("b2")?, 1, 0)?;
                Ok(weighted_sum(t, y, seed))
            },
            EPS,
            usize::MAX,
        )
        .unwrap();
        assert!(worst(&report) < TOL, "seed {seed}: {report:?}");
    }
}

#[test]
fn pool_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = random(&mut rng, &[3, 8, 6]);
        let k = 2 + (seed % 2) as usize;
        let stride = 1 + (seed % 3) as usize;
        let max_err = finite_diff_check(
            |t, x| {
                let y = t.max_pool2d(x, k, stride)?;
                Ok(weighted_sum(t, y, seed))
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(max_err < TOL, "max pool seed {seed}: {max_err}");
        let avg_err = finite_diff_check(
            |t, x| {
                let y = t.avg_pool2d(x, k, stride)?;
                Ok(weighted_sum(t, y, seed))
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(avg_err < TOL, "avg pool seed {seed}: {avg_err}");
    }
}

#[test]
fn elementwise_and_structural_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut p = ParamSet::new();
        p.insert("a", random(&mut rng, &[6]));
        p.insert("b", random(&mut rng, &[6]));
        p.insert("c", random(&mut rng, &[3]));
        let report = check_params(
            &p,
            |t, b| {
                let (a, bb, c) = (b.get("a")?, b.get("b")?, b.get("c")?);
                let r = t.relu(a);
                let m = t.mul(r, bb)?;
                let s = t.add(m, a)?;
                let sc = t.scale(s, 0.5);
                let cat = t.concat(&[sc, c])?;
                let img = t.reshape(cat, &[1, 3, 3])?;
                let flat = t.flatten(img)?;
                Ok(weighted_sum(t, flat, seed))
            },
            EPS,
            usize::MAX,
        )
        .unwrap();
        assert!(worst(&report) < TOL, "seed {seed}: {report:?}");
    }
}

#[test]
fn cross_entropy_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let z = Tensor::vector(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        let label = (seed % 2) as usize;
        let err = finite_diff_check(|t, z| t.cross_entropy(z, label), &z, EPS).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn eval_mode_dropout_gradient_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..INSTANCES {
        let x = random(&mut rng, &[10]);
        let err = finite_diff_check(
            |t, x| {
                let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
                let y = t.dropout(x, 0.3, false, &mut drop_rng)?;
                Ok(weighted_sum(t, y, seed))
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err < TOL);
    }
}

#[test]
fn training_dropout_gradient_follows_mask() {
    // a fixed mask makes training-mode dropout a linear map; reseeding per evaluation reproduces it
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let x = random(&mut rng, &[12]);
        let err = finite_diff_check(
            |t, x| {
                let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
                let y = t.dropout(x, 0.3, true, &mut drop_rng)?;
                Ok(weighted_sum(t, y, seed))
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err < TOL);
    }
}
