//! Central finite-difference checks of tape gradients (fp64).

use crate::error::Result;
use crate::params::{Bindings, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error with a floor on the denominator, so that two tiny numbers
/// differing only by rounding noise do not register as a mismatch.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares the tape gradient of `f` at `input` against central differences
/// and returns the worst relative error over all input coordinates.
///
/// `f` must be deterministic and return a scalar.
pub fn finite_diff_check<F>(f: F, input: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut x = input.clone();
    x.set_requires_grad(true);
    let var = tape.leaf(&x);
    let out = f(&mut tape, var)?;
    let grads = tape.backward(out)?;
    let zeros = vec![0.0; input.len()];
    let analytic = grads.get(var).unwrap_or(&zeros).to_vec();

    let eval = |t: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).data()[0])
    };

    let mut worst = 0.0f64;
    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Per-parameter outcome of [`check_params`].
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
    pub coords_checked: usize,
}

/// Finite-difference check over a parameter set. At most `max_coords`
/// coordinates per tensor are probed, spread evenly across it.
pub fn check_params<F>(params: &ParamSet<f64>, f: F, eps: f64, max_coords: usize) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape<f64>, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let out = f(&mut tape, &bindings)?;
    let grads = tape.backward(out)?;

    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let out = f(&mut tape, &b)?;
        Ok(tape.value(out).data()[0])
    };

    let mut probe = params.clone();
    let mut report = Vec::new();
    for (name, tensor) in params.iter() {
        let var = bindings.get(name)?;
        let zeros = vec![0.0; tensor.len()];
        let analytic = grads.get(var).unwrap_or(&zeros).to_vec();
        let n = tensor.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let mut worst = 0.0f64;
        let mut count = 0;
        for i in (0..n).step_by(stride) {
            let orig = tensor.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i], numeric));
            count += 1;
        }
        report.push(ParamCheck {
            name: name.to_string(),
            max_rel_error: worst,
            max_abs_grad: analytic.iter().fold(0.0f64, |a, g| a.max(g.abs())),
            coords_checked: count,
        });
    }
    Ok(report)
}
