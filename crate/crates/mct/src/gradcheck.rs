//! Central finite-difference checks of tape gradients, run in `f64`.
//!
//! Every evaluation uses a train-mode tape with the same dropout key, so
//! dropout masks are identical across the perturbed forward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{DropoutKey, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, 1e-7)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst: usize,
}

impl GradCheck {
    fn new(name: impl Into<String>) -> Self {
        GradCheck {
            name: name.into(),
            checked: 0,
            max_rel_error: 0.0,
            worst: 0,
        }
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.checked == 1 {
            self.max_rel_error = e;
            self.worst = index;
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn fresh_tape() -> Tape<f64> {
    Tape::new(Mode::Train).with_dropout(DropoutKey { seed: 0, step: 0 })
}

fn scalar(tape: &Tape<f64>, loss: Var) -> Result<f64> {
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::Rank(format!("gradient check needs a scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

fn coordinates(numel: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < numel => {
            let mut idx = sample(rng, numel, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..numel).collect(),
    }
}

/// Compares the gradient of `f` with respect to each input tensor against
/// central differences over every coordinate.
pub fn check_inputs(
    inputs: &[Tensor<f64>],
    h: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    let run = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = fresh_tape();
        let vars: Vec<Var> = values.iter().map(|t| tape.input(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };
    let (tape, vars, loss) = run(inputs)?;
    scalar(&tape, loss)?;
    let mut scratch = ParamStore::new();
    let grads = tape.backward(loss, &mut scratch)?;
    let mut reports = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let mut report = GradCheck::new(format!("input{k}"));
        let mut values = inputs.to_vec();
        for i in 0..input.numel() {
            let orig = input.data()[i];
            values[k].data_mut()[i] = orig + h;
            let (t, _, l) = run(&values)?;
            let plus = scalar(&t, l)?;
            values[k].data_mut()[i] = orig - h;
            let (t, _, l) = run(&values)?;
            let minus = scalar(&t, l)?;
            values[k].data_mut()[i] = orig;
            report.record(i, analytic.data()[i], (plus - minus) / (2.0 * h));
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Compares parameter gradients accumulated in `store` by `f` against central
/// differences. At most `per_param` coordinates of each tensor are probed
/// (chosen by `seed`); `None` probes all of them.
pub fn check_params(
    store: &mut ParamStore<f64>,
    h: f64,
    per_param: Option<usize>,
    seed: u64,
    f: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = fresh_tape();
        let loss = f(&mut tape, store)?;
        scalar(&tape, loss)
    };
    store.zero_grad();
    {
        let mut tape = fresh_tape();
        let loss = f(&mut tape, store)?;
        scalar(&tape, loss)?;
        tape.backward(loss, store)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for p in 0..store.len() {
        let id = store.params()[p].name.clone();
        let pid = store.id(&id).expect("name from store");
        let analytic = store.param(pid).grad.clone();
        let mut report = GradCheck::new(id);
        for i in coordinates(analytic.numel(), per_param, &mut rng) {
            let orig = store.param(pid).value.data()[i];
            store.param_mut(pid).value.data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.param_mut(pid).value.data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.param_mut(pid).value.data_mut()[i] = orig;
            report.record(i, analytic.data()[i], (plus - minus) / (2.0 * h));
        }
        reports.push(report);
    }
    Ok(reports)
}
