//! Finite-difference checks for every differentiable op and for the two
//! end-to-end model paths, at 64-bit precision.

use mct::autograd::{Tape, Var};
use mct::data::Patch;
use mct::gradcheck::{check_inputs, check_params, GradCheck, DEFAULT_STEP};
use mct::model::Mct;
use mct::pretrain::{PretrainConfig, PretrainModel};
use mct::{ParamStore, Result, Tensor};

use super::{rng, toy_model, uniform};

/// Reduces `y` to a scalar with fixed random weights so every output
/// coordinate contributes a distinct gradient.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = tape.input(uniform(tape.shape(y), seed ^ 0x5eed));
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>);

fn op_cases() -> Vec<Case> {
    vec![
        ("matmul", vec![uniform(&[3, 4], 1), uniform(&[4, 2], 2)], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 1)
        })),
        ("bmm", vec![uniform(&[2, 3, 4], 3), uniform(&[2, 4, 2], 4)], Box::new(|t, v| {
            let y = t.bmm(v[0], v[1])?;
            project(t, y, 2)
        })),
        ("add", vec![uniform(&[2, 3], 5), uniform(&[2, 3], 6)], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 3)
        })),
        ("sub", vec![uniform(&[2, 3], 7), uniform(&[2, 3], 8)], Box::new(|t, v| {
            let y = t.sub(v[0], v[1])?;
            project(t, y, 4)
        })),
        ("mul", vec![uniform(&[2, 3], 9), uniform(&[2, 3], 10)], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 5)
        })),
        ("add_bias", vec![uniform(&[2, 3, 4], 11), uniform(&[4], 12)], Box::new(|t, v| {
            let y = t.add_bias(v[0], v[1])?;
            project(t, y, 6)
        })),
        ("scale", vec![uniform(&[5], 13)], Box::new(|t, v| {
            let y = t.scale(v[0], -1.7)?;
            project(t, y, 7)
        })),
        ("reshape", vec![uniform(&[2, 6], 14)], Box::new(|t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            project(t, y, 8)
        })),
        ("permute", vec![uniform(&[2, 3, 4], 15)], Box::new(|t, v| {
            let y = t.permute(v[0], &[2, 0, 1])?;
            project(t, y, 9)
        })),
        ("narrow", vec![uniform(&[3, 5, 2], 16)], Box::new(|t, v| {
            let y = t.narrow(v[0], 1, 1, 3)?;
            project(t, y, 10)
        })),
        ("linear", vec![uniform(&[2, 3, 4], 17), uniform(&[4, 5], 18), uniform(&[5], 19)], Box::new(|t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, 11)
        })),
        ("conv3d_grouped", vec![uniform(&[2, 4, 5, 4, 4], 20), uniform(&[4, 2, 3, 3, 3], 21), uniform(&[4], 22)], Box::new(|t, v| {
            let y = t.conv3d(v[0], v[1], v[2], 2, [2, 1, 1])?;
            project(t, y, 12)
        })),
        ("batchnorm_train", vec![uniform(&[3, 2, 2, 2, 2], 23), uniform(&[2], 24), uniform(&[2], 25)], Box::new(|t, v| {
            let (y, _, _) = t.batchnorm_train(v[0], v[1], v[2], 1e-5)?;
            project(t, y, 13)
        })),
        ("batchnorm_eval", vec![uniform(&[3, 2, 2, 1, 2], 26), uniform(&[2], 27), uniform(&[2], 28)], Box::new(|t, v| {
            let y = t.batchnorm_eval(v[0], v[1], v[2], &[0.3, -0.2], &[1.4, 0.6], 1e-5)?;
            project(t, y, 14)
        })),
        ("relu", vec![away_from_zero(&[3, 4], 29)], Box::new(|t, v| {
            let y = t.relu(v[0])?;
            project(t, y, 15)
        })),
        ("gelu", vec![uniform(&[3, 4], 30).map(|x| 3.0 * x)], Box::new(|t, v| {
            let y = t.gelu(v[0])?;
            project(t, y, 16)
        })),
        ("softmax", vec![uniform(&[3, 5], 31).map(|x| 2.0 * x)], Box::new(|t, v| {
            let y = t.softmax(v[0])?;
            project(t, y, 17)
        })),
        ("layernorm", vec![uniform(&[3, 5], 32), uniform(&[5], 33), uniform(&[5], 34)], Box::new(|t, v| {
            let y = t.layernorm(v[0], v[1], v[2], 1e-5)?;
            project(t, y, 18)
        })),
        ("mean_axis", vec![uniform(&[2, 4, 3], 35)], Box::new(|t, v| {
            let y = t.mean_axis(v[0], 1)?;
            project(t, y, 19)
        })),
        ("sum", vec![uniform(&[2, 3], 36)], Box::new(|t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        })),
        ("mse", vec![uniform(&[4, 3], 37), uniform(&[4, 3], 38)], Box::new(|t, v| t.mse(v[0], v[1]))),
        ("cross_entropy", vec![uniform(&[4, 5], 39).map(|x| 2.0 * x)], Box::new(|t, v| {
            t.cross_entropy(v[0], &[0, 3, 4, 1])
        })),
        ("dropout", vec![uniform(&[4, 6], 40)], Box::new(|t, v| {
            let y = t.dropout(v[0], 0.3)?;
            project(t, y, 20)
        })),
        ("replace_row", vec![uniform(&[2, 5, 3], 41), uniform(&[3], 42)], Box::new(|t, v| {
            let y = t.replace_row(v[0], 2, v[1])?;
            project(t, y, 21)
        })),
    ]
}

/// Every primitive op; each result is named `op/inputK`.
pub fn ops() -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (name, inputs, f) in op_cases() {
        let reports = check_inputs(&inputs, DEFAULT_STEP, |tape, vars| f(tape, vars))?;
        out.extend(reports.into_iter().map(|mut r| {
            r.name = format!("{name}/{}", r.name);
            r
        }));
    }
    Ok(out)
}

fn toy_patches(n: usize, seed: u64) -> Vec<Patch> {
    (0..n)
        .map(|i| Patch {
            values: uniform(&[9, 9, 12], seed + i as u64).cast(),
            center_row: 4,
            center_col: 4,
            label: Some((i % 3) as u16 + 1),
        })
        .collect()
}

/// Embedding → encoder → head under cross-entropy, every parameter tensor.
pub fn classifier_path(per_param: usize) -> Result<Vec<GradCheck>> {
    let mut store = ParamStore::<f64>::new();
    let model = Mct::new(&mut store, &toy_model(3), &mut rng(11))?;
    let x = mct::data::stack_patches::<f64>(&toy_patches(3, 100))?;
    check_params(&mut store, DEFAULT_STEP, Some(per_param), 5, |tape, store| {
        let xv = tape.input(x.clone());
        model.loss(tape, store, xv, &[0, 1, 2])
    })
}

/// Embedding → center mask → encoder/decoder → reconstruction head under MSE.
pub fn pretrain_path(per_param: usize) -> Result<Vec<GradCheck>> {
    let mut store = ParamStore::<f64>::new();
    let mut cfg = PretrainConfig::from_model(&toy_model(3));
    cfg.recon_hidden = 8;
    let model = PretrainModel::new(&mut store, &cfg, &mut rng(12))?;
    let patches = toy_patches(3, 200);
    check_params(&mut store, DEFAULT_STEP, Some(per_param), 6, |tape, store| {
        model.loss(tape, store, &patches)
    })
}
