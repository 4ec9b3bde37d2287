mod common;

use common::{rng, toy_model, uniform, uniform32};
use mct::autograd::{DropoutKey, Mode, Tape};
use mct::data::synthetic::{generate, SyntheticConfig};
use mct::data::{extract_patch, normalize_bands, HsiCube, Patch, PretrainStream};
use mct::mce::MceConfig;
use mct::model::{Mct, MctConfig};
use mct::optim::Adam;
use mct::train::{pretrain, Schedule};
use mct::pretrain::{
    center_leakage, mask_center, transfer_weights, PretrainConfig, PretrainModel, TransferScope,
    DECODER_DEPTH,
};
use mct::{Error, ParamStore, Tensor};

fn toy_pretrain() -> PretrainConfig {
    let mut cfg = PretrainConfig::from_model(&toy_model(3));
    cfg.recon_hidden = 16;
    cfg
}

fn random_patches(n: usize, seed: u64) -> Vec<Patch> {
    (0..n)
        .map(|i| Patch {
            values: uniform32(&[9, 9, 12], seed + i as u64),
            center_row: 4,
            center_col: 4,
            label: None,
        })
        .collect()
}

/// Populates batchnorm running statistics with one train-mode pass.
fn warm<T: mct::Real>(model: &PretrainModel, store: &mut ParamStore<T>, patches: &[Patch]) {
    let mut tape = Tape::new(Mode::Train);
    model.loss(&mut tape, store, patches).unwrap();
    tape.commit_buffers(store);
}

fn rows(t: &Tensor<f32>, n: usize) -> Vec<&[f32]> {
    t.data().chunks(t.numel() / n).collect()
}

#[test]
fn mask_center_overwrites_only_the_center() {
    let mut store = ParamStore::<f32>::new();
    let model = PretrainModel::new(&mut store, &toy_pretrain(), &mut rng(1)).unwrap();
    warm(&model, &mut store, &random_patches(2, 10));
    let (x, _) = model.batch_tensors::<f32>(&random_patches(2, 10)).unwrap();
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.input(x);
    let seq = model.mce.forward(&mut tape, &store, x).unwrap();
    let v_l = tape.param(&store, model.cmpp.mask_token);
    let masked = mask_center(&mut tape, &seq, v_l).unwrap();

    assert_eq!(tape.shape(masked.tokens), tape.shape(seq.tokens));
    assert_eq!(masked.center_index, 12);
    let before = tape.value(seq.tokens);
    let after = tape.value(masked.tokens);
    let mask = store.param(model.cmpp.mask_token).value.data();
    for n in 0..2 {
        for t in 0..25 {
            let off = (n * 25 + t) * 16;
            let got = &after.data()[off..off + 16];
            if t == 12 {
                assert_eq!(got, mask);
            } else {
                assert_eq!(got, &before.data()[off..off + 16]);
            }
        }
    }
}

#[test]
fn reconstruction_shape_and_mask_gradient() {
    let mut store = ParamStore::<f64>::new();
    let model = PretrainModel::new(&mut store, &toy_pretrain(), &mut rng(2)).unwrap();
    assert_eq!(model.cmpp.decoder.blocks.len(), DECODER_DEPTH);
    let patches = random_patches(3, 20);
    let mut tape = Tape::new(Mode::Train);
    let loss = model.loss(&mut tape, &store, &patches).unwrap();
    assert!(tape.value(loss).item() >= 0.0);
    tape.backward(loss, &mut store).unwrap();
    let g = &store.param(model.cmpp.mask_token).grad;
    assert!(g.data().iter().map(|v| v * v).sum::<f64>() > 0.0);

    warm(&model, &mut store, &patches);
    let out = model.predict(&store, &patches).unwrap();
    assert_eq!(out.shape(), &[3, 12]);
}

#[test]
fn constant_path_returns_head_bias() {
    let mut store = ParamStore::<f64>::new();
    let model = PretrainModel::new(&mut store, &toy_pretrain(), &mut rng(3)).unwrap();
    let bias = uniform(&[12], 30);
    for p in store.params_mut() {
        if p.name.starts_with("cmpp.decoder.") || p.name.starts_with("cmpp.recon.") {
            p.value.fill(0.0);
        }
    }
    store.get_mut("cmpp.recon.fc3.bias").unwrap().value = bias.clone();
    warm(&model, &mut store, &random_patches(2, 31));
    let out = model.predict(&store, &random_patches(2, 31)).unwrap();
    for r in rows(&out.cast(), 2) {
        assert_eq!(r, bias.cast::<f32>().data());
    }
}

#[test]
fn reconstruction_ignores_prior_center_token() {
    let mut store = ParamStore::<f64>::new();
    let model = PretrainModel::new(&mut store, &toy_pretrain(), &mut rng(4)).unwrap();
    warm(&model, &mut store, &random_patches(2, 40));
    let (x, _) = model.batch_tensors::<f64>(&random_patches(2, 40)).unwrap();
    let run = |replacement: Option<Tensor<f64>>| {
        let mut tape = Tape::new(Mode::Eval);
        let xv = tape.input(x.clone());
        let mut seq = model.mce.forward(&mut tape, &store, xv).unwrap();
        if let Some(r) = replacement {
            let r = tape.input(r);
            seq.tokens = tape.replace_row(seq.tokens, seq.center_index, r).unwrap();
        }
        let v_l = tape.param(&store, model.cmpp.mask_token);
        let masked = mask_center(&mut tape, &seq, v_l).unwrap();
        let out = model.reconstruct(&mut tape, &store, &masked).unwrap();
        tape.value(out).clone()
    };
    let base = run(None);
    assert_eq!(run(Some(uniform(&[16], 41).map(|v| 100.0 * v))), base);
    assert_eq!(run(Some(Tensor::zeros(vec![16]))), base);
}

#[test]
fn center_leakage_is_measured() {
    let mut store = ParamStore::<f64>::new();
    let model = PretrainModel::new(&mut store, &toy_pretrain(), &mut rng(5)).unwrap();
    let patches = random_patches(4, 50);
    warm(&model, &mut store, &patches);
    let leak = center_leakage(&model, &store, &patches, 1.0).unwrap();
    assert!(leak > 0.0, "conv receptive fields carry the center pixel");

    let mut cfg = toy_pretrain();
    cfg.zero_center = true;
    let mut store = ParamStore::<f64>::new();
    let model = PretrainModel::new(&mut store, &cfg, &mut rng(5)).unwrap();
    warm(&model, &mut store, &patches);
    assert_eq!(center_leakage(&model, &store, &patches, 1.0).unwrap(), 0.0);
    let (x, target) = model.batch_tensors::<f64>(&patches).unwrap();
    assert!(x.data()[(4 * 9 + 4) * 12..(4 * 9 + 5) * 12].iter().all(|&v| v == 0.0));
    assert!(target.data().iter().any(|&v| v != 0.0));
}

fn constant_cube(h: usize, w: usize, spectrum: &[f32]) -> HsiCube {
    let values = (0..h * w).flat_map(|_| spectrum.iter().copied()).collect();
    HsiCube::new("constant", h, w, spectrum.len(), values).unwrap()
}

#[test]
fn constant_scene_is_learned() {
    let spectrum: Vec<f32> = uniform32(&[12], 60).data().to_vec();
    let cube = constant_cube(12, 12, &spectrum);
    let mut store = ParamStore::<f32>::new();
    let model = PretrainModel::new(&mut store, &toy_pretrain(), &mut rng(6)).unwrap();
    let mut opt = Adam::new(5e-3, 0.0);
    let stream = PretrainStream::new(&cube, 9, 8, 200, 0).unwrap();
    let mut last = f64::INFINITY;
    for (step, batch) in stream.epoch(0).enumerate() {
        last = model
            .step(&mut store, &mut opt, 5e-3, &batch.unwrap(), DropoutKey { seed: 0, step: step as u64 })
            .unwrap();
        assert!(last >= 0.0);
        if last < 1e-4 {
            break;
        }
    }
    assert!(last < 1e-4, "loss after 200 steps: {last}");
}

fn synthetic_cube() -> HsiCube {
    let scene = generate(&SyntheticConfig {
        height: 32,
        width: 32,
        bands: 12,
        classes: 3,
        region: 8,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    normalize_bands(&scene.cube).unwrap()
}

/// Every third pixel of the scene, offset from the origin.
fn probe(cube: &HsiCube) -> Vec<Patch> {
    (0..cube.height)
        .step_by(3)
        .flat_map(|r| (1..cube.width).step_by(3).map(move |c| (r, c)))
        .map(|(r, c)| extract_patch(cube, r, c, 9).unwrap())
        .collect()
}

#[test]
fn pretraining_beats_band_mean_and_decreases() {
    let cube = synthetic_cube();
    let held = probe(&cube);
    let mut store = ParamStore::<f32>::new();
    let model = PretrainModel::new(&mut store, &toy_pretrain(), &mut rng(7)).unwrap();
    let schedule = Schedule {
        epochs: 10,
        batch: 16,
        lr: 2e-3,
        weight_decay: 0.0,
        batches_per_epoch: 20,
    };
    let mut opt = Adam::new(schedule.lr, schedule.weight_decay);
    // loss on the fixed probe set after every 20 steps
    let mut curve = Vec::new();
    let epoch_means = pretrain(&model, &mut store, &mut opt, &cube, &schedule, 1, |s, store| {
        if s.step % 20 == 19 {
            curve.push(model.eval_loss(store, &held).unwrap());
        }
    })
    .unwrap();
    assert_eq!(curve.len(), 10);
    assert!(epoch_means.last() < epoch_means.first());

    // band means of the normalized scene are zero up to rounding
    let b = cube.bands;
    let mean: Vec<f64> = (0..b)
        .map(|k| cube.values.data().iter().skip(k).step_by(b).map(|&v| v as f64).sum::<f64>() / cube.pixels() as f64)
        .collect();
    let baseline = held
        .iter()
        .flat_map(|p| p.center_spectrum().iter().zip(&mean).map(|(&v, m)| (v as f64 - m).powi(2)))
        .sum::<f64>()
        / (held.len() * b) as f64;
    let trained = *curve.last().unwrap();
    assert!(trained < baseline, "trained {trained} vs band-mean {baseline}");

    // minibatch noise allows small rises; anything beyond 1% of the starting
    // loss counts as an increase
    let slack = 0.01 * curve[0];
    for w in curve.windows(2) {
        assert!(w[1] <= w[0] + slack, "probe loss rose: {curve:?}");
    }
    assert!(trained < 0.75 * curve[0]);
}

fn classifier(cfg: &MctConfig, seed: u64) -> (Mct, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let model = Mct::new(&mut store, cfg, &mut rng(seed)).unwrap();
    (model, store)
}

#[test]
fn full_transfer_copies_encoder_side_only() {
    let mut source = ParamStore::<f32>::new();
    PretrainModel::new(&mut source, &toy_pretrain(), &mut rng(8)).unwrap();
    // make buffers distinguishable from their defaults
    for i in 0..source.buffers().len() {
        let id = source.buffer_id(&source.buffers()[i].name.clone()).unwrap();
        let shape = source.buffer(id).shape().to_vec();
        *source.buffer_mut(id) = uniform32(&shape, 80 + i as u64);
    }
    let (_, mut target) = classifier(&toy_model(3), 9);
    let fresh = target.clone();
    let report = transfer_weights(&source, &mut target, TransferScope::Full).unwrap();
    assert!(report.skipped.is_empty() && report.missing.is_empty());

    for p in target.params() {
        if p.name.starts_with("mce.") || p.name.starts_with("encoder.") {
            assert_eq!(p.value, source.get(&p.name).unwrap().value, "{}", p.name);
            assert!(report.copied.contains(&p.name));
        } else {
            assert!(p.name.starts_with("head."));
            assert_eq!(p.value, fresh.get(&p.name).unwrap().value);
            // fresh head weights match nothing in the checkpoint
            if p.name.ends_with("weight") {
                assert!(source.params().iter().all(|s| s.value != p.value), "{}", p.name);
            }
        }
    }
    for b in target.buffers() {
        assert_eq!(Some(&b.value), source.buffer_by_name(&b.name));
    }
    assert!(report.copied.iter().all(|n| !n.starts_with("cmpp.")));
}

#[test]
fn partial_transfer_skips_iie() {
    let mut source = ParamStore::<f32>::new();
    PretrainModel::new(&mut source, &toy_pretrain(), &mut rng(10)).unwrap();
    let spce_only = MctConfig {
        mce: MceConfig {
            iie_enabled: false,
            ..toy_model(3).mce
        },
        ..toy_model(3)
    };
    let (_, mut target) = classifier(&spce_only, 11);

    match transfer_weights(&source, &mut target.clone(), TransferScope::Full) {
        Err(Error::Transfer { missing, unexpected }) => {
            assert!(missing.is_empty());
            assert_eq!(unexpected, ["mce.iie.bias", "mce.iie.weight"]);
        }
        other => panic!("expected a transfer error, got {other:?}"),
    }

    let report = transfer_weights(&source, &mut target, TransferScope::Partial).unwrap();
    assert_eq!(report.skipped, ["mce.iie.bias", "mce.iie.weight"]);
    assert!(report.missing.is_empty());
    assert_eq!(
        target.get("mce.spce.proj.weight").unwrap().value,
        source.get("mce.spce.proj.weight").unwrap().value
    );
}

#[test]
fn full_transfer_reports_missing_names() {
    let mut cfg = toy_pretrain();
    cfg.mce.iie_enabled = false;
    let mut source = ParamStore::<f32>::new();
    PretrainModel::new(&mut source, &cfg, &mut rng(12)).unwrap();
    let (_, mut target) = classifier(&toy_model(3), 13);
    let before = target.clone();
    match transfer_weights(&source, &mut target, TransferScope::Full) {
        Err(Error::Transfer { missing, .. }) => assert_eq!(missing, ["mce.iie.bias", "mce.iie.weight"]),
        other => panic!("expected a transfer error, got {other:?}"),
    }
    // nothing was written
    for (a, b) in target.params().iter().zip(before.params()) {
        assert_eq!(a.value, b.value);
    }
    let report = transfer_weights(&source, &mut target, TransferScope::Partial).unwrap();
    assert_eq!(report.missing, ["mce.iie.bias", "mce.iie.weight"]);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let mut source = ParamStore::<f32>::new();
    PretrainModel::new(&mut source, &toy_pretrain(), &mut rng(14)).unwrap();
    let wider = MctConfig {
        mce: MceConfig { c2: 4, ..toy_model(3).mce },
        ..toy_model(3)
    };
    let (_, mut target) = classifier(&wider, 15);
    assert!(matches!(
        transfer_weights(&source, &mut target, TransferScope::Partial),
        Err(Error::Dimension { .. })
    ));
}
