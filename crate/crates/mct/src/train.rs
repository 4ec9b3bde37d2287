//! Training and inference loops.
//!
//! Every source of randomness is keyed: fine-tuning shuffles with
//! `(seed, epoch)`, dropout masks with `(seed, step)`, pretraining batches
//! with `(seed, epoch)`. Kernels reduce in a fixed order, so a run is a pure
//! function of its configuration and seed regardless of thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{DropoutKey, Mode, Tape};
use crate::data::{extract_patch, stack_patches, GroundTruth, HsiCube, Patch, PretrainStream};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::Mct;
use crate::optim::{cosine_lr, Adam};
use crate::params::ParamStore;
use crate::pretrain::PretrainModel;
use crate::tensor::Real;
use crate::transformer::argmax;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Batches per pretraining epoch; ignored when fine-tuning.
    #[serde(default = "default_batches_per_epoch")]
    pub batches_per_epoch: usize,
}

fn default_batches_per_epoch() -> usize {
    16
}

impl Schedule {
    pub fn finetune_default() -> Self {
        Schedule {
            epochs: 300,
            batch: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            batches_per_epoch: default_batches_per_epoch(),
        }
    }

    pub fn pretrain_default() -> Self {
        Schedule {
            epochs: 100,
            ..Self::finetune_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config("schedule needs positive epochs, batch and batches".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be > 0 and weight decay ≥ 0".into()));
        }
        Ok(())
    }
}

/// Progress of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Extracts labeled training patches. Labels stay 1-based on the patch.
pub fn labeled_patches(
    cube: &HsiCube,
    gt: &GroundTruth,
    positions: &[(usize, usize)],
    w: usize,
) -> Result<Vec<Patch>> {
    positions
        .iter()
        .map(|&(r, c)| {
            let label = gt.label(r, c);
            if label == 0 {
                return Err(Error::Data(format!("training pixel ({r},{c}) is unlabeled")));
            }
            Ok(extract_patch(cube, r, c, w)?.with_label(label))
        })
        .collect()
}

/// One supervised step; returns the loss before the update.
pub fn finetune_step<T: Real>(
    model: &Mct,
    store: &mut ParamStore<T>,
    opt: &mut Adam,
    lr: f64,
    batch: &[Patch],
    dropout: DropoutKey,
) -> Result<f64> {
    let labels = batch
        .iter()
        .map(|p| {
            p.label
                .map(|l| l as usize - 1)
                .ok_or_else(|| Error::Data("training patch without label".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new(Mode::Train).with_dropout(dropout);
    let x = tape.input(stack_patches::<T>(batch)?);
    let loss = model.loss(&mut tape, store, x, &labels)?;
    store.zero_grad();
    tape.backward(loss, store)?;
    opt.step(store, lr);
    tape.commit_buffers(store);
    Ok(tape.value(loss).item().as_f64())
}

/// Supervised training with shuffled mini-batches and a cosine schedule.
/// `on_step` sees every step; the per-step losses are returned.
pub fn finetune<T: Real>(
    model: &Mct,
    store: &mut ParamStore<T>,
    opt: &mut Adam,
    patches: &[Patch],
    schedule: &Schedule,
    seed: u64,
    mut on_step: impl FnMut(&StepInfo, &ParamStore<T>),
) -> Result<Vec<f64>> {
    schedule.validate()?;
    if patches.is_empty() {
        return Err(Error::Data("no training patches".into()));
    }
    let per_epoch = patches.len().div_ceil(schedule.batch);
    let total = (schedule.epochs * per_epoch) as u64;
    let mut losses = Vec::with_capacity(total as usize);
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..patches.len()).collect();
    for epoch in 0..schedule.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch) {
            let batch: Vec<Patch> = chunk.iter().map(|&i| patches[i].clone()).collect();
            let lr = cosine_lr(schedule.lr, step, total);
            let loss = finetune_step(model, store, opt, lr, &batch, DropoutKey { seed, step })?;
            losses.push(loss);
            on_step(&StepInfo { epoch, step, lr, loss }, store);
            step += 1;
        }
    }
    Ok(losses)
}

/// Center-mask pretraining over label-free batches drawn from the whole scene.
/// Returns the mean loss of every epoch.
pub fn pretrain<T: Real>(
    model: &PretrainModel,
    store: &mut ParamStore<T>,
    opt: &mut Adam,
    cube: &HsiCube,
    schedule: &Schedule,
    seed: u64,
    mut on_step: impl FnMut(&StepInfo, &ParamStore<T>),
) -> Result<Vec<f64>> {
    schedule.validate()?;
    let stream = PretrainStream::new(
        cube,
        model.cfg.mce.patch,
        schedule.batch,
        schedule.batches_per_epoch,
        seed,
    )?;
    let total = (schedule.epochs * schedule.batches_per_epoch) as u64;
    let mut step = 0u64;
    let mut epoch_losses = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let mut sum = 0.0;
        for batch in stream.epoch(epoch as u64) {
            let lr = cosine_lr(schedule.lr, step, total);
            let loss = model.step(store, opt, lr, &batch?, DropoutKey { seed, step })?;
            on_step(&StepInfo { epoch, step, lr, loss }, store);
            sum += loss;
            step += 1;
        }
        epoch_losses.push(sum / schedule.batches_per_epoch as f64);
    }
    Ok(epoch_losses)
}

/// Eval-mode class predictions (1-based) for patches, `batch` at a time.
pub fn predict_patches<T: Real>(
    model: &Mct,
    store: &ParamStore<T>,
    patches: &[Patch],
    batch: usize,
) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(batch.max(1)) {
        let mut tape = Tape::new(Mode::Eval);
        let x = tape.input(stack_patches::<T>(chunk)?);
        let logits = model.logits(&mut tape, store, x)?;
        let c = model.cfg.classes;
        out.extend(
            tape.value(logits)
                .data()
                .chunks(c)
                .map(|row| argmax(row) as u16 + 1),
        );
    }
    Ok(out)
}

/// Predictions at pixel positions, extracting patches lazily per batch.
pub fn predict_positions<T: Real>(
    model: &Mct,
    store: &ParamStore<T>,
    cube: &HsiCube,
    positions: &[(usize, usize)],
    batch: usize,
) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(positions.len());
    for chunk in positions.chunks(batch.max(1)) {
        let patches = chunk
            .iter()
            .map(|&(r, c)| extract_patch(cube, r, c, model.cfg.mce.patch))
            .collect::<Result<Vec<_>>>()?;
        out.extend(predict_patches(model, store, &patches, patches.len())?);
    }
    Ok(out)
}

/// Confusion matrix of predictions at `positions` against `gt`.
pub fn evaluate<T: Real>(
    model: &Mct,
    store: &ParamStore<T>,
    cube: &HsiCube,
    gt: &GroundTruth,
    positions: &[(usize, usize)],
    batch: usize,
) -> Result<ConfusionMatrix> {
    let pred = predict_positions(model, store, cube, positions, batch)?;
    let truth: Vec<u16> = positions.iter().map(|&(r, c)| gt.label(r, c)).collect();
    let mut cm = ConfusionMatrix::new(model.cfg.classes);
    cm.accumulate(&truth, &pred)?;
    Ok(cm)
}

/// Row-major predictions for every pixel of the scene.
pub fn predict_scene<T: Real>(
    model: &Mct,
    store: &ParamStore<T>,
    cube: &HsiCube,
    batch: usize,
) -> Result<Vec<u16>> {
    let positions: Vec<(usize, usize)> = (0..cube.height)
        .flat_map(|r| (0..cube.width).map(move |c| (r, c)))
        .collect();
    predict_positions(model, store, cube, &positions, batch)
}
