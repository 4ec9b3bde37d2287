//! Center-mask pretraining.
//!
//! The embedded token of the center pixel is overwritten by a learnable
//! vector, the sequence runs through the encoder and a two-block decoder, and
//! the decoded center token is mapped back to the center pixel's spectrum
//! under a mean-squared-error objective. Afterwards the embedding and encoder
//! weights initialise a classifier.
//!
//! Non-center tokens still see the center pixel through the conv receptive
//! field; [`PretrainConfig::zero_center`] removes the raw center spectrum
//! from the input to close that path, and [`center_leakage`] measures it.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{DropoutKey, Mode, Tape, Var};
use crate::data::{stack_patches, Patch};
use crate::error::{Error, Result};
use crate::mce::{Mce, MceConfig, TokenSequence};
use crate::model::{MctConfig, EMBED_PREFIX, ENCODER_PREFIX};
use crate::nn::Mlp3;
use crate::optim::Adam;
use crate::params::{init, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};
use crate::transformer::{Encoder, EncoderConfig};

pub const DECODER_DEPTH: usize = 2;
pub const CMPP_PREFIX: &str = "cmpp";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub mce: MceConfig,
    pub encoder: EncoderConfig,
    /// Hidden width of the reconstruction MLP.
    pub recon_hidden: usize,
    /// Zero the raw center pixel before embedding.
    #[serde(default)]
    pub zero_center: bool,
    #[serde(default = "default_mask_std")]
    pub mask_init_std: f64,
}

fn default_mask_std() -> f64 {
    0.02
}

impl PretrainConfig {
    pub fn from_model(cfg: &MctConfig) -> Self {
        PretrainConfig {
            mce: cfg.mce.clone(),
            encoder: cfg.encoder.clone(),
            recon_hidden: cfg.head_hidden,
            zero_center: false,
            mask_init_std: default_mask_std(),
        }
    }

    pub fn decoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            depth: DECODER_DEPTH,
            ..self.encoder.clone()
        }
    }
}

/// Pretraining-only parameters: mask vector, decoder and reconstruction head.
#[derive(Clone, Debug)]
pub struct Cmpp {
    pub mask_token: ParamId,
    pub decoder: Encoder,
    pub recon: Mlp3,
}

impl Cmpp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &PretrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.encoder.d_model;
        Ok(Cmpp {
            mask_token: store.add(
                format!("{CMPP_PREFIX}.mask_token"),
                init::normal(&[d], cfg.mask_init_std, rng),
            )?,
            decoder: Encoder::new(store, &format!("{CMPP_PREFIX}.decoder"), &cfg.decoder_config(), rng)?,
            recon: Mlp3::new(store, &format!("{CMPP_PREFIX}.recon"), d, cfg.recon_hidden, cfg.mce.bands, rng)?,
        })
    }
}

/// Overwrites the center token of every sequence with `v_l`, keeping order and length.
pub fn mask_center<T: Real>(
    tape: &mut Tape<T>,
    tokens: &TokenSequence,
    v_l: Var,
) -> Result<TokenSequence> {
    let masked = tape.replace_row(tokens.tokens, tokens.center_index, v_l)?;
    Ok(TokenSequence {
        tokens: masked,
        ..*tokens
    })
}

#[derive(Clone, Debug)]
pub struct PretrainModel {
    pub cfg: PretrainConfig,
    pub mce: Mce,
    pub encoder: Encoder,
    pub cmpp: Cmpp,
}

impl PretrainModel {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &PretrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.mce.validate()?;
        cfg.encoder.validate()?;
        if cfg.mce.d_model != cfg.encoder.d_model {
            return Err(Error::Config("embedding and encoder widths differ".into()));
        }
        Ok(PretrainModel {
            cfg: cfg.clone(),
            mce: Mce::new(store, EMBED_PREFIX, &cfg.mce, rng)?,
            encoder: Encoder::new(store, ENCODER_PREFIX, &cfg.encoder, rng)?,
            cmpp: Cmpp::new(store, cfg, rng)?,
        })
    }

    /// Embeds `x` and masks the center token.
    pub fn embed_masked<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<TokenSequence> {
        let seq = self.mce.forward(tape, store, x)?;
        let v_l = tape.param(store, self.cmpp.mask_token);
        mask_center(tape, &seq, v_l)
    }

    /// Encoder → decoder → center token → reconstruction head: `N × B`.
    pub fn reconstruct<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        masked: &TokenSequence,
    ) -> Result<Var> {
        let h = self.encoder.forward(tape, store, masked.tokens)?;
        let h = self.cmpp.decoder.forward(tape, store, h)?;
        let n = tape.shape(h)[0];
        let d = tape.shape(h)[2];
        let c = tape.narrow(h, 1, masked.center_index, 1)?;
        let c = tape.reshape(c, &[n, d])?;
        self.cmpp.recon.forward(tape, store, c)
    }

    /// Input tensor and center-spectrum target for a batch.
    pub fn batch_tensors<T: Real>(&self, patches: &[Patch]) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut x = stack_patches::<T>(patches)?;
        let b = self.cfg.mce.bands;
        let target = Tensor::new(
            vec![patches.len(), b],
            patches
                .iter()
                .flat_map(|p| p.center_spectrum().iter().map(|&v| T::of(v as f64)))
                .collect(),
        )?;
        if self.cfg.zero_center {
            let w = self.cfg.mce.patch;
            let h = w / 2;
            for chunk in x.data_mut().chunks_mut(w * w * b) {
                chunk[(h * w + h) * b..(h * w + h + 1) * b].fill(T::zero());
            }
        }
        Ok((x, target))
    }

    /// Reconstruction loss on a patch batch, recorded on `tape`.
    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        patches: &[Patch],
    ) -> Result<Var> {
        let (x, target) = self.batch_tensors::<T>(patches)?;
        let x = tape.input(x);
        let target = tape.input(target);
        let masked = self.embed_masked(tape, store, x)?;
        let recon = self.reconstruct(tape, store, &masked)?;
        tape.mse(recon, target)
    }

    /// One joint optimisation step over embedding, encoder and pretraining
    /// parameters. Returns the loss before the update.
    pub fn step<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        opt: &mut Adam,
        lr: f64,
        patches: &[Patch],
        dropout: DropoutKey,
    ) -> Result<f64> {
        let mut tape = Tape::new(Mode::Train).with_dropout(dropout);
        let loss = self.loss(&mut tape, store, patches)?;
        store.zero_grad();
        tape.backward(loss, store)?;
        opt.step(store, lr);
        tape.commit_buffers(store);
        Ok(tape.value(loss).item().as_f64())
    }

    /// Eval-mode reconstruction loss.
    pub fn eval_loss<T: Real>(&self, store: &ParamStore<T>, patches: &[Patch]) -> Result<f64> {
        let mut tape = Tape::new(Mode::Eval);
        let loss = self.loss(&mut tape, store, patches)?;
        Ok(tape.value(loss).item().as_f64())
    }

    /// Eval-mode reconstructions, `N × B`.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, patches: &[Patch]) -> Result<Tensor<T>> {
        let mut tape = Tape::new(Mode::Eval);
        let (x, _) = self.batch_tensors::<T>(patches)?;
        let x = tape.input(x);
        let masked = self.embed_masked(&mut tape, store, x)?;
        let r = self.reconstruct(&mut tape, store, &masked)?;
        Ok(tape.value(r).clone())
    }
}

/// Mean absolute change of the reconstruction when the raw center spectrum of
/// each patch is replaced by `delta` added to every band. Nonzero values show
/// how much center information reaches the decoder through neighbor tokens.
pub fn center_leakage<T: Real>(
    model: &PretrainModel,
    store: &ParamStore<T>,
    patches: &[Patch],
    delta: f32,
) -> Result<f64> {
    let base = model.predict(store, patches)?;
    let w = model.cfg.mce.patch;
    let b = model.cfg.mce.bands;
    let h = w / 2;
    let perturbed: Vec<Patch> = patches
        .iter()
        .map(|p| {
            let mut q = p.clone();
            for v in &mut q.values.data_mut()[(h * w + h) * b..(h * w + h + 1) * b] {
                *v += delta;
            }
            q
        })
        .collect();
    let moved = model.predict(store, &perturbed)?;
    let total: f64 = base
        .data()
        .iter()
        .zip(moved.data())
        .map(|(a, b)| (*a - *b).abs().as_f64())
        .sum();
    Ok(total / base.numel() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferScope {
    Full,
    Partial,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransferReport {
    pub copied: Vec<String>,
    /// Encoder-side source tensors with no counterpart in the target.
    pub skipped: Vec<String>,
    /// Encoder-side target tensors with no counterpart in the source (left as initialised).
    pub missing: Vec<String>,
}

fn encoder_side(name: &str) -> bool {
    name.starts_with(&format!("{EMBED_PREFIX}.")) || name.starts_with(&format!("{ENCODER_PREFIX}."))
}

/// Copies embedding and encoder tensors (parameters and batchnorm buffers) by
/// name from `source` into `target`. The classification head, mask vector,
/// decoder and reconstruction head are never copied.
///
/// `Full` requires the encoder-side name sets to match exactly; `Partial`
/// copies the intersection and reports the rest.
pub fn transfer_weights<T: Real>(
    source: &ParamStore<T>,
    target: &mut ParamStore<T>,
    scope: TransferScope,
) -> Result<TransferReport> {
    let src: BTreeSet<String> = source
        .names()
        .map(str::to_string)
        .chain(source.buffers().iter().map(|b| b.name.clone()))
        .filter(|n| encoder_side(n))
        .collect();
    let dst: BTreeSet<String> = target
        .names()
        .map(str::to_string)
        .chain(target.buffers().iter().map(|b| b.name.clone()))
        .filter(|n| encoder_side(n))
        .collect();
    let missing: Vec<String> = dst.difference(&src).cloned().collect();
    let skipped: Vec<String> = src.difference(&dst).cloned().collect();
    if scope == TransferScope::Full && (!missing.is_empty() || !skipped.is_empty()) {
        return Err(Error::Transfer {
            missing,
            unexpected: skipped,
        });
    }
    let mut copied = Vec::new();
    for name in src.intersection(&dst) {
        let (from, to) = match (source.get(name), target.id(name)) {
            (Some(p), Some(id)) => (&p.value, &mut target.param_mut(id).value),
            _ => {
                let (Some(s), Some(t)) = (source.buffer_id(name), target.buffer_id(name)) else {
                    return Err(Error::Checkpoint(format!("{name} is a parameter on one side only")));
                };
                (source.buffer(s), target.buffer_mut(t))
            }
        };
        if from.shape() != to.shape() {
            return Err(Error::Dimension {
                op: "transfer",
                lhs: from.shape().to_vec(),
                rhs: to.shape().to_vec(),
            });
        }
        *to = from.clone();
        copied.push(name.clone());
    }
    Ok(TransferReport {
        copied,
        skipped,
        missing,
    })
}
