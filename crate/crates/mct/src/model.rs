//! The classification network: embedding → encoder → pooled MLP head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::mce::{Mce, MceConfig, TokenSequence};
use crate::params::ParamStore;
use crate::tensor::Real;
use crate::transformer::{ClassifierHead, Encoder, EncoderConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MctConfig {
    pub mce: MceConfig,
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub classes: usize,
}

impl MctConfig {
    pub fn validate(&self) -> Result<()> {
        self.mce.validate()?;
        self.encoder.validate()?;
        if self.mce.d_model != self.encoder.d_model {
            return Err(Error::Config(format!(
                "embedding width {} differs from encoder width {}",
                self.mce.d_model, self.encoder.d_model
            )));
        }
        if self.classes == 0 || self.head_hidden == 0 {
            return Err(Error::Config("classes and head width must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter-name prefixes shared by the classifier and the pretraining model.
pub const EMBED_PREFIX: &str = "mce";
pub const ENCODER_PREFIX: &str = "encoder";
pub const HEAD_PREFIX: &str = "head";

#[derive(Clone, Debug)]
pub struct Mct {
    pub cfg: MctConfig,
    pub mce: Mce,
    pub encoder: Encoder,
    pub head: ClassifierHead,
}

impl Mct {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &MctConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Mct {
            cfg: cfg.clone(),
            mce: Mce::new(store, EMBED_PREFIX, &cfg.mce, rng)?,
            encoder: Encoder::new(store, ENCODER_PREFIX, &cfg.encoder, rng)?,
            head: ClassifierHead::new(
                store,
                HEAD_PREFIX,
                cfg.encoder.d_model,
                cfg.head_hidden,
                cfg.classes,
                rng,
            )?,
        })
    }

    pub fn embed<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<TokenSequence> {
        self.mce.forward(tape, store, x)
    }

    /// `N × w × w × B` patches → `N × C` logits.
    pub fn logits<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let seq = self.embed(tape, store, x)?;
        let encoded = self.encoder.forward(tape, store, seq.tokens)?;
        self.head.forward(tape, store, encoded)
    }

    /// Mean cross-entropy against 0-based class indices.
    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        labels: &[usize],
    ) -> Result<Var> {
        let logits = self.logits(tape, store, x)?;
        tape.cross_entropy(logits, labels)
    }
}
