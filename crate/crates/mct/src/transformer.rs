//! Pre-norm transformer encoder (no positional encoding), mean pooling and
//! the three-layer classification head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp3};
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub depth: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            depth: 3,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `softmax(Q Kᵀ / √d_k) V` for `[L×d]` or batched `[B×L×d]` inputs.
/// Returns `(output, attention weights)`.
pub fn scaled_dot_attention<T: Real>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let (sq, sk, sv) = (
        tape.shape(q).to_vec(),
        tape.shape(k).to_vec(),
        tape.shape(v).to_vec(),
    );
    let unbatched = sq.len() == 2;
    let lift = |s: &[usize]| -> Vec<usize> {
        if s.len() == 2 {
            vec![1, s[0], s[1]]
        } else {
            s.to_vec()
        }
    };
    let (bq, bk, bv) = (lift(&sq), lift(&sk), lift(&sv));
    if bq.len() != 3
        || bk.len() != 3
        || bv.len() != 3
        || bq[2] != bk[2]
        || bk[1] != bv[1]
        || bq[0] != bk[0]
        || bk[0] != bv[0]
    {
        return Err(Error::Dimension {
            op: "attention",
            lhs: sq,
            rhs: sk,
        });
    }
    let (q3, k3, v3) = if unbatched {
        (tape.reshape(q, &bq)?, tape.reshape(k, &bk)?, tape.reshape(v, &bv)?)
    } else {
        (q, k, v)
    };
    let kt = tape.permute(k3, &[0, 2, 1])?;
    let scores = tape.bmm(q3, kt)?;
    let scores = tape.scale(scores, T::one() / T::of(bq[2] as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let out = tape.bmm(weights, v3)?;
    if unbatched {
        let out = tape.reshape(out, &[bq[1], bv[2]])?;
        let weights = tape.reshape(weights, &[bq[1], bk[1]])?;
        Ok((out, weights))
    } else {
        Ok((out, weights))
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!("d_model {d_model} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(store, &format!("{name}.wq"), d_model, d_model, false, rng)?,
            wk: Linear::new(store, &format!("{name}.wk"), d_model, d_model, false, rng)?,
            wv: Linear::new(store, &format!("{name}.wv"), d_model, d_model, false, rng)?,
            wo: Linear::new(store, &format!("{name}.wo"), d_model, d_model, true, rng)?,
            heads,
        })
    }

    /// `x` is `N × L × d_model`. Head `i` uses columns `i·d_k..(i+1)·d_k` of the
    /// Q/K/V projections; heads are concatenated in order before `W^O`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::Rank(format!("attention input must be N×L×d, got {s:?}")));
        }
        let (n, l, d) = (s[0], s[1], s[2]);
        let (h, dk) = (self.heads, d / self.heads);
        let split = |tape: &mut Tape<T>, t: Var| -> Result<Var> {
            let t = tape.reshape(t, &[n, l, h, dk])?;
            let t = tape.permute(t, &[0, 2, 1, 3])?;
            tape.reshape(t, &[n * h, l, dk])
        };
        let q = self.wq.forward(tape, store, x)?;
        let q = split(tape, q)?;
        let k = self.wk.forward(tape, store, x)?;
        let k = split(tape, k)?;
        let v = self.wv.forward(tape, store, x)?;
        let v = split(tape, v)?;
        let (o, _) = scaled_dot_attention(tape, q, k, v)?;
        let o = tape.reshape(o, &[n, h, l, dk])?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[n, l, d])?;
        self.wo.forward(tape, store, o)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub dropout: f64,
}

impl EncoderBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_model)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.d_model, cfg.heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_model)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), cfg.d_model, cfg.d_ff, true, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), cfg.d_ff, cfg.d_model, true, rng)?,
            dropout: cfg.dropout,
        })
    }

    /// `x + MHA(LN(x))`, then `+ FFN(LN(·))` with a GELU feed-forward.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(tape, store, x)?;
        let h = self.attn.forward(tape, store, h)?;
        let h = tape.dropout(h, self.dropout)?;
        let x = tape.add(x, h)?;
        let h = self.ln2.forward(tape, store, x)?;
        let h = self.ff1.forward(tape, store, h)?;
        let h = tape.gelu(h)?;
        let h = self.ff2.forward(tape, store, h)?;
        let h = tape.dropout(h, self.dropout)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub blocks: Vec<EncoderBlock>,
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.depth)
            .map(|i| EncoderBlock::new(store, &format!("{prefix}.blocks.{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            cfg: cfg.clone(),
            blocks,
        })
    }

    /// Applies every block in order to `N × L × d_model` tokens.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        self.blocks
            .iter()
            .try_fold(x, |h, block| block.forward(tape, store, h))
    }
}

/// Mean pooling over tokens followed by a three-layer MLP.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub mlp: Mlp3,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ClassifierHead {
            mlp: Mlp3::new(store, prefix, d_model, hidden, classes, rng)?,
            classes,
        })
    }

    /// `N × L × d_model` → `N × C` logits.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        encoded: Var,
    ) -> Result<Var> {
        let pooled = mean_pool(tape, encoded)?;
        self.mlp.forward(tape, store, pooled)
    }
}

/// Mean over the token axis (second to last).
pub fn mean_pool<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let rank = tape.shape(x).len();
    if rank < 2 {
        return Err(Error::Rank("mean_pool needs at least L×d".into()));
    }
    tape.mean_axis(x, rank - 2)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.1f64, 0.2, 0.9, 0.3, 0.1, 0.9]), 2);
        assert_eq!(argmax(&[1.0f32]), 0);
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = EncoderConfig {
            d_model: 10,
            heads: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
