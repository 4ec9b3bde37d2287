//! Parameterised layers built on the tape primitives.

use rand::Rng;

use crate::autograd::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{init, BufferId, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            init::xavier_uniform(&[din, dout], din, dout, rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![dout]))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            din,
            dout,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![d]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![d]))?,
            eps: 1e-5,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layernorm(x, g, b, T::of(self.eps))
    }
}

/// Batch normalisation over `N×C×…` with running statistics kept as store buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm3d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    /// Scalar count of batches folded into the running statistics.
    pub tracked: BufferId,
    pub momentum: f64,
    pub eps: f64,
    name: String,
}

impl BatchNorm3d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm3d {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![channels]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]))?,
            running_mean: store
                .add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels]))?,
            running_var: store
                .add_buffer(format!("{name}.running_var"), Tensor::ones(vec![channels]))?,
            tracked: store.add_buffer(format!("{name}.tracked"), Tensor::zeros(vec![1]))?,
            momentum: 0.1,
            eps: 1e-5,
            name: name.to_string(),
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let eps = T::of(self.eps);
        match tape.mode() {
            Mode::Train => {
                let (y, mean, var) = tape.batchnorm_train(x, g, b, eps)?;
                let m = T::of(self.momentum);
                let keep = T::one() - m;
                let blend = |old: &Tensor<T>, new: &[T]| {
                    let data = old.data().iter().zip(new).map(|(&o, &n)| keep * o + m * n).collect();
                    Tensor::new(old.shape().to_vec(), data)
                };
                let rm = blend(store.buffer(self.running_mean), &mean)?;
                let rv = blend(store.buffer(self.running_var), &var)?;
                let count = store.buffer(self.tracked).item() + T::one();
                tape.queue_buffer_update(self.running_mean, rm);
                tape.queue_buffer_update(self.running_var, rv);
                tape.queue_buffer_update(self.tracked, Tensor::scalar(count));
                Ok(y)
            }
            Mode::Eval => {
                if store.buffer(self.tracked).item() <= T::zero() {
                    return Err(Error::UninitializedStats(self.name.clone()));
                }
                let rm = store.buffer(self.running_mean).data().to_vec();
                let rv = store.buffer(self.running_var).data().to_vec();
                tape.batchnorm_eval(x, g, b, &rm, &rv, eps)
            }
        }
    }
}

/// Grouped valid 3D convolution layer.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub groups: usize,
    pub stride: [usize; 3],
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        groups: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::Group(format!(
                "channels in={cin} out={cout} not divisible by groups={groups}"
            )));
        }
        let fan_in = cin / groups * kernel.iter().product::<usize>();
        let shape = [cout, cin / groups, kernel[0], kernel[1], kernel[2]];
        Ok(Conv3d {
            weight: store.add(format!("{name}.weight"), init::kaiming_uniform(&shape, fan_in, rng))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]))?,
            groups,
            stride,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv3d(x, w, b, self.groups, self.stride)
    }
}

/// Three linear layers with GELU between them.
#[derive(Clone, Debug)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
}

impl Mlp3 {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        hidden: usize,
        dout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Mlp3 {
            layers: [
                Linear::new(store, &format!("{name}.fc1"), din, hidden, true, rng)?,
                Linear::new(store, &format!("{name}.fc2"), hidden, hidden, true, rng)?,
                Linear::new(store, &format!("{name}.fc3"), hidden, dout, true, rng)?,
            ],
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.layers[0].forward(tape, store, x)?;
        let h = tape.gelu(h)?;
        let h = self.layers[1].forward(tape, store, h)?;
        let h = tape.gelu(h)?;
        self.layers[2].forward(tape, store, h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.weight).chain(l.bias))
            .collect()
    }
}
