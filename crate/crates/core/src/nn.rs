//! Fully connected stacks used by every network in the model.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Selu,
    Identity,
}

/// Affine layer `y = act(x W + b)`; `w` is `in x out`, `b` is `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

impl Dense {
    /// LeCun-normal weights (the SELU self-normalizing init), zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let std = (1.0 / inputs.max(1) as f64).sqrt();
        let w = Tensor::from_fn(inputs, outputs, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        });
        Self { w, b: Tensor::zeros(1, outputs), activation }
    }

    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Tape handles for the weights of one [`Mlp`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
    activations: Vec<Activation>,
}

impl MlpVars {
    pub fn leaves(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for (&(w, b), act) in self.layers.iter().zip(&self.activations) {
            x = tape.affine(x, w, b)?;
            if *act == Activation::Selu {
                x = tape.selu(x);
            }
        }
        Ok(x)
    }
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last layer is linear.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                Dense::init(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, Dense::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b])
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        let layers = self.layers.iter().map(|l| (tape.param(l.w.clone()), tape.param(l.b.clone()))).collect();
        MlpVars { layers, activations: self.layers.iter().map(|l| l.activation).collect() }
    }

    /// Tape-free evaluation.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.layers {
            let mut out = h.matmul(&l.w)?;
            let cols = out.cols();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += l.b.data()[i % cols];
            }
            if l.activation == Activation::Selu {
                out = out.map(crate::tensor::selu);
            }
            h = out;
        }
        Ok(h)
    }

    /// Bias-only shift of the final layer, used to centre head outputs.
    pub fn last_bias_mut(&mut self) -> Option<&mut Tensor> {
        self.layers.last_mut().map(|l| &mut l.b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_direct_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::init(&[4, 8, 8, 3], Activation::Selu, &mut rng);
        let x = Tensor::from_fn(5, 4, |r, c| (r as f64 - 2.0) * 0.3 + c as f64 * 0.1);
        let direct = mlp.apply(&x).unwrap();
        let mut tape = Tape::new();
        let vars = mlp.register(&mut tape);
        let xv = tape.constant(x);
        let y = vars.forward(&mut tape, xv).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(mlp.layers.last().unwrap().activation, Activation::Identity);
        assert_eq!((mlp.inputs(), mlp.outputs()), (4, 3));
    }
}
