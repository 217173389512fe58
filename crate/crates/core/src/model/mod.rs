//! The Full Encoder: Encoder0/Encoder feature extractors, the progressive
//! patching decoder, the per-group losses, and the VAE/β/supervised/linear
//! degenerations selected through [`ModelConfig`].

mod config;
mod forward;
mod loss;
mod params;

pub use config::{weight_multiplier, ModelConfig, PatchRule, ReconReduction};
pub use forward::{decode_levels, forward_full, patch, reparameterize, ForwardOutputs, GroupVars};
pub use loss::{compute_losses, Losses};
pub use params::{FeParams, ParamGroup};

use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::tensor::{Tape, Tensor};

/// Rows per tape during evaluation.
const EVAL_CHUNK: usize = 500;

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FeModel {
    pub config: ModelConfig,
    pub params: FeParams,
}

/// Deterministic (eval-mode) outputs over a whole matrix of observations.
#[derive(Clone, Debug)]
pub struct EvalOutputs {
    /// Latent responses: the first latent block followed by the Encoder means.
    pub latents: Tensor,
    pub x_hat: Vec<Tensor>,
    pub p1: Vec<Tensor>,
    pub p2: Vec<Tensor>,
    pub m: Vec<Tensor>,
}

impl FeModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = FeParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Eval-mode pass (no dropout, `z = mu`) in fixed-size chunks.
    pub fn evaluate(&self, x: &Tensor) -> Result<EvalOutputs> {
        let mut parts: Vec<EvalOutputs> = Vec::new();
        let mut start = 0;
        while start < x.rows() {
            let len = EVAL_CHUNK.min(x.rows() - start);
            parts.push(self.evaluate_chunk(&x.slice_rows(start, len))?);
            start += len;
        }
        if parts.is_empty() {
            return shape_err("cannot evaluate an empty batch");
        }
        let cat = |f: &dyn Fn(&EvalOutputs) -> &Tensor| Tensor::vcat(&parts.iter().map(f).collect::<Vec<_>>());
        let levels = |f: &dyn Fn(&EvalOutputs) -> &Vec<Tensor>| -> Result<Vec<Tensor>> {
            (0..f(&parts[0]).len()).map(|i| Tensor::vcat(&parts.iter().map(|p| &f(p)[i]).collect::<Vec<_>>())).collect()
        };
        Ok(EvalOutputs {
            latents: cat(&|p| &p.latents)?,
            x_hat: levels(&|p| &p.x_hat)?,
            p1: levels(&|p| &p.p1)?,
            p2: levels(&|p| &p.p2)?,
            m: levels(&|p| &p.m)?,
        })
    }

    fn evaluate_chunk(&self, x: &Tensor) -> Result<EvalOutputs> {
        let mut tape = Tape::new();
        let out = forward_full::<ChaCha8Rng>(&mut tape, &self.params, &self.config, x, None, None)?;
        let mut blocks: Vec<&Tensor> = Vec::new();
        if let Some(z0) = out.mu0.or(out.z0) {
            blocks.push(tape.value(z0));
        }
        if let Some(mu) = out.mu {
            blocks.push(tape.value(mu));
        }
        let grab = |vs: &[crate::tensor::Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        Ok(EvalOutputs {
            latents: Tensor::hcat(&blocks)?,
            x_hat: grab(&out.x_hat),
            p1: grab(&out.p1),
            p2: grab(&out.p2),
            m: grab(&out.m),
        })
    }

    /// Reconstructions at every level.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.evaluate(x)?.x_hat)
    }

    /// `MSE(x, x_hat_i)` for every level.
    pub fn recon_errors(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.reconstruct(x)?.iter().map(|xh| xh.mse(x)).collect()
    }

    /// Eval-mode latent responses, one column per latent variable.
    pub fn latents(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.evaluate(x)?.latents)
    }

    /// Decode explicit latents. `latents` holds the first block followed by
    /// one column per Encoder output (for the VAE: all latent columns).
    pub fn decode(&self, latents: &Tensor) -> Result<Vec<Tensor>> {
        let cfg = &self.config;
        let width = if cfg.baseline_vae { cfg.n_latents } else { cfg.z0_dim() + cfg.encoder_columns() };
        if latents.cols() != width {
            return shape_err(format!("expected {width} latent columns, got {}", latents.cols()));
        }
        let mut tape = Tape::new();
        let vars = GroupVars::register(&mut tape, &self.params);
        if cfg.baseline_vae {
            let z = tape.constant(latents.clone());
            let xh = vars.get(ParamGroup::Decoder)?.forward(&mut tape, z)?;
            return Ok(vec![tape.value(xh).clone()]);
        }
        let z0 = tape.constant(latents.slice_cols(0, cfg.z0_dim()));
        let z_cols: Vec<_> =
            (0..cfg.encoder_columns()).map(|i| tape.constant(latents.slice_cols(cfg.z0_dim() + i, 1))).collect();
        let (_, _, _, x_hat) = decode_levels(&mut tape, &vars, cfg, z0, &z_cols)?;
        Ok(x_hat.iter().map(|&v| tape.value(v).clone()).collect())
    }
}
