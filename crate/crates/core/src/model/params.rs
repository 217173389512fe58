use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::nn::{Activation, Mlp};
use crate::tensor::Tensor;

/// Trainable parameter group. Each group is updated only from its own loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Encoder0,
    Encoder,
    Nn0,
    /// Patcher network for latent `i` (1-based).
    Nn(usize),
    Decoder,
}

impl ParamGroup {
    pub fn name(&self) -> String {
        match self {
            ParamGroup::Encoder0 => "encoder0".into(),
            ParamGroup::Encoder => "encoder".into(),
            ParamGroup::Nn0 => "nn0".into(),
            ParamGroup::Nn(i) => format!("nn{i}"),
            ParamGroup::Decoder => "decoder".into(),
        }
    }
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// All networks of one model, partitioned into [`ParamGroup`]s.
///
/// For the baseline VAE only `encoder` and `decoder` exist, and the decoder
/// stack starts with a latent-to-median block of the same width as the
/// patcher networks so both architectures have matched capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct FeParams {
    pub encoder0: Option<Mlp>,
    pub encoder: Option<Mlp>,
    pub nn0: Option<Mlp>,
    pub nn: Vec<Mlp>,
    pub decoder: Mlp,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(input);
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

impl FeParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if cfg.linear_activation { Activation::Identity } else { Activation::Selu };
        let head = |cols: usize| if cfg.variational { 2 * cols } else { cols };

        if cfg.baseline_vae {
            let encoder = Mlp::init(&sizes(cfg.n_observed, &cfg.encoder_hidden, head(cfg.n_latents)), act, &mut rng);
            let mut dec_sizes = sizes(cfg.n_latents, &cfg.nn_hidden, cfg.median_dim);
            dec_sizes.extend_from_slice(&cfg.decoder_hidden);
            dec_sizes.push(cfg.n_observed);
            let mut decoder = Mlp::init(&dec_sizes, act, &mut rng);
            // the median block ends linearly, as the patcher heads do
            decoder.layers[cfg.nn_hidden.len()].activation = crate::nn::Activation::Identity;
            return Ok(Self { encoder0: None, encoder: Some(encoder), nn0: None, nn: vec![], decoder });
        }

        let z0_head = if cfg.supervised { cfg.label_dim } else { head(1) };
        let encoder0 = Mlp::init(&sizes(cfg.n_observed, &cfg.encoder_hidden, z0_head), act, &mut rng);
        let cols = cfg.encoder_columns();
        let encoder =
            (cols > 0).then(|| Mlp::init(&sizes(cfg.n_observed, &cfg.encoder_hidden, head(cols)), act, &mut rng));
        let nn0 = Mlp::init(&sizes(cfg.z0_dim(), &cfg.nn_hidden, cfg.median_dim), act, &mut rng);
        let nn = (0..cols)
            .map(|_| {
                let mut m = Mlp::init(&sizes(1, &cfg.nn_hidden, 2 * cfg.median_dim), act, &mut rng);
                // zero head: p1 = 0 and p2 = 1, so every patch starts as the identity
                let last = m.layers.last_mut().expect("patcher has layers");
                last.w.data_mut().fill(0.0);
                last.b.data_mut().fill(0.0);
                m
            })
            .collect();
        let decoder = Mlp::init(&sizes(cfg.median_dim, &cfg.decoder_hidden, cfg.n_observed), act, &mut rng);
        Ok(Self { encoder0: Some(encoder0), encoder, nn0: Some(nn0), nn, decoder })
    }

    /// Groups in a fixed order: encoder0, encoder, nn0, nn1.., decoder.
    pub fn groups(&self) -> Vec<(ParamGroup, &Mlp)> {
        let mut out = Vec::new();
        if let Some(m) = &self.encoder0 {
            out.push((ParamGroup::Encoder0, m));
        }
        if let Some(m) = &self.encoder {
            out.push((ParamGroup::Encoder, m));
        }
        if let Some(m) = &self.nn0 {
            out.push((ParamGroup::Nn0, m));
        }
        for (i, m) in self.nn.iter().enumerate() {
            out.push((ParamGroup::Nn(i + 1), m));
        }
        out.push((ParamGroup::Decoder, &self.decoder));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(ParamGroup, &mut Mlp)> {
        let mut out = Vec::new();
        if let Some(m) = &mut self.encoder0 {
            out.push((ParamGroup::Encoder0, m));
        }
        if let Some(m) = &mut self.encoder {
            out.push((ParamGroup::Encoder, m));
        }
        if let Some(m) = &mut self.nn0 {
            out.push((ParamGroup::Nn0, m));
        }
        for (i, m) in self.nn.iter_mut().enumerate() {
            out.push((ParamGroup::Nn(i + 1), m));
        }
        out.push((ParamGroup::Decoder, &mut self.decoder));
        out
    }

    pub fn group(&self, g: ParamGroup) -> Option<&Mlp> {
        self.groups().into_iter().find(|(k, _)| *k == g).map(|(_, m)| m)
    }

    pub fn tensor_count(&self) -> usize {
        self.groups().iter().map(|(_, m)| m.layers.len() * 2).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.groups().iter().flat_map(|(_, m)| m.tensors()).map(Tensor::len).sum()
    }
}
