use super::config::{weight_multiplier, ModelConfig};
use super::forward::ForwardOutputs;
use super::params::ParamGroup;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Scalar loss nodes of one forward pass and the group each one trains.
#[derive(Clone, Debug)]
pub struct Losses {
    /// `MSE(x, x_hat_i)` per level.
    pub recon: Vec<Var>,
    /// Raw KL of the first latent (unsupervised, variational).
    pub kl0: Option<Var>,
    /// Raw KL summed over the Encoder columns.
    pub kl: Option<Var>,
    /// Label regression error (supervised).
    pub label: Option<Var>,
    pub routes: Vec<(ParamGroup, Var)>,
}

impl Losses {
    pub fn route(&self, g: ParamGroup) -> Option<Var> {
        self.routes.iter().find(|(k, _)| *k == g).map(|(_, v)| *v)
    }

    /// Total raw KL across all latents.
    pub fn total_kl(&self, tape: &Tape) -> f64 {
        self.kl0.map_or(0.0, |v| tape.value(v).item()) + self.kl.map_or(0.0, |v| tape.value(v).item())
    }
}

/// Builds every group loss on the tape. Reconstruction terms below are
/// `recon_scale() * MSE`.
///
/// FE: Encoder0 gets the label MSE (supervised) or `MSE(x, x_hat_0) + beta KL(z0)`;
/// Encoder gets the multiplier-weighted reconstruction of levels `1..` plus
/// `beta / k` times the KL summed over its `k` columns; NN0 and each NN_i get
/// their own level's reconstruction; the decoder gets the weighted sum over
/// all levels. The baseline VAE routes `MSE + beta KL / k` to the encoder and
/// `MSE` to the decoder.
pub fn compute_losses(tape: &mut Tape, out: &ForwardOutputs, cfg: &ModelConfig) -> Result<Losses> {
    let recon = out.x_hat.iter().map(|&xh| tape.mse(xh, out.x)).collect::<Result<Vec<_>>>()?;
    let kl = match (out.mu, out.sigma) {
        (Some(mu), Some(sigma)) => Some(tape.gaussian_kl(mu, sigma)?),
        _ => None,
    };
    let cols = cfg.encoder_columns();
    let unit = cfg.recon_scale();

    if cfg.baseline_vae {
        let dec = tape.lin_comb(&[(recon[0], unit)])?;
        let mut enc = vec![(recon[0], unit)];
        if let Some(kl) = kl {
            enc.push((kl, cfg.beta / cols as f64));
        }
        let enc = tape.lin_comb(&enc)?;
        return Ok(Losses {
            routes: vec![(ParamGroup::Encoder, enc), (ParamGroup::Decoder, dec)],
            recon,
            kl0: None,
            kl,
            label: None,
        });
    }

    let mut routes = Vec::new();
    let (mut kl0, mut label) = (None, None);
    if cfg.supervised {
        let y = out.y.ok_or_else(|| Error::Config("supervised mode needs labels".into()))?;
        let z0 = out.z0.expect("FE forward always yields z0");
        let l = tape.mse(z0, y)?;
        label = Some(l);
        routes.push((ParamGroup::Encoder0, l));
    } else {
        let mut terms = vec![(recon[0], unit)];
        if let (Some(mu0), Some(s0)) = (out.mu0, out.sigma0) {
            let k = tape.gaussian_kl(mu0, s0)?;
            kl0 = Some(k);
            terms.push((k, cfg.beta));
        }
        routes.push((ParamGroup::Encoder0, tape.lin_comb(&terms)?));
    }

    if cols > 0 {
        let mut terms = Vec::with_capacity(cols + 1);
        for (i, &r) in recon.iter().enumerate().skip(1) {
            terms.push((r, unit * weight_multiplier(i, cfg.xi, cfg.alpha)?));
        }
        if let Some(kl) = kl {
            terms.push((kl, cfg.beta / cols as f64));
        }
        routes.push((ParamGroup::Encoder, tape.lin_comb(&terms)?));
    }

    let nn0 = tape.lin_comb(&[(recon[0], unit)])?;
    routes.push((ParamGroup::Nn0, nn0));
    for (i, &r) in recon.iter().enumerate().skip(1) {
        let l = tape.lin_comb(&[(r, unit)])?;
        routes.push((ParamGroup::Nn(i), l));
    }

    let mut dec = Vec::with_capacity(recon.len());
    for (i, &r) in recon.iter().enumerate() {
        dec.push((r, unit * weight_multiplier(i, cfg.xi, cfg.alpha)?));
    }
    routes.push((ParamGroup::Decoder, tape.lin_comb(&dec)?));

    Ok(Losses { recon, kl0, kl, label, routes })
}
