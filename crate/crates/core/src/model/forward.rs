//! Encoders, reparameterization, and the progressive patching decoder.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, PatchRule};
use super::params::{FeParams, ParamGroup};
use crate::error::{shape_err, Error, Result};
use crate::nn::MlpVars;
use crate::tensor::{Tape, Tensor, Var};

/// Tape handles for every parameter group of one forward pass.
#[derive(Clone, Debug)]
pub struct GroupVars {
    pub groups: Vec<(ParamGroup, MlpVars)>,
}

impl GroupVars {
    pub fn register(tape: &mut Tape, params: &FeParams) -> Self {
        Self { groups: params.groups().into_iter().map(|(g, m)| (g, m.register(tape))).collect() }
    }

    pub fn get(&self, g: ParamGroup) -> Result<&MlpVars> {
        self.groups
            .iter()
            .find(|(k, _)| *k == g)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Config(format!("model has no {g} group")))
    }

    pub fn leaves(&self, g: ParamGroup) -> Vec<Var> {
        self.get(g).map(|v| v.leaves().collect()).unwrap_or_default()
    }
}

/// Handles to everything one forward pass produced.
///
/// `p1`, `p2` and `z_cols` are indexed from level 1 (`p1[0]` belongs to
/// level 1); `m` and `x_hat` are indexed from level 0.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub vars: GroupVars,
    pub x: Var,
    pub y: Option<Var>,
    /// First latent block: sampled `z0`, or the label prediction when supervised.
    pub z0: Option<Var>,
    pub mu0: Option<Var>,
    pub sigma0: Option<Var>,
    pub mu: Option<Var>,
    pub sigma: Option<Var>,
    pub eps: Option<Var>,
    /// Encoder latents, one column per Encoder output.
    pub z: Option<Var>,
    pub z_cols: Vec<Var>,
    pub p1: Vec<Var>,
    pub p2: Vec<Var>,
    pub m: Vec<Var>,
    pub x_hat: Vec<Var>,
}

/// `z = mu + sigma * eps` with `eps ~ N(0, I)` held constant on the tape.
/// Without an rng (evaluation) this returns `mu` itself.
pub fn reparameterize<R: Rng + ?Sized>(
    tape: &mut Tape,
    mu: Var,
    sigma: Var,
    rng: Option<&mut R>,
) -> Result<(Var, Option<Var>)> {
    if tape.value(mu).shape() != tape.value(sigma).shape() {
        return shape_err("reparameterize: mu and sigma differ in shape");
    }
    let Some(rng) = rng else {
        return Ok((mu, None));
    };
    let shape = tape.value(mu).shape();
    let eps = Tensor::from_fn(shape[0], shape[1], |_, _| StandardNormal.sample(rng));
    let eps = tape.constant(eps);
    let noise = tape.mul(sigma, eps)?;
    Ok((tape.add(mu, noise)?, Some(eps)))
}

/// One patch step on plain vectors.
pub fn patch(m_prev: &[f64], p1: &[f64], p2: &[f64], rule: PatchRule) -> Result<Vec<f64>> {
    if m_prev.len() != p1.len() || (rule == PatchRule::TwoStep && p2.len() != m_prev.len()) {
        return shape_err(format!("patch: m {} p1 {} p2 {}", m_prev.len(), p1.len(), p2.len()));
    }
    Ok(match rule {
        PatchRule::Additive => p1.iter().zip(m_prev).map(|(a, m)| a + m).collect(),
        PatchRule::TwoStep => p1.iter().zip(p2).zip(m_prev).map(|((a, b), m)| a + b * m).collect(),
    })
}

fn patch_var(tape: &mut Tape, m_prev: Var, p1: Var, p2: Var, rule: PatchRule) -> Result<Var> {
    match rule {
        PatchRule::Additive => tape.add(p1, m_prev),
        PatchRule::TwoStep => {
            let scaled = tape.mul(p2, m_prev)?;
            tape.add(p1, scaled)
        }
    }
}

struct Head {
    mu: Var,
    sigma: Option<Var>,
    eps: Option<Var>,
    z: Var,
}

fn gaussian_head<R: Rng + ?Sized>(
    tape: &mut Tape,
    out: Var,
    cols: usize,
    cfg: &ModelConfig,
    rng: Option<&mut R>,
) -> Result<Head> {
    if !cfg.variational {
        return Ok(Head { mu: out, sigma: None, eps: None, z: out });
    }
    let mu = tape.slice_cols(out, 0, cols)?;
    let log_sigma = tape.slice_cols(out, cols, cols)?;
    let log_sigma = tape.clamp(log_sigma, cfg.log_sigma_min, cfg.log_sigma_max);
    let sigma = tape.exp(log_sigma);
    let (z, eps) = reparameterize(tape, mu, sigma, rng)?;
    Ok(Head { mu, sigma: Some(sigma), eps, z })
}

/// Runs the full model on one batch. Passing an rng selects training mode
/// (input masking, sampled latents, teacher forcing); `None` evaluates with
/// dropout off and `z = mu`.
pub fn forward_full<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &FeParams,
    cfg: &ModelConfig,
    x: &Tensor,
    y: Option<&Tensor>,
    mut rng: Option<&mut R>,
) -> Result<ForwardOutputs> {
    if x.cols() != cfg.n_observed {
        return shape_err(format!("expected {} observed columns, got {}", cfg.n_observed, x.cols()));
    }
    if let Some(y) = y {
        if y.rows() != x.rows() {
            return shape_err("label rows differ from observation rows");
        }
    }
    let training = rng.is_some();
    let vars = GroupVars::register(tape, params);
    let xv = tape.constant(x.clone());
    let yv = match (cfg.supervised, y) {
        (true, Some(y)) => {
            if y.cols() != cfg.label_dim {
                return shape_err(format!("expected {} label columns, got {}", cfg.label_dim, y.cols()));
            }
            Some(tape.constant(y.clone()))
        }
        _ => None,
    };

    let masked_input = |tape: &mut Tape, rng: Option<&mut R>| -> Result<Var> {
        match rng {
            Some(r) if training => Ok(tape.mask_inputs(xv, cfg.drop_ratio, true, r)?.0),
            _ => Ok(xv),
        }
    };

    if cfg.baseline_vae {
        let input = masked_input(tape, rng.as_deref_mut())?;
        let raw = vars.get(ParamGroup::Encoder)?.forward(tape, input)?;
        let head = gaussian_head(tape, raw, cfg.n_latents, cfg, rng.as_deref_mut())?;
        let x_hat = vars.get(ParamGroup::Decoder)?.forward(tape, head.z)?;
        return Ok(ForwardOutputs {
            vars,
            x: xv,
            y: None,
            z0: None,
            mu0: None,
            sigma0: None,
            mu: Some(head.mu),
            sigma: head.sigma,
            eps: head.eps,
            z: Some(head.z),
            z_cols: vec![],
            p1: vec![],
            p2: vec![],
            m: vec![],
            x_hat: vec![x_hat],
        });
    }

    let input0 = masked_input(tape, rng.as_deref_mut())?;
    let raw0 = vars.get(ParamGroup::Encoder0)?.forward(tape, input0)?;
    let (z0, mu0, sigma0, nn0_input) = if cfg.supervised {
        let feed = match yv {
            Some(y) if training && cfg.teacher_forcing => y,
            _ => raw0,
        };
        (raw0, None, None, feed)
    } else {
        let h = gaussian_head(tape, raw0, 1, cfg, rng.as_deref_mut())?;
        (h.z, Some(h.mu), h.sigma, h.z)
    };

    let cols = cfg.encoder_columns();
    let (mu, sigma, eps, z, z_cols) = if cols > 0 {
        let input = masked_input(tape, rng.as_deref_mut())?;
        let raw = vars.get(ParamGroup::Encoder)?.forward(tape, input)?;
        let h = gaussian_head(tape, raw, cols, cfg, rng)?;
        let z_cols = (0..cols).map(|i| tape.slice_cols(h.z, i, 1)).collect::<Result<Vec<_>>>()?;
        (Some(h.mu), h.sigma, h.eps, Some(h.z), z_cols)
    } else {
        (None, None, None, None, vec![])
    };

    let (m, p1, p2, x_hat) = decode_levels(tape, &vars, cfg, nn0_input, &z_cols)?;
    Ok(ForwardOutputs { vars, x: xv, y: yv, z0: Some(z0), mu0, sigma0, mu, sigma, eps, z, z_cols, p1, p2, m, x_hat })
}

type Levels = (Vec<Var>, Vec<Var>, Vec<Var>, Vec<Var>);

/// Progressive patching: `m0 = NN0(z0)`, `m_i = patch(m_{i-1}, NN_i(z_i))`,
/// and every `m_i` goes through the shared decoder.
pub fn decode_levels(tape: &mut Tape, vars: &GroupVars, cfg: &ModelConfig, z0: Var, z_cols: &[Var]) -> Result<Levels> {
    let decoder = vars.get(ParamGroup::Decoder)?;
    let m0 = vars.get(ParamGroup::Nn0)?.forward(tape, z0)?;
    let mut m = vec![m0];
    let mut x_hat = vec![decoder.forward(tape, m0)?];
    let (mut p1s, mut p2s) = (Vec::new(), Vec::new());
    for (i, &zi) in z_cols.iter().enumerate() {
        let out = vars.get(ParamGroup::Nn(i + 1))?.forward(tape, zi)?;
        let p1 = tape.slice_cols(out, 0, cfg.median_dim)?;
        let p2_raw = tape.slice_cols(out, cfg.median_dim, cfg.median_dim)?;
        // multiplier patcher starts centred on 1
        let p2 = tape.add_scalar(p2_raw, 1.0);
        let mi = patch_var(tape, m[i], p1, p2, cfg.patch_rule)?;
        x_hat.push(decoder.forward(tape, mi)?);
        m.push(mi);
        p1s.push(p1);
        p2s.push(p2);
    }
    Ok((m, p1s, p2s, x_hat))
}
