//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use fe_lab::model::{compute_losses, forward_full, FeModel, FeParams, ModelConfig, ParamGroup, PatchRule};
use fe_lab::nn::{Activation, Mlp};
use fe_lab::tensor::{Tape, Tensor, Var, SELU_ALPHA, SELU_LAMBDA};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Values kept at least `gap` away from every kink in `kinks`.
fn away_from(mut t: Tensor, kinks: &[f64], gap: f64) -> Tensor {
    for v in t.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < gap {
                *v = k + gap.copysign(*v - k + f64::MIN_POSITIVE);
            }
        }
    }
    t
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

/// Largest relative error between tape gradients and central differences of
/// the scalar built by `build` from `inputs` (all treated as parameters).
pub fn check_graph(inputs: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let grads: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| tape.grad(v).map_or(vec![0.0; t.len()], <[f64]>::to_vec)).collect();

    let eval = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let l = build(&mut tape, &vars);
        tape.value(l).item()
    };
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, g) in grads.iter().enumerate() {
        for (e, &analytic) in g.iter().enumerate() {
            let orig = probe[k].data()[e];
            probe[k].data_mut()[e] = orig + FD_STEP;
            let up = eval(&probe);
            probe[k].data_mut()[e] = orig - FD_STEP;
            let down = eval(&probe);
            probe[k].data_mut()[e] = orig;
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Contract a tensor-valued node to a scalar with fixed random weights.
fn contract(tape: &mut Tape, v: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

/// Gradcheck of every tape op on shapes and values drawn from `seed`.
/// Returns `(op name, max relative error)` per op.
pub fn op_gradchecks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c, k) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
    let a = normal(&mut rng, r, c);
    let b = normal(&mut rng, r, c);
    let wts = normal(&mut rng, r, c);
    let mut out = Vec::new();

    let x = normal(&mut rng, r, k);
    let w = normal(&mut rng, k, c);
    let bias = normal(&mut rng, 1, c);
    out.push((
        "affine",
        check_graph(&[x, w, bias], &|t, v| {
            let y = t.affine(v[0], v[1], v[2]).unwrap();
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "add",
        check_graph(&[a.clone(), b.clone()], &|t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "sub",
        check_graph(&[a.clone(), b.clone()], &|t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "mul",
        check_graph(&[a.clone(), b.clone()], &|t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            contract(t, y, &wts)
        }),
    ));
    // the same input on both sides exercises gradient accumulation
    out.push((
        "mul_shared",
        check_graph(std::slice::from_ref(&a), &|t, v| {
            let y = t.mul(v[0], v[0]).unwrap();
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "add_scalar",
        check_graph(std::slice::from_ref(&a), &|t, v| {
            let y = t.add_scalar(v[0], 0.7);
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "scale",
        check_graph(std::slice::from_ref(&a), &|t, v| {
            let y = t.scale(v[0], -1.3);
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "selu",
        check_graph(&[away_from(a.clone(), &[0.0], 1e-3)], &|t, v| {
            let y = t.selu(v[0]);
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "exp",
        check_graph(std::slice::from_ref(&a), &|t, v| {
            let y = t.exp(v[0]);
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "clamp",
        check_graph(&[away_from(a.clone(), &[-0.5, 0.5], 1e-3)], &|t, v| {
            let y = t.clamp(v[0], -0.5, 0.5);
            contract(t, y, &wts)
        }),
    ));
    let mask_seed = rng.random::<u64>();
    out.push((
        "dropout",
        check_graph(std::slice::from_ref(&a), &|t, v| {
            let mut mrng = ChaCha8Rng::seed_from_u64(mask_seed);
            let (y, _) = t.dropout(v[0], 0.3, true, &mut mrng).unwrap();
            contract(t, y, &wts)
        }),
    ));
    out.push((
        "mask_inputs",
        check_graph(std::slice::from_ref(&a), &|t, v| {
            let mut mrng = ChaCha8Rng::seed_from_u64(mask_seed);
            let (y, _) = t.mask_inputs(v[0], 0.3, true, &mut mrng).unwrap();
            contract(t, y, &wts)
        }),
    ));
    let start = rng.random_range(0..c);
    let len = rng.random_range(1..=c - start);
    let sw = wts.slice_cols(start, len);
    out.push((
        "slice_cols",
        check_graph(std::slice::from_ref(&a), &|t, v| {
            let y = t.slice_cols(v[0], start, len).unwrap();
            contract(t, y, &sw)
        }),
    ));
    out.push((
        "sum",
        check_graph(std::slice::from_ref(&a), &|t, v| {
            let s = t.sum(v[0]);
            let s2 = t.mul(s, s).unwrap();
            t.sum(s2)
        }),
    ));
    out.push(("mse", check_graph(&[a.clone(), b.clone()], &|t, v| t.mse(v[0], v[1]).unwrap())));
    let sigma = b.map(|v| v.abs() + 0.3);
    out.push(("gaussian_kl", check_graph(&[a.clone(), sigma], &|t, v| t.gaussian_kl(v[0], v[1]).unwrap())));
    out.push((
        "lin_comb",
        check_graph(&[a.clone(), b.clone()], &|t, v| {
            let s = t.sum(v[0]);
            let m = t.mse(v[0], v[1]).unwrap();
            t.lin_comb(&[(s, 0.4), (m, -2.5), (s, 1.1)]).unwrap()
        }),
    ));
    out
}

/// A small random model configuration covering every degeneration.
pub fn small_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let baseline_vae = rng.random_bool(0.2);
    let supervised = !baseline_vae && rng.random_bool(0.25);
    ModelConfig {
        n_latents: rng.random_range(1..5),
        n_observed: rng.random_range(2..6),
        supervised,
        label_dim: 2,
        median_dim: 6,
        encoder_hidden: vec![rng.random_range(2..5)],
        nn_hidden: vec![3],
        decoder_hidden: vec![rng.random_range(2..5)],
        drop_ratio: if rng.random_bool(0.5) { 0.2 } else { 0.0 },
        xi: rng.random_range(0.0..2.0),
        alpha: rng.random_range(0.2..0.9),
        beta: rng.random_range(1.0..5.0),
        patch_rule: if rng.random_bool(0.5) { PatchRule::TwoStep } else { PatchRule::Additive },
        baseline_vae,
        linear_activation: rng.random_bool(0.2),
        variational: !rng.random_bool(0.15),
        ..ModelConfig::default()
    }
}

/// Parameters with every tensor (including the zero patcher heads) perturbed.
pub fn jittered_params(cfg: &ModelConfig, seed: u64) -> FeParams {
    let mut p = FeParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    for (_, m) in p.groups_mut() {
        for t in m.tensors_mut() {
            for v in t.data_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += 0.3 * n;
            }
        }
    }
    p
}

fn group_loss(
    params: &FeParams,
    cfg: &ModelConfig,
    x: &Tensor,
    y: Option<&Tensor>,
    fwd_seed: u64,
    g: ParamGroup,
) -> f64 {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(fwd_seed);
    let out = forward_full(&mut tape, params, cfg, x, y, Some(&mut rng)).unwrap();
    let losses = compute_losses(&mut tape, &out, cfg).unwrap();
    tape.value(losses.route(g).unwrap()).item()
}

/// Gradcheck of every group's routed loss with respect to that group's
/// parameters, in training mode with fixed input masks and noise.
pub fn fe_loss_gradcheck(seed: u64) -> (ModelConfig, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_config(&mut rng);
    let params = jittered_params(&cfg, seed);
    let rows = 4;
    let x = normal(&mut rng, rows, cfg.n_observed);
    let y = cfg.supervised.then(|| normal(&mut rng, rows, cfg.label_dim));
    let fwd_seed = rng.random::<u64>();

    let mut tape = Tape::new();
    let mut frng = ChaCha8Rng::seed_from_u64(fwd_seed);
    let out = forward_full(&mut tape, &params, &cfg, &x, y.as_ref(), Some(&mut frng)).unwrap();
    let losses = compute_losses(&mut tape, &out, &cfg).unwrap();
    let mut worst = 0.0f64;
    for &(g, loss) in &losses.routes {
        let leaves = out.vars.leaves(g);
        tape.zero_grad();
        tape.backward_into(loss, &leaves).unwrap();
        let grads: Vec<Vec<f64>> =
            leaves.iter().map(|&l| tape.grad(l).map_or(vec![0.0; tape.value(l).len()], <[f64]>::to_vec)).collect();
        let mut probe = params.clone();
        for (ti, g_t) in grads.iter().enumerate() {
            for (e, &analytic) in g_t.iter().enumerate() {
                let set = |p: &mut FeParams, v: f64| {
                    let mut groups = p.groups_mut();
                    let (_, m) = groups.iter_mut().find(|(k, _)| *k == g).unwrap();
                    m.tensors_mut().nth(ti).unwrap().data_mut()[e] = v;
                };
                let orig = {
                    let groups = params.groups();
                    let (_, m) = groups.iter().find(|(k, _)| *k == g).unwrap();
                    m.tensors().nth(ti).unwrap().data()[e]
                };
                set(&mut probe, orig + FD_STEP);
                let up = group_loss(&probe, &cfg, &x, y.as_ref(), fwd_seed, g);
                set(&mut probe, orig - FD_STEP);
                let down = group_loss(&probe, &cfg, &x, y.as_ref(), fwd_seed, g);
                set(&mut probe, orig);
                worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
            }
        }
    }
    (cfg, worst)
}

fn selu(v: f64) -> f64 {
    if v > 0.0 {
        SELU_LAMBDA * v
    } else {
        SELU_LAMBDA * SELU_ALPHA * (v.exp() - 1.0)
    }
}

/// Plain row-by-row MLP, independent of the tape and the matrix kernels.
fn mlp_rows(m: &Mlp, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut h = rows.to_vec();
    for layer in &m.layers {
        h = h
            .iter()
            .map(|r| {
                (0..layer.outputs())
                    .map(|j| {
                        let s =
                            layer.b.data()[j] + r.iter().enumerate().map(|(i, v)| v * layer.w.get(i, j)).sum::<f64>();
                        if layer.activation == Activation::Selu {
                            selu(s)
                        } else {
                            s
                        }
                    })
                    .collect()
            })
            .collect();
    }
    h
}

/// `|FE loss - hand-written VAE loss|` for a single-latent FE with `xi = 0`,
/// `beta = 1`, unsupervised, on one batch. Both the Encoder0 loss (the
/// negative ELBO) and the decoder loss are compared; the larger gap is returned.
pub fn degeneration_gap(seed: u64) -> f64 {
    let cfg = ModelConfig { n_latents: 1, xi: 0.0, beta: 1.0, supervised: false, ..ModelConfig::default() };
    let model = FeModel::init(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
    let rows = 16;
    let x = normal(&mut rng, rows, cfg.n_observed);
    let fwd_seed = rng.random::<u64>();

    let mut tape = Tape::new();
    let mut frng = ChaCha8Rng::seed_from_u64(fwd_seed);
    let out = forward_full(&mut tape, &model.params, &cfg, &x, None, Some(&mut frng)).unwrap();
    let losses = compute_losses(&mut tape, &out, &cfg).unwrap();
    let fe_elbo = tape.value(losses.route(ParamGroup::Encoder0).unwrap()).item();
    let fe_dec = tape.value(losses.route(ParamGroup::Decoder).unwrap()).item();

    // same random stream: the input mask, then the latent noise
    let mut hrng = ChaCha8Rng::seed_from_u64(fwd_seed);
    let masked: Vec<Vec<f64>> = (0..rows)
        .map(|r| x.row(r).iter().map(|&v| if hrng.random::<f64>() < cfg.drop_ratio { 0.0 } else { v }).collect())
        .collect();
    let enc = mlp_rows(model.params.encoder0.as_ref().unwrap(), &masked);
    let mut z = Vec::new();
    let mut kl = 0.0;
    for e in &enc {
        let mu = e[0];
        let sigma = e[1].clamp(cfg.log_sigma_min, cfg.log_sigma_max).exp();
        let eps: f64 = StandardNormal.sample(&mut hrng);
        z.push(vec![mu + sigma * eps]);
        kl += 0.5 * (mu * mu + sigma * sigma - 1.0 - (sigma * sigma).ln());
    }
    kl /= rows as f64;
    let m = mlp_rows(model.params.nn0.as_ref().unwrap(), &z);
    let x_hat = mlp_rows(&model.params.decoder, &m);
    let sq: f64 = (0..rows).map(|r| x.row(r).iter().zip(&x_hat[r]).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum();
    // sum over features, mean over the batch
    let recon = sq / rows as f64;
    let vae_elbo = recon + kl;
    (fe_elbo - vae_elbo).abs().max((fe_dec - recon).abs())
}

/// Causal structure of the patching decoder: on a training-mode batch, the
/// largest `|d x_hat_i / d z_j|` over `j > i` and the smallest gradient norm
/// over `j <= i`.
pub fn causal_gradients(model: &FeModel, x: &Tensor, seed: u64) -> (f64, f64) {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = forward_full(&mut tape, &model.params, cfg, x, None, Some(&mut rng)).unwrap();
    let mut latents = vec![out.z0.unwrap()];
    latents.extend(&out.z_cols);
    let mut wrng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    let (mut leak, mut weakest) = (0.0f64, f64::INFINITY);
    for (i, &xh) in out.x_hat.iter().enumerate() {
        let w = normal(&mut wrng, x.rows(), cfg.n_observed);
        let wv = tape.constant(w);
        let p = tape.mul(xh, wv).unwrap();
        let s = tape.sum(p);
        tape.zero_grad();
        tape.backward_into(s, &latents).unwrap();
        for (j, &z) in latents.iter().enumerate() {
            let g = tape.grad(z).map_or(0.0, |g| g.iter().map(|v| v * v).sum::<f64>().sqrt());
            let gmax = tape.grad(z).map_or(0.0, |g| g.iter().fold(0.0f64, |a, v| a.max(v.abs())));
            if j > i {
                leak = leak.max(gmax);
            } else {
                weakest = weakest.min(g);
            }
        }
    }
    (leak, weakest)
}
