use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DataBundle;
use crate::error::Result;
use crate::metrics::{pca_oracle, principal_angles};
use crate::model::{ModelConfig, PatchRule};
use crate::system::SystemOptions;
use crate::tensor::Tensor;
use crate::train::{TrainConfig, Trainer};

/// Linear system used for the PCA comparison.
pub const LINEAR_FACTORS: usize = 3;
pub const LINEAR_OUTPUTS: usize = 10;

const FINE_FRACTION: u64 = 5;
const FINE_LR_FACTOR: f64 = 0.1;

/// Deterministic, linear-activation FE with additive patching and no dropout.
pub fn linear_fe_config(n_latents: usize, n_observed: usize) -> ModelConfig {
    ModelConfig {
        n_latents,
        n_observed,
        encoder_hidden: vec![16],
        nn_hidden: vec![8],
        decoder_hidden: vec![16],
        median_dim: 12,
        drop_ratio: 0.0,
        patch_rule: PatchRule::Additive,
        linear_activation: true,
        variational: false,
        ..ModelConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    /// Number of latents in use.
    pub k: usize,
    pub fe_re: f64,
    pub pca_error: f64,
    pub rel_diff: f64,
    /// Largest principal angle between the two k-dimensional subspaces, degrees.
    pub angle_deg: f64,
}

#[derive(Clone, Debug)]
pub struct PcaCheck {
    pub rows: Vec<PcaRow>,
    pub trainer: Trainer,
}

/// Top-`k` right singular vectors of the centred rows of `t`, as a `d x k` basis.
fn dominant_subspace(t: &Tensor, k: usize) -> Tensor {
    let mean = t.mean_rows();
    let m = DMatrix::from_fn(t.rows(), t.cols(), |r, c| t.get(r, c) - mean[c]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Tensor::from_fn(t.cols(), k, |r, c| vt[(order[c], r)])
}

/// Train the linear FE on a 3-factor, 10-output linear system and compare
/// every level with PCA on the held-out data.
///
/// Level `i` uses `i + 1` latents; its reconstructions are an affine image of
/// those latents, so the level's subspace is the span of its centred outputs.
pub fn pca_check(seed: u64, n_latents: usize, iterations: u64, out: Option<&Path>) -> Result<PcaCheck> {
    let opts = SystemOptions::linear(LINEAR_FACTORS, LINEAR_OUTPUTS);
    let bundle = DataBundle::generate(seed, &opts, 4000, 2000)?;
    let cfg = linear_fe_config(n_latents, LINEAR_OUTPUTS);
    let tc = TrainConfig { iterations, seed, eval_every: iterations.max(1), ..TrainConfig::default() };
    let mut trainer = Trainer::new(cfg, seed, tc.lr)?;
    // the last fifth runs at a tenth of the rate so Adam's step noise does not
    // sit on top of the small full-rank error
    let coarse = iterations - iterations / FINE_FRACTION;
    trainer.run(&bundle.train, &bundle.eval.x, &TrainConfig { iterations: coarse, ..tc.clone() })?;
    trainer.adam.lr = tc.lr * FINE_LR_FACTOR;
    trainer.run(&bundle.train, &bundle.eval.x, &tc)?;

    let x = &bundle.eval.x;
    let x_hat = trainer.model.reconstruct(x)?;
    let mut rows = Vec::new();
    for (i, xh) in x_hat.iter().enumerate() {
        let k = i + 1;
        // fitted on the same training rows the FE saw, scored on held-out rows
        let pca = pca_oracle(&bundle.train.x, k)?;
        let pca_error = pca.reconstruction_error(x)?;
        let fe_re = xh.mse(x)?;
        let angles = principal_angles(&dominant_subspace(xh, k), &pca.components)?;
        rows.push(PcaRow {
            k,
            fe_re,
            pca_error,
            rel_diff: (fe_re - pca_error).abs() / pca_error,
            angle_deg: angles.last().copied().unwrap_or(0.0),
        });
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("pca_report.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        bundle.save(&dir.join("data"))?;
        trainer.save(&dir.join(super::CHECKPOINT_FILE))?;
    }
    Ok(PcaCheck { rows, trainer })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_subspace_of_planar_data() {
        let t = Tensor::from_fn(50, 3, |r, c| {
            [1.0, 2.0, 0.0][c] * (r as f64).sin() + [0.0, 1.0, 1.0][c] * (r as f64 * 0.3).cos()
        });
        let u = dominant_subspace(&t, 2);
        let v = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(principal_angles(&u, &v).unwrap().iter().all(|a| *a < 1e-6));
    }

    #[test]
    fn report_rows() {
        let dir = tempfile::tempdir().unwrap();
        let check = pca_check(1, 3, 20, Some(dir.path())).unwrap();
        assert_eq!(check.rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2, 3]);
        let text = std::fs::read_to_string(dir.path().join("pca_report.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,fe_re,pca_error,rel_diff,angle_deg");
        assert_eq!(text.lines().count(), 4);
    }
}
