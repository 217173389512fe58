//! Evaluation: per-level reconstruction error, KSG mutual information,
//! cross-seed stability, code histograms, latent traversals and the PCA
//! oracle used for the linear experiment.

mod figures;
mod ksg;
mod pca;
pub mod svg;

pub use figures::{latent_traversals, RunReport, Traversal, TRAVERSAL_POINTS, TRAVERSAL_RANGE};
pub use ksg::{ksg_mi, MiEstimate, KSG_K};
pub use pca::{pca_oracle, pca_truncation_curve, principal_angles, Pca};

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{config_err, shape_err, Result};
use crate::model::FeModel;
use crate::system::SystemSpec;
use crate::tensor::Tensor;

/// Anything that yields one reconstruction per level for a dataset.
pub trait Reconstructor {
    fn reconstruct_levels(&self, data: &Dataset) -> Result<Vec<Tensor>>;
}

impl Reconstructor for FeModel {
    fn reconstruct_levels(&self, data: &Dataset) -> Result<Vec<Tensor>> {
        self.reconstruct(&data.x)
    }
}

/// Emits the noiseless system response to the true factors at every level.
pub struct OracleDecoder<'a> {
    pub spec: &'a SystemSpec,
    pub levels: usize,
}

impl Reconstructor for OracleDecoder<'_> {
    fn reconstruct_levels(&self, data: &Dataset) -> Result<Vec<Tensor>> {
        let clean = self.spec.clean_batch(&data.s)?;
        Ok(vec![clean; self.levels])
    }
}

/// `RE[i] = MSE(x, x_hat_i)` over the evaluation set.
pub fn recon_error_per_level(model: &impl Reconstructor, data: &Dataset) -> Result<Vec<f64>> {
    model.reconstruct_levels(data)?.iter().map(|xh| xh.mse(&data.x)).collect()
}

/// Latent-by-factor MI matrix; rows are latents.
#[derive(Clone, Debug, PartialEq)]
pub struct MiMatrix {
    pub raw: Tensor,
    pub degenerate: Vec<Vec<bool>>,
}

impl MiMatrix {
    /// Entries clamped at zero.
    pub fn clamped(&self) -> Tensor {
        self.raw.map(|v| v.max(0.0))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let c = self.clamped();
        (0..c.rows()).map(|r| c.row(r).to_vec()).collect()
    }
}

/// `ksg_mi(L_i, S_j)` for every pair, computed in parallel.
pub fn mi_matrix(latents: &Tensor, factors: &Tensor) -> Result<MiMatrix> {
    if latents.rows() != factors.rows() {
        return shape_err(format!("mi matrix: {} latent rows vs {} factor rows", latents.rows(), factors.rows()));
    }
    let (nl, nf) = (latents.cols(), factors.cols());
    let lcols: Vec<Vec<f64>> = (0..nl).map(|i| latents.column(i)).collect();
    let fcols: Vec<Vec<f64>> = (0..nf).map(|j| factors.column(j)).collect();
    let est: Vec<MiEstimate> =
        (0..nl * nf).into_par_iter().map(|p| ksg_mi(&lcols[p / nf], &fcols[p % nf], KSG_K)).collect::<Result<_>>()?;
    let raw = Tensor::new(nl, nf, est.iter().map(|e| e.nats).collect())?;
    let degenerate = est.chunks(nf.max(1)).map(|c| c.iter().map(|e| e.degenerate).collect()).collect();
    Ok(MiMatrix { raw, degenerate })
}

/// Average ranks, 1-based, with ties sharing their mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return shape_err(format!("spearman needs two equal samples of length >= 2, got {} and {}", a.len(), b.len()));
    }
    Ok(pearson(&ranks(a), &ranks(b)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityScore {
    pub per_latent: Vec<f64>,
    pub mean: f64,
}

/// `|Spearman(L_i^A, L_i^B)|` per latent for two runs evaluated on the same inputs.
pub fn stability_score(a: &Tensor, b: &Tensor) -> Result<StabilityScore> {
    if a.cols() != b.cols() {
        return config_err(format!("runs have {} and {} latents", a.cols(), b.cols()));
    }
    if a.rows() != b.rows() {
        return shape_err(format!("runs were evaluated on {} and {} samples", a.rows(), b.rows()));
    }
    let per_latent =
        (0..a.cols()).map(|i| spearman(&a.column(i), &b.column(i)).map(f64::abs)).collect::<Result<Vec<_>>>()?;
    let mean = per_latent.iter().sum::<f64>() / per_latent.len().max(1) as f64;
    Ok(StabilityScore { per_latent, mean })
}

pub const HIST_BINS: usize = 64;
pub const HIST_RANGE: (f64, f64) = (-4.0, 4.0);

/// Fixed-range histogram; values outside the range land in the edge bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values.iter().filter(|v| !v.is_nan()) {
            let b = ((v - lo) / width).floor().clamp(0.0, (bins - 1) as f64) as usize;
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    /// 64 bins over [-4, 4].
    pub fn codes(values: &[f64]) -> Self {
        Self::new(values, HIST_BINS, HIST_RANGE.0, HIST_RANGE.1)
    }

    pub fn bin_left(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}
