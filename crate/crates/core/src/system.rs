//! Memoryless generative systems with importance-graded factors.
//!
//! A nonlinear system maps factors `s` to outputs through one randomly drawn
//! basis term per (output, factor) pair:
//!
//! `out_j(s) = sum_k a_jk * g_jk(w_jk * s_k + phi_jk)`
//!
//! with `a_jk` proportional to `imp_k` and `w_jk` proportional to
//! `0.5 + imp_k`, so weaker factors move the outputs less and more linearly.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// Bound of the truncated-normal factor distribution and of traversal grids.
pub const FACTOR_BOUND: f64 = 2.0;
/// Observation noise used throughout the toy experiments.
pub const DEFAULT_NOISE_STD: f64 = 0.125;

/// Amplitude scale of nonlinear basis terms.
const AMPLITUDE_SCALE: f64 = 1.5;
/// Frequency scale of nonlinear basis terms.
const FREQUENCY_SCALE: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Nonlinear,
    Linear,
}

impl std::str::FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nonlinear" => Ok(Self::Nonlinear),
            "linear" => Ok(Self::Linear),
            other => Err(format!("unknown system kind `{other}` (expected nonlinear|linear)")),
        }
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Nonlinear => "nonlinear",
            Self::Linear => "linear",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sin,
    Tanh,
    Cubic,
    Softplus,
    /// Used by linear systems only.
    Identity,
}

impl Family {
    pub const NONLINEAR: [Family; 4] = [Family::Sin, Family::Tanh, Family::Cubic, Family::Softplus];

    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Family::Sin => u.sin(),
            Family::Tanh => u.tanh(),
            Family::Cubic => (u / 3.0).powi(3),
            Family::Softplus => u.max(0.0) + (-u.abs()).exp().ln_1p(),
            Family::Identity => u,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisTerm {
    pub factor: usize,
    pub family: Family,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// Full parameterization of a generative system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub importance: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    /// Basis terms per output.
    pub basis: Vec<Vec<BasisTerm>>,
}

/// Importance profile: the first two factors tie at 1, the rest ramp down to 0.4.
pub fn default_importance(n_inputs: usize) -> Vec<f64> {
    (0..n_inputs)
        .map(|k| if k < 2 || n_inputs <= 2 { 1.0 } else { 1.0 - 0.6 * (k - 1) as f64 / (n_inputs - 2) as f64 })
        .collect()
}

fn validate_importance(importance: &[f64], n_inputs: usize) -> Result<()> {
    if importance.len() != n_inputs {
        return config_err(format!("importance has {} entries for {n_inputs} inputs", importance.len()));
    }
    if importance.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return config_err("importance weights must lie in (0, 1]");
    }
    if n_inputs >= 2 && importance[0] != importance[1] {
        return config_err("the first two factors must share the same importance");
    }
    if importance.windows(2).skip(1).any(|w| w[1] > w[0]) {
        return config_err("importance must be nonincreasing after the second factor");
    }
    Ok(())
}

/// Builder-style options for [`build_system`].
#[derive(Clone, Debug)]
pub struct SystemOptions {
    pub kind: SystemKind,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub importance: Option<Vec<f64>>,
    pub noise_std: f64,
}

impl Default for SystemOptions {
    fn default() -> Self {
        Self { kind: SystemKind::Nonlinear, n_inputs: 5, n_outputs: 48, importance: None, noise_std: DEFAULT_NOISE_STD }
    }
}

impl SystemOptions {
    pub fn linear(n_inputs: usize, n_outputs: usize) -> Self {
        Self { kind: SystemKind::Linear, n_inputs, n_outputs, ..Self::default() }
    }
}

/// Draw a random system from `seed`.
pub fn build_system(seed: u64, opts: &SystemOptions) -> Result<SystemSpec> {
    if opts.n_inputs == 0 || opts.n_outputs == 0 {
        return config_err("systems need at least one input and one output");
    }
    if !opts.noise_std.is_finite() || opts.noise_std < 0.0 {
        return config_err(format!("noise std must be finite and nonnegative, got {}", opts.noise_std));
    }
    let importance = opts.importance.clone().unwrap_or_else(|| default_importance(opts.n_inputs));
    validate_importance(&importance, opts.n_inputs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = Vec::with_capacity(opts.n_outputs);
    for _ in 0..opts.n_outputs {
        let mut terms = Vec::with_capacity(opts.n_inputs);
        for (k, &imp) in importance.iter().enumerate() {
            let term = match opts.kind {
                SystemKind::Nonlinear => {
                    let family = *Family::NONLINEAR.choose(&mut rng).expect("non-empty");
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let amplitude = sign * AMPLITUDE_SCALE * imp * rng.random_range(0.5..1.5);
                    let frequency = FREQUENCY_SCALE * (0.5 + imp) * rng.random_range(0.8..1.2);
                    let phase = rng.random_range(-1.0..1.0);
                    BasisTerm { factor: k, family, amplitude, frequency, phase }
                }
                SystemKind::Linear => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    BasisTerm { factor: k, family: Family::Identity, amplitude: imp * z, frequency: 1.0, phase: 0.0 }
                }
            };
            terms.push(term);
        }
        basis.push(terms);
    }
    Ok(SystemSpec {
        kind: opts.kind,
        n_inputs: opts.n_inputs,
        n_outputs: opts.n_outputs,
        importance,
        noise_std: opts.noise_std,
        seed,
        basis,
    })
}

impl SystemSpec {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        validate_importance(&self.importance, self.n_inputs)?;
        if self.basis.len() != self.n_outputs {
            return config_err("basis does not cover every output");
        }
        for (j, terms) in self.basis.iter().enumerate() {
            for k in 0..self.n_inputs {
                if !terms.iter().any(|t| t.factor == k) {
                    return config_err(format!("output {j} has no term for factor {k}"));
                }
            }
            if terms.iter().any(|t| t.factor >= self.n_inputs) {
                return config_err(format!("output {j} references an unknown factor"));
            }
        }
        Ok(())
    }

    /// Noiseless output for factor vector `s`.
    pub fn clean(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.n_inputs {
            return shape_err(format!("expected {} factors, got {}", self.n_inputs, s.len()));
        }
        let mut out = vec![0.0; self.n_outputs];
        self.clean_into(s, &mut out);
        Ok(out)
    }

    fn clean_into(&self, s: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.basis) {
            *o = terms.iter().map(|t| t.amplitude * t.family.apply(t.frequency * s[t.factor] + t.phase)).sum();
        }
    }

    /// Output for `s`, plus i.i.d. `N(0, noise_std^2)` per output when `noise` is set.
    pub fn evaluate<R: Rng + ?Sized>(&self, s: &[f64], noise: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = self.clean(s)?;
        if noise && self.noise_std > 0.0 {
            for o in &mut out {
                let z: f64 = StandardNormal.sample(rng);
                *o += self.noise_std * z;
            }
        }
        Ok(out)
    }

    /// Noiseless outputs for every row of a factor matrix.
    pub fn clean_batch(&self, s: &Tensor) -> Result<Tensor> {
        if s.cols() != self.n_inputs {
            return shape_err(format!("expected {} factor columns, got {}", self.n_inputs, s.cols()));
        }
        let mut out = Tensor::zeros(s.rows(), self.n_outputs);
        for r in 0..s.rows() {
            let dst = &mut out.data_mut()[r * self.n_outputs..(r + 1) * self.n_outputs];
            self.clean_into(s.row(r), dst);
        }
        Ok(out)
    }

    /// Noiseless responses as factor `factor` sweeps `grid` with all others at 0.
    /// Row `g` holds the outputs at `grid[g]`.
    pub fn traversal_curves(&self, factor: usize, grid: &[f64]) -> Result<Tensor> {
        if factor >= self.n_inputs {
            return config_err(format!("factor {factor} out of range for {} inputs", self.n_inputs));
        }
        let s = Tensor::from_fn(grid.len(), self.n_inputs, |r, c| if c == factor { grid[r] } else { 0.0 });
        self.clean_batch(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// `n` evenly spaced points over `[lo, hi]`; a single point sits at `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Standard normal truncated to `[-FACTOR_BOUND, FACTOR_BOUND]` by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= FACTOR_BOUND {
            return z;
        }
    }
}
