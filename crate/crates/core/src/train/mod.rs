//! Optimization loop: per-group loss routing, Adam, evaluation history,
//! and resumable checkpoints.

mod checkpoint;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{config_err, Error, Result};
use crate::model::{compute_losses, forward_full, FeModel, ModelConfig, ParamGroup};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub dataset_size: usize,
    pub seed: u64,
    /// Record per-level reconstruction error every this many steps.
    pub eval_every: u64,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 500,
            lr: 1e-3,
            dataset_size: 10_000,
            seed: 0,
            eval_every: 500,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch size must be at least 1");
        }
        if self.batch_size > self.dataset_size {
            return config_err(format!("batch size {} exceeds dataset size {}", self.batch_size, self.dataset_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.eval_every == 0 {
            return config_err("eval_every must be at least 1");
        }
        Ok(())
    }
}

/// Row indices for one batch, drawn uniformly with replacement.
pub fn sample_batch<R: Rng + ?Sized>(n_rows: usize, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n_rows == 0 {
        return config_err("cannot sample batches from an empty dataset");
    }
    if batch_size == 0 {
        return config_err("batch size must be at least 1");
    }
    Ok((0..batch_size).map(|_| rng.random_range(0..n_rows)).collect())
}

/// Endless stream of batch index vectors, reproducible from `seed`.
pub struct BatchStream {
    n_rows: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

pub fn make_batches(n_rows: usize, batch_size: usize, seed: u64) -> Result<BatchStream> {
    if n_rows == 0 {
        return config_err("cannot sample batches from an empty dataset");
    }
    if batch_size == 0 {
        return config_err("batch size must be at least 1");
    }
    Ok(BatchStream { n_rows, batch_size, rng: ChaCha8Rng::seed_from_u64(seed) })
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some((0..self.batch_size).map(|_| self.rng.random_range(0..self.n_rows)).collect())
    }
}

/// Loss values of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub group_losses: Vec<(ParamGroup, f64)>,
    /// Training-batch reconstruction error per level.
    pub recon: Vec<f64>,
    /// Raw KL summed over all latents.
    pub kl: f64,
}

impl StepRecord {
    pub fn loss(&self, g: ParamGroup) -> Option<f64> {
        self.group_losses.iter().find(|(k, _)| *k == g).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    pub iteration: u64,
    /// Held-out reconstruction error per level, eval mode.
    pub re: Vec<f64>,
    pub group_losses: Vec<(ParamGroup, f64)>,
    pub kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    /// CSV with columns `iteration, re_0..re_n, kl, loss_encoder, loss_decoder`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let levels = self.records.first().map_or(0, |r| r.re.len());
        let mut header = vec!["iteration".to_string()];
        header.extend((0..levels).map(|i| format!("re_{i}")));
        header.extend(["kl", "loss_encoder", "loss_decoder"].map(String::from));
        out.write_record(&header)?;
        for r in &self.records {
            let find = |g| r.group_losses.iter().find(|(k, _)| *k == g).map(|(_, v)| *v);
            let enc = find(ParamGroup::Encoder).or_else(|| find(ParamGroup::Encoder0)).unwrap_or(f64::NAN);
            let dec = find(ParamGroup::Decoder).unwrap_or(f64::NAN);
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.re.iter().map(f64::to_string));
            row.extend([r.kl, enc, dec].iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.write_csv(&mut *w).map_err(std::io::Error::other))
    }
}

/// Model parameters plus all optimizer and sampling state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: FeModel,
    pub adam: AdamConfig,
    /// Moments per group (in [`crate::model::FeParams::groups`] order), per tensor.
    pub states: Vec<Vec<AdamState>>,
    seed: u64,
    iteration: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Parameters are initialized from `seed`; sampling uses a separate stream of the same seed.
    pub fn new(config: ModelConfig, seed: u64, lr: f64) -> Result<Self> {
        let model = FeModel::init(config, seed)?;
        let states =
            model.params.groups().iter().map(|(_, m)| m.tensors().map(AdamState::for_param).collect()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self { model, adam: AdamConfig::with_lr(lr), states, seed, iteration: 0, rng })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Draw a batch from `data` and take one step.
    pub fn step_on(&mut self, data: &Dataset, batch_size: usize) -> Result<StepRecord> {
        let idx = sample_batch(data.len(), batch_size, &mut self.rng)?;
        let x = data.x.select_rows(&idx);
        let y = if self.model.config.supervised {
            if !data.has_factors() {
                return config_err("supervised training needs factor labels in the dataset");
            }
            Some(data.s.select_rows(&idx))
        } else {
            None
        };
        self.step(&x, y.as_ref())
    }

    /// One optimization step on an explicit batch.
    pub fn step(&mut self, x: &Tensor, y: Option<&Tensor>) -> Result<StepRecord> {
        self.step_groups(x, y, |_| true)
    }

    /// Like [`Trainer::step`] but only groups accepted by `active` receive
    /// their loss and an optimizer update; the rest are left untouched.
    pub fn step_groups(
        &mut self,
        x: &Tensor,
        y: Option<&Tensor>,
        active: impl Fn(ParamGroup) -> bool,
    ) -> Result<StepRecord> {
        let cfg = &self.model.config;
        let mut tape = Tape::new();
        let out = forward_full(&mut tape, &self.model.params, cfg, x, y, Some(&mut self.rng))?;
        let losses = compute_losses(&mut tape, &out, cfg)?;
        let iteration = self.iteration + 1;

        let group_losses: Vec<(ParamGroup, f64)> =
            losses.routes.iter().map(|&(g, v)| (g, tape.value(v).item())).collect();
        let recon: Vec<f64> = losses.recon.iter().map(|&v| tape.value(v).item()).collect();
        let kl = losses.total_kl(&tape);
        if group_losses.iter().any(|(_, v)| !v.is_finite()) || !kl.is_finite() {
            let detail = group_losses
                .iter()
                .map(|(g, v)| format!("{g}={v}"))
                .chain(std::iter::once(format!("kl={kl}")))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::NonFinite { iteration, detail });
        }

        // every gradient comes from the same pre-update parameters
        for &(g, loss) in &losses.routes {
            if active(g) {
                tape.backward_into(loss, &out.vars.leaves(g))?;
            }
        }
        let adam = self.adam;
        for ((g, mlp), states) in self.model.params.groups_mut().into_iter().zip(&mut self.states) {
            if !active(g) {
                continue;
            }
            let leaves = out.vars.leaves(g);
            for ((param, state), leaf) in mlp.tensors_mut().zip(states.iter_mut()).zip(leaves) {
                match tape.grad(leaf) {
                    Some(grad) => adam_step(param, grad, state, &adam)?,
                    None => adam_step(param, &vec![0.0; param.len()], state, &adam)?,
                }
            }
        }
        self.iteration = iteration;
        Ok(StepRecord { iteration, group_losses, recon, kl })
    }

    /// Train until `cfg.iterations` steps have been taken in total, recording
    /// held-out reconstruction error on `eval_x` every `cfg.eval_every`
    /// steps and after the last one. Saves a checkpoint at the end when
    /// `cfg.checkpoint_path` is set.
    pub fn run(&mut self, data: &Dataset, eval_x: &Tensor, cfg: &TrainConfig) -> Result<TrainHistory> {
        let cfg = TrainConfig { dataset_size: data.len(), ..cfg.clone() };
        cfg.validate()?;
        let mut history = TrainHistory::default();
        while self.iteration < cfg.iterations {
            let rec = self.step_on(data, cfg.batch_size)?;
            if rec.iteration % cfg.eval_every == 0 || rec.iteration == cfg.iterations {
                history.records.push(HistoryRecord {
                    iteration: rec.iteration,
                    re: self.model.recon_errors(eval_x)?,
                    group_losses: rec.group_losses,
                    kl: rec.kl,
                });
            }
        }
        if let Some(path) = &cfg.checkpoint_path {
            self.save(path)?;
        }
        Ok(history)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path)
    }

    /// Load and require the stored model configuration to equal `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let t = checkpoint::load(path)?;
        if &t.model.config != expected {
            return config_err(format!(
                "checkpoint config {} does not match requested config {}",
                t.model.config.digest(),
                expected.digest()
            ));
        }
        Ok(t)
    }
}

/// Fresh trainer, full run. The held-out batch `eval_x` only feeds the history.
pub fn train_run(
    data: &Dataset,
    eval_x: &Tensor,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Trainer, TrainHistory)> {
    let mut trainer = Trainer::new(model_cfg.clone(), cfg.seed, cfg.lr)?;
    let history = trainer.run(data, eval_x, cfg)?;
    Ok((trainer, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_dataset;
    use crate::system::{build_system, SystemOptions};

    fn toy(n: usize) -> Dataset {
        let spec = build_system(3, &SystemOptions::default()).unwrap();
        sample_dataset(&spec, n, 4).unwrap()
    }

    fn small(n: usize) -> ModelConfig {
        ModelConfig {
            encoder_hidden: vec![16],
            nn_hidden: vec![8],
            decoder_hidden: vec![16],
            median_dim: 10,
            ..ModelConfig::fe(n)
        }
    }

    #[test]
    fn batches_are_deterministic() {
        let a: Vec<_> = make_batches(100, 7, 9).unwrap().take(5).collect();
        let b: Vec<_> = make_batches(100, 7, 9).unwrap().take(5).collect();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&i| i < 100));
        assert!(make_batches(0, 7, 9).is_err());
    }

    #[test]
    fn full_size_batch_draws_with_replacement() {
        let b = make_batches(50, 50, 1).unwrap().next().unwrap();
        assert_eq!(b.len(), 50);
        let mut u = b.clone();
        u.sort_unstable();
        u.dedup();
        assert!(u.len() < 50);
    }

    #[test]
    fn coupon_collector_coverage() {
        // P(a row is never drawn in 5e6 draws from 1e4) = (1 - 1e-4)^(5e6) ~ e^-500
        let mut seen = vec![false; 10_000];
        for b in make_batches(10_000, 500, 2).unwrap().take(10_000) {
            for i in b {
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn zero_iterations_returns_init() {
        let data = toy(50);
        let cfg = TrainConfig { iterations: 0, batch_size: 10, ..TrainConfig::default() };
        let (t, h) = train_run(&data, &data.x, &small(3), &cfg).unwrap();
        assert!(h.records.is_empty());
        assert_eq!(t.model, FeModel::init(small(3), 0).unwrap());
    }

    #[test]
    fn history_is_increasing_and_deterministic() {
        let data = toy(200);
        let cfg = TrainConfig { iterations: 25, batch_size: 20, eval_every: 10, seed: 5, ..TrainConfig::default() };
        let (_, h1) = train_run(&data, &data.x, &small(3), &cfg).unwrap();
        let (_, h2) = train_run(&data, &data.x, &small(3), &cfg).unwrap();
        assert_eq!(h1, h2);
        let its: Vec<u64> = h1.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, [10, 20, 25]);
        let mut buf = Vec::new();
        h1.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,re_0,re_1,re_2,kl,loss_encoder,loss_decoder\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn vae_routes_two_groups() {
        let data = toy(40);
        let cfg =
            ModelConfig { encoder_hidden: vec![8], nn_hidden: vec![8], decoder_hidden: vec![8], ..ModelConfig::vae(3) };
        let mut t = Trainer::new(cfg, 1, 1e-3).unwrap();
        let rec = t.step_on(&data, 10).unwrap();
        let groups: Vec<_> = rec.group_losses.iter().map(|(g, _)| *g).collect();
        assert_eq!(groups, [ParamGroup::Encoder, ParamGroup::Decoder]);
    }

    #[test]
    fn group_isolation() {
        let data = toy(40);
        let mut t = Trainer::new(small(4), 2, 1e-2).unwrap();
        let before = t.model.params.clone();
        let x = data.x.slice_rows(0, 20);
        t.step_groups(&x, None, |g| g == ParamGroup::Nn(2)).unwrap();
        for ((g, a), (_, b)) in before.groups().into_iter().zip(t.model.params.groups()) {
            assert_eq!(a == b, g != ParamGroup::Nn(2), "{g}");
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut data = toy(20);
        data.x.data_mut()[3] = f64::NAN;
        let mut t = Trainer::new(small(2), 0, 1e-3).unwrap();
        match t.step(&data.x, None) {
            Err(Error::NonFinite { iteration, .. }) => assert_eq!(iteration, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn supervised_needs_labels() {
        let data = toy(20);
        let cfg = ModelConfig { supervised: true, ..small(3) };
        let mut t = Trainer::new(cfg, 0, 1e-3).unwrap();
        assert!(t.step(&data.x, None).is_err());
        assert!(t.step_on(&data, 5).is_ok());
    }

    #[test]
    fn batch_larger_than_dataset_rejected() {
        let data = toy(10);
        let cfg = TrainConfig { iterations: 1, batch_size: 11, ..TrainConfig::default() };
        assert!(matches!(train_run(&data, &data.x, &small(2), &cfg), Err(Error::Config(_))));
    }
}
