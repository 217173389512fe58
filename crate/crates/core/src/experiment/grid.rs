use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataBundle, ModelKind, RunManifest, TrainSettings, CHECKPOINT_FILE, HISTORY_FILE, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::metrics::svg::{self, Series};
use crate::metrics::{stability_score, RunReport, StabilityScore};
use crate::system::{linspace, SystemOptions};
use crate::train::{TrainHistory, Trainer};

/// Train one configuration and leave checkpoint, history and manifest in `dir`.
///
/// On a non-finite loss the last finite state is still saved, next to a
/// `diagnostic.json` describing the failure, and the error is returned.
pub fn train_to_dir(bundle: &DataBundle, settings: &TrainSettings, dir: &Path) -> Result<(Trainer, TrainHistory)> {
    settings.check_against(bundle)?;
    fs::create_dir_all(dir)?;
    let model = settings.model_config(&bundle.spec);
    let manifest = RunManifest {
        settings: settings.clone(),
        config_digest: model.digest(),
        system_digest: bundle.digest(),
        model: model.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    let mut trainer = Trainer::new(model, settings.seed, settings.lr)?;
    match trainer.run(&bundle.train, &bundle.eval.x, &settings.train_config(&bundle.train)) {
        Ok(history) => {
            trainer.save(&dir.join(CHECKPOINT_FILE))?;
            history.save_csv(&dir.join(HISTORY_FILE))?;
            Ok((trainer, history))
        }
        Err(e @ Error::NonFinite { .. }) => {
            let diag = serde_json::json!({
                "error": e.to_string(),
                "last_finite_iteration": trainer.iteration(),
                "checkpoint": "last_finite.fec",
            });
            fs::write(dir.join("diagnostic.json"), serde_json::to_string_pretty(&diag)?)?;
            trainer.save(&dir.join("last_finite.fec"))?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn iterations(self) -> u64 {
        match self {
            Scale::Desk => 5000,
            Scale::Full => 20000,
        }
    }

    pub fn dataset_size(self) -> usize {
        match self {
            Scale::Desk => 4000,
            Scale::Full => 10000,
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config(format!("unknown scale {s:?} (expected desk or full)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        })
    }
}

/// One row of the grid, trained once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub kind: ModelKind,
    pub n_latents: usize,
    pub beta: Option<f64>,
    pub seeds: [u64; 2],
}

impl PlannedRun {
    pub fn name(&self) -> String {
        match self.kind {
            ModelKind::Fe => format!("fe-{}", self.n_latents),
            ModelKind::SupervisedFe => "supervised-fe".into(),
            k => format!("{k}-{}", self.n_latents),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub master_seed: u64,
    pub iterations: u64,
    pub dataset_size: usize,
    pub eval_size: usize,
    pub batch_size: usize,
    pub runs: Vec<PlannedRun>,
}

pub const EVAL_SIZE: usize = 2000;

impl ExperimentPlan {
    /// FE with 1 to 6 latents, then VAE, beta-VAE, beta-FE and supervised FE with 6, each under two seeds.
    pub fn standard(master_seed: u64, scale: Scale) -> Self {
        let seeds = [2 * master_seed + 1, 2 * master_seed + 2];
        let mut runs: Vec<PlannedRun> =
            (1..=6).map(|n| PlannedRun { kind: ModelKind::Fe, n_latents: n, beta: None, seeds }).collect();
        for kind in [ModelKind::Vae, ModelKind::BetaVae, ModelKind::BetaFe, ModelKind::SupervisedFe] {
            runs.push(PlannedRun { kind, n_latents: 6, beta: None, seeds });
        }
        Self {
            master_seed,
            iterations: scale.iterations(),
            dataset_size: scale.dataset_size(),
            eval_size: EVAL_SIZE,
            batch_size: 500,
            runs,
        }
    }

    fn settings(&self, run: &PlannedRun, seed: u64) -> TrainSettings {
        TrainSettings {
            model: run.kind,
            latents: run.n_latents,
            beta: run.beta,
            iters: self.iterations,
            batch: self.batch_size,
            seed,
            eval_every: (self.iterations / 10).max(1),
            ..TrainSettings::default()
        }
    }
}

/// Result of one (run, seed) job.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub name: String,
    pub kind: ModelKind,
    pub n_latents: usize,
    pub seed: u64,
    pub result: std::result::Result<RunReport, String>,
}

impl RunOutcome {
    pub fn status(&self) -> String {
        match &self.result {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub outcomes: Vec<RunOutcome>,
    /// Per grid row: the score between its two seeds, or why it is missing.
    pub stability: Vec<(String, std::result::Result<StabilityScore, String>)>,
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

/// Generate the data, train every job of `plan` on up to `jobs` threads and
/// write the tables, per-run artifacts and figures under `out`.
pub fn reproduce(plan: &ExperimentPlan, out: &Path, jobs: usize) -> Result<Summary> {
    fs::create_dir_all(out)?;
    fs::write(out.join("plan.json"), serde_json::to_string_pretty(plan)?)?;
    let bundle = DataBundle::generate(plan.master_seed, &SystemOptions::default(), plan.dataset_size, plan.eval_size)?;
    bundle.save(&out.join("data"))?;

    let tasks: Vec<(&PlannedRun, u64)> = plan.runs.iter().flat_map(|r| r.seeds.iter().map(move |&s| (r, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(run, seed)| {
                let dir = out.join("runs").join(format!("{}-s{seed}", run.name()));
                let result = train_to_dir(&bundle, &plan.settings(run, seed), &dir).and_then(|(t, _)| {
                    let report = RunReport::build(&t.model, &bundle.eval, &bundle.spec, seed)?;
                    report.write_dir(&dir.join("report"))?;
                    Ok(report)
                });
                RunOutcome {
                    name: run.name(),
                    kind: run.kind,
                    n_latents: run.n_latents,
                    seed,
                    result: result.map_err(|e| e.to_string()),
                }
            })
            .collect()
    });

    let stability = plan
        .runs
        .iter()
        .map(|run| {
            let pair: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.name == run.name()).collect();
            let score = match (&pair[0].result, &pair[1].result) {
                (Ok(a), Ok(b)) => stability_score(&a.latents, &b.latents).map_err(|e| e.to_string()),
                _ => Err("skipped: a run of the pair failed".to_string()),
            };
            (run.name(), score)
        })
        .collect();
    let summary = Summary { outcomes, stability };
    write_tables(&summary, out)?;
    write_figures(&summary, &bundle, out)?;
    Ok(summary)
}

fn write_tables(summary: &Summary, out: &Path) -> Result<()> {
    let width = summary.outcomes.iter().map(|o| o.n_latents).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(out.join("table2.csv"))?;
    let mut header = vec!["model".to_string(), "seed".into(), "status".into()];
    header.extend((1..=width).map(|k| format!("re_{k}")));
    w.write_record(&header)?;
    for o in &summary.outcomes {
        let mut row = vec![o.name.clone(), o.seed.to_string(), o.status()];
        let mut cells = vec![String::new(); width];
        if let Ok(r) = &o.result {
            // column k holds the error with k latents in use
            let first = o.n_latents + 1 - r.re.len();
            for (i, re) in r.re.iter().enumerate() {
                cells[first + i - 1] = fmt_f(*re);
            }
        }
        row.extend(cells);
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("stability.csv"))?;
    w.write_record(["model", "latent", "score", "status"])?;
    for (name, s) in &summary.stability {
        match s {
            Ok(s) => {
                for (i, v) in s.per_latent.iter().enumerate() {
                    w.write_record([name.clone(), i.to_string(), fmt_f(*v), "ok".into()])?;
                }
                w.write_record([name.clone(), "mean".into(), fmt_f(s.mean), "ok".into()])?;
            }
            Err(e) => w.write_record([name.clone(), "mean".into(), String::new(), e.clone()])?,
        }
    }
    w.flush()?;
    Ok(())
}

fn write_figures(summary: &Summary, bundle: &DataBundle, out: &Path) -> Result<()> {
    let dir = out.join("figures");
    fs::create_dir_all(&dir)?;

    let grid = linspace(-2.0, 2.0, 41);
    let mut panels = Vec::new();
    for j in 0..bundle.spec.n_inputs {
        let curves = bundle.spec.traversal_curves(j, &grid)?;
        let series = (0..curves.cols().min(8))
            .map(|c| Series { label: format!("x{c}"), points: grid.iter().copied().zip(curves.column(c)).collect() })
            .collect();
        panels.push((format!("S{}", j + 1), series));
    }
    fs::write(dir.join("fig2_system.svg"), svg::small_multiples(&panels, 3))?;

    let re_series: Vec<Series> = summary
        .outcomes
        .iter()
        .filter_map(|o| {
            let r = o.result.as_ref().ok()?;
            let first = o.n_latents + 1 - r.re.len();
            Some(Series {
                label: format!("{} s{}", o.name, o.seed),
                points: r.re.iter().enumerate().map(|(i, &v)| ((first + i) as f64, v)).collect(),
            })
        })
        .collect();
    fs::write(dir.join("fig3b_re.svg"), svg::line_chart("reconstruction error vs latents in use", &re_series))?;

    // the detailed figures follow the first successful six-latent FE run
    if let Some(r) = summary
        .outcomes
        .iter()
        .filter(|o| o.kind == ModelKind::Fe && o.n_latents == 6)
        .find_map(|o| o.result.as_ref().ok())
    {
        let hist: Vec<(String, Vec<Series>)> = ["p1", "p2", "m"]
            .iter()
            .map(|&kind| {
                let series = r
                    .histograms
                    .iter()
                    .filter(|h| h.kind == kind)
                    .map(|h| Series {
                        label: format!("level {}", h.level),
                        points: h
                            .hist
                            .counts
                            .iter()
                            .enumerate()
                            .map(|(b, &c)| (h.hist.bin_left(b), c as f64))
                            .collect(),
                    })
                    .collect();
                (kind.to_string(), series)
            })
            .collect();
        fs::write(dir.join("fig3a_codes.svg"), svg::small_multiples(&hist, 3))?;
        let labels = |p: &str, n: usize| (0..n).map(|i| format!("{p}{}", i + 1)).collect::<Vec<_>>();
        fs::write(
            dir.join("fig3c_mi.svg"),
            svg::heatmap(
                "MI between latents and factors (nats)",
                &r.mi.rows(),
                &labels("L", r.mi.raw.rows()),
                &labels("S", r.mi.raw.cols()),
            ),
        )?;
        let trav: Vec<(String, Vec<Series>)> = (0..r.traversal.n_latents())
            .map(|i| {
                let series = r
                    .traversal
                    .responses
                    .iter()
                    .enumerate()
                    .map(|(j, resp)| Series {
                        label: format!("S{}", j + 1),
                        points: r.traversal.grid.iter().enumerate().map(|(g, &v)| (v, resp.get(g, i))).collect(),
                    })
                    .collect();
                (format!("L{}", i + 1), series)
            })
            .collect();
        fs::write(dir.join("fig3c_traversal.svg"), svg::small_multiples(&trav, 3))?;
    }
    Ok(())
}
