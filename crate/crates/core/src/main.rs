use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fe_lab::error::{Error, Result};
use fe_lab::experiment::{
    default_shape, pca_check, reproduce, train_to_dir, DataBundle, ExperimentPlan, ModelKind, RunManifest, Scale,
    TrainSettings,
};
use fe_lab::metrics::{stability_score, RunReport};
use fe_lab::system::{SystemKind, SystemOptions, DEFAULT_NOISE_STD};
use fe_lab::train::Trainer;

#[derive(Parser)]
#[command(name = "fe-lab", version, about = "Train and evaluate progressively patched autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic system and sample training and held-out data from it.
    GenData(GenData),
    /// Train one model and write its checkpoint, history and manifest.
    Train(Train),
    /// Evaluate a checkpoint on held-out data and write the report files.
    Eval(Eval),
    /// Compare the latents of two checkpoints on the same held-out data.
    Stability(Stability),
    /// Run the full comparison grid and write tables and figures.
    Reproduce(Reproduce),
    /// Compare a linear FE with PCA on a small linear system.
    PcaCheck(PcaCheckArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "nonlinear")]
    kind: SystemKind,
    /// Training samples.
    #[arg(long, default_value_t = 4000)]
    n: usize,
    /// Held-out samples.
    #[arg(long, default_value_t = 2000)]
    n_eval: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_STD)]
    noise_std: f64,
    /// Number of generative factors (default depends on --kind).
    #[arg(long)]
    inputs: Option<usize>,
    /// Number of observed outputs (default depends on --kind).
    #[arg(long)]
    outputs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    /// Directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// JSON file with any subset of the training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    latents: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Stability {
    #[arg(long)]
    ckpt_a: PathBuf,
    #[arg(long)]
    ckpt_b: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Reproduce {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Master seed; every run seed and the dataset derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallel training jobs. FE_LAB_THREADS overrides this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct PcaCheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    latents: usize,
    #[arg(long, default_value_t = 5000)]
    iters: u64,
    #[arg(long)]
    out: PathBuf,
}

fn gen_data(a: GenData) -> Result<()> {
    let (inputs, outputs) = default_shape(a.kind);
    let opts = SystemOptions {
        kind: a.kind,
        n_inputs: a.inputs.unwrap_or(inputs),
        n_outputs: a.outputs.unwrap_or(outputs),
        importance: None,
        noise_std: a.noise_std,
    };
    let bundle = DataBundle::generate(a.seed, &opts, a.n, a.n_eval)?;
    bundle.save(&a.out)?;
    println!("{}", bundle.digest());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let mut s: TrainSettings = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainSettings::default(),
    };
    if let Some(v) = a.model {
        s.model = v;
    }
    if let Some(v) = a.latents {
        s.latents = v;
    }
    if a.beta.is_some() {
        s.beta = a.beta;
    }
    if let Some(v) = a.xi {
        s.xi = v;
    }
    if let Some(v) = a.alpha {
        s.alpha = v;
    }
    if let Some(v) = a.iters {
        s.iters = v;
    }
    if let Some(v) = a.batch {
        s.batch = v;
    }
    if let Some(v) = a.lr {
        s.lr = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.eval_every {
        s.eval_every = v;
    }
    let bundle = DataBundle::load(&a.data)?;
    let (_, history) = train_to_dir(&bundle, &s, &a.out)?;
    if let Some(last) = history.last() {
        let re: Vec<String> = last.re.iter().map(|v| format!("{v:.5}")).collect();
        println!("iteration {} held-out RE per level: {}", last.iteration, re.join(" "));
    }
    Ok(())
}

/// Load a checkpoint and make sure it was trained on the system in `bundle`.
fn load_for(ckpt: &Path, bundle: &DataBundle) -> Result<Trainer> {
    let trainer = Trainer::load(ckpt)?;
    if let Some(m) = RunManifest::load_beside(ckpt)? {
        if m.system_digest != bundle.digest() {
            return Err(Error::Config(format!(
                "{} was trained on system {} but the data comes from {}",
                ckpt.display(),
                m.system_digest,
                bundle.digest()
            )));
        }
        if m.model != *trainer.config() {
            return Err(Error::Config(format!("{} does not match the manifest beside it", ckpt.display())));
        }
    }
    if trainer.config().n_observed != bundle.spec.n_outputs {
        return Err(Error::Config(format!(
            "checkpoint expects {} observed columns, data has {}",
            trainer.config().n_observed,
            bundle.spec.n_outputs
        )));
    }
    Ok(trainer)
}

fn eval(a: Eval) -> Result<()> {
    let bundle = DataBundle::load(&a.data)?;
    let trainer = load_for(&a.ckpt, &bundle)?;
    let report = RunReport::build(&trainer.model, &bundle.eval, &bundle.spec, trainer.seed())?;
    report.write_dir(&a.out)?;
    let re: Vec<String> = report.re.iter().map(|v| format!("{v:.5}")).collect();
    println!("held-out RE per level: {}", re.join(" "));
    Ok(())
}

fn stability(a: Stability) -> Result<()> {
    let bundle = DataBundle::load(&a.data)?;
    let ta = load_for(&a.ckpt_a, &bundle)?;
    let tb = load_for(&a.ckpt_b, &bundle)?;
    let (ca, cb) = (ta.config(), tb.config());
    if (ca.n_latents, ca.baseline_vae, ca.supervised) != (cb.n_latents, cb.baseline_vae, cb.supervised) {
        return Err(Error::Config("the two checkpoints have different latent layouts".into()));
    }
    let score = stability_score(&ta.model.latents(&bundle.eval.x)?, &tb.model.latents(&bundle.eval.x)?)?;
    std::fs::create_dir_all(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("stability.csv"))?;
    w.write_record(["latent", "score"])?;
    for (i, v) in score.per_latent.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.write_record(["mean".to_string(), score.mean.to_string()])?;
    w.flush()?;
    println!("mean stability {:.4}", score.mean);
    Ok(())
}

fn jobs_from_env(flag: usize) -> Result<usize> {
    match std::env::var("FE_LAB_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("FE_LAB_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(flag),
    }
}

fn run_reproduce(a: Reproduce) -> Result<()> {
    let jobs = jobs_from_env(a.jobs)?;
    let plan = ExperimentPlan::standard(a.seed, a.scale);
    let summary = reproduce(&plan, &a.out, jobs)?;
    for o in &summary.outcomes {
        println!("{}-s{}: {}", o.name, o.seed, o.status());
    }
    Ok(())
}

fn run_pca_check(a: PcaCheckArgs) -> Result<()> {
    let check = pca_check(a.seed, a.latents, a.iters, Some(&a.out))?;
    for r in &check.rows {
        println!(
            "k={} fe_re={:.6} pca={:.6} rel_diff={:.4} angle={:.3}deg",
            r.k, r.fe_re, r.pca_error, r.rel_diff, r.angle_deg
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Stability(a) => stability(a),
        Command::Reproduce(a) => run_reproduce(a),
        Command::PcaCheck(a) => run_pca_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
