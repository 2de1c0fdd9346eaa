//! The `dse` command-line tool.
//!
//! Output paths are relative to the output root: `--out`, else the
//! `DSE_OUT_DIR` environment variable, else the working directory.
//! Results are printed to stdout as JSON. Exit codes: 0 success, 2 usage,
//! 3 data errors, 4 numerical failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::composition::{composed_sample_many, CompositionWeights, PolicyEnsemble};
use crate::diffusion::{train_denoiser, LossWeighting, OptimizerKind, TrainConfig};
use crate::dse::{optimize_weights, vanilla_composition_baseline, DseConfig};
use crate::error::{Error, Result};
use crate::experiment::{
    kernel_for, run_mode_filtering, run_task, run_toy2d, write_mode_filtering, write_task_outputs, write_toy2d,
    ExperimentSpec, PipelineConfig, Toy2dConfig,
};
use crate::io;
use crate::kinematics::{generate_skill_dataset, KinematicChain, SkillKind, SkillSpec};
use crate::mmdfk::{median_heuristic_gamma, mmd_fk, KernelParams, Lift};
use crate::rng;

pub const OUT_ENV: &str = "DSE_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "dse", version, about = "Few-shot skills by composing trajectory diffusion policies")]
pub struct Cli {
    /// Root seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Chain config file, or a built-in chain: `arm3`, `planar3`.
    #[arg(long, global = true)]
    pub chain: Option<String>,
    /// Output root for written files.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a skill dataset by tracking a task-space path with IK.
    GenData(GenDataArgs),
    /// Train a denoiser on a dataset.
    Train(TrainArgs),
    /// Sample trajectories from one model (or an ensemble with weights).
    Sample(SampleArgs),
    /// Sample from a weighted composition of an ensemble.
    ComposeSample(SampleArgs),
    /// MMD-FK between two trajectory files.
    Mmdfk(MmdArgs),
    /// Train the demonstration policy and optimise composition weights.
    Dse(DseArgs),
    /// Optimise weights over the base policies only.
    Vanilla(DseArgs),
    /// Run a task pipeline from a spec file or a preset.
    Experiment(ExperimentArgs),
    /// Two 2D Gaussian models composed over a sweep of weights.
    Toy2d(Toy2dArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_skill)]
    pub skill: SkillKind,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Steps per trajectory.
    #[arg(long, default_value_t = 16)]
    pub len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub speed: Option<f64>,
    #[arg(long)]
    pub drift: Option<f64>,
    /// Half-width of the uniform noise on the start configuration.
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Start configuration, comma separated; a chain-specific default otherwise.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub start: Option<Vec<f64>>,
    /// Directions of `multi-modal-line`, e.g. `1,0,0;0,-1,0`.
    #[arg(long, allow_hyphen_values = true)]
    pub modes: Option<String>,
    /// Output file; `<skill>.jsonl` by default.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Args, Debug, Clone)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, value_delimiter = ',', default_value = "128,128,128")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "sgd")]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value = "uniform")]
    pub weighting: WeightingArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WeightingArg {
    Uniform,
    Schedule,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed,
            weighting: match self.weighting {
                WeightingArg::Uniform => LossWeighting::Uniform,
                WeightingArg::Schedule => LossWeighting::Schedule,
            },
            optimizer: match self.optimizer {
                OptimizerArg::Sgd => OptimizerKind::sgd(),
                OptimizerArg::Adam => OptimizerKind::adam(),
            },
            hidden: self.hidden.clone(),
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Reuse the normalisation of this model so the result composes with it.
    #[arg(long)]
    pub normalizer_from: Option<PathBuf>,
    /// Output model file; `model.json` by default.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long, conflicts_with = "ensemble")]
    pub model: Option<PathBuf>,
    /// Ensemble manifest.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    /// Comma-separated weights or a JSON weights file.
    #[arg(long, requires = "ensemble")]
    pub weights: Option<String>,
    /// Dataset whose observations start the samples (round-robin).
    #[arg(long)]
    pub obs_from: Option<PathBuf>,
    /// A single start configuration.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "obs_from")]
    pub obs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Output file; `samples.jsonl` by default.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LiftArg {
    Aligned,
    Pooled,
}

impl From<LiftArg> for Lift {
    fn from(l: LiftArg) -> Self {
        match l {
            LiftArg::Aligned => Lift::Aligned,
            LiftArg::Pooled => Lift::Pooled,
        }
    }
}

#[derive(Args, Debug)]
pub struct MmdArgs {
    pub first: PathBuf,
    /// When this names the same file as the first, its two halves are compared.
    pub second: PathBuf,
    /// Kernel width; the median heuristic over both sets when absent.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "aligned")]
    pub lift: LiftArg,
}

#[derive(Args, Debug)]
pub struct DseArgs {
    /// Base model files, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "ensemble")]
    pub bases: Vec<PathBuf>,
    /// Ensemble manifest of the base models.
    #[arg(long, conflicts_with = "bases")]
    pub ensemble: Option<PathBuf>,
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "aligned")]
    pub lift: LiftArg,
    #[arg(long, default_value_t = 60)]
    pub opt_iter: usize,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long)]
    pub num_samples: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Experiment spec file.
    #[arg(required_unless_present = "preset")]
    pub spec: Option<PathBuf>,
    /// `spiral`, `step`, `s-motion` or `multi-modal`.
    #[arg(long, conflicts_with = "spec")]
    pub preset: Option<String>,
}

#[derive(Args, Debug)]
pub struct Toy2dArgs {
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
}

fn parse_skill(s: &str) -> std::result::Result<SkillKind, String> {
    SkillKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = SkillKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown skill {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_modes(s: &str) -> Result<Vec<[f64; 3]>> {
    s.split(';')
        .map(|m| {
            let v: Vec<f64> = m
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::invalid(format!("mode {m:?}: {e}"))))
                .collect::<Result<_>>()?;
            <[f64; 3]>::try_from(v).map_err(|_| Error::invalid(format!("mode {m:?} needs 3 components")))
        })
        .collect()
}

struct Context {
    seed: u64,
    chain: Option<String>,
    out: PathBuf,
}

impl Context {
    fn chain(&self) -> Result<KinematicChain> {
        match self.chain.as_deref() {
            None | Some("arm3") => Ok(KinematicChain::arm3()),
            Some("planar3") => Ok(KinematicChain::planar3()),
            Some(path) => io::read_chain(Path::new(path)),
        }
    }

    fn output(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        self.out.join(given.clone().unwrap_or_else(|| PathBuf::from(default)))
    }
}

fn print(value: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("serialisable");
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn default_start(chain: &KinematicChain) -> Vec<f64> {
    if chain.name() == "arm3" {
        crate::experiment::ARM_START.to_vec()
    } else {
        chain.limits().iter().map(|[lo, hi]| 0.5 * (lo + hi) + 0.25 * (hi - lo)).collect()
    }
}

fn gen_data(ctx: &Context, a: &GenDataArgs) -> Result<()> {
    let chain = ctx.chain()?;
    let mut spec = SkillSpec::new(a.skill, a.start.clone().unwrap_or_else(|| default_start(&chain)));
    if let Some(v) = a.amplitude {
        spec.amplitude = v;
    }
    if let Some(v) = a.speed {
        spec.speed = v;
    }
    if let Some(v) = a.drift {
        spec.drift = v;
    }
    if let Some(v) = a.jitter {
        spec.joint_jitter = v;
    }
    if let Some(m) = &a.modes {
        spec.modes = parse_modes(m)?;
    }
    let data = generate_skill_dataset(&chain, &spec, a.count, a.len, a.dt, rng::substream(ctx.seed, "data"))?;
    let path = ctx.output(&a.output, &format!("{}.jsonl", a.skill.name()));
    io::write_dataset(&path, &data)?;
    print(&json!({
        "path": path, "count": data.len(), "len": data.traj_len(), "dof": data.dof(), "skill": a.skill.name(),
    }));
    Ok(())
}

fn train_cmd(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let data = io::read_dataset(&a.data)?;
    let mut config = a.train.config(rng::substream(ctx.seed, "train"));
    let mut schedule = Default::default();
    if let Some(p) = &a.normalizer_from {
        let other = io::read_model(p)?;
        config.normalizer = Some(other.normalizer.clone());
        config.x0_clip = other.x0_clip;
        schedule = other.schedule;
    }
    let model = train_denoiser(&data, &config, &schedule)?;
    let path = ctx.output(&a.output, "model.json");
    io::write_model(&path, &model)?;
    print(&json!({
        "path": path, "epochs": model.meta.epochs, "final_loss": model.meta.final_loss,
        "initial_loss": model.meta.loss_history[0], "params": model.num_params(),
    }));
    Ok(())
}

fn sample_cmd(ctx: &Context, a: &SampleArgs, composed: bool) -> Result<()> {
    let (ensemble, weights) = match (&a.model, &a.ensemble) {
        (Some(m), _) if !composed => {
            let model = io::read_model(m)?;
            (PolicyEnsemble::unlabeled(vec![model])?, CompositionWeights::one_hot(1, 0)?)
        }
        (_, Some(e)) => {
            let ens = io::read_ensemble(e)?;
            let w = match &a.weights {
                Some(w) if Path::new(w).is_file() => io::read_weights(Path::new(w))?,
                Some(w) => io::parse_weights(w)?,
                None if !composed => CompositionWeights::uniform(ens.len())?,
                None => return Err(Error::invalid("compose-sample needs --weights")),
            };
            (ens, w)
        }
        _ => return Err(Error::invalid("give --model or --ensemble")),
    };
    let obs = match (&a.obs_from, &a.obs) {
        (Some(p), _) => {
            let d = io::read_dataset(p)?;
            (0..a.count).map(|i| d.demos()[i % d.len()].obs.clone()).collect()
        }
        (None, Some(q)) => vec![crate::kinematics::JointConfig(q.clone()); a.count],
        (None, None) => return Err(Error::invalid("give --obs-from or --obs")),
    };
    let seeds: Vec<u64> = (0..a.count as u64).map(|i| rng::indexed(rng::substream(ctx.seed, "sample"), i)).collect();
    let trajs = composed_sample_many(&ensemble, &weights, &obs, &seeds)?;
    let path = ctx.output(&a.output, "samples.jsonl");
    let demos: Vec<_> = obs
        .into_iter()
        .zip(trajs)
        .map(|(obs, traj)| crate::kinematics::Demo { obs, traj })
        .collect();
    io::write_bytes(&path, io::dataset_to_string(&demos)?.as_bytes())?;
    print(&json!({ "path": path, "count": demos.len(), "weights": weights.as_slice() }));
    Ok(())
}

fn mmd_cmd(ctx: &Context, a: &MmdArgs) -> Result<()> {
    let chain = ctx.chain()?;
    let first = io::read_dataset(&a.first)?.trajectories();
    let split = a.first == a.second;
    let (x, y) = if split {
        let half = first.len() / 2;
        (first[..half].to_vec(), first[half..].to_vec())
    } else {
        (first, io::read_dataset(&a.second)?.trajectories())
    };
    let gamma = match a.gamma {
        Some(g) => g,
        None => {
            let all: Vec<_> = x.iter().chain(&y).cloned().collect();
            median_heuristic_gamma(&chain, &all, 2000)?
        }
    };
    let params = KernelParams::new(chain, gamma)?.with_lift(a.lift.into());
    let value = mmd_fk(&params, &x, &y)?;
    print(&json!({ "mmd_fk": value, "m": x.len(), "n": y.len(), "gamma": gamma, "split": split }));
    Ok(())
}

fn dse_cmd(ctx: &Context, a: &DseArgs, with_few_shot: bool) -> Result<()> {
    let chain = ctx.chain()?;
    let bases = match &a.ensemble {
        Some(m) => io::read_ensemble(m)?,
        None => {
            let models = a.bases.iter().map(|p| io::read_model(p)).collect::<Result<Vec<_>>>()?;
            let labels = a.bases.iter().map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned()).collect();
            PolicyEnsemble::new(models, labels)?
        }
    };
    let demos = io::read_dataset(&a.demos)?;
    let pipeline = PipelineConfig { gamma: a.gamma, lift: a.lift.into(), ..PipelineConfig::default() };
    let params = kernel_for(&chain, &pipeline, &[&demos])?;
    let config = DseConfig {
        opt_iter: a.opt_iter,
        num_samples: a.num_samples,
        restarts: a.restarts,
        seed: ctx.seed,
        tolerance: a.tolerance,
        train: a.train.config(0),
        ..DseConfig::default()
    };
    let result = if with_few_shot {
        let (result, model) = optimize_weights(&bases, &demos, &params, &config)?;
        io::write_model(&ctx.out.join("few_shot.json"), &model)?;
        io::write_json(&ctx.out.join("dse_result.json"), &result)?;
        result
    } else {
        let result = vanilla_composition_baseline(&bases, &demos, &params, &config)?;
        io::write_json(&ctx.out.join("vanilla_result.json"), &result)?;
        result
    };
    print(&serde_json::to_value(&result)?);
    Ok(())
}

fn experiment_cmd(ctx: &Context, a: &ExperimentArgs) -> Result<()> {
    if a.preset.as_deref() == Some("multi-modal") {
        let chain = ctx.chain()?;
        let config = PipelineConfig::default();
        let mut results = Vec::new();
        for i in 0..3 {
            eprintln!("multi-modal: seed {}", ctx.seed + i);
            results.push(run_mode_filtering(&chain, &config, 50, ctx.seed + i)?);
        }
        let path = ctx.out.join("mode_filtering.csv");
        write_mode_filtering(&path, &results)?;
        print(&json!({ "path": path, "results": results }));
        return Ok(());
    }
    let spec = match (&a.spec, &a.preset) {
        (Some(p), _) => ExperimentSpec::read(p)?,
        (None, Some(name)) => {
            let mut s = ExperimentSpec::preset(name)?;
            s.seeds = s.seeds.iter().map(|k| ctx.seed + k).collect();
            s
        }
        _ => return Err(Error::invalid("give a spec file or --preset")),
    };
    let chain = match &spec.chain {
        Some(_) => spec.load_chain()?,
        None => ctx.chain()?,
    };
    let dir = match &spec.out {
        Some(o) => ctx.out.join(o),
        None => ctx.out.clone(),
    };
    let (report, plots) = run_task(&spec, &chain, &mut |s| eprintln!("{}: {s}", spec.name))?;
    write_task_outputs(&dir, &chain, &report, &plots)?;
    print(&json!({ "dir": dir, "rows": report.rows }));
    Ok(())
}

fn toy2d_cmd(ctx: &Context, a: &Toy2dArgs) -> Result<()> {
    let mut config = Toy2dConfig { samples: a.samples, seed: ctx.seed, ..Toy2dConfig::default() };
    config.train.epochs = a.epochs;
    let panels = run_toy2d(&config)?;
    write_toy2d(&ctx.out, &panels)?;
    let summary: Vec<_> = panels
        .iter()
        .map(|p| json!({ "w1": p.w1, "mean": p.mean, "projection": p.projection }))
        .collect();
    print(&json!({ "dir": ctx.out, "panels": summary }));
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context {
        seed: cli.seed,
        chain: cli.chain,
        out: cli.out.unwrap_or_else(|| PathBuf::from(".")),
    };
    match &cli.command {
        Command::GenData(a) => gen_data(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Sample(a) => sample_cmd(&ctx, a, false),
        Command::ComposeSample(a) => sample_cmd(&ctx, a, true),
        Command::Mmdfk(a) => mmd_cmd(&ctx, a),
        Command::Dse(a) => dse_cmd(&ctx, a, true),
        Command::Vanilla(a) => dse_cmd(&ctx, a, false),
        Command::Experiment(a) => experiment_cmd(&ctx, a),
        Command::Toy2d(a) => toy2d_cmd(&ctx, a),
    }
}

/// Parse the process arguments, run, and return the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
