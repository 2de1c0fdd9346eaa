//! Canned pipelines: few-shot skill tasks (generate, train bases, train the
//! demonstration policy, optimise weights, evaluate rollouts), the 2D
//! two-Gaussian weight sweep and the multi-modal filtering check.
//!
//! Randomness comes from one root seed per run through named substreams:
//! `data/...` for generated sets, `train/...` for model fitting, `opt` for
//! the weight search and `eval` for scored rollouts.

mod modes;
mod svg;
mod toy2d;

pub use modes::{run_mode_filtering, write_mode_filtering, ModeFilteringResult};
pub use svg::{plot, Series};
pub use toy2d::{run_toy2d, write_toy2d, Toy2dConfig, Toy2dPanel};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::composition::{composed_sample_many, CompositionWeights, PolicyEnsemble};
use crate::diffusion::{train_denoiser, Normalizer, TrainConfig, TrainingSet};
use crate::dse::{optimize_weights, vanilla_composition_baseline, DseConfig, DseResult};
use crate::error::{Error, Result};
use crate::io;
use crate::kinematics::{generate_skill_dataset, DemoSet, KinematicChain, SkillKind, SkillSpec, Trajectory};
use crate::mmdfk::{median_heuristic_gamma, mmd_fk, KernelParams, Lift};
use crate::rng;

/// Start configuration of the `arm3` chain used by the presets.
pub const ARM_START: [f64; 3] = [0.0, 1.2, -2.2];

/// Settings shared by every pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub traj_len: usize,
    pub dt: f64,
    /// Trajectories generated per base skill.
    pub base_count: usize,
    /// Held-out reference trajectories and scored rollouts per evaluation.
    pub eval_rollouts: usize,
    pub train: TrainConfig,
    pub dse: DseConfig,
    /// Kernel width; the median heuristic over the base data when absent.
    pub gamma: Option<f64>,
    pub lift: Lift,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig { epochs: 1000, ..TrainConfig::default() };
        Self {
            traj_len: 16,
            dt: 0.1,
            base_count: 200,
            eval_rollouts: 50,
            dse: DseConfig { train: train.clone(), ..DseConfig::default() },
            train,
            gamma: None,
            lift: Lift::Aligned,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.traj_len < 2 || !(self.dt > 0.0) {
            return Err(Error::invalid("trajectories need at least 2 steps and a positive dt"));
        }
        if self.base_count < 2 || self.eval_rollouts < 2 {
            return Err(Error::invalid("base_count and eval_rollouts must be at least 2"));
        }
        self.train.validate()?;
        self.dse.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    /// Chain config file, relative to the spec file; the built-in `arm3`
    /// chain when absent.
    #[serde(default)]
    pub chain: Option<PathBuf>,
    pub bases: Vec<SkillSpec>,
    pub task: SkillSpec,
    pub demo_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

fn skill(kind: SkillKind, amplitude: f64, speed: f64, drift: f64) -> SkillSpec {
    SkillSpec { amplitude, speed, drift, ..SkillSpec::new(kind, ARM_START.to_vec()) }
}

impl ExperimentSpec {
    pub const PRESETS: [&'static str; 3] = ["spiral", "step", "s-motion"];

    /// Built-in tasks on the `arm3` chain.
    pub fn preset(name: &str) -> Result<Self> {
        let line_x = skill(SkillKind::LineX, 0.1, 0.2, 0.1);
        let (bases, task) = match name {
            "spiral" => (
                vec![line_x, skill(SkillKind::CircleX, 0.1, 0.2, 0.1)],
                skill(SkillKind::Spiral, 0.06, 0.12, 0.15),
            ),
            "step" => (
                vec![line_x, skill(SkillKind::LineZ, 0.1, 0.2, 0.1), skill(SkillKind::CircleX, 0.1, 0.2, 0.1)],
                skill(SkillKind::Step, 0.08, 0.1, 0.1),
            ),
            "s-motion" => (
                vec![line_x, skill(SkillKind::LineY, 0.1, 0.2, 0.1), skill(SkillKind::CircleZ, 0.1, 0.2, 0.1)],
                skill(SkillKind::SMotion, 0.05, 0.1, 0.1),
            ),
            other => return Err(Error::invalid(format!("unknown preset {other:?}"))),
        };
        Ok(Self {
            name: name.to_string(),
            chain: None,
            bases,
            task,
            demo_counts: vec![5, 15],
            seeds: vec![0, 1, 2],
            out: None,
            pipeline: PipelineConfig::default(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut spec: Self = io::read_json(path)?;
        if let Some(c) = &spec.chain {
            let dir = path.parent().unwrap_or(Path::new(""));
            spec.chain = Some(dir.join(c));
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bases.is_empty() {
            return Err(Error::invalid("experiment needs at least one base skill"));
        }
        if self.seeds.is_empty() || self.demo_counts.is_empty() {
            return Err(Error::invalid("experiment needs seeds and demo counts"));
        }
        if let Some(n) = self.demo_counts.iter().find(|&&n| n < 2) {
            return Err(Error::invalid(format!("demo count {n} is below 2")));
        }
        if let Some(c) = &self.chain {
            if !c.exists() {
                return Err(Error::invalid(format!("chain file {} does not exist", c.display())));
            }
        }
        self.pipeline.validate()
    }

    /// The chain named by the spec, or `arm3`.
    pub fn load_chain(&self) -> Result<KinematicChain> {
        match &self.chain {
            Some(p) => io::read_chain(p),
            None => Ok(KinematicChain::arm3()),
        }
    }
}

/// Generate one dataset per skill, fit a shared normalisation on their union
/// and train one policy per skill.
pub fn train_skill_policies(
    chain: &KinematicChain,
    skills: &[SkillSpec],
    config: &PipelineConfig,
    seed: u64,
) -> Result<(PolicyEnsemble, Vec<DemoSet>)> {
    let mut sets = Vec::with_capacity(skills.len());
    for (i, s) in skills.iter().enumerate() {
        let data_seed = rng::indexed(rng::substream(seed, "data/base"), i as u64);
        let set = generate_skill_dataset(chain, s, config.base_count, config.traj_len, config.dt, data_seed)
            .map_err(|e| e.in_stage(format!("generating {}", s.kind.name())))?;
        sets.push(set);
    }
    let all = TrainingSet::from_demos(&DemoSet::concat(&sets.iter().collect::<Vec<_>>())?);
    let normalizer = Normalizer::fit(&all.data, all.data_dim(), &all.cond, all.cond_dim)?;
    let mut models = Vec::with_capacity(skills.len());
    for (i, set) in sets.iter().enumerate() {
        let train = TrainConfig {
            seed: rng::indexed(rng::substream(seed, "train/base"), i as u64),
            normalizer: Some(normalizer.clone()),
            ..config.train.clone()
        };
        let model = train_denoiser(set, &train, &Default::default())
            .map_err(|e| e.in_stage(format!("training {}", skills[i].kind.name())))?;
        models.push(model);
    }
    let labels = skills.iter().map(|s| s.kind.name().to_string()).collect();
    Ok((PolicyEnsemble::new(models, labels)?, sets))
}

/// Kernel parameters for a run: the configured width, or the median
/// heuristic over `data`.
pub fn kernel_for(chain: &KinematicChain, config: &PipelineConfig, data: &[&DemoSet]) -> Result<KernelParams> {
    let gamma = match config.gamma {
        Some(g) => g,
        None => {
            let trajs: Vec<Trajectory> = data.iter().flat_map(|d| d.trajectories()).collect();
            median_heuristic_gamma(chain, &trajs, 2000)?
        }
    };
    Ok(KernelParams::new(chain.clone(), gamma)?.with_lift(config.lift))
}

/// Rollouts from the reference observations and their MMD-FK to the
/// reference trajectories.
pub fn evaluate_rollouts(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    reference: &DemoSet,
    params: &KernelParams,
    seed: u64,
) -> Result<(f64, Vec<Trajectory>)> {
    let obs = reference.observations();
    let seeds: Vec<u64> = (0..obs.len() as u64).map(|i| rng::indexed(seed, i)).collect();
    let rollouts = composed_sample_many(ensemble, weights, &obs, &seeds)?;
    Ok((mmd_fk(params, &rollouts, &reference.trajectories())?, rollouts))
}

/// One (seed, demo count) arm of a task run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskArm {
    pub seed: u64,
    pub demos: usize,
    pub gamma: f64,
    /// Held-out rollout scores.
    pub vanilla: f64,
    pub fine_tuned: f64,
    pub dse: f64,
    pub dse_result: DseResult,
    pub vanilla_result: DseResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub demos: usize,
    pub vanilla: f64,
    pub fine_tuned: f64,
    pub dse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    /// Seed means, one row per demo count.
    pub rows: Vec<ResultRow>,
    pub arms: Vec<TaskArm>,
}

/// Rollouts kept for plotting.
pub struct ArmRollouts {
    pub demos: usize,
    pub reference: Vec<Trajectory>,
    pub dse: Vec<Trajectory>,
    pub fine_tuned: Vec<Trajectory>,
}

/// Run a task spec end to end. `log` receives one line per stage. Rollouts
/// of the first seed are returned for plotting.
pub fn run_task(
    spec: &ExperimentSpec,
    chain: &KinematicChain,
    log: &mut dyn FnMut(&str),
) -> Result<(TaskReport, Vec<ArmRollouts>)> {
    spec.validate()?;
    let cfg = &spec.pipeline;
    let max_demos = *spec.demo_counts.iter().max().expect("validated");
    let mut arms = Vec::new();
    let mut plots = Vec::new();
    for (si, &seed) in spec.seeds.iter().enumerate() {
        log(&format!("seed {seed}: training {} base policies", spec.bases.len()));
        let (bases, base_sets) = train_skill_policies(chain, &spec.bases, cfg, seed)?;
        let pool = generate_skill_dataset(chain, &spec.task, max_demos, cfg.traj_len, cfg.dt, rng::substream(seed, "data/demos"))
            .map_err(|e| e.in_stage("generating demonstrations"))?;
        let reference =
            generate_skill_dataset(chain, &spec.task, cfg.eval_rollouts, cfg.traj_len, cfg.dt, rng::substream(seed, "data/reference"))
                .map_err(|e| e.in_stage("generating reference set"))?;
        let params = kernel_for(chain, cfg, &base_sets.iter().collect::<Vec<_>>())?;
        let n_bases = bases.len();
        for &n in &spec.demo_counts {
            log(&format!("seed {seed}: {n} demos"));
            let demos = pool.take(n)?;
            let dse_cfg = DseConfig {
                seed: rng::indexed(rng::substream(seed, "opt"), n as u64),
                ..cfg.dse.clone()
            };
            let (dse_result, few_shot) =
                optimize_weights(&bases, &demos, &params, &dse_cfg).map_err(|e| e.in_stage("weight search"))?;
            let vanilla_result =
                vanilla_composition_baseline(&bases, &demos, &params, &dse_cfg).map_err(|e| e.in_stage("vanilla search"))?;
            let full = bases.with_model(few_shot, "few-shot")?;
            let mut vw = vanilla_result.weights.as_slice().to_vec();
            vw.push(0.0);
            let eval_seed = rng::substream(seed, "eval");
            let score = |w: &CompositionWeights| evaluate_rollouts(&full, w, &reference, &params, eval_seed);
            let (vanilla, _) = score(&CompositionWeights::new(vw)?).map_err(|e| e.in_stage("evaluation"))?;
            let (fine_tuned, ft_rollouts) =
                score(&CompositionWeights::one_hot(n_bases + 1, n_bases)?).map_err(|e| e.in_stage("evaluation"))?;
            let (dse, dse_rollouts) = score(&dse_result.weights).map_err(|e| e.in_stage("evaluation"))?;
            if si == 0 {
                plots.push(ArmRollouts {
                    demos: n,
                    reference: reference.trajectories(),
                    dse: dse_rollouts,
                    fine_tuned: ft_rollouts,
                });
            }
            arms.push(TaskArm {
                seed,
                demos: n,
                gamma: params.gamma,
                vanilla,
                fine_tuned,
                dse,
                dse_result,
                vanilla_result,
            });
        }
    }
    let rows = spec
        .demo_counts
        .iter()
        .map(|&n| {
            let sel: Vec<&TaskArm> = arms.iter().filter(|a| a.demos == n).collect();
            let mean = |f: fn(&TaskArm) -> f64| sel.iter().map(|a| f(a)).sum::<f64>() / sel.len() as f64;
            ResultRow {
                task: spec.name.clone(),
                demos: n,
                vanilla: mean(|a| a.vanilla),
                fine_tuned: mean(|a| a.fine_tuned),
                dse: mean(|a| a.dse),
            }
        })
        .collect();
    Ok((TaskReport { task: spec.name.clone(), rows, arms }, plots))
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// The two world axes along which the end effector spreads most over `reference`.
fn top_axes(chain: &KinematicChain, reference: &[Trajectory]) -> Result<[usize; 2]> {
    let mut pts = Vec::new();
    for t in reference {
        for q in t.steps() {
            pts.push(chain.end_effector(q)?);
        }
    }
    let n = pts.len().max(1) as f64;
    let mean = pts.iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p) / n;
    let var: Vec<f64> = (0..3).map(|k| pts.iter().map(|p| (p[k] - mean[k]).powi(2)).sum()).collect();
    let mut axes = [0usize, 1, 2];
    axes.sort_by(|&a, &b| var[b].total_cmp(&var[a]));
    Ok([axes[0].min(axes[1]), axes[0].max(axes[1])])
}

/// Overlay of reference paths and rollouts for one demo count.
pub fn paths_svg(chain: &KinematicChain, task: &str, arm: &ArmRollouts) -> Result<String> {
    let [a, b] = top_axes(chain, &arm.reference)?;
    let project = |t: &Trajectory| -> Result<Vec<[f64; 2]>> {
        t.steps().map(|q| chain.end_effector(q).map(|p| [p[a], p[b]])).collect()
    };
    let paths = |ts: &[Trajectory]| ts.iter().map(project).collect::<Result<Vec<_>>>();
    let names = ["x", "y", "z"];
    let axes = [names[a], names[b]];
    let series = [
        Series { label: "reference".into(), color: "black", paths: paths(&arm.reference)?, dots: false },
        Series { label: "fine-tuned".into(), color: "darkorange", paths: paths(&arm.fine_tuned)?, dots: false },
        Series { label: "DSE".into(), color: "steelblue", paths: paths(&arm.dse)?, dots: false },
    ];
    Ok(plot(&format!("{task}: end-effector paths, {} demos", arm.demos), axes, &series))
}

/// Write `results.csv`, `summary.json` and one SVG per demo count into `dir`.
pub fn write_task_outputs(
    dir: &Path,
    chain: &KinematicChain,
    report: &TaskReport,
    plots: &[ArmRollouts],
) -> Result<()> {
    io::write_bytes(&dir.join("results.csv"), &results_csv(&report.rows)?)?;
    io::write_json(&dir.join("summary.json"), report)?;
    for arm in plots {
        let svg = paths_svg(chain, &report.task, arm)?;
        io::write_bytes(&dir.join(format!("paths_{}demos.svg", arm.demos)), svg.as_bytes())?;
    }
    Ok(())
}
