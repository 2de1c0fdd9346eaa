//! Composition-weight estimation: choose simplex weights over a set of base
//! policies plus a policy trained on the few demonstrations by minimising
//! MMD-FK between composed samples and those demonstrations.
//!
//! The search runs Nelder–Mead over softmax logits (last logit pinned at
//! zero). Every restart first scores the simplex corners, then starts from
//! its own initial point. All evaluations within a restart share one noise
//! seed so the optimiser sees a deterministic surface.

mod nelder_mead;

pub use nelder_mead::{minimize, NelderMeadOptions, NelderMeadResult};

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::composition::{composed_sample_many, CompositionWeights, PolicyEnsemble};
use crate::diffusion::{train_denoiser, DenoiserModel, TrainConfig};
use crate::error::{check_dim, Error, Result};
use crate::kinematics::{DemoSet, Trajectory};
use crate::mmdfk::{mmd_fk, KernelParams};
use crate::rng;

/// Offset keeping the inverse-distance initial weights finite.
pub const SIMILARITY_DELTA: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseConfig {
    /// Objective evaluations per restart, corners included.
    pub opt_iter: usize,
    /// Composed samples per objective evaluation; derived from the number
    /// of demonstrations when absent.
    #[serde(default)]
    pub num_samples: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
    /// Stop a restart once the objective spread over the search simplex is below this.
    pub tolerance: f64,
    /// Initial simplex edge in logit space.
    pub initial_step: f64,
    /// Training of the demonstration policy.
    pub train: TrainConfig,
}

impl Default for DseConfig {
    fn default() -> Self {
        Self {
            opt_iter: 60,
            num_samples: None,
            restarts: 4,
            seed: 0,
            tolerance: 1e-3,
            initial_step: 1.0,
            train: TrainConfig::default(),
        }
    }
}

impl DseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.opt_iter == 0 || self.restarts == 0 {
            return Err(Error::invalid("opt_iter and restarts must be positive"));
        }
        if matches!(self.num_samples, Some(n) if n < 2) {
            return Err(Error::invalid("num_samples must be at least 2"));
        }
        if !(self.tolerance >= 0.0 && self.initial_step > 0.0) {
            return Err(Error::invalid("tolerance must be non-negative and the initial step positive"));
        }
        self.train.validate()
    }

    /// `max(demos, 16)` capped at 64 unless set explicitly.
    pub fn sample_count(&self, demos: usize) -> usize {
        self.num_samples.unwrap_or(demos.clamp(16, 64))
    }

    /// Noise seed shared by every evaluation of restart `r`.
    pub fn restart_seed(&self, r: usize) -> u64 {
        rng::indexed(rng::substream(self.seed, "opt"), r as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub weights: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub initial_weights: Vec<f64>,
    pub noise_seed: u64,
    pub evaluations: Vec<Evaluation>,
    /// Best objective after each evaluation.
    pub best_so_far: Vec<f64>,
    pub best_weights: Vec<f64>,
    pub best_objective: f64,
    pub converged: bool,
}

/// Corner objectives measured with the noise seed of the winning restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// One-hot weight on the demonstration policy.
    pub few_shot: Option<f64>,
    /// Best one-hot weight on a base policy.
    pub best_base: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseResult {
    pub labels: Vec<String>,
    pub weights: CompositionWeights,
    pub objective: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartTrace>,
    pub baselines: Baselines,
    /// No restart met the tolerance within its budget.
    pub exhausted: bool,
}

/// MMD-FK between `num_samples` composed trajectories and the demonstrations.
/// Sample `i` is conditioned on demo `i mod |demos|` and seeded from `(seed, i)`.
pub fn dse_objective(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    demos: &DemoSet,
    params: &KernelParams,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    let samples = composed_rollouts(ensemble, weights, demos, num_samples, seed)?;
    mmd_fk(params, &samples, &demos.trajectories())
}

/// `count` composed trajectories started round-robin from the demo observations.
pub fn composed_rollouts(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    demos: &DemoSet,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let obs: Vec<_> = (0..count).map(|i| demos.demos()[i % demos.len()].obs.clone()).collect();
    let seeds: Vec<u64> = (0..count as u64).map(|i| rng::indexed(seed, i)).collect();
    composed_sample_many(ensemble, weights, &obs, &seeds)
}

fn softmax(logits: &[f64]) -> Result<CompositionWeights> {
    let max = logits.iter().copied().fold(0.0, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    e.push((-max).exp());
    CompositionWeights::normalized(&e)
}

fn logits(w: &[f64]) -> Vec<f64> {
    let floor = 1e-6;
    let last = w[w.len() - 1].max(floor).ln();
    w[..w.len() - 1].iter().map(|v| v.max(floor).ln() - last).collect()
}

fn random_simplex(n: usize, r: &mut rng::Rng) -> Vec<f64> {
    // normalised exponentials are Dirichlet(1, ..., 1)
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(r)).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

/// Weight search over a fixed ensemble.
pub fn optimize_ensemble(
    ensemble: &PolicyEnsemble,
    demos: &DemoSet,
    params: &KernelParams,
    config: &DseConfig,
    few_shot_index: Option<usize>,
) -> Result<DseResult> {
    config.validate()?;
    if demos.len() < 2 {
        return Err(Error::TooFewSamples { what: "demonstrations", min: 2, got: demos.len() });
    }
    check_dim("demo trajectory length", ensemble.traj_len(), demos.traj_len())?;
    check_dim("demo dof", ensemble.dof(), demos.dof())?;
    let k = ensemble.len();
    let count = config.sample_count(demos.len());
    let mut init_rng = rng::rng_from(rng::substream(config.seed, "init-weights"));
    let mut traces: Vec<RestartTrace> = Vec::with_capacity(config.restarts);
    let mut corner_values: Vec<Vec<f64>> = Vec::with_capacity(config.restarts);

    for r in 0..config.restarts {
        let noise_seed = config.restart_seed(r);
        let mut evaluations = Vec::new();
        let mut best_so_far = Vec::new();
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut evaluate = |w: &CompositionWeights| -> Result<f64> {
            let v = dse_objective(ensemble, w, demos, params, count, noise_seed)?;
            if !v.is_finite() {
                return Err(Error::invalid("objective is not finite"));
            }
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((w.as_slice().to_vec(), v));
            }
            evaluations.push(Evaluation { weights: w.as_slice().to_vec(), objective: v });
            best_so_far.push(best.as_ref().map(|(_, b)| *b).unwrap());
            Ok(v)
        };

        let mut corners = Vec::with_capacity(k);
        for i in 0..k {
            corners.push(evaluate(&CompositionWeights::one_hot(k, i)?)?);
        }
        let initial = if r == 0 {
            let inv: Vec<f64> = corners.iter().map(|c| 1.0 / (c.max(0.0) + SIMILARITY_DELTA)).collect();
            CompositionWeights::normalized(&inv)?.as_slice().to_vec()
        } else {
            random_simplex(k, &mut init_rng)
        };
        let mut converged = false;
        if k > 1 {
            let budget = config.opt_iter.saturating_sub(k);
            if budget > 0 {
                let opts = NelderMeadOptions {
                    step: config.initial_step,
                    tolerance: config.tolerance,
                    max_evals: budget,
                };
                converged = minimize(|z: &[f64]| evaluate(&softmax(z)?), &logits(&initial), &opts)?.converged;
            }
        } else {
            converged = true;
        }
        let (best_weights, best_objective) = best.expect("corners were evaluated");
        traces.push(RestartTrace {
            initial_weights: initial,
            noise_seed,
            evaluations,
            best_so_far,
            best_weights,
            best_objective,
            converged,
        });
        corner_values.push(corners);
    }

    // lowest objective wins, ties to the earlier restart
    let best_restart = (0..traces.len())
        .min_by(|&a, &b| traces[a].best_objective.total_cmp(&traces[b].best_objective))
        .expect("at least one restart");
    let win = &traces[best_restart];
    let corners = &corner_values[best_restart];
    let best_base = (0..k)
        .filter(|&i| Some(i) != few_shot_index)
        .map(|i| corners[i])
        .fold(f64::INFINITY, f64::min);
    Ok(DseResult {
        labels: ensemble.labels().to_vec(),
        weights: CompositionWeights::new(win.best_weights.clone())?,
        objective: win.best_objective,
        best_restart,
        baselines: Baselines { few_shot: few_shot_index.map(|i| corners[i]), best_base },
        exhausted: traces.iter().all(|t| !t.converged),
        restarts: traces,
    })
}

/// Train the demonstration policy with the bases' normalisation so that it
/// composes with them.
pub fn train_few_shot(bases: &PolicyEnsemble, demos: &DemoSet, config: &DseConfig) -> Result<DenoiserModel> {
    let base = bases.model(0);
    let train = TrainConfig {
        seed: rng::substream(config.seed, "few-shot"),
        normalizer: Some(base.normalizer.clone()),
        x0_clip: base.x0_clip,
        ..config.train.clone()
    };
    train_denoiser(demos, &train, &base.schedule).map_err(|e| e.in_stage("few-shot training"))
}

/// Train the demonstration policy, append it to the bases and optimise the
/// weights over all of them. Returns the result and the trained policy.
pub fn optimize_weights(
    bases: &PolicyEnsemble,
    demos: &DemoSet,
    params: &KernelParams,
    config: &DseConfig,
) -> Result<(DseResult, DenoiserModel)> {
    config.validate()?;
    let few_shot = train_few_shot(bases, demos, config)?;
    let ensemble = bases.with_model(few_shot.clone(), "few-shot")?;
    let result = optimize_ensemble(&ensemble, demos, params, config, Some(bases.len()))?;
    Ok((result, few_shot))
}

/// The same search restricted to the base policies.
pub fn vanilla_composition_baseline(
    bases: &PolicyEnsemble,
    demos: &DemoSet,
    params: &KernelParams,
    config: &DseConfig,
) -> Result<DseResult> {
    optimize_ensemble(bases, demos, params, config, None)
}

/// Mean squared joint error between paired rollouts and demonstrations,
/// averaged over demos, steps and joints.
pub fn mse_vs_demos(rollouts: &[Trajectory], demos: &DemoSet) -> Result<f64> {
    check_dim("rollouts per demo", demos.len(), rollouts.len())?;
    let mut total = 0.0;
    for (r, d) in rollouts.iter().zip(demos) {
        check_dim("rollout length", d.traj.len(), r.len())?;
        check_dim("rollout dof", d.traj.dof(), r.dof())?;
        let sq: f64 = r.as_flat().iter().zip(d.traj.as_flat()).map(|(a, b)| (a - b).powi(2)).sum();
        total += sq / r.as_flat().len() as f64;
    }
    Ok(total / demos.len() as f64)
}

/// [`mse_vs_demos`] for one composed rollout per demo, started at its observation.
pub fn rollout_mse(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    demos: &DemoSet,
    seed: u64,
) -> Result<f64> {
    let rollouts = composed_rollouts(ensemble, weights, demos, demos.len(), seed)?;
    mse_vs_demos(&rollouts, demos)
}
