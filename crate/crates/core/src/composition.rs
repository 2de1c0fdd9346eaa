//! Sampling from the weighted product `prod_i q_i(a)^{w_i}` of several
//! trajectory policies by blending their noise predictions.
//!
//! Each reverse step evaluates `sum_i w_i eps_i(a_t, o, t)` and then takes
//! the same ancestral update a single model would, with one noise draw per
//! step shared by all models.

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    ancestral_sample, rows_to_trajectories, DenoiserModel, NoisePredictor, NoiseSchedule, Normalizer,
};
use crate::error::{check_dim, Error, Result};
use crate::kinematics::{JointConfig, Trajectory};
use crate::sum::ExactSum;

/// Models with a weight below this are not evaluated.
pub const ZERO_WEIGHT: f64 = 1e-12;

/// Allowed deviation of the weight sum from one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CompositionWeights(Vec<f64>);

impl CompositionWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Simplex("no weights".into()));
        }
        if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Simplex(format!("weight {v} is not a non-negative number")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Simplex(format!("weights sum to {total}")));
        }
        Ok(Self(w))
    }

    /// Scale non-negative values to sum to one.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if !(total > 0.0 && total.is_finite()) || raw.iter().any(|v| *v < 0.0) {
            return Err(Error::Simplex(format!("cannot normalise {raw:?}")));
        }
        Self::new(raw.iter().map(|v| v / total).collect())
    }

    pub fn one_hot(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::IndexOutOfRange { what: "one-hot index", index: k, len: n });
        }
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        Self::new(w)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::normalized(&vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

impl TryFrom<Vec<f64>> for CompositionWeights {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<CompositionWeights> for Vec<f64> {
    fn from(w: CompositionWeights) -> Self {
        w.0
    }
}

/// Mutually compatible models (same shapes, schedule, normalisation and
/// sampler settings) with one label each.
#[derive(Clone, Debug)]
pub struct PolicyEnsemble {
    models: Vec<DenoiserModel>,
    labels: Vec<String>,
}

impl PolicyEnsemble {
    pub fn new(models: Vec<DenoiserModel>, labels: Vec<String>) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::invalid("ensemble needs at least one model"))?;
        check_dim("ensemble labels", models.len(), labels.len())?;
        for (m, label) in models.iter().zip(&labels).skip(1) {
            first
                .compatible_with(m)
                .map_err(|e| Error::Incompatible(format!("{label}: {e}")))?;
        }
        Ok(Self { models, labels })
    }

    /// Labels `policy-0`, `policy-1`, ...
    pub fn unlabeled(models: Vec<DenoiserModel>) -> Result<Self> {
        let labels = (0..models.len()).map(|i| format!("policy-{i}")).collect();
        Self::new(models, labels)
    }

    /// This ensemble with one more model appended.
    pub fn with_model(&self, model: DenoiserModel, label: impl Into<String>) -> Result<Self> {
        let mut models = self.models.clone();
        let mut labels = self.labels.clone();
        models.push(model);
        labels.push(label.into());
        Self::new(models, labels)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[DenoiserModel] {
        &self.models
    }

    pub fn model(&self, i: usize) -> &DenoiserModel {
        &self.models[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn traj_len(&self) -> usize {
        self.models[0].arch.traj_len
    }

    pub fn dof(&self) -> usize {
        self.models[0].arch.dof
    }

    pub fn cond_dim(&self) -> usize {
        self.models[0].cond_dim()
    }

    pub fn check_weights(&self, weights: &CompositionWeights) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::Simplex(format!(
                "{} weights for {} models",
                weights.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// The blended predictor seen by the ancestral sampler.
struct Composed<'a> {
    ensemble: &'a PolicyEnsemble,
    weights: &'a CompositionWeights,
}

impl NoisePredictor for Composed<'_> {
    fn schedule(&self) -> &NoiseSchedule {
        &self.ensemble.models[0].schedule
    }

    fn normalizer(&self) -> &Normalizer {
        &self.ensemble.models[0].normalizer
    }

    fn x0_clip(&self) -> Option<f64> {
        self.ensemble.models[0].x0_clip
    }

    fn predict_batch(&self, x: &[f64], cond: &[f64], t: usize, batch: usize) -> Vec<f64> {
        let terms: Vec<(f64, Vec<f64>)> = self
            .ensemble
            .models
            .iter()
            .zip(self.weights.as_slice())
            .filter(|(_, &w)| w >= ZERO_WEIGHT)
            .map(|(m, &w)| (w, m.predict_normalized(x, cond, t, batch)))
            .collect();
        // exactly rounded, so the result ignores model order
        let mut acc = ExactSum::new();
        (0..x.len())
            .map(|k| {
                acc.clear();
                for (w, eps) in &terms {
                    acc.add(w * eps[k]);
                }
                acc.value()
            })
            .collect()
    }
}

/// `sum_i w_i eps_i(a_t, obs, t)` for one normalised noisy state `a_t` and a
/// raw observation.
pub fn composed_eps(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    a_t: &[f64],
    obs: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    ensemble.check_weights(weights)?;
    let m0 = &ensemble.models[0];
    check_dim("noisy sample", m0.data_dim(), a_t.len())?;
    check_dim("observation", m0.cond_dim(), obs.len())?;
    if t == 0 || t > m0.schedule.steps() {
        return Err(Error::IndexOutOfRange {
            what: "diffusion step",
            index: t,
            len: m0.schedule.steps(),
        });
    }
    let mut cond = obs.to_vec();
    m0.normalizer.normalize_cond(&mut cond);
    Ok(Composed { ensemble, weights }.predict_batch(a_t, &cond, t, 1))
}

/// Raw rows sampled from the composition; row `r` uses `cond[r]` and `seeds[r]`.
pub fn composed_sample_rows(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    cond: &[f64],
    seeds: &[u64],
) -> Result<Vec<f64>> {
    ensemble.check_weights(weights)?;
    ancestral_sample(&Composed { ensemble, weights }, cond, seeds)
}

/// One trajectory from the composition; deterministic in `seed`.
pub fn composed_sample(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    obs: &JointConfig,
    seed: u64,
) -> Result<Trajectory> {
    Ok(composed_sample_many(ensemble, weights, std::slice::from_ref(obs), &[seed])?.remove(0))
}

/// `obs[i]` paired with `seeds[i]`; identical to calling [`composed_sample`] per pair.
pub fn composed_sample_many(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    obs: &[JointConfig],
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    check_dim("seeds per observation", obs.len(), seeds.len())?;
    let mut cond = Vec::with_capacity(obs.len() * ensemble.cond_dim());
    for o in obs {
        check_dim("observation", ensemble.cond_dim(), o.dof())?;
        cond.extend_from_slice(o.as_slice());
    }
    let rows = composed_sample_rows(ensemble, weights, &cond, seeds)?;
    let m0 = &ensemble.models[0];
    rows_to_trajectories(rows, m0.arch.traj_len, m0.arch.dof, m0.dt)
}

/// Unconditional composed samples as plain vectors.
pub fn composed_sample_vectors(
    ensemble: &PolicyEnsemble,
    weights: &CompositionWeights,
    seeds: &[u64],
) -> Result<Vec<Vec<f64>>> {
    check_dim("conditioning width", 0, ensemble.cond_dim())?;
    let rows = composed_sample_rows(ensemble, weights, &[], seeds)?;
    Ok(rows.chunks_exact(ensemble.models[0].data_dim()).map(<[f64]>::to_vec).collect())
}

/// Equal-weight composition of two policies that share one mode, sampled at
/// the given observations. Score the result against each parent with MMD-FK.
pub fn mode_filtering_check(
    policy_a: &DenoiserModel,
    policy_b: &DenoiserModel,
    obs: &[JointConfig],
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    let ensemble = PolicyEnsemble::new(
        vec![policy_a.clone(), policy_b.clone()],
        vec!["a".into(), "b".into()],
    )?;
    composed_sample_many(&ensemble, &CompositionWeights::uniform(2)?, obs, seeds)
}
