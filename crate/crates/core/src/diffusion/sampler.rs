use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Result};
use crate::kinematics::{JointConfig, Trajectory};
use crate::rng;

use super::model::{DenoiserModel, Normalizer};
use super::schedule::NoiseSchedule;

/// Anything that predicts the added noise for a batch of normalised states.
pub trait NoisePredictor {
    fn schedule(&self) -> &NoiseSchedule;
    fn normalizer(&self) -> &Normalizer;
    fn x0_clip(&self) -> Option<f64>;
    /// `x`: `batch` rows of normalised noisy data; `cond`: normalised
    /// conditioning rows. Returns `batch` rows of noise predictions.
    fn predict_batch(&self, x: &[f64], cond: &[f64], t: usize, batch: usize) -> Vec<f64>;
}

impl NoisePredictor for DenoiserModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    fn x0_clip(&self) -> Option<f64> {
        self.x0_clip
    }

    fn predict_batch(&self, x: &[f64], cond: &[f64], t: usize, batch: usize) -> Vec<f64> {
        self.predict_normalized(x, cond, t, batch)
    }
}

/// Ancestral DDPM sampling from `t = T` down to `t = 1`.
///
/// Row `r` is conditioned on `cond[r]` (raw) and driven by its own
/// generator seeded with `seeds[r]`: it draws `a_T` first and then one
/// standard-normal vector per step with `t > 1`. Returns raw rows.
///
/// With a clip bound the mean step goes through the clean-sample estimate
/// clamped to `[-clip, clip]` in normalised units.
pub fn ancestral_sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    cond: &[f64],
    seeds: &[u64],
) -> Result<Vec<f64>> {
    let norm = predictor.normalizer();
    let schedule = predictor.schedule();
    let (d, c) = (norm.data_dim(), norm.cond_dim());
    let batch = seeds.len();
    check_dim("sampler conditioning", batch * c, cond.len())?;
    let mut cn = cond.to_vec();
    norm.normalize_cond(&mut cn);

    let mut rngs: Vec<_> = seeds.iter().map(|&s| rng::rng_from(s)).collect();
    let mut x: Vec<f64> = Vec::with_capacity(batch * d);
    for r in rngs.iter_mut() {
        x.extend((0..d).map(|_| -> f64 { StandardNormal.sample(r) }));
    }
    for t in (1..=schedule.steps()).rev() {
        let eps = predictor.predict_batch(&x, &cn, t, batch);
        let (alpha, ab) = (schedule.alpha(t), schedule.alpha_bar(t));
        match predictor.x0_clip() {
            Some(clip) => {
                // posterior mean written through a bounded clean-sample estimate
                let ab_prev = schedule.alpha_bar(t - 1);
                let c0 = ab_prev.sqrt() * schedule.beta(t) / (1.0 - ab);
                let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
                for (v, e) in x.iter_mut().zip(&eps) {
                    let x0 = ((*v - sn * e) / sa).clamp(-clip, clip);
                    *v = c0 * x0 + ct * *v;
                }
            }
            None => {
                let coef = schedule.beta(t) / (1.0 - ab).sqrt();
                let inv_sqrt_alpha = 1.0 / alpha.sqrt();
                for (v, e) in x.iter_mut().zip(&eps) {
                    *v = inv_sqrt_alpha * (*v - coef * e);
                }
            }
        }
        if t > 1 {
            let sigma = schedule.posterior_variance(t).sqrt();
            for (r, g) in rngs.iter_mut().enumerate() {
                for v in &mut x[r * d..(r + 1) * d] {
                    let z: f64 = StandardNormal.sample(g);
                    *v += sigma * z;
                }
            }
        }
    }
    norm.denormalize_data(&mut x);
    Ok(x)
}

pub(crate) fn rows_to_trajectories(
    rows: Vec<f64>,
    traj_len: usize,
    dof: usize,
    dt: f64,
) -> Result<Vec<Trajectory>> {
    rows.chunks_exact(traj_len * dof)
        .map(|r| Trajectory::from_flat(r.to_vec(), dof, dt))
        .collect()
}

fn flatten_obs(model: &DenoiserModel, obs: &[JointConfig]) -> Result<Vec<f64>> {
    let mut cond = Vec::with_capacity(obs.len() * model.cond_dim());
    for o in obs {
        check_dim("observation", model.cond_dim(), o.dof())?;
        cond.extend_from_slice(o.as_slice());
    }
    Ok(cond)
}

/// One trajectory conditioned on `obs`; deterministic in `seed`.
pub fn sample(model: &DenoiserModel, obs: &JointConfig, seed: u64) -> Result<Trajectory> {
    Ok(sample_many(model, std::slice::from_ref(obs), &[seed])?.remove(0))
}

/// `obs[i]` paired with `seeds[i]`; identical to calling [`sample`] per pair.
pub fn sample_many(
    model: &DenoiserModel,
    obs: &[JointConfig],
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    check_dim("seeds per observation", obs.len(), seeds.len())?;
    let cond = flatten_obs(model, obs)?;
    let rows = ancestral_sample(model, &cond, seeds)?;
    rows_to_trajectories(rows, model.arch.traj_len, model.arch.dof, model.dt)
}

/// Unconditional samples as plain vectors (for `traj_len = 1` models).
pub fn sample_vectors(model: &DenoiserModel, seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
    check_dim("conditioning width", 0, model.cond_dim())?;
    let rows = ancestral_sample(model, &[], seeds)?;
    Ok(rows.chunks_exact(model.data_dim()).map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{train, TrainConfig, TrainingSet};

    fn toy_model(clip: Option<f64>) -> DenoiserModel {
        let rows: Vec<Vec<f64>> = (0..32).map(|i| vec![(i as f64 * 0.7).sin(), 1.0]).collect();
        let config = TrainConfig {
            epochs: 3,
            hidden: vec![8],
            time_embed_dim: 4,
            x0_clip: clip,
            ..TrainConfig::default()
        };
        train(&TrainingSet::from_vectors(&rows).unwrap(), &config, &NoiseSchedule::default()).unwrap()
    }

    #[test]
    fn same_seed_same_sample_different_seed_different_sample() {
        for clip in [None, Some(4.0)] {
            let m = toy_model(clip);
            let a = sample_vectors(&m, &[3, 4]).unwrap();
            let b = sample_vectors(&m, &[3]).unwrap();
            assert_eq!(a[0], b[0]);
            assert_ne!(a[0], a[1]);
            assert!(a.iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn batch_equals_individual_calls() {
        let m = toy_model(Some(4.0));
        let seeds = [9, 1, 5];
        let all = sample_vectors(&m, &seeds).unwrap();
        for (i, &s) in seeds.iter().enumerate() {
            assert_eq!(all[i], sample_vectors(&m, &[s]).unwrap()[0]);
        }
    }

    #[test]
    fn conditioning_width_is_checked() {
        let m = toy_model(None);
        assert!(ancestral_sample(&m, &[0.0], &[1]).is_err());
        assert!(sample(&m, &JointConfig(vec![0.0]), 1).is_err());
    }
}
