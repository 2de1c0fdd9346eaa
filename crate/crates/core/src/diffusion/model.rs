use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

use super::mlp::{Activation, Mlp};
use super::schedule::NoiseSchedule;

/// Shape of a denoiser: what it denoises and how it is conditioned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Trajectory length `L` (1 for plain vectors).
    pub traj_len: usize,
    /// Values per step (joint count for trajectories).
    pub dof: usize,
    /// Conditioning width (0 for unconditional models).
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn data_dim(&self) -> usize {
        self.traj_len * self.dof
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim() + self.cond_dim + self.time_embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim() == 0 {
            return Err(Error::invalid("denoiser data dimension must be positive"));
        }
        if self.time_embed_dim % 2 != 0 || self.time_embed_dim == 0 {
            return Err(Error::invalid("time embedding width must be even and positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }

    pub(crate) fn mlp(&self) -> Mlp {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.data_dim());
        Mlp::new(dims, self.activation)
    }
}

/// Per-dimension affine normalisation of data and conditioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub data_mean: Vec<f64>,
    pub data_std: Vec<f64>,
    pub cond_mean: Vec<f64>,
    pub cond_std: Vec<f64>,
}

/// Smallest standard deviation used when normalising a dimension.
pub const STD_FLOOR: f64 = 1e-3;

fn moments(rows: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    if dim == 0 {
        return (vec![], vec![]);
    }
    let n = rows.len() / dim;
    let mut mean = vec![0.0; dim];
    for r in rows.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in rows.chunks_exact(dim) {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| (s / n as f64).sqrt().max(STD_FLOOR))
        .collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity(data_dim: usize, cond_dim: usize) -> Self {
        Self {
            data_mean: vec![0.0; data_dim],
            data_std: vec![1.0; data_dim],
            cond_mean: vec![0.0; cond_dim],
            cond_std: vec![1.0; cond_dim],
        }
    }

    /// Fit to row-major `data` (`n x data_dim`) and `cond` (`n x cond_dim`).
    pub fn fit(data: &[f64], data_dim: usize, cond: &[f64], cond_dim: usize) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (data_mean, data_std) = moments(data, data_dim);
        let (cond_mean, cond_std) = moments(cond, cond_dim);
        Ok(Self {
            data_mean,
            data_std,
            cond_mean,
            cond_std,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_mean.len()
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_mean.len()
    }

    fn apply(rows: &mut [f64], mean: &[f64], std: &[f64]) {
        if mean.is_empty() {
            return;
        }
        for r in rows.chunks_exact_mut(mean.len()) {
            for ((v, m), s) in r.iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn normalize_data(&self, rows: &mut [f64]) {
        Self::apply(rows, &self.data_mean, &self.data_std);
    }

    pub fn normalize_cond(&self, rows: &mut [f64]) {
        Self::apply(rows, &self.cond_mean, &self.cond_std);
    }

    pub fn denormalize_data(&self, rows: &mut [f64]) {
        for r in rows.chunks_exact_mut(self.data_dim()) {
            for ((v, m), s) in r.iter_mut().zip(&self.data_mean).zip(&self.data_std) {
                *v = *v * s + m;
            }
        }
    }
}

/// Provenance recorded alongside a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub loss_history: Vec<f64>,
    pub num_examples: usize,
}

/// Conditional noise predictor `eps(a_t, o, t)` with its schedule and
/// normalisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserModel {
    pub arch: Architecture,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    /// Seconds per trajectory step of the data the model was trained on.
    pub dt: f64,
    pub params: Vec<f64>,
    /// Bound on the normalised clean-sample estimate during sampling.
    #[serde(default)]
    pub x0_clip: Option<f64>,
    #[serde(default)]
    pub meta: TrainingMeta,
    #[serde(skip)]
    mlp: Option<Mlp>,
}

impl DenoiserModel {
    pub fn new(
        arch: Architecture,
        schedule: NoiseSchedule,
        normalizer: Normalizer,
        dt: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self {
            arch,
            schedule,
            normalizer,
            dt,
            params,
            x0_clip: None,
            meta: TrainingMeta::default(),
            mlp: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Check invariants and build the evaluation plan. Models read from disk
    /// go through this before use.
    pub fn validate(&mut self) -> Result<()> {
        self.arch.validate()?;
        check_dim("normalizer data", self.arch.data_dim(), self.normalizer.data_dim())?;
        check_dim("normalizer conditioning", self.arch.cond_dim, self.normalizer.cond_dim())?;
        let mlp = self.arch.mlp();
        check_dim("parameter vector", mlp.num_params(), self.params.len())?;
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("model dt must be positive"));
        }
        if let Some(c) = self.x0_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("x0 clip must be positive"));
            }
        }
        self.mlp = Some(mlp);
        Ok(())
    }

    pub(crate) fn mlp(&self) -> &Mlp {
        self.mlp.as_ref().expect("validated model")
    }

    pub fn data_dim(&self) -> usize {
        self.arch.data_dim()
    }

    pub fn cond_dim(&self) -> usize {
        self.arch.cond_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Sinusoidal embedding of the diffusion step.
    pub fn time_embedding(&self, t: usize) -> Vec<f64> {
        time_embedding(t, self.arch.time_embed_dim)
    }

    /// Assemble `[x_t | cond | emb(t)]` rows (inputs already normalised).
    pub(crate) fn network_input(&self, x: &[f64], cond: &[f64], t: usize, batch: usize) -> Vec<f64> {
        let (d, c) = (self.data_dim(), self.cond_dim());
        let emb = self.time_embedding(t);
        let mut input = Vec::with_capacity(batch * self.arch.input_dim());
        for r in 0..batch {
            input.extend_from_slice(&x[r * d..(r + 1) * d]);
            input.extend_from_slice(&cond[r * c..(r + 1) * c]);
            input.extend_from_slice(&emb);
        }
        input
    }

    /// Noise prediction for `batch` rows of normalised `x` and conditioning.
    pub fn predict_normalized(&self, x: &[f64], cond: &[f64], t: usize, batch: usize) -> Vec<f64> {
        let input = self.network_input(x, cond, t, batch);
        self.mlp().forward(&self.params, &input, batch)
    }

    /// Noise prediction for a single normalised state and raw observation.
    pub fn predict_eps(&self, x: &[f64], obs: &[f64], t: usize) -> Result<Vec<f64>> {
        check_dim("noisy sample", self.data_dim(), x.len())?;
        check_dim("observation", self.cond_dim(), obs.len())?;
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::IndexOutOfRange {
                what: "diffusion step",
                index: t,
                len: self.schedule.steps(),
            });
        }
        let mut cond = obs.to_vec();
        self.normalizer.normalize_cond(&mut cond);
        Ok(self.predict_normalized(x, &cond, t, 1))
    }

    /// Whether `other` can be composed with this model: same shape, schedule
    /// and normalisation.
    pub fn compatible_with(&self, other: &DenoiserModel) -> Result<()> {
        if self.arch.traj_len != other.arch.traj_len
            || self.arch.dof != other.arch.dof
            || self.arch.cond_dim != other.arch.cond_dim
        {
            return Err(Error::Incompatible("data or conditioning shapes differ".into()));
        }
        if self.schedule != other.schedule {
            return Err(Error::Incompatible("noise schedules differ".into()));
        }
        if self.normalizer != other.normalizer {
            return Err(Error::Incompatible("normalisation constants differ".into()));
        }
        if self.x0_clip != other.x0_clip {
            return Err(Error::Incompatible("sampler clipping differs".into()));
        }
        Ok(())
    }
}

pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[k] = s;
        out[half + k] = c;
    }
    out
}
