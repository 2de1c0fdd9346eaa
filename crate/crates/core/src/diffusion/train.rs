use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kinematics::DemoSet;
use crate::rng;

use super::mlp::Activation;
use super::model::{Architecture, DenoiserModel, Normalizer, TrainingMeta};
use super::schedule::NoiseSchedule;

/// Per-step weight `lambda_t` of the noise-prediction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    /// `lambda_t = 1`.
    #[default]
    Uniform,
    /// Likelihood-style weights from the schedule, see
    /// [`NoiseSchedule::likelihood_weights`].
    Schedule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over the run.
    #[default]
    Cosine,
}

impl LrSchedule {
    fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = epoch as f64 / epochs as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Passes over the dataset.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub weighting: LossWeighting,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// Stored on the model and used by its sampler.
    #[serde(default)]
    pub x0_clip: Option<f64>,
    /// Normalisation shared with other models; fitted to the data when absent.
    #[serde(default)]
    pub normalizer: Option<Normalizer>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 0,
            weighting: LossWeighting::Uniform,
            optimizer: OptimizerKind::sgd(),
            hidden: vec![128, 128, 128],
            time_embed_dim: 32,
            lr_schedule: LrSchedule::Cosine,
            x0_clip: Some(4.0),
            normalizer: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if let Some(c) = self.x0_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("x0 clip must be positive"));
            }
        }
        Ok(())
    }
}

/// Row-major training examples: `n` rows of data and conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub data: Vec<f64>,
    pub cond: Vec<f64>,
    pub traj_len: usize,
    pub dof: usize,
    pub cond_dim: usize,
    pub dt: f64,
}

impl TrainingSet {
    pub fn from_demos(demos: &DemoSet) -> Self {
        let mut data = Vec::with_capacity(demos.len() * demos.traj_len() * demos.dof());
        let mut cond = Vec::with_capacity(demos.len() * demos.dof());
        for d in demos {
            data.extend_from_slice(d.traj.as_flat());
            cond.extend_from_slice(d.obs.as_slice());
        }
        Self {
            data,
            cond,
            traj_len: demos.traj_len(),
            dof: demos.dof(),
            cond_dim: demos.dof(),
            dt: demos.dt(),
        }
    }

    /// Unconditional set of plain vectors.
    pub fn from_vectors(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_dim("training vector", dim, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            data,
            cond: vec![],
            traj_len: 1,
            dof: dim,
            cond_dim: 0,
            dt: 1.0,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.traj_len * self.dof
    }

    pub fn len(&self) -> usize {
        if self.data_dim() == 0 {
            0
        } else {
            self.data.len() / self.data_dim()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss of one minibatch and its exact parameter gradient.
///
/// `x0` and `cond` are raw (un-normalised) rows; `ts[r]` is the diffusion
/// step and `noise` the standard-normal draw for row `r`. The loss is
/// `mean_r lambda_t ||noise_r - eps(a_t, o, t)||^2` with `a_t` the closed-form
/// marginal of the normalised `x0`.
pub fn loss_and_gradient(
    model: &DenoiserModel,
    x0: &[f64],
    cond: &[f64],
    ts: &[usize],
    noise: &[f64],
    weighting: LossWeighting,
) -> Result<(f64, Vec<f64>)> {
    let batch = ts.len();
    let (d, c) = (model.data_dim(), model.cond_dim());
    check_dim("batch data", batch * d, x0.len())?;
    check_dim("batch conditioning", batch * c, cond.len())?;
    check_dim("batch noise", batch * d, noise.len())?;
    if let Some(&t) = ts.iter().find(|&&t| t == 0 || t > model.schedule.steps()) {
        return Err(Error::IndexOutOfRange {
            what: "diffusion step",
            index: t,
            len: model.schedule.steps(),
        });
    }
    let mut x = x0.to_vec();
    model.normalizer.normalize_data(&mut x);
    let mut cn = cond.to_vec();
    model.normalizer.normalize_cond(&mut cn);
    let weights = lambda_table(&model.schedule, weighting);
    Ok(loss_grad_normalized(model, &x, &cn, ts, noise, &weights))
}

fn lambda_table(schedule: &NoiseSchedule, weighting: LossWeighting) -> Vec<f64> {
    match weighting {
        LossWeighting::Uniform => vec![1.0; schedule.steps()],
        LossWeighting::Schedule => schedule.likelihood_weights(),
    }
}

fn loss_grad_normalized(
    model: &DenoiserModel,
    x0: &[f64],
    cond: &[f64],
    ts: &[usize],
    noise: &[f64],
    lambdas: &[f64],
) -> (f64, Vec<f64>) {
    let batch = ts.len();
    let (d, c, e) = (model.data_dim(), model.cond_dim(), model.arch.time_embed_dim);
    let width = model.arch.input_dim();
    let mut input = Vec::with_capacity(batch * width);
    for (r, &t) in ts.iter().enumerate() {
        let ab = model.schedule.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        let xr = &x0[r * d..(r + 1) * d];
        let nr = &noise[r * d..(r + 1) * d];
        input.extend(xr.iter().zip(nr).map(|(a, z)| s * a + n * z));
        input.extend_from_slice(&cond[r * c..(r + 1) * c]);
        input.extend(model.time_embedding(t));
        debug_assert_eq!(input.len(), (r + 1) * (d + c + e));
    }
    let mlp = model.mlp();
    let cache = mlp.forward_cached(&model.params, &input, batch);
    let mut loss = 0.0;
    let mut d_out = vec![0.0; batch * d];
    let scale = 1.0 / batch as f64;
    for (r, &t) in ts.iter().enumerate() {
        let lam = lambdas[t - 1];
        let mut row = 0.0;
        for k in r * d..(r + 1) * d {
            let diff = cache.output[k] - noise[k];
            row += diff * diff;
            d_out[k] = 2.0 * lam * diff * scale;
        }
        loss += lam * row;
    }
    let mut grad = vec![0.0; mlp.num_params()];
    mlp.backward(&model.params, &cache, &d_out, &mut grad);
    (loss * scale, grad)
}

enum OptState {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, step: i32 },
}

impl OptState {
    fn new(kind: &OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd { .. } => OptState::Sgd {
                velocity: vec![0.0; n],
            },
            OptimizerKind::Adam { .. } => OptState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
        }
    }

    fn apply(&mut self, kind: &OptimizerKind, lr: f64, params: &mut [f64], grad: &[f64]) {
        match (self, kind) {
            (OptState::Sgd { velocity }, OptimizerKind::Sgd { momentum }) => {
                for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            (OptState::Adam { m, v, step }, OptimizerKind::Adam { beta1, beta2, eps }) => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                for (((p, mi), vi), g) in params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad)
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
            _ => unreachable!("optimizer state matches its kind"),
        }
    }
}

/// Freshly initialised (untrained) model for `set`.
pub fn init_model(
    set: &TrainingSet,
    config: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<DenoiserModel> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let arch = Architecture {
        traj_len: set.traj_len,
        dof: set.dof,
        cond_dim: set.cond_dim,
        hidden: config.hidden.clone(),
        time_embed_dim: config.time_embed_dim,
        activation: Activation::Silu,
    };
    arch.validate()?;
    let normalizer = match &config.normalizer {
        Some(n) => n.clone(),
        None => Normalizer::fit(&set.data, set.data_dim(), &set.cond, set.cond_dim)?,
    };
    let mut init_rng = rng::rng_from(rng::substream(config.seed, "init"));
    let params = arch.mlp().init(&mut init_rng, 0.1);
    let mut model = DenoiserModel::new(arch, schedule.clone(), normalizer, set.dt, params)?;
    model.x0_clip = config.x0_clip;
    Ok(model)
}

/// Fit a denoiser to `set` by minimising the noise-prediction loss.
pub fn train(set: &TrainingSet, config: &TrainConfig, schedule: &NoiseSchedule) -> Result<DenoiserModel> {
    let mut model = init_model(set, config, schedule)?;
    let (n, d, c) = (set.len(), set.data_dim(), set.cond_dim);
    let mut data = set.data.clone();
    model.normalizer.normalize_data(&mut data);
    let mut cond = set.cond.clone();
    model.normalizer.normalize_cond(&mut cond);
    let lambdas = lambda_table(schedule, config.weighting);

    let mut rng = rng::rng_from(rng::substream(config.seed, "train"));
    let mut opt = OptState::new(&config.optimizer, model.num_params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let (mut xb, mut cb, mut zb) = (vec![], vec![], vec![]);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.lr_schedule.rate(config.learning_rate, epoch, config.epochs);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            xb.clear();
            cb.clear();
            zb.clear();
            let mut ts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                xb.extend_from_slice(&data[i * d..(i + 1) * d]);
                cb.extend_from_slice(&cond[i * c..(i + 1) * c]);
                ts.push(rng.random_range(1..=schedule.steps()));
                zb.extend((0..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
            }
            let (loss, grad) = loss_grad_normalized(&model, &xb, &cb, &ts, &zb, &lambdas);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            opt.apply(&config.optimizer, lr, &mut model.params, &grad);
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches as f64);
    }
    if !model.params.iter().all(|p| p.is_finite()) {
        return Err(Error::TrainingDiverged {
            epoch: config.epochs - 1,
        });
    }
    model.meta = TrainingMeta {
        seed: config.seed,
        epochs: config.epochs,
        final_loss: *history.last().expect("at least one epoch"),
        loss_history: history,
        num_examples: n,
    };
    Ok(model)
}

/// Train a trajectory denoiser conditioned on each demo's initial configuration.
pub fn train_denoiser(
    dataset: &DemoSet,
    config: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<DenoiserModel> {
    train(&TrainingSet::from_demos(dataset), config, schedule)
}
