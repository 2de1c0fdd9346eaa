//! DDPM machinery: schedule, conditional MLP denoiser, training and
//! ancestral sampling.

mod mlp;
mod model;
mod sampler;
mod schedule;
mod train;

pub use mlp::Activation;
pub use model::{time_embedding, Architecture, DenoiserModel, Normalizer, TrainingMeta, STD_FLOOR};
pub use sampler::{ancestral_sample, sample, sample_many, sample_vectors, NoisePredictor};
pub(crate) use sampler::rows_to_trajectories;
pub use schedule::{
    diffuse_with_alpha_bar, forward_diffuse, score_from_eps, score_with_alpha_bar, NoiseSchedule,
};
pub use train::{
    init_model, loss_and_gradient, train, train_denoiser, LossWeighting, LrSchedule, OptimizerKind,
    TrainConfig, TrainingSet,
};
