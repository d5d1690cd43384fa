//! Forward noising, the ε-prediction objective and the DDPM / DDIM samplers.

mod sampler;
mod schedule;
mod train;

pub use sampler::{
    ddim_sample, ddim_step, ddim_timesteps, ddpm_sample, ddpm_step, gaussian_grid, posterior_variance, ClampedX0, Denoiser,
};
pub use schedule::{make_schedule, q_sample, NoiseSchedule};
pub use train::{
    diffusion_loss_and_grads, lr_latent, prepare_example, train_step, ConditionedDenoiser, DenoiserParts,
    DiffusionExample, NoisedSample, COND_GROUP, UNET_GROUP,
};
