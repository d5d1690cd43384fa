//! Autoencoder with controllable feature warping, the latent noise
//! predictor and the layers they share.

mod autoencoder;
pub mod layers;
mod unet;

pub use autoencoder::{
    cfw_loss_and_grads, cfw_train_step, vae_decode, vae_encode, vae_features, vae_loss_and_grads, vae_pretrain_step, Autoencoder,
    AutoencoderConfig, CfwExample, CfwModule, DecodeTrace, EncoderFeatures, Fusion, LATENT_CHANNELS,
    LATENT_FACTOR,
};
pub use layers::{Conv, Cx, GroupNorm, Init, Linear, ResBlock};
pub use unet::{unet_forward, SftMaps, SftVars, UNet, UNetConfig, UNetOutput, ADAPTER_PREFIX};
