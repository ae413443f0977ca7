//! Room acoustics simulation and supervised mixture synthesis.

mod noise;
mod rir;
mod scene;
mod speech;

pub use noise::{diffuse_noise, DIFFUSE_SOURCES};
pub use rir::{image_method_rir, image_method_rirs, rirs_with_reflection, schroeder_t60, Position, RoomSpec, SINC_HALF_WIDTH};
pub use scene::{
    fft_convolve, generate_sample, sample_scene, synthesize, MixtureSample, Scene, SceneOptions, MIC_SPACING,
    REF_CHANNEL, RM_CHANNELS, VM_CHANNEL,
};
pub use speech::synth_speech_like;
