//! Melody transfer learning toolkit: MIDI I/O, a 2-bar melody token codec,
//! a small recurrent VAE with hand-written gradients, finetuning baselines,
//! conceptual-expansion tree search over pretrained weights, and the
//! experiment harness that ties them together.
//!
//! Numerics are generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the default `f64` precision.


pub mod baselines;
pub mod codec;
pub mod expansion;
pub mod harness;


pub mod midi;
pub mod scalar;
pub mod vae;

pub type Params = vae::ModelParams<f64>;
pub type Tensor = vae::Tensor<f64>;

pub type Expansion = expansion::ConceptualExpansion<f64>;
