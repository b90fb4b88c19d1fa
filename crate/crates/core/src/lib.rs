//! Learned token-level sampling temperature for a tiny autoregressive model.
//!
//! A small causal model (the token policy) emits logits at each decoding
//! step. A lightweight head on the final hidden state (the temperature
//! policy) decides whether to change the sampling temperature through a
//! Bernoulli gate and, when it does, draws a new intensity from a Beta
//! distribution that is mapped affinely into `[tau_min, tau_max]`. Both
//! policies are trained from binary verifiable rewards with group-relative
//! advantages and clipped surrogate losses, alternating between the token
//! parameters and the head parameters.
//!
//! Modules, bottom-up:
//! - [`numkit`]: stable scalar math, seeded stream RNG, Bernoulli and Beta.
//! - [`model`]: transformer/GRU backbone, temperature head, exact backprop.
//! - [`tasks`]: synthetic arithmetic/sorting environments with exact rewards.
//! - [`rollout`]: hierarchical temperature-then-token generation.
//! - [`grpo`]: advantages, both surrogate losses, AdamW coordinate ascent, training loop.

pub mod error;
pub mod grpo;
pub mod model;
pub mod numkit;
pub mod rollout;
pub mod tasks;

pub use error::{Error, Result};
