//! CAN-bus intrusion detection built on a variational autoencoder latent
//! space and a distilled student classifier.
//!
//! The pipeline: parse or synthesize CAN logs ([`canlog`]), aggregate frames
//! into scaled windows ([`features`]), compress windows with a VAE ([`vae`]),
//! train a teacher and distill a compact student on the latents ([`distill`]),
//! explain both with Shapley values ([`explain`]), evaluate ([`metrics`]) and
//! score live traffic under a deadline ([`stream`]). [`pipeline`] composes the
//! stages and [`artifact`] persists the trained bundle.

pub mod artifact;
pub mod canlog;
pub mod config;
pub mod distill;
pub mod error;
pub mod explain;
pub mod features;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod stream;
pub mod vae;

pub use error::{Error, Result};
