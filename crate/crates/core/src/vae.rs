//! Variational autoencoder over scaled window vectors.
//!
//! The encoder trunk (three ReLU layers by default) feeds two linear heads
//! producing the latent mean and log-variance. The decoder mirrors the trunk
//! and ends in a linear layer. Training minimizes mean squared reconstruction
//! error plus `beta` times the KL divergence to a standard normal prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::neural::{
    adam_step, gather_rows, Activation, AdamState, BatchSchedule, Gradients, Matrix, Mlp, TrainConfig,
};

pub const LATENT_DIM: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    /// Encoder trunk widths after the input; the decoder mirrors them.
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    /// KL weight.
    pub beta: f64,
    /// Train on attack-free windows only instead of the full training split.
    pub benign_only: bool,
    pub train: TrainConfig,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            hidden_widths: vec![128, 64, 48],
            latent_dim: LATENT_DIM,
            beta: 1.0,
            benign_only: false,
            train: TrainConfig::default(),
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config(format!(
                "invalid encoder widths {:?}",
                self.hidden_widths
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub encoder: Mlp,
    pub mu_head: Mlp,
    pub logvar_head: Mlp,
    pub decoder: Mlp,
    pub config: VaeConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct VaeGradients {
    pub encoder: Gradients,
    pub mu_head: Gradients,
    pub logvar_head: Gradients,
    pub decoder: Gradients,
}

/// Source of the standard-normal draws used by the reparameterization.
pub trait NoiseSource {
    fn sample(&mut self, rows: usize, cols: usize) -> Matrix;
}

pub struct GaussianNoise(ChaCha8Rng);

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        GaussianNoise(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl NoiseSource for GaussianNoise {
    fn sample(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut self.0)).collect();
        Matrix { rows, cols, data }
    }
}

/// Always returns zeros, so `z = mu`.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn sample(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::zeros(rows, cols)
    }
}

/// Fixed draws, replayed on every call.
pub struct FixedNoise(pub Matrix);

impl NoiseSource for FixedNoise {
    fn sample(&mut self, rows: usize, cols: usize) -> Matrix {
        assert_eq!((rows, cols), (self.0.rows, self.0.cols), "fixed noise shape");
        self.0.clone()
    }
}

impl VaeModel {
    pub fn new(input_width: usize, config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.train.seed;
        let trunk_out = *config.hidden_widths.last().expect("validated non-empty");

        let mut enc_widths = vec![input_width];
        enc_widths.extend(&config.hidden_widths);
        let encoder = Mlp::new(&enc_widths, Activation::Relu, Activation::Relu, seed)?;
        let mu_head = Mlp::new(
            &[trunk_out, config.latent_dim],
            Activation::Linear,
            Activation::Linear,
            seed.wrapping_add(1),
        )?;
        let logvar_head = Mlp::new(
            &[trunk_out, config.latent_dim],
            Activation::Linear,
            Activation::Linear,
            seed.wrapping_add(2),
        )?;
        let mut dec_widths = vec![config.latent_dim];
        dec_widths.extend(config.hidden_widths.iter().rev());
        dec_widths.push(input_width);
        let decoder = Mlp::new(&dec_widths, Activation::Relu, Activation::Linear, seed.wrapping_add(3))?;
        Ok(VaeModel {
            encoder,
            mu_head,
            logvar_head,
            decoder,
            config,
        })
    }

    /// Reassembles a model from stored parts, checking that widths agree.
    pub fn from_parts(encoder: Mlp, mu_head: Mlp, logvar_head: Mlp, decoder: Mlp, config: VaeConfig) -> Result<Self> {
        config.validate()?;
        check_len(encoder.output_width(), mu_head.input_width())?;
        check_len(encoder.output_width(), logvar_head.input_width())?;
        check_len(config.latent_dim, mu_head.output_width())?;
        check_len(config.latent_dim, logvar_head.output_width())?;
        check_len(config.latent_dim, decoder.input_width())?;
        check_len(encoder.input_width(), decoder.output_width())?;
        check_len(config.hidden_widths.len(), encoder.layers().len())?;
        Ok(VaeModel {
            encoder,
            mu_head,
            logvar_head,
            decoder,
            config,
        })
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Number of hidden layers in the encoder trunk.
    pub fn encoder_layers(&self) -> usize {
        self.encoder.layers().len()
    }

    pub fn encode(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        let h = self.encoder.predict(batch)?;
        Ok((self.mu_head.predict(&h)?, self.logvar_head.predict(&h)?))
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.predict(z)
    }

    pub fn param_count(&self) -> usize {
        [&self.encoder, &self.mu_head, &self.logvar_head, &self.decoder]
            .iter()
            .map(|m| crate::neural::count_params(m))
            .sum()
    }
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize(mu: &Matrix, logvar: &Matrix, noise: &mut dyn NoiseSource) -> Result<Matrix> {
    check_len(mu.rows, logvar.rows)?;
    check_len(mu.cols, logvar.cols)?;
    let eps = noise.sample(mu.rows, mu.cols);
    Ok(reparameterize_with(mu, logvar, &eps))
}

fn reparameterize_with(mu: &Matrix, logvar: &Matrix, eps: &Matrix) -> Matrix {
    let data = mu
        .data
        .iter()
        .zip(&logvar.data)
        .zip(&eps.data)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Matrix {
        rows: mu.rows,
        cols: mu.cols,
        data,
    }
}

/// Batch-mean of `sum_d 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2)`.
pub fn kl_to_standard_normal(mu: &Matrix, logvar: &Matrix) -> f64 {
    if mu.rows == 0 {
        return 0.0;
    }
    let sum: f64 = mu
        .data
        .iter()
        .zip(&logvar.data)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum();
    sum / mu.rows as f64
}

/// Mean squared error over all entries.
pub fn mse(x: &Matrix, x_hat: &Matrix) -> f64 {
    if x.data.is_empty() {
        return 0.0;
    }
    let sum: f64 = x.data.iter().zip(&x_hat.data).map(|(a, b)| (a - b) * (a - b)).sum();
    sum / x.data.len() as f64
}

/// Combines the loss terms for an input, its reconstruction and the posterior.
pub fn elbo_terms(x: &Matrix, x_hat: &Matrix, mu: &Matrix, logvar: &Matrix, beta: f64) -> Result<VaeLoss> {
    check_len(x.data.len(), x_hat.data.len())?;
    let reconstruction = mse(x, x_hat);
    let kl = kl_to_standard_normal(mu, logvar);
    let total = reconstruction + beta * kl;
    if !total.is_finite() {
        return Err(Error::Numeric("non-finite VAE loss".into()));
    }
    Ok(VaeLoss {
        total,
        reconstruction,
        kl,
    })
}

pub fn vae_loss(model: &VaeModel, batch: &Matrix, noise: &mut dyn NoiseSource) -> Result<VaeLoss> {
    let (mu, logvar) = model.encode(batch)?;
    let z = reparameterize(&mu, &logvar, noise)?;
    let x_hat = model.decode(&z)?;
    elbo_terms(batch, &x_hat, &mu, &logvar, model.config.beta)
}

/// Loss and exact gradients for fixed standard-normal draws `eps`.
pub fn vae_loss_and_grads(model: &VaeModel, batch: &Matrix, eps: &Matrix) -> Result<(VaeLoss, VaeGradients)> {
    let beta = model.config.beta;
    let (h, enc_cache) = model.encoder.forward(batch)?;
    let (mu, mu_cache) = model.mu_head.forward(&h)?;
    let (logvar, lv_cache) = model.logvar_head.forward(&h)?;
    check_len(mu.data.len(), eps.data.len())?;
    let z = reparameterize_with(&mu, &logvar, eps);
    let (x_hat, dec_cache) = model.decoder.forward(&z)?;
    let loss = elbo_terms(batch, &x_hat, &mu, &logvar, beta)?;

    let n = batch.data.len() as f64;
    let rows = batch.rows as f64;
    let mut g_xhat = Matrix::zeros(x_hat.rows, x_hat.cols);
    for ((g, a), b) in g_xhat.data.iter_mut().zip(&x_hat.data).zip(&batch.data) {
        *g = 2.0 * (a - b) / n;
    }
    let (decoder, g_z) = model.decoder.backward(&dec_cache, &g_xhat)?;

    let mut g_mu = g_z.clone();
    let mut g_lv = Matrix::zeros(logvar.rows, logvar.cols);
    for k in 0..g_mu.data.len() {
        let sigma = (0.5 * logvar.data[k]).exp();
        g_mu.data[k] += beta * mu.data[k] / rows;
        g_lv.data[k] = g_z.data[k] * eps.data[k] * 0.5 * sigma + beta * 0.5 * (sigma * sigma - 1.0) / rows;
    }
    let (mu_head, g_h1) = model.mu_head.backward(&mu_cache, &g_mu)?;
    let (logvar_head, g_h2) = model.logvar_head.backward(&lv_cache, &g_lv)?;
    let mut g_h = g_h1;
    g_h.data.iter_mut().zip(&g_h2.data).for_each(|(a, b)| *a += b);
    let (encoder, _) = model.encoder.backward(&enc_cache, &g_h)?;
    Ok((
        loss,
        VaeGradients {
            encoder,
            mu_head,
            logvar_head,
            decoder,
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeTrace {
    /// Epoch-mean total loss.
    pub total: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub kl: Vec<f64>,
}

/// Mini-batch Adam training on scaled windows (rows of `data`).
pub fn train_vae(data: &Matrix, config: VaeConfig) -> Result<(VaeModel, VaeTrace)> {
    if data.rows == 0 {
        return Err(Error::training("no training windows", Vec::new()));
    }
    let tc = config.train.clone();
    let mut model = VaeModel::new(data.cols, config)?;
    let mut states = [
        AdamState::new(&model.encoder),
        AdamState::new(&model.mu_head),
        AdamState::new(&model.logvar_head),
        AdamState::new(&model.decoder),
    ];
    let mut schedule = BatchSchedule::new(data.rows, tc.seed.wrapping_add(100));
    let mut noise = GaussianNoise::new(tc.seed.wrapping_add(200));
    let mut trace = VaeTrace {
        total: Vec::with_capacity(tc.epochs),
        reconstruction: Vec::with_capacity(tc.epochs),
        kl: Vec::with_capacity(tc.epochs),
    };

    for epoch in 0..tc.epochs {
        let mut sums = (0.0, 0.0, 0.0);
        for idx in schedule.epoch(tc.batch_size) {
            let batch = gather_rows(data, &idx);
            let eps = noise.sample(batch.rows, model.latent_dim());
            let step = vae_loss_and_grads(&model, &batch, &eps).and_then(|(loss, g)| {
                adam_step(&mut model.encoder, &g.encoder, &mut states[0], tc.learning_rate)?;
                adam_step(&mut model.mu_head, &g.mu_head, &mut states[1], tc.learning_rate)?;
                adam_step(&mut model.logvar_head, &g.logvar_head, &mut states[2], tc.learning_rate)?;
                adam_step(&mut model.decoder, &g.decoder, &mut states[3], tc.learning_rate)?;
                Ok(loss)
            });
            let loss = step.map_err(|e| Error::training(format!("epoch {epoch}: {e}"), trace.total.clone()))?;
            let w = batch.rows as f64;
            sums.0 += loss.total * w;
            sums.1 += loss.reconstruction * w;
            sums.2 += loss.kl * w;
        }
        let n = data.rows as f64;
        trace.total.push(sums.0 / n);
        trace.reconstruction.push(sums.1 / n);
        trace.kl.push(sums.2 / n);
    }
    Ok((model, trace))
}

/// Deterministic latent features: the posterior mean.
pub fn latent_features(model: &VaeModel, windows: &Matrix) -> Result<Matrix> {
    Ok(model.encode(windows)?.0)
}

/// MSE between a window and its reconstruction from `z = mu`.
pub fn reconstruction_error(model: &VaeModel, window: &[f64]) -> Result<f64> {
    let x = Matrix::from_vec(1, window.len(), window.to_vec())?;
    let (mu, _) = model.encode(&x)?;
    Ok(mse(&x, &model.decode(&mu)?))
}

/// Per-row reconstruction errors for a batch.
pub fn reconstruction_errors(model: &VaeModel, batch: &Matrix) -> Result<Vec<f64>> {
    let (mu, _) = model.encode(batch)?;
    let x_hat = model.decode(&mu)?;
    Ok(batch
        .iter_rows()
        .zip(x_hat.iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64)
        .collect())
}
