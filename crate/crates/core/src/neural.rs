//! Dense-network core shared by the VAE and the classifiers.
//!
//! Everything runs in `f64`. A [`Mlp`] is a chain of affine layers with ReLU or
//! identity activations; [`Mlp::forward`] returns a [`ForwardCache`] that
//! [`Mlp::backward`] consumes to produce exact reverse-mode gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Row-major batch of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    /// Stacks equal-length rows. An empty slice yields a `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu if pre > 0.0 => 1.0,
            Activation::Relu => 0.0,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    /// `output x input`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// He-uniform weights for ReLU layers, Xavier-uniform for linear ones; zero biases.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / input as f64).sqrt(),
            Activation::Linear => (6.0 / (input + output) as f64).sqrt(),
        };
        let weights = (0..input * output).map(|_| rng.random_range(-limit..=limit)).collect();
        Dense {
            input,
            output,
            weights,
            biases: vec![0.0; output],
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Dense {
            input,
            output,
            weights: vec![0.0; input * output],
            biases: vec![0.0; output],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        (self.input + 1) * self.output
    }

    fn validate(&self) -> Result<()> {
        check_len(self.input * self.output, self.weights.len())?;
        check_len(self.output, self.biases.len())?;
        if !self.weights.iter().chain(&self.biases).all(|x| x.is_finite()) {
            return Err(Error::Numeric("non-finite layer parameter".into()));
        }
        Ok(())
    }

    /// Pre-activations for a batch.
    fn affine(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows, self.output);
        for (xr, or) in x.iter_rows().zip(out.data.chunks_exact_mut(self.output)) {
            for (o, (w, b)) in or
                .iter_mut()
                .zip(self.weights.chunks_exact(self.input).zip(&self.biases))
            {
                *o = b + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }
}

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Chain of dense layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
    seed: u64,
    /// Changes whenever parameters change; ties caches to a parameter state.
    tag: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.seed == other.seed
    }
}

impl Mlp {
    /// Seeded network over `widths` (input first). Hidden layers use `hidden`,
    /// the final layer uses `output`.
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::init(w[0], w[1], act, &mut rng)
            })
            .collect();
        Ok(Mlp {
            layers,
            seed,
            tag: fresh_tag(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>, seed: u64) -> Result<Self> {
        for l in &layers {
            l.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].output != pair[1].input {
                return Err(Error::Shape {
                    expected: pair[0].output,
                    actual: pair[1].input,
                });
            }
        }
        Ok(Mlp {
            layers,
            seed,
            tag: fresh_tag(),
        })
    }

    pub fn empty() -> Self {
        Mlp {
            layers: Vec::new(),
            seed: 0,
            tag: fresh_tag(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.tag = fresh_tag();
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    /// Concatenates two networks; widths must chain.
    pub fn then(mut self, next: Mlp) -> Result<Mlp> {
        if !self.layers.is_empty() && !next.layers.is_empty() {
            check_len(self.output_width(), next.input_width())?;
        }
        self.layers.extend(next.layers);
        self.tag = fresh_tag();
        Ok(self)
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        check_len(self.input_width(), input.cols)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let z = layer.affine(&x);
            let mut a = z.clone();
            if layer.activation == Activation::Relu {
                a.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        Ok((
            x,
            ForwardCache {
                tag: self.tag,
                inputs,
                pre,
            },
        ))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        check_len(self.input_width(), input.cols)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.affine(&x);
            if layer.activation == Activation::Relu {
                x.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        Ok(x)
    }

    /// Single-vector forward pass.
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Matrix::from_vec(1, input.len(), input.to_vec())?)?.data)
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<(Gradients, Matrix)> {
        if cache.tag != self.tag || cache.inputs.len() != self.layers.len() {
            return Err(Error::State("forward cache does not belong to this model state".into()));
        }
        let batch = cache.inputs.first().map_or(grad_output.rows, |m| m.rows);
        check_len(batch, grad_output.rows)?;
        check_len(self.output_width(), grad_output.cols)?;

        let mut grads: Vec<LayerGradient> = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let z = &cache.pre[i];
            let mut delta = upstream;
            for (d, &p) in delta.data.iter_mut().zip(&z.data) {
                *d *= layer.activation.derivative(p);
            }
            let mut gw = vec![0.0; layer.weights.len()];
            let mut gb = vec![0.0; layer.output];
            let mut gx = Matrix::zeros(x.rows, layer.input);
            for b in 0..x.rows {
                let xr = x.row(b);
                let dr = delta.row(b);
                let gxr = gx.row_mut(b);
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let wrow = &layer.weights[o * layer.input..(o + 1) * layer.input];
                    let grow = &mut gw[o * layer.input..(o + 1) * layer.input];
                    for k in 0..layer.input {
                        grow[k] += d * xr[k];
                        gxr[k] += d * wrow[k];
                    }
                }
            }
            grads.push(LayerGradient {
                weights: gw,
                biases: gb,
            });
            upstream = gx;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, upstream))
    }

    /// Parameters flattened layer by layer (weights then biases).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_len(count_params(self), params.len())?;
        let mut it = params.iter().copied();
        for l in self.layers_mut() {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|p| {
                *p = it.next().expect("length checked");
            });
        }
        Ok(())
    }
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    tag: u64,
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|g| g.is_finite()))
    }
}

/// Weights plus biases over all layers.
pub fn count_params(model: &Mlp) -> usize {
    model.layers.iter().map(Dense::param_count).sum()
}

/// Adam moments for one model.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    m: Vec<LayerGradient>,
    v: Vec<LayerGradient>,
}

impl AdamState {
    pub fn new(model: &Mlp) -> Self {
        let zeros: Vec<LayerGradient> = model
            .layers
            .iter()
            .map(|l| LayerGradient {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut Mlp, grads: &Gradients, state: &mut AdamState, learning_rate: f64) -> Result<()> {
    check_len(model.layers.len(), grads.layers.len())?;
    check_len(model.layers.len(), state.m.len())?;
    for (l, g) in model.layers.iter().zip(&grads.layers) {
        check_len(l.weights.len(), g.weights.len())?;
        check_len(l.biases.len(), g.biases.len())?;
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for k in 0..p.len() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    };
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[i];
        update(
            &mut layer.weights,
            &g.weights,
            &mut state.m[i].weights,
            &mut state.v[i].weights,
        );
        update(
            &mut layer.biases,
            &g.biases,
            &mut state.m[i].biases,
            &mut state.v[i].biases,
        );
    }
    Ok(())
}

/// Temperature softmax with max subtraction.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Row-wise [`softmax_t`].
pub fn softmax_rows(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows, logits.cols);
    for r in 0..logits.rows {
        out.row_mut(r).copy_from_slice(&softmax_t(logits.row(r), temperature)?);
    }
    Ok(out)
}

/// `-ln(p[label] + epsilon)`.
pub fn cross_entropy(probabilities: &[f64], label: usize, epsilon: f64) -> Result<f64> {
    if label >= probabilities.len() {
        return Err(Error::Shape {
            expected: probabilities.len(),
            actual: label + 1,
        });
    }
    Ok(-(probabilities[label] + epsilon).ln())
}

/// Batch-mean cross-entropy of softmax(logits) and its gradient w.r.t. the logits.
pub fn cross_entropy_with_grad(logits: &Matrix, labels: &[usize], epsilon: f64) -> Result<(f64, Matrix)> {
    check_len(logits.rows, labels.len())?;
    let n = logits.rows as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    for (r, &y) in labels.iter().enumerate() {
        let p = softmax_t(logits.row(r), 1.0)?;
        loss += cross_entropy(&p, y, epsilon)?;
        // d/dz_j of -ln(p_y + eps) = -(p_y / (p_y + eps)) (delta_yj - p_j)
        let scale = p[y] / (p[y] + epsilon) / n;
        let g = grad.row_mut(r);
        for j in 0..p.len() {
            let delta = if j == y { 1.0 } else { 0.0 };
            g[j] = -scale * (delta - p[j]);
        }
    }
    Ok((loss / n, grad))
}

/// Training hyperparameters. Defaults follow the CIC-IoV column of the
/// published configuration: lr 1e-4, batch 32, 50 epochs, smooth factor 1e-8.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Added inside every logarithm of a probability.
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded epoch orderings for mini-batch training.
pub(crate) struct BatchSchedule {
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl BatchSchedule {
    pub(crate) fn new(samples: usize, seed: u64) -> Self {
        BatchSchedule {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..samples).collect(),
        }
    }

    /// Shuffles and returns the batches for the next epoch.
    pub(crate) fn epoch(&mut self, batch_size: usize) -> Vec<Vec<usize>> {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        self.order.chunks(batch_size).map(<[usize]>::to_vec).collect()
    }
}

pub(crate) fn gather_rows(source: &Matrix, indices: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(indices.len(), source.cols);
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).copy_from_slice(source.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn identity_linear_layer() {
        let mut layer = Dense::zeros(3, 3, Activation::Linear);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        let m = Mlp::from_layers(vec![layer], 0).unwrap();
        assert_eq!(m.predict_one(&[1.0, -2.0, 3.5]).unwrap(), [1.0, -2.0, 3.5]);
    }

    #[test]
    fn zero_relu_annihilates() {
        let m = Mlp::from_layers(vec![Dense::zeros(4, 2, Activation::Relu)], 0).unwrap();
        assert_eq!(m.predict_one(&[1.0, 2.0, 3.0, 4.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn seeded_net_matches_hand_arithmetic() {
        let m = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Linear, 11).unwrap();
        let l0 = &m.layers()[0];
        let l1 = &m.layers()[1];
        let x = [1.0, 2.0];
        let mut expected = l1.biases[0];
        for j in 0..3 {
            let h = (l0.weights[j * 2] * x[0] + l0.weights[j * 2 + 1] * x[1] + l0.biases[j]).max(0.0);
            expected += l1.weights[j] * h;
        }
        let got = m.predict_one(&x).unwrap()[0];
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let m = Mlp::new(&[2, 3], Activation::Relu, Activation::Linear, 0).unwrap();
        assert!(matches!(m.predict_one(&[1.0]), Err(Error::Shape { .. })));
        let bad = vec![
            Dense::zeros(2, 3, Activation::Relu),
            Dense::zeros(4, 1, Activation::Linear),
        ];
        assert!(Mlp::from_layers(bad, 0).is_err());
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let m = Mlp::from_layers(vec![Dense::zeros(3, 1, Activation::Linear)], 0).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let (_, cache) = m.forward(&x).unwrap();
        let (g, _) = m.backward(&cache, &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(g.layers[0].weights, [0.5, -1.0, 2.0]);
        assert_eq!(g.layers[0].biases, [1.0]);
    }

    #[test]
    fn relu_gate_blocks_negative() {
        let mut l = Dense::zeros(1, 1, Activation::Relu);
        l.weights[0] = 1.0;
        l.biases[0] = -5.0;
        let m = Mlp::from_layers(vec![l], 0).unwrap();
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let (_, cache) = m.forward(&x).unwrap();
        let (g, gx) = m.backward(&cache, &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(g.layers[0].weights, [0.0]);
        assert_eq!(gx.data, [0.0]);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut m = Mlp::new(&[2, 2], Activation::Relu, Activation::Linear, 1).unwrap();
        let x = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let (_, cache) = m.forward(&x).unwrap();
        let grads = m
            .backward(&cache, &Matrix::from_rows(&[[1.0, 1.0]]).unwrap())
            .unwrap()
            .0;
        let mut st = AdamState::new(&m);
        adam_step(&mut m, &grads, &mut st, 0.1).unwrap();
        assert!(matches!(
            m.backward(&cache, &Matrix::from_rows(&[[1.0, 1.0]]).unwrap()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = Mlp::new(&[4, 6, 5, 3], Activation::Relu, Activation::Linear, 5).unwrap();
        let x = Matrix::from_rows(&[[0.3, -0.2, 0.9, 0.1], [0.7, 0.5, -0.4, 0.2]]).unwrap();
        let labels = [2usize, 0];
        let loss = |model: &Mlp| {
            let out = model.predict(&x).unwrap();
            cross_entropy_with_grad(&out, &labels, 1e-8).unwrap().0
        };
        let (out, cache) = m.forward(&x).unwrap();
        let (_, g_out) = cross_entropy_with_grad(&out, &labels, 1e-8).unwrap();
        let (grads, _) = m.backward(&cache, &g_out).unwrap();
        let analytic = grads.flat();
        let params = m.flat_params();
        let h = 1e-5;
        for (k, &a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            let mut probe = m.clone();
            p[k] += h;
            probe.set_flat_params(&p).unwrap();
            let up = loss(&probe);
            p[k] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let down = loss(&probe);
            let numeric = (up - down) / (2.0 * h);
            assert!(rel_err(a, numeric) < 1e-4, "param {k}: {a} vs {numeric}");
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_t(&[3.0; 4], 1.0).unwrap(), [0.25; 4]);
        let p = softmax_t(&[2.0, 0.0], 1.0).unwrap();
        let e2 = 2f64.exp();
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
        let p = softmax_t(&[2.0, 0.0], 1e6).unwrap();
        assert!(p.iter().all(|v| (v - 0.5).abs() < 1e-5));
        assert!(matches!(softmax_t(&[1.0], 0.0), Err(Error::Config(_))));
        assert!(matches!(softmax_t(&[1.0], -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let eps = 1e-8;
        assert_eq!(cross_entropy(&[1.0, 0.0], 0, eps).unwrap(), -(1.0 + eps).ln());
        assert!((cross_entropy(&[0.5, 0.5], 1, 1e-15).unwrap() - 2f64.ln()).abs() < 1e-9);
        assert!((cross_entropy(&[0.2; 5], 3, 1e-15).unwrap() - 5f64.ln()).abs() < 1e-9);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2, eps), Err(Error::Shape { .. })));
    }

    #[test]
    fn adam_behaviour() {
        let mut m = Mlp::new(&[3, 2], Activation::Linear, Activation::Linear, 2).unwrap();
        let before = m.clone();
        let zero = Gradients {
            layers: vec![LayerGradient {
                weights: vec![0.0; 6],
                biases: vec![0.0; 2],
            }],
        };
        let mut st = AdamState::new(&m);
        adam_step(&mut m, &zero, &mut st, 0.1).unwrap();
        assert_eq!(m, before);

        // f(w) = w^2 from w = 1
        let mut l = Dense::zeros(1, 1, Activation::Linear);
        l.weights[0] = 1.0;
        let mut q = Mlp::from_layers(vec![l], 0).unwrap();
        let mut st = AdamState::new(&q);
        let g = Gradients {
            layers: vec![LayerGradient {
                weights: vec![2.0],
                biases: vec![0.0],
            }],
        };
        adam_step(&mut q, &g, &mut st, 0.1).unwrap();
        assert!(q.layers()[0].weights[0].abs() < 1.0);

        let nan = Gradients {
            layers: vec![LayerGradient {
                weights: vec![f64::NAN],
                biases: vec![0.0],
            }],
        };
        assert!(matches!(adam_step(&mut q, &nan, &mut st, 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn param_counts() {
        let single = Mlp::new(&[10, 5], Activation::Relu, Activation::Linear, 0).unwrap();
        assert_eq!(count_params(&single), 55);
        let chain = Mlp::new(&[63, 32, 16], Activation::Relu, Activation::Linear, 0).unwrap();
        assert_eq!(count_params(&chain), 64 * 32 + 33 * 16);
        assert_eq!(count_params(&chain), 2576);
        assert_eq!(count_params(&Mlp::empty()), 0);
        let a = Mlp::new(&[8, 4], Activation::Relu, Activation::Relu, 0).unwrap();
        let b = Mlp::new(&[4, 3], Activation::Relu, Activation::Linear, 0).unwrap();
        let (ca, cb) = (count_params(&a), count_params(&b));
        assert_eq!(count_params(&a.then(b).unwrap()), ca + cb);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
