//! Shapley attributions over latent dimensions.
//!
//! `exact_shapley` enumerates every coalition and is limited to 20 players;
//! `sampled_shapley` averages marginal gains over random permutations and is
//! what the model reports use for the 32 latent dimensions.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::ClassifierModel;
use crate::error::{check_len, Error, Result};
use crate::features::FrameLayout;
use crate::neural::{Activation, Dense, Matrix};

/// Largest player count accepted by [`exact_shapley`].
pub const EXACT_LIMIT: usize = 20;
/// Student denominators below this make a ratio undefined.
pub const RATIO_FLOOR: f64 = 1e-12;

/// A cooperative game over `players()` players.
pub trait Game: Sync {
    fn players(&self) -> usize;

    /// Worth of the coalition whose members are marked `true`.
    fn value(&self, coalition: &[bool]) -> f64;

    /// Values of the growing prefixes of `order`, starting with the empty set
    /// (`order.len() + 1` entries).
    fn prefix_values(&self, order: &[usize]) -> Vec<f64> {
        let mut coalition = vec![false; self.players()];
        let mut out = Vec::with_capacity(order.len() + 1);
        out.push(self.value(&coalition));
        for &i in order {
            coalition[i] = true;
            out.push(self.value(&coalition));
        }
        out
    }
}

/// Game backed by a closure.
pub struct FnGame<F> {
    players: usize,
    f: F,
}

impl<F: Fn(&[bool]) -> f64 + Sync> FnGame<F> {
    pub fn new(players: usize, f: F) -> Self {
        FnGame { players, f }
    }
}

impl<F: Fn(&[bool]) -> f64 + Sync> Game for FnGame<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, coalition: &[bool]) -> f64 {
        (self.f)(coalition)
    }
}

/// Game given as a table of `2^m` values indexed by coalition bitmask
/// (bit `i` set means player `i` is present).
#[derive(Clone, Debug, PartialEq)]
pub struct TableGame {
    players: usize,
    values: Vec<f64>,
}

impl TableGame {
    pub fn new(players: usize, values: Vec<f64>) -> Result<Self> {
        if players > EXACT_LIMIT {
            return Err(Error::Size(players));
        }
        check_len(1usize << players, values.len())?;
        Ok(TableGame { players, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Game for TableGame {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, coalition: &[bool]) -> f64 {
        self.values[mask_of(coalition)]
    }
}

fn mask_of(coalition: &[bool]) -> usize {
    coalition
        .iter()
        .enumerate()
        .filter(|(_, &p)| p)
        .fold(0, |m, (i, _)| m | (1 << i))
}

/// Shapley values by full coalition enumeration with each `v(S)` evaluated once.
pub fn exact_shapley(game: &dyn Game) -> Result<Vec<f64>> {
    let m = game.players();
    if m > EXACT_LIMIT {
        return Err(Error::Size(m));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut coalition = vec![false; m];
    let values: Vec<f64> = (0..1usize << m)
        .map(|mask| {
            for (i, slot) in coalition.iter_mut().enumerate() {
                *slot = mask & (1 << i) != 0;
            }
            game.value(&coalition)
        })
        .collect();

    // |S|!(m-|S|-1)!/m! = 1 / (m * C(m-1, |S|))
    let mut weights = vec![0.0; m];
    let mut binom = 1.0f64;
    for (s, w) in weights.iter_mut().enumerate() {
        *w = 1.0 / (m as f64 * binom);
        binom = binom * (m - 1 - s) as f64 / (s + 1) as f64;
    }

    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in 0..1usize << m {
            if mask & bit == 0 {
                acc += weights[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
            }
        }
        *p = acc;
    }
    Ok(phi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapleyEstimate {
    pub phi: Vec<f64>,
    /// Standard error of each mean, `sd / sqrt(samples)`.
    pub standard_error: Vec<f64>,
    pub samples: usize,
}

fn permutation_gains(game: &dyn Game, seed: u64, index: u64) -> Vec<f64> {
    let m = game.players();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let values = game.prefix_values(&order);
    let mut gains = vec![0.0; m];
    for (k, &i) in order.iter().enumerate() {
        gains[i] = values[k + 1] - values[k];
    }
    gains
}

fn summarize(m: usize, gains: &[Vec<f64>]) -> ShapleyEstimate {
    let n = gains.len();
    let mut phi = vec![0.0; m];
    for g in gains {
        for (p, x) in phi.iter_mut().zip(g) {
            *p += x;
        }
    }
    phi.iter_mut().for_each(|p| *p /= n as f64);
    let mut se = vec![0.0; m];
    if n > 1 {
        for g in gains {
            for ((s, x), p) in se.iter_mut().zip(g).zip(&phi) {
                *s += (x - p) * (x - p);
            }
        }
        se.iter_mut()
            .for_each(|s| *s = (*s / (n - 1) as f64).sqrt() / (n as f64).sqrt());
    }
    ShapleyEstimate {
        phi,
        standard_error: se,
        samples: n,
    }
}

/// Permutation-sampling estimate. Permutation `k` draws from stream `k` of
/// the seeded generator, so results do not depend on the thread count.
pub fn sampled_shapley(game: &dyn Game, samples: usize, seed: u64) -> Result<ShapleyEstimate> {
    if samples == 0 {
        return Err(Error::Config("at least one permutation is required".into()));
    }
    let gains: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|k| permutation_gains(game, seed, k))
        .collect();
    Ok(summarize(game.players(), &gains))
}

fn sampled_sequential(game: &dyn Game, samples: usize, seed: u64) -> ShapleyEstimate {
    let gains: Vec<Vec<f64>> = (0..samples as u64).map(|k| permutation_gains(game, seed, k)).collect();
    summarize(game.players(), &gains)
}

/// Latent dimension `i` maps to feature `i mod f` of the frame layout.
pub fn latent_to_feature_map(layout: FrameLayout, latent_dim: usize) -> Vec<&'static str> {
    let names = layout.feature_names();
    (0..latent_dim).map(|i| names[i % names.len()]).collect()
}

/// Predicted probability of `class` with absent latents replaced by the
/// background mean.
pub struct ValueFunction<'a> {
    model: &'a ClassifierModel,
    background_mean: Vec<f64>,
    instance: Vec<f64>,
    class: usize,
}

impl<'a> ValueFunction<'a> {
    pub fn new(model: &'a ClassifierModel, background: &Matrix, instance: &[f64], class: usize) -> Result<Self> {
        Self::with_mean(model, background_mean(background)?, instance, class)
    }

    fn with_mean(
        model: &'a ClassifierModel,
        background_mean: Vec<f64>,
        instance: &[f64],
        class: usize,
    ) -> Result<Self> {
        check_len(model.net.input_width(), instance.len())?;
        check_len(model.net.input_width(), background_mean.len())?;
        if class >= model.classes.len() {
            return Err(Error::Shape {
                expected: model.classes.len(),
                actual: class,
            });
        }
        Ok(ValueFunction {
            model,
            background_mean,
            instance: instance.to_vec(),
            class,
        })
    }

    fn probability(&self, first_pre: &[f64]) -> f64 {
        let layers = self.model.net.layers();
        let mut x = activate(layers[0].activation, first_pre.to_vec());
        for layer in &layers[1..] {
            x = activate(layer.activation, affine(layer, &x));
        }
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = x.iter().map(|z| (z - max).exp()).sum();
        (x[self.class] - max).exp() / denom
    }
}

fn activate(activation: Activation, mut x: Vec<f64>) -> Vec<f64> {
    if activation == Activation::Relu {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    x
}

fn affine(layer: &Dense, x: &[f64]) -> Vec<f64> {
    (0..layer.output)
        .map(|o| {
            let w = &layer.weights[o * layer.input..(o + 1) * layer.input];
            layer.biases[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub fn background_mean(background: &Matrix) -> Result<Vec<f64>> {
    if background.rows == 0 {
        return Err(Error::Data("empty background batch".into()));
    }
    let mut mean = vec![0.0; background.cols];
    for row in background.iter_rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= background.rows as f64);
    Ok(mean)
}

impl Game for ValueFunction<'_> {
    fn players(&self) -> usize {
        self.instance.len()
    }

    fn value(&self, coalition: &[bool]) -> f64 {
        let x: Vec<f64> = coalition
            .iter()
            .zip(self.instance.iter().zip(&self.background_mean))
            .map(|(&present, (&xi, &bi))| if present { xi } else { bi })
            .collect();
        self.probability(&affine(&self.model.net.layers()[0], &x))
    }

    // The first layer is affine, so adding one coordinate shifts its
    // pre-activation by a single weight column.
    fn prefix_values(&self, order: &[usize]) -> Vec<f64> {
        let first = &self.model.net.layers()[0];
        let mut pre = affine(first, &self.background_mean);
        let mut out = Vec::with_capacity(order.len() + 1);
        out.push(self.probability(&pre));
        for &i in order {
            let delta = self.instance[i] - self.background_mean[i];
            for (o, p) in pre.iter_mut().enumerate() {
                *p += first.weights[o * first.input + i] * delta;
            }
            out.push(self.probability(&pre));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    pub permutations: usize,
    pub instances_per_class: usize,
    pub background_size: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            permutations: 2000,
            instances_per_class: 50,
            background_size: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAttribution {
    pub class: String,
    pub class_index: usize,
    pub instances: usize,
    /// Mean |phi| per latent dimension.
    pub mean_abs_phi: Vec<f64>,
    /// Signed mean phi per latent dimension.
    pub mean_phi: Vec<f64>,
    /// Mean per-instance standard error per latent dimension.
    pub mean_standard_error: Vec<f64>,
    /// Mean of `mean_abs_phi` over the dimensions mapped to each feature.
    pub feature_importance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub class: String,
    pub feature: String,
    pub teacher: f64,
    pub student: f64,
    /// `None` when the student importance is below the floor.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapMetadata {
    pub estimator: String,
    pub imputation: String,
    pub permutations: usize,
    pub instances_per_class: usize,
    pub background_rows: usize,
    pub seed: u64,
    pub skipped_classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub feature_names: Vec<String>,
    pub dim_to_feature: Vec<String>,
    pub teacher: Vec<ClassAttribution>,
    pub student: Vec<ClassAttribution>,
    pub ratios: Vec<RatioEntry>,
    pub metadata: ShapMetadata,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportView {
    PerClass,
    Global,
}

fn attribute(
    model: &ClassifierModel,
    mean: &[f64],
    instances: &[&[f64]],
    class: usize,
    config: &ExplainConfig,
    dims: &[&str],
    features: &[&str],
) -> Result<ClassAttribution> {
    let estimates: Vec<ShapleyEstimate> = instances
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let game = ValueFunction::with_mean(model, mean.to_vec(), x, class)?;
            let seed = config.seed ^ ((class as u64) << 32) ^ k as u64;
            Ok(sampled_sequential(&game, config.permutations, seed))
        })
        .collect::<Result<_>>()?;
    let m = dims.len();
    let n = estimates.len() as f64;
    let mut abs = vec![0.0; m];
    let mut signed = vec![0.0; m];
    let mut se = vec![0.0; m];
    for e in &estimates {
        for i in 0..m {
            abs[i] += e.phi[i].abs() / n;
            signed[i] += e.phi[i] / n;
            se[i] += e.standard_error[i] / n;
        }
    }
    let feature_importance = features
        .iter()
        .map(|f| {
            let picked: Vec<f64> = dims
                .iter()
                .zip(&abs)
                .filter(|(d, _)| *d == f)
                .map(|(_, a)| *a)
                .collect();
            if picked.is_empty() {
                0.0
            } else {
                picked.iter().sum::<f64>() / picked.len() as f64
            }
        })
        .collect();
    Ok(ClassAttribution {
        class: model.classes.names()[class].clone(),
        class_index: class,
        instances: estimates.len(),
        mean_abs_phi: abs,
        mean_phi: signed,
        mean_standard_error: se,
        feature_importance,
    })
}

/// Per-class attributions for both models on `subset` (rows of latents with
/// their class labels) against a background batch.
pub fn explain_models(
    teacher: &ClassifierModel,
    student: &ClassifierModel,
    layout: FrameLayout,
    subset: &Matrix,
    labels: &[usize],
    background: &Matrix,
    config: &ExplainConfig,
) -> Result<ShapReport> {
    check_len(subset.rows, labels.len())?;
    if subset.rows == 0 {
        return Err(Error::Data("empty explanation subset".into()));
    }
    if config.permutations == 0 || config.instances_per_class == 0 {
        return Err(Error::Config(
            "permutations and instances_per_class must be positive".into(),
        ));
    }
    check_len(teacher.classes.len(), student.classes.len())?;
    let mean = background_mean(background)?;
    let dims = latent_to_feature_map(layout, subset.cols);
    let features = layout.feature_names();
    let names = teacher.classes.names();

    let mut report = ShapReport {
        feature_names: features.iter().map(|s| s.to_string()).collect(),
        dim_to_feature: dims.iter().map(|s| s.to_string()).collect(),
        teacher: Vec::new(),
        student: Vec::new(),
        ratios: Vec::new(),
        metadata: ShapMetadata {
            estimator: "permutation".into(),
            imputation: "background mean".into(),
            permutations: config.permutations,
            instances_per_class: config.instances_per_class,
            background_rows: background.rows,
            seed: config.seed,
            skipped_classes: Vec::new(),
        },
    };
    for (class, class_name) in names.iter().enumerate() {
        let rows: Vec<&[f64]> = (0..subset.rows)
            .filter(|&r| labels[r] == class)
            .take(config.instances_per_class)
            .map(|r| subset.row(r))
            .collect();
        if rows.is_empty() {
            warn!("no instances of class {class_name}, skipped");
            report.metadata.skipped_classes.push(class_name.clone());
            continue;
        }
        let t = attribute(teacher, &mean, &rows, class, config, &dims, features)?;
        let s = attribute(student, &mean, &rows, class, config, &dims, features)?;
        for (f, name) in features.iter().enumerate() {
            let (ti, si) = (t.feature_importance[f], s.feature_importance[f]);
            report.ratios.push(RatioEntry {
                class: class_name.clone(),
                feature: name.to_string(),
                teacher: ti,
                student: si,
                ratio: (si >= RATIO_FLOOR).then(|| ti / si),
            });
        }
        report.teacher.push(t);
        report.student.push(s);
    }
    Ok(report)
}

impl ShapReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }

    /// Plain-text tables: latent attributions, feature aggregation, ratios.
    pub fn render(&self, view: ReportView) -> String {
        let mut out = String::new();
        match view {
            ReportView::PerClass => {
                for (label, rows) in [("teacher", &self.teacher), ("student", &self.student)] {
                    for c in rows.iter() {
                        out.push_str(&format!("== {label} / {} ({} instances)\n", c.class, c.instances));
                        out.push_str(&format!(
                            "{:>4}  {:<10} {:>12} {:>12}\n",
                            "dim", "feature", "mean|phi|", "se"
                        ));
                        for (i, f) in self.dim_to_feature.iter().enumerate() {
                            out.push_str(&format!(
                                "{i:>4}  {f:<10} {:>12.6} {:>12.6}\n",
                                c.mean_abs_phi[i], c.mean_standard_error[i]
                            ));
                        }
                    }
                }
            }
            ReportView::Global => {
                for (label, rows) in [("teacher", &self.teacher), ("student", &self.student)] {
                    out.push_str(&format!("== {label} / all classes\n"));
                    out.push_str(&format!("{:>4}  {:<10} {:>12}\n", "dim", "feature", "mean|phi|"));
                    for (i, f) in self.dim_to_feature.iter().enumerate() {
                        let mean = rows.iter().map(|c| c.mean_abs_phi[i]).sum::<f64>() / rows.len().max(1) as f64;
                        out.push_str(&format!("{i:>4}  {f:<10} {mean:>12.6}\n"));
                    }
                }
            }
        }
        out.push_str("== feature importance (mean |phi| over mapped dims)\n");
        out.push_str(&format!(
            "{:<14} {:<10} {:>12} {:>12}\n",
            "class", "feature", "teacher", "student"
        ));
        for (t, s) in self.teacher.iter().zip(&self.student) {
            for (f, name) in self.feature_names.iter().enumerate() {
                out.push_str(&format!(
                    "{:<14} {name:<10} {:>12.6} {:>12.6}\n",
                    t.class, t.feature_importance[f], s.feature_importance[f]
                ));
            }
        }
        out.push_str("== teacher/student ratio\n");
        out.push_str(&format!("{:<14} {:<10} {:>10}\n", "class", "feature", "ratio"));
        for r in &self.ratios {
            let ratio = r.ratio.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!("{:<14} {:<10} {ratio:>10}\n", r.class, r.feature));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canlog::AttackKind;
    use crate::distill::{Role, STUDENT_BUDGET, TEACHER_BUDGET};
    use crate::features::ClassTable;
    use crate::neural::Mlp;

    fn classes() -> ClassTable {
        ClassTable::new(&[AttackKind::DoS, AttackKind::Fuzzing]).unwrap()
    }

    #[test]
    fn additive_and_symmetric_games() {
        let additive = TableGame::new(2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let phi = exact_shapley(&additive).unwrap();
        assert!((phi[0] - 1.0).abs() < 1e-12 && (phi[1] - 2.0).abs() < 1e-12);
        let symmetric = TableGame::new(2, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(exact_shapley(&symmetric).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn dummy_player_gets_zero() {
        let g = FnGame::new(4, |c: &[bool]| (c[0] as u8 as f64) * 2.0 + (c[1] && c[2]) as u8 as f64);
        let phi = exact_shapley(&g).unwrap();
        assert_eq!(phi[3], 0.0);
        assert!((phi.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_players() {
        let g = FnGame::new(21, |_: &[bool]| 0.0);
        assert!(matches!(exact_shapley(&g), Err(Error::Size(21))));
    }

    #[test]
    fn sampled_is_deterministic_and_zero_on_constants() {
        let g = FnGame::new(6, |c: &[bool]| {
            c.iter().filter(|&&p| p).count() as f64 * 0.3 + c[0] as u8 as f64
        });
        let a = sampled_shapley(&g, 200, 9).unwrap();
        let b = sampled_shapley(&g, 200, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, sampled_sequential(&g, 200, 9));
        let constant = FnGame::new(5, |_: &[bool]| 4.2);
        let c = sampled_shapley(&constant, 100, 1).unwrap();
        assert!(c.phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn feature_maps() {
        let hcrl = latent_to_feature_map(FrameLayout::TimestampIdDlcData, 32);
        assert_eq!(hcrl.len(), 32);
        for d in [0, 11, 22] {
            assert_eq!(hcrl[d], "Timestamp");
        }
        for d in [1, 12, 23] {
            assert_eq!(hcrl[d], "CAN ID");
        }
        let cic = latent_to_feature_map(FrameLayout::IdData, 32);
        for d in [0, 9, 18, 27] {
            assert_eq!(cic[d], "CAN ID");
        }
    }

    #[test]
    fn incremental_prefix_values_match_direct_evaluation() {
        let model = ClassifierModel::new(Role::Teacher, 32, 96, classes(), TEACHER_BUDGET, 4).unwrap();
        let bg = Matrix::from_rows(&[vec![0.1; 32], vec![-0.3; 32]]).unwrap();
        let x: Vec<f64> = (0..32).map(|i| (i as f64 - 16.0) / 8.0).collect();
        let v = ValueFunction::new(&model, &bg, &x, 1).unwrap();
        let order: Vec<usize> = (0..32).rev().collect();
        let fast = v.prefix_values(&order);
        let mut c = vec![false; 32];
        let mut slow = vec![v.value(&c)];
        for &i in &order {
            c[i] = true;
            slow.push(v.value(&c));
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        let full = crate::distill::class_probability(&model, &x, 1).unwrap();
        assert!((slow[32] - full).abs() < 1e-12);
    }

    fn toy_subset() -> (Matrix, Vec<usize>) {
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|r| (0..32).map(|i| ((r * 7 + i * 3) % 11) as f64 / 5.0 - 1.0).collect())
            .collect();
        (Matrix::from_rows(&rows).unwrap(), (0..9).map(|r| r % 3).collect())
    }

    #[test]
    fn self_ratio_is_one() {
        let model = ClassifierModel::new(Role::Student, 32, 43, classes(), STUDENT_BUDGET, 2).unwrap();
        let (x, y) = toy_subset();
        let cfg = ExplainConfig {
            permutations: 50,
            ..ExplainConfig::default()
        };
        let report = explain_models(&model, &model, FrameLayout::IdData, &x, &y, &x, &cfg).unwrap();
        assert_eq!(report.teacher.len(), 3);
        assert_eq!(report.teacher[0].mean_abs_phi.len(), 32);
        assert_eq!(report.ratios.len(), 3 * 9);
        for r in &report.ratios {
            if let Some(v) = r.ratio {
                assert!((v - 1.0).abs() < 1e-9);
            }
        }
        let text = report.render(ReportView::PerClass);
        assert!(text.contains("teacher/student ratio"));
        assert!(report.to_json().unwrap().contains("dim_to_feature"));
    }

    #[test]
    fn constant_model_has_zero_attribution() {
        let net = Mlp::from_layers(
            vec![
                Dense::zeros(32, 8, Activation::Relu),
                Dense::zeros(8, 3, Activation::Linear),
            ],
            0,
        )
        .unwrap();
        let model = ClassifierModel::from_net(Role::Student, net, classes(), STUDENT_BUDGET).unwrap();
        let (x, y) = toy_subset();
        let cfg = ExplainConfig {
            permutations: 20,
            ..ExplainConfig::default()
        };
        let report = explain_models(&model, &model, FrameLayout::IdData, &x, &y, &x, &cfg).unwrap();
        assert!(report.teacher.iter().all(|c| c.mean_abs_phi.iter().all(|&p| p == 0.0)));
        assert!(report.ratios.iter().all(|r| r.ratio.is_none()));
    }

    #[test]
    fn missing_class_is_skipped_and_empty_subset_rejected() {
        let model = ClassifierModel::new(Role::Student, 32, 43, classes(), STUDENT_BUDGET, 2).unwrap();
        let (x, _) = toy_subset();
        let y = vec![0; 9];
        let cfg = ExplainConfig {
            permutations: 10,
            ..ExplainConfig::default()
        };
        let report = explain_models(&model, &model, FrameLayout::IdData, &x, &y, &x, &cfg).unwrap();
        assert_eq!(report.metadata.skipped_classes.len(), 2);
        assert!(matches!(
            explain_models(
                &model,
                &model,
                FrameLayout::IdData,
                &Matrix::zeros(0, 32),
                &[],
                &x,
                &cfg
            ),
            Err(Error::Data(_))
        ));
    }
}
