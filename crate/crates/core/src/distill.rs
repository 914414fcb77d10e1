//! Teacher training and knowledge distillation on VAE latents.
//!
//! The student minimizes
//! `alpha * CE(softmax(z_s), y) + (1 - alpha) * T^2 * KL(S || P)` where
//! `S = softmax(z_s / T)`, `P = softmax(z_t / T)` and
//! `KL(S || P) = sum_i S_i ln((S_i + eps) / (P_i + eps))`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::features::ClassTable;
use crate::neural::{
    adam_step, count_params, cross_entropy_with_grad, gather_rows, softmax_rows, softmax_t, Activation, AdamState,
    BatchSchedule, Matrix, Mlp, TrainConfig,
};

/// Parameter ceiling for the teacher (0.00435 M).
pub const TEACHER_BUDGET: usize = 4350;
/// Parameter ceiling for the student.
pub const STUDENT_BUDGET: usize = 1669;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KlDirection {
    /// `sum S ln(S / P)`: student distribution inside the log numerator.
    StudentToTeacher,
    /// `sum P ln(P / S)`: the classical Hinton formulation.
    TeacherToStudent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight of the hard-label cross-entropy term.
    pub alpha: f64,
    /// Multiply the soft term by `T^2`.
    pub scale_soft_by_t2: bool,
    pub direction: KlDirection,
    pub teacher_hidden: usize,
    /// Preferred student width; shrunk if the class count would break the budget.
    pub student_hidden: usize,
    pub teacher_budget: usize,
    pub student_budget: usize,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        let phase = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 150,
            seed: 0,
            epsilon: 1e-8,
        };
        DistillConfig {
            temperature: 2.0,
            alpha: 0.5,
            scale_soft_by_t2: true,
            direction: KlDirection::StudentToTeacher,
            teacher_hidden: 96,
            student_hidden: 43,
            teacher_budget: TEACHER_BUDGET,
            student_budget: STUDENT_BUDGET,
            teacher: TrainConfig {
                seed: 1,
                ..phase.clone()
            },
            student: TrainConfig { seed: 2, ..phase },
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.teacher_budget == 0 || self.student_budget == 0 {
            return Err(Error::Config("parameter budgets must be positive".into()));
        }
        if self.teacher_hidden == 0 || self.student_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        self.teacher.validate()?;
        self.student.validate()
    }
}

/// Parameters of a one-hidden-layer classifier.
pub fn classifier_params(input: usize, hidden: usize, classes: usize) -> usize {
    (input + 1) * hidden + (hidden + 1) * classes
}

/// Largest hidden width not above `preferred` that fits `budget`, if any.
pub fn fit_hidden_width(preferred: usize, input: usize, classes: usize, budget: usize) -> Option<usize> {
    (1..=preferred)
        .rev()
        .find(|&h| classifier_params(input, h, classes) <= budget)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub net: Mlp,
    pub role: Role,
    pub classes: ClassTable,
}

impl ClassifierModel {
    /// `input -> hidden (ReLU) -> classes (linear)`, rejected if over `budget`.
    pub fn new(role: Role, input: usize, hidden: usize, classes: ClassTable, budget: usize, seed: u64) -> Result<Self> {
        let net = Mlp::new(
            &[input, hidden, classes.len()],
            Activation::Relu,
            Activation::Linear,
            seed,
        )?;
        Self::from_net(role, net, classes, budget)
    }

    pub fn from_net(role: Role, net: Mlp, classes: ClassTable, budget: usize) -> Result<Self> {
        let count = count_params(&net);
        if count > budget {
            return Err(Error::Config(format!(
                "{role:?} has {count} parameters, budget is {budget}"
            )));
        }
        check_len(classes.len(), net.output_width())?;
        Ok(ClassifierModel { net, role, classes })
    }

    pub fn param_count(&self) -> usize {
        count_params(&self.net)
    }

    pub fn logits(&self, latents: &Matrix) -> Result<Matrix> {
        self.net.predict(latents)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrace {
    /// Epoch-mean training loss.
    pub loss: Vec<f64>,
    pub train_accuracy: f64,
}

/// Row-wise temperature softmax of the teacher's logits.
pub fn soft_targets(teacher: &ClassifierModel, latents: &Matrix, temperature: f64) -> Result<Matrix> {
    softmax_rows(&teacher.logits(latents)?, temperature)
}

/// Argmax class (lowest index on ties) and probability rows at `T = 1`.
pub fn predict(classifier: &ClassifierModel, latents: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    let probs = softmax_rows(&classifier.logits(latents)?, 1.0)?;
    let classes = probs.iter_rows().map(argmax).collect();
    Ok((classes, probs))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Batch-mean `sum_i (S_i + eps) ln((S_i + eps) / (P_i + eps))`: the KL
/// divergence between the two eps-smoothed distributions. Weighting by the
/// smoothed `S_i` keeps the loss non-negative for any eps; the difference
/// from weighting by `S_i` is below `k * eps * |ln eps|` for `k` classes.
pub fn kd_loss(student: &Matrix, teacher: &Matrix, epsilon: f64) -> Result<f64> {
    kd_loss_directed(student, teacher, epsilon, KlDirection::StudentToTeacher)
}

pub fn kd_loss_directed(student: &Matrix, teacher: &Matrix, epsilon: f64, direction: KlDirection) -> Result<f64> {
    check_len(student.cols, teacher.cols)?;
    check_len(student.rows, teacher.rows)?;
    if student.rows == 0 {
        return Ok(0.0);
    }
    let (p, q) = match direction {
        KlDirection::StudentToTeacher => (student, teacher),
        KlDirection::TeacherToStudent => (teacher, student),
    };
    let sum: f64 = p
        .data
        .iter()
        .zip(&q.data)
        .map(|(a, b)| (a + epsilon) * ((a + epsilon) / (b + epsilon)).ln())
        .sum();
    Ok(sum / student.rows as f64)
}

/// Combined distillation loss over a batch and its gradient w.r.t. the
/// student logits. `teacher_soft` holds the teacher's probabilities at `T`.
pub fn distillation_loss_and_grad(
    student_logits: &Matrix,
    labels: &[usize],
    teacher_soft: &Matrix,
    config: &DistillConfig,
    epsilon: f64,
) -> Result<(f64, Matrix)> {
    check_len(student_logits.rows, teacher_soft.rows)?;
    check_len(student_logits.cols, teacher_soft.cols)?;
    let t = config.temperature;
    let (ce, g_ce) = cross_entropy_with_grad(student_logits, labels, epsilon)?;

    let soft = softmax_rows(student_logits, t)?;
    let kd = kd_loss_directed(&soft, teacher_soft, epsilon, config.direction)?;
    let rows = student_logits.rows as f64;
    let mut g_kd = Matrix::zeros(soft.rows, soft.cols);
    for r in 0..soft.rows {
        let s = soft.row(r);
        let p = teacher_soft.row(r);
        let dl_ds: Vec<f64> = match config.direction {
            KlDirection::StudentToTeacher => s
                .iter()
                .zip(p)
                .map(|(&si, &pi)| ((si + epsilon) / (pi + epsilon)).ln() + 1.0)
                .collect(),
            KlDirection::TeacherToStudent => s
                .iter()
                .zip(p)
                .map(|(&si, &pi)| -(pi + epsilon) / (si + epsilon))
                .collect(),
        };
        let dot: f64 = s.iter().zip(&dl_ds).map(|(a, b)| a * b).sum();
        let g = g_kd.row_mut(r);
        for j in 0..s.len() {
            g[j] = s[j] * (dl_ds[j] - dot) / t / rows;
        }
    }

    let soft_weight = (1.0 - config.alpha) * if config.scale_soft_by_t2 { t * t } else { 1.0 };
    let loss = config.alpha * ce + soft_weight * kd;
    let mut grad = g_ce;
    for (g, k) in grad.data.iter_mut().zip(&g_kd.data) {
        *g = config.alpha * *g + soft_weight * k;
    }
    Ok((loss, grad))
}

/// Shared mini-batch loop. `batch_loss` maps (logits, batch indices) to loss
/// and logit gradient.
fn fit<F>(net: &mut Mlp, latents: &Matrix, tc: &TrainConfig, mut batch_loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&Matrix, &[usize]) -> Result<(f64, Matrix)>,
{
    let mut state = AdamState::new(net);
    let mut schedule = BatchSchedule::new(latents.rows, tc.seed.wrapping_add(100));
    let mut trace = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let mut sum = 0.0;
        for idx in schedule.epoch(tc.batch_size) {
            let x = gather_rows(latents, &idx);
            let step = net.forward(&x).and_then(|(logits, cache)| {
                let (loss, g) = batch_loss(&logits, &idx)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric("non-finite loss".into()));
                }
                let (grads, _) = net.backward(&cache, &g)?;
                adam_step(net, &grads, &mut state, tc.learning_rate)?;
                Ok(loss)
            });
            let loss = step.map_err(|e| Error::training(format!("epoch {epoch}: {e}"), trace.clone()))?;
            sum += loss * idx.len() as f64;
        }
        trace.push(sum / latents.rows as f64);
    }
    Ok(trace)
}

fn check_inputs(latents: &Matrix, labels: &[usize], classes: &ClassTable) -> Result<()> {
    check_len(latents.rows, labels.len())?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
        return Err(Error::Data(format!(
            "label {bad} outside class table of {}",
            classes.len()
        )));
    }
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::training("training data holds a single class", Vec::new()));
    }
    Ok(())
}

fn accuracy(model: &ClassifierModel, latents: &Matrix, labels: &[usize]) -> Result<f64> {
    let (pred, _) = predict(model, latents)?;
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Cross-entropy training of a classifier.
pub fn train_classifier(
    role: Role,
    latents: &Matrix,
    labels: &[usize],
    classes: &ClassTable,
    hidden: usize,
    budget: usize,
    tc: &TrainConfig,
) -> Result<(ClassifierModel, ClassifierTrace)> {
    check_inputs(latents, labels, classes)?;
    tc.validate()?;
    let mut model = ClassifierModel::new(role, latents.cols, hidden, classes.clone(), budget, tc.seed)?;
    let loss = fit(&mut model.net, latents, tc, |logits, idx| {
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        cross_entropy_with_grad(logits, &y, tc.epsilon)
    })?;
    let train_accuracy = accuracy(&model, latents, labels)?;
    Ok((model, ClassifierTrace { loss, train_accuracy }))
}

pub fn train_teacher(
    latents: &Matrix,
    labels: &[usize],
    classes: &ClassTable,
    config: &DistillConfig,
) -> Result<(ClassifierModel, ClassifierTrace)> {
    config.validate()?;
    train_classifier(
        Role::Teacher,
        latents,
        labels,
        classes,
        config.teacher_hidden,
        config.teacher_budget,
        &config.teacher,
    )
}

/// Student hidden width for a class count under the configured budget.
pub fn student_width(config: &DistillConfig, input: usize, classes: usize) -> Result<usize> {
    fit_hidden_width(config.student_hidden, input, classes, config.student_budget).ok_or_else(|| {
        Error::Config(format!(
            "no student width fits {} parameters for {classes} classes",
            config.student_budget
        ))
    })
}

pub fn train_student(
    latents: &Matrix,
    labels: &[usize],
    teacher: &ClassifierModel,
    config: &DistillConfig,
) -> Result<(ClassifierModel, ClassifierTrace)> {
    config.validate()?;
    let classes = &teacher.classes;
    check_inputs(latents, labels, classes)?;
    let hidden = student_width(config, latents.cols, classes.len())?;
    let tc = &config.student;
    let mut model = ClassifierModel::new(
        Role::Student,
        latents.cols,
        hidden,
        classes.clone(),
        config.student_budget,
        tc.seed,
    )?;
    let soft = soft_targets(teacher, latents, config.temperature)?;
    let loss = fit(&mut model.net, latents, tc, |logits, idx| {
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let targets = gather_rows(&soft, idx);
        distillation_loss_and_grad(logits, &y, &targets, config, tc.epsilon)
    })?;
    let train_accuracy = accuracy(&model, latents, labels)?;
    Ok((model, ClassifierTrace { loss, train_accuracy }))
}

/// Probability of one class for a single latent vector.
pub fn class_probability(model: &ClassifierModel, latent: &[f64], class: usize) -> Result<f64> {
    let logits = model.net.predict_one(latent)?;
    Ok(softmax_t(&logits, 1.0)?[class])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canlog::AttackKind;

    fn two_classes() -> ClassTable {
        ClassTable::new(&[AttackKind::DoS]).unwrap()
    }

    fn five_classes() -> ClassTable {
        ClassTable::new(&[
            AttackKind::DoS,
            AttackKind::Fuzzing,
            AttackKind::GearSpoof,
            AttackKind::RpmSpoof,
        ])
        .unwrap()
    }

    /// Two Gaussian-free clusters separated along the first latent axis.
    fn separable(n: usize) -> (Matrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let mut row = vec![0.0; 32];
            row[0] = if label == 1 { 2.0 } else { -2.0 };
            for (j, v) in row.iter_mut().enumerate().skip(1) {
                *v = (((i * 31 + j * 17) % 13) as f64 - 6.0) / 6.0;
            }
            rows.push(row);
            labels.push(label);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    fn quick_config() -> DistillConfig {
        let mut c = DistillConfig::default();
        c.teacher.epochs = 40;
        c.student.epochs = 40;
        c
    }

    #[test]
    fn default_budgets() {
        let t = ClassifierModel::new(Role::Teacher, 32, 96, five_classes(), TEACHER_BUDGET, 0).unwrap();
        assert_eq!(t.param_count(), 3653);
        let cfg = DistillConfig::default();
        let h = student_width(&cfg, 32, 5).unwrap();
        assert_eq!(h, 43);
        let s = ClassifierModel::new(Role::Student, 32, h, five_classes(), STUDENT_BUDGET, 0).unwrap();
        assert_eq!(s.param_count(), 1639);
        assert_eq!(1639, 38 * 43 + 5);
        // six classes shrink the student to stay in budget
        assert_eq!(student_width(&cfg, 32, 6).unwrap(), 42);
        assert!(matches!(
            ClassifierModel::new(Role::Student, 32, 60, five_classes(), STUDENT_BUDGET, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn teacher_separates_toy_set() {
        let (x, y) = separable(200);
        let (t, trace) = train_teacher(&x, &y, &two_classes(), &quick_config()).unwrap();
        assert!(trace.train_accuracy >= 0.99, "{}", trace.train_accuracy);
        assert!(t.param_count() <= TEACHER_BUDGET);
        let (t2, _) = train_teacher(&x, &y, &two_classes(), &quick_config()).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn single_class_is_training_error() {
        let x = Matrix::zeros(10, 32);
        let y = vec![0; 10];
        assert!(matches!(
            train_teacher(&x, &y, &two_classes(), &quick_config()),
            Err(Error::Training { .. })
        ));
    }

    #[test]
    fn soft_target_properties() {
        let (x, y) = separable(50);
        let (t, _) = train_teacher(&x, &y, &two_classes(), &quick_config()).unwrap();
        let plain = softmax_rows(&t.logits(&x).unwrap(), 1.0).unwrap();
        assert_eq!(soft_targets(&t, &x, 1.0).unwrap(), plain);
        let hot = soft_targets(&t, &x, 1e6).unwrap();
        assert!(hot.data.iter().all(|p| (p - 0.5).abs() < 1e-5));
        let (hard, _) = predict(&t, &x).unwrap();
        for temp in [0.5, 2.0, 10.0] {
            let s = soft_targets(&t, &x, temp).unwrap();
            let am: Vec<usize> = s.iter_rows().map(argmax).collect();
            assert_eq!(am, hard);
        }
        assert!(matches!(soft_targets(&t, &x, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn kd_loss_values() {
        let s = Matrix::from_rows(&[[0.9, 0.1]]).unwrap();
        let t = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        let got = kd_loss(&s, &t, 1e-15).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.3681).abs() < 1e-3);
        assert_eq!(kd_loss(&s, &s, 1e-8).unwrap(), 0.0);
        assert!(matches!(
            kd_loss(&s, &Matrix::zeros(1, 3), 1e-8),
            Err(Error::Shape { .. })
        ));
        // reverse direction differs
        let rev = kd_loss_directed(&s, &t, 1e-15, KlDirection::TeacherToStudent).unwrap();
        let expected_rev = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((rev - expected_rev).abs() < 1e-12);
    }

    #[test]
    fn predict_ties_go_to_lowest_index() {
        let net = Mlp::from_layers(vec![crate::neural::Dense::zeros(32, 5, Activation::Linear)], 0).unwrap();
        let c = ClassifierModel::from_net(Role::Student, net, five_classes(), STUDENT_BUDGET).unwrap();
        let (classes, probs) = predict(&c, &Matrix::zeros(3, 32)).unwrap();
        assert_eq!(classes, [0, 0, 0]);
        for r in probs.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_one_matches_plain_cross_entropy() {
        let (x, y) = separable(64);
        let cfg = DistillConfig {
            alpha: 1.0,
            ..quick_config()
        };
        let (teacher, _) = train_teacher(&x, &y, &two_classes(), &cfg).unwrap();
        let (student, st) = train_student(&x, &y, &teacher, &cfg).unwrap();
        let hidden = student_width(&cfg, 32, 2).unwrap();
        let (plain, pt) = train_classifier(
            Role::Student,
            &x,
            &y,
            &two_classes(),
            hidden,
            cfg.student_budget,
            &cfg.student,
        )
        .unwrap();
        assert_eq!(student.net, plain.net);
        assert_eq!(st.loss, pt.loss);
    }

    #[test]
    fn student_tracks_teacher_on_toy_set() {
        let (x, y) = separable(200);
        let cfg = quick_config();
        let (teacher, _) = train_teacher(&x, &y, &two_classes(), &cfg).unwrap();
        let (student, trace) = train_student(&x, &y, &teacher, &cfg).unwrap();
        assert!(trace.train_accuracy >= 0.99);
        assert!(student.param_count() <= STUDENT_BUDGET);
    }

    #[test]
    fn distillation_gradient_matches_finite_differences() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 0.8], [1.5, 0.1, -0.4]]).unwrap();
        let teacher = Matrix::from_rows(&[[0.2, 0.1, 0.7], [0.6, 0.3, 0.1]]).unwrap();
        let labels = [2, 0];
        for direction in [KlDirection::StudentToTeacher, KlDirection::TeacherToStudent] {
            let cfg = DistillConfig {
                direction,
                alpha: 0.3,
                ..DistillConfig::default()
            };
            let (_, grad) = distillation_loss_and_grad(&logits, &labels, &teacher, &cfg, 1e-8).unwrap();
            let h = 1e-6;
            for k in 0..logits.data.len() {
                let mut up = logits.clone();
                up.data[k] += h;
                let mut down = logits.clone();
                down.data[k] -= h;
                let lu = distillation_loss_and_grad(&up, &labels, &teacher, &cfg, 1e-8)
                    .unwrap()
                    .0;
                let ld = distillation_loss_and_grad(&down, &labels, &teacher, &cfg, 1e-8)
                    .unwrap()
                    .0;
                let fd = (lu - ld) / (2.0 * h);
                let rel = (fd - grad.data[k]).abs() / fd.abs().max(grad.data[k].abs()).max(1e-6);
                assert!(rel < 1e-5, "{direction:?} k={k} fd={fd} analytic={}", grad.data[k]);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig {
            temperature: 0.0,
            ..DistillConfig::default()
        }
        .validate()
        .is_err());
        assert!(DistillConfig {
            alpha: 1.5,
            ..DistillConfig::default()
        }
        .validate()
        .is_err());
        assert!(DistillConfig::default().validate().is_ok());
    }
}
