//! Classification metrics, inference timing and parameter-count reports.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::neural::{count_params, Matrix, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub samples: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest confusion counts and rates for every class. Zero
/// denominators yield 0.
pub fn confusion_and_rates(predictions: &[usize], truths: &[usize], class_count: usize) -> Result<MetricsReport> {
    let names: Vec<String> = (0..class_count).map(|c| c.to_string()).collect();
    confusion_with_names(predictions, truths, &names)
}

pub fn confusion_with_names(predictions: &[usize], truths: &[usize], names: &[String]) -> Result<MetricsReport> {
    check_len(truths.len(), predictions.len())?;
    let k = names.len();
    if let Some(&bad) = predictions.iter().chain(truths).find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside {k} classes")));
    }
    let n = truths.len();
    let mut matrix = vec![0usize; k * k];
    for (&p, &t) in predictions.iter().zip(truths) {
        matrix[t * k + p] += 1;
    }
    let classes: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = matrix[c * k + c];
            let actual: usize = (0..k).map(|p| matrix[c * k + p]).sum();
            let predicted: usize = (0..k).map(|t| matrix[t * k + c]).sum();
            let (fp, fn_) = (predicted - tp, actual - tp);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class: names[c].clone(),
                tp,
                fp,
                fn_,
                tn: n - tp - fp - fn_,
                precision,
                recall,
                f1,
                fnr: ratio(fn_, actual),
            }
        })
        .collect();
    let correct = (0..k).map(|c| matrix[c * k + c]).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / k as f64
        }
    };
    Ok(MetricsReport {
        accuracy: ratio(correct, n),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        classes,
        samples: n,
    })
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == name)
    }

    /// Per-class table (FNR %, recall, precision, F1) followed by the
    /// aggregate rows.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<14} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9} {:>9}\n",
            "class", "TP", "FP", "FN", "TN", "FNR (%)", "recall", "precision", "F1"
        );
        for c in &self.classes {
            out.push_str(&format!(
                "{:<14} {:>8} {:>8} {:>8} {:>8} {:>9.2} {:>9.4} {:>9.4} {:>9.4}\n",
                c.class,
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                c.fnr * 100.0,
                c.recall,
                c.precision,
                c.f1
            ));
        }
        out.push_str(&format!("accuracy        {:.4}\n", self.accuracy));
        out.push_str(&format!("macro recall    {:.4}\n", self.macro_recall));
        out.push_str(&format!("macro precision {:.4}\n", self.macro_precision));
        out.push_str(&format!("macro F1        {:.4}\n", self.macro_f1));
        out.push_str(&format!("samples         {}\n", self.samples));
        out
    }
}

/// Anything that classifies a batch of raw feature rows.
pub trait BatchPipeline {
    fn classify(&self, batch: &Matrix) -> Result<Vec<usize>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentiles; all zero for an empty sample.
pub fn latency_summary(values: &[f64]) -> LatencySummary {
    if values.is_empty() {
        return LatencySummary {
            count: 0,
            p50: 0.0,
            p99: 0.0,
            max: 0.0,
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = |p: f64| sorted[((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
    LatencySummary {
        count: sorted.len(),
        p50: rank(0.50),
        p99: rank(0.99),
        max: sorted[sorted.len() - 1],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup: usize,
    /// Wall time of each measured repetition, ms.
    pub batch_ms: Vec<f64>,
    /// `(end - start) / batch_size` of each measured repetition, ms.
    pub per_sample_ms: Vec<f64>,
    pub median_batch_ms: f64,
    pub median_per_sample_ms: f64,
    pub batch_latency: LatencySummary,
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Times `repetitions` runs of the pipeline on `batch` after `warmup`
/// untimed runs, on the calling thread.
pub fn measure_inference(
    pipeline: &dyn BatchPipeline,
    batch: &Matrix,
    repetitions: usize,
    warmup: usize,
) -> Result<TimingRecord> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    if batch.rows == 0 {
        return Err(Error::Data("empty timing batch".into()));
    }
    for _ in 0..warmup {
        pipeline.classify(batch)?;
    }
    let mut batch_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let out = pipeline.classify(batch)?;
        let end = Instant::now();
        std::hint::black_box(out);
        batch_ms.push(end.duration_since(start).as_secs_f64() * 1e3);
    }
    let per_sample_ms: Vec<f64> = batch_ms.iter().map(|t| t / batch.rows as f64).collect();
    Ok(TimingRecord {
        batch_size: batch.rows,
        repetitions,
        warmup,
        median_batch_ms: median(&batch_ms),
        median_per_sample_ms: median(&per_sample_ms),
        batch_latency: latency_summary(&batch_ms),
        batch_ms,
        per_sample_ms,
    })
}

impl TimingRecord {
    pub fn render(&self) -> String {
        format!(
            "batch size            {}\nrepetitions           {} (warmup {})\nper-sample time (ms)  {:.6}  [(end - start) / batch size, median]\nper-batch time (ms)   {:.6}  [median; p99 {:.6}, max {:.6}]\n",
            self.batch_size,
            self.repetitions,
            self.warmup,
            self.median_per_sample_ms,
            self.median_batch_ms,
            self.batch_latency.p99,
            self.batch_latency.max
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub name: String,
    pub params: usize,
    pub budget: Option<usize>,
    pub pass: bool,
}

/// Parameter counts with optional budgets.
pub fn complexity_report(models: &[(&str, &Mlp, Option<usize>)]) -> Vec<ComplexityRow> {
    models
        .iter()
        .map(|&(name, model, budget)| {
            let params = count_params(model);
            ComplexityRow {
                name: name.to_string(),
                params,
                budget,
                pass: budget.is_none_or(|b| params <= b),
            }
        })
        .collect()
}

pub fn render_complexity(rows: &[ComplexityRow]) -> String {
    let mut out = format!("{:<16} {:>10} {:>10} {:>6}\n", "model", "params", "budget", "pass");
    for r in rows {
        let budget = r.budget.map_or_else(|| "-".to_string(), |b| b.to_string());
        let pass = if r.pass { "yes" } else { "NO" };
        out.push_str(&format!("{:<16} {:>10} {budget:>10} {pass:>6}\n", r.name, r.params));
    }
    out
}
