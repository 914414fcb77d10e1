//! Window aggregation, min-max scaling and dataset partitioning.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canlog::{AttackKind, CanFrame};
use crate::error::{check_len, Error, Result};

/// Which fields of a frame become features, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameLayout {
    /// Timestamp, CAN ID, DLC, DATA[0..7]: 11 features.
    TimestampIdDlcData,
    /// CAN ID, DATA[0..7]: 9 features.
    IdData,
}

const HCRL_NAMES: [&str; 11] = [
    "Timestamp",
    "CAN ID",
    "DLC",
    "DATA[0]",
    "DATA[1]",
    "DATA[2]",
    "DATA[3]",
    "DATA[4]",
    "DATA[5]",
    "DATA[6]",
    "DATA[7]",
];

impl FrameLayout {
    pub fn width(self) -> usize {
        self.feature_names().len()
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            FrameLayout::TimestampIdDlcData => &HCRL_NAMES,
            FrameLayout::IdData => &[
                "CAN ID", "DATA[0]", "DATA[1]", "DATA[2]", "DATA[3]", "DATA[4]", "DATA[5]", "DATA[6]", "DATA[7]",
            ],
        }
    }

    pub fn push_features(self, frame: &CanFrame, out: &mut Vec<f64>) {
        if self == FrameLayout::TimestampIdDlcData {
            out.push(frame.timestamp);
        }
        out.push(f64::from(frame.can_id));
        if self == FrameLayout::TimestampIdDlcData {
            out.push(f64::from(frame.dlc));
        }
        out.extend(frame.payload.iter().map(|&b| f64::from(b)));
    }
}

/// Ordered attack kinds; the position of a kind is its class index.
/// Index 0 is always attack-free traffic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    kinds: Vec<AttackKind>,
}

impl ClassTable {
    pub fn new(attacks: &[AttackKind]) -> Result<Self> {
        let mut kinds = vec![AttackKind::None];
        for &k in attacks {
            if k == AttackKind::None || kinds.contains(&k) {
                return Err(Error::Config(format!("class table: duplicate or None entry {k}")));
            }
            kinds.push(k);
        }
        Ok(ClassTable { kinds })
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[AttackKind] {
        &self.kinds
    }

    pub fn kind(&self, class: usize) -> Option<AttackKind> {
        self.kinds.get(class).copied()
    }

    pub fn index_of(&self, kind: AttackKind) -> Option<usize> {
        self.kinds.iter().position(|&k| k == kind)
    }

    pub fn names(&self) -> Vec<String> {
        self.kinds.iter().map(|k| k.name().to_string()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub features: Vec<f64>,
    pub label: usize,
    /// Indices of the first and last frame in the source sequence.
    pub span: (usize, usize),
}

/// Window label: `None` if every frame is normal, otherwise the most frequent
/// injected kind, ties going to the kind injected earliest.
pub fn label_window(frames: &[CanFrame]) -> AttackKind {
    let mut counts: Vec<(AttackKind, usize)> = Vec::new();
    for f in frames.iter().filter(|f| f.is_injected()) {
        match counts.iter_mut().find(|(k, _)| *k == f.attack) {
            Some((_, c)) => *c += 1,
            None => counts.push((f.attack, 1)),
        }
    }
    // `counts` is in first-appearance order; max_by_key keeps the last maximum,
    // so search in reverse to keep the earliest.
    counts
        .iter()
        .rev()
        .max_by_key(|(_, c)| *c)
        .map_or(AttackKind::None, |(k, _)| *k)
}

/// Non-overlapping windows of `n` frames, flattened frame-major. A trailing
/// remainder shorter than `n` is dropped.
pub fn aggregate_windows(
    frames: &[CanFrame],
    n: usize,
    layout: FrameLayout,
    classes: &ClassTable,
) -> Result<Vec<WindowSample>> {
    if n == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    frames
        .chunks_exact(n)
        .enumerate()
        .map(|(w, chunk)| window_from_frames(chunk, w * n, layout, classes))
        .collect()
}

pub fn window_from_frames(
    chunk: &[CanFrame],
    first_index: usize,
    layout: FrameLayout,
    classes: &ClassTable,
) -> Result<WindowSample> {
    let mut features = Vec::with_capacity(chunk.len() * layout.width());
    for f in chunk {
        layout.push_features(f, &mut features);
    }
    let kind = label_window(chunk);
    let label = classes
        .index_of(kind)
        .ok_or_else(|| Error::Data(format!("attack kind {kind} is not in the profile's class table")))?;
    Ok(WindowSample {
        features,
        label,
        span: (first_index, first_index + chunk.len() - 1),
    })
}

/// Per-feature bounds fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Identifies the split the bounds were fitted on.
    pub fitted_on: String,
}

pub fn fit_scaler(train: &[WindowSample]) -> Result<ScalerParams> {
    let first = train
        .first()
        .ok_or_else(|| Error::Data("cannot fit a scaler on zero windows".into()))?;
    let width = first.features.len();
    let mut min = first.features.clone();
    let mut max = first.features.clone();
    for w in &train[1..] {
        check_len(width, w.features.len())?;
        for (j, &x) in w.features.iter().enumerate() {
            min[j] = min[j].min(x);
            max[j] = max[j].max(x);
        }
    }
    Ok(ScalerParams {
        min,
        max,
        fitted_on: format!("train:{}", train.len()),
    })
}

impl ScalerParams {
    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Min-max scales one vector, clamping to `[0, 1]`. Constant features map to 0.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.width(), x.len())?;
        let mut out = Vec::with_capacity(x.len());
        self.transform_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn transform_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(x.iter().zip(self.min.iter().zip(&self.max)).map(|(&v, (&lo, &hi))| {
            let range = hi - lo;
            if range > 0.0 {
                ((v - lo) / range).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }));
    }

    pub fn inverse(&self, scaled: &[f64]) -> Result<Vec<f64>> {
        check_len(self.width(), scaled.len())?;
        Ok(scaled
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&s, (&lo, &hi))| lo + s * (hi - lo))
            .collect())
    }

    pub fn apply(&self, window: &WindowSample) -> Result<WindowSample> {
        Ok(WindowSample {
            features: self.transform(&window.features)?,
            label: window.label,
            span: window.span,
        })
    }

    pub fn apply_all(&self, windows: &[WindowSample]) -> Result<Vec<WindowSample>> {
        windows.iter().map(|w| self.apply(w)).collect()
    }
}

/// Stratified split: each non-empty class sends `floor(fraction * count)`
/// windows (at least one) to training. Both halves keep input order.
pub fn split_train_test(
    windows: Vec<WindowSample>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    if windows.is_empty() {
        return Err(Error::Data("cannot split an empty window set".into()));
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let mut in_train = vec![false; windows.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mut members in by_class(&labels).into_values() {
        let take = ((train_fraction * members.len() as f64).floor() as usize).max(1);
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = windows.into_iter().zip(in_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(w, _)| w).collect(),
        test.into_iter().map(|(w, _)| w).collect(),
    ))
}

fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        map.entry(l).or_default().push(i);
    }
    map
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BalanceRequest {
    PerClass(usize),
    /// Divided evenly over the classes present in the input.
    Total(usize),
}

#[derive(Clone, Debug, Default)]
pub struct BalancedSubset {
    pub windows: Vec<WindowSample>,
    pub warnings: Vec<String>,
}

/// Equal per-class sample, deterministic under `seed`. Classes with fewer
/// windows than requested contribute all of them and a warning.
pub fn balanced_subset(windows: &[WindowSample], request: BalanceRequest, seed: u64) -> BalancedSubset {
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let classes = by_class(&labels);
    let per_class = match request {
        BalanceRequest::PerClass(k) => k,
        BalanceRequest::Total(_) if classes.is_empty() => 0,
        BalanceRequest::Total(t) => t / classes.len(),
    };
    let mut out = BalancedSubset::default();
    if per_class == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (class, mut members) in classes {
        if members.len() < per_class {
            let msg = format!(
                "class {class}: requested {per_class} windows, only {} available",
                members.len()
            );
            warn!("{msg}");
            out.warnings.push(msg);
        }
        members.shuffle(&mut rng);
        members.truncate(per_class);
        members.sort_unstable();
        chosen.extend(members);
    }
    out.windows = chosen.into_iter().map(|i| windows[i].clone()).collect();
    out
}

/// Per-class window counts, for reports.
pub fn class_counts(windows: &[WindowSample]) -> HashMap<usize, usize> {
    let mut counts = HashMap::new();
    for w in windows {
        *counts.entry(w.label).or_insert(0) += 1;
    }
    counts
}

/// Writes windows as CSV: `label,first,last,f0,...`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_windows<W: Write>(windows: &[WindowSample], mut out: W) -> Result<()> {
    let io = |e| Error::io("<windows>", e);
    let width = windows.first().map_or(0, |w| w.features.len());
    let mut header = String::from("label,first,last");
    for j in 0..width {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(out, "{header}").map_err(io)?;
    for w in windows {
        let mut line = format!("{},{},{}", w.label, w.span.0, w.span.1);
        for x in &w.features {
            line.push_str(&format!(",{x}"));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_windows<R: BufRead>(input: R) -> Result<Vec<WindowSample>> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io("<windows>", e))?,
        None => return Ok(Vec::new()),
    };
    let width = header.split(',').count().saturating_sub(3);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<windows>", e))?;
        if line.is_empty() {
            continue;
        }
        let row = i + 2;
        let bad = |column: usize, message: &str| Error::Parse {
            row,
            column,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 3 {
            return Err(bad(fields.len(), "wrong field count"));
        }
        let label = fields[0].parse().map_err(|_| bad(0, "bad label"))?;
        let first = fields[1].parse().map_err(|_| bad(1, "bad span"))?;
        let last = fields[2].parse().map_err(|_| bad(2, "bad span"))?;
        let features = fields[3..]
            .iter()
            .enumerate()
            .map(|(j, s)| s.parse::<f64>().map_err(|_| bad(j + 3, "bad feature")))
            .collect::<Result<Vec<_>>>()?;
        out.push(WindowSample {
            features,
            label,
            span: (first, last),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64, attack: AttackKind) -> CanFrame {
        CanFrame::new(t, 0x100, &[1, 2, 3, 4, 5, 6, 7, 8], attack).unwrap()
    }

    fn classes() -> ClassTable {
        ClassTable::new(&[AttackKind::DoS, AttackKind::Fuzzing]).unwrap()
    }

    fn normal_frames(count: usize) -> Vec<CanFrame> {
        (0..count).map(|i| frame(i as f64, AttackKind::None)).collect()
    }

    fn windows_with_labels(labels: &[usize]) -> Vec<WindowSample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| WindowSample {
                features: vec![i as f64, (i * 2) as f64],
                label,
                span: (i, i),
            })
            .collect()
    }

    #[test]
    fn window_counts() {
        let c = classes();
        let layout = FrameLayout::TimestampIdDlcData;
        assert_eq!(aggregate_windows(&normal_frames(58), 29, layout, &c).unwrap().len(), 2);
        assert_eq!(aggregate_windows(&normal_frames(28), 29, layout, &c).unwrap().len(), 0);
        let w = aggregate_windows(&normal_frames(29), 29, layout, &c).unwrap();
        assert_eq!(w[0].features.len(), 319);
        assert_eq!(w[0].span, (0, 28));
        assert!(matches!(
            aggregate_windows(&normal_frames(3), 0, layout, &c),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn features_are_frame_major() {
        let frames = vec![frame(1.5, AttackKind::None), frame(2.5, AttackKind::None)];
        let w = aggregate_windows(&frames, 2, FrameLayout::IdData, &classes()).unwrap();
        assert_eq!(w[0].features[..3], [256.0, 1.0, 2.0]);
        assert_eq!(w[0].features[9..12], [256.0, 1.0, 2.0]);
        let w = aggregate_windows(&frames, 2, FrameLayout::TimestampIdDlcData, &classes()).unwrap();
        assert_eq!(w[0].features[..4], [1.5, 256.0, 8.0, 1.0]);
        assert_eq!(w[0].features[11], 2.5);
    }

    #[test]
    fn labels() {
        assert_eq!(label_window(&normal_frames(29)), AttackKind::None);

        let mut frames = normal_frames(29);
        frames[13].attack = AttackKind::DoS;
        assert_eq!(label_window(&frames), AttackKind::DoS);

        let mut frames = normal_frames(7);
        frames[0].attack = AttackKind::Fuzzing;
        frames[1].attack = AttackKind::Fuzzing;
        for f in &mut frames[2..5] {
            f.attack = AttackKind::DoS;
        }
        assert_eq!(label_window(&frames), AttackKind::DoS);

        // tie: earliest injected kind wins
        let mut frames = normal_frames(4);
        frames[1].attack = AttackKind::Fuzzing;
        frames[2].attack = AttackKind::DoS;
        assert_eq!(label_window(&frames), AttackKind::Fuzzing);
    }

    #[test]
    fn unknown_kind_is_data_error() {
        let mut frames = normal_frames(2);
        frames[0].attack = AttackKind::GasSpoof;
        assert!(matches!(
            aggregate_windows(&frames, 2, FrameLayout::IdData, &classes()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn scaler_bounds_and_midpoint() {
        let train = vec![
            WindowSample {
                features: vec![2.0, 5.0, 7.0],
                label: 0,
                span: (0, 0),
            },
            WindowSample {
                features: vec![4.0, 15.0, 7.0],
                label: 0,
                span: (1, 1),
            },
        ];
        let s = fit_scaler(&train).unwrap();
        assert_eq!(s.transform(&[2.0, 5.0, 7.0]).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(s.transform(&[4.0, 15.0, 7.0]).unwrap(), [1.0, 1.0, 0.0]);
        assert_eq!(s.transform(&[3.0, 10.0, 9.0]).unwrap(), [0.5, 0.5, 0.0]);
        // unseen extremes clamp
        assert_eq!(s.transform(&[-1.0, 100.0, 0.0]).unwrap(), [0.0, 1.0, 0.0]);
        assert!(matches!(s.transform(&[1.0]), Err(Error::Shape { .. })));
        assert!(fit_scaler(&[]).is_err());
    }

    #[test]
    fn split_counts() {
        let w = windows_with_labels(&vec![0; 1000]);
        let (train, test) = split_train_test(w, 0.05, 1).unwrap();
        assert_eq!((train.len(), test.len()), (50, 950));

        let mut labels = vec![0; 990];
        labels.extend([1; 10]);
        let (train, _) = split_train_test(windows_with_labels(&labels), 0.05, 1).unwrap();
        assert_eq!(train.iter().filter(|w| w.label == 1).count(), 1);
        assert_eq!(train.iter().filter(|w| w.label == 0).count(), 49);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let labels: Vec<usize> = (0..500).map(|i| i % 3).collect();
        let a = split_train_test(windows_with_labels(&labels), 0.1, 9).unwrap();
        let b = split_train_test(windows_with_labels(&labels), 0.1, 9).unwrap();
        assert_eq!(a, b);
        let mut spans: Vec<usize> = a.0.iter().chain(&a.1).map(|w| w.span.0).collect();
        spans.sort_unstable();
        assert_eq!(spans, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_train_test(vec![], 0.05, 0), Err(Error::Data(_))));
        let w = windows_with_labels(&[0, 1]);
        assert!(matches!(split_train_test(w.clone(), 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(split_train_test(w, 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn balanced_requests() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 5).collect();
        let w = windows_with_labels(&labels);
        let sub = balanced_subset(&w, BalanceRequest::Total(500), 3);
        assert_eq!(sub.windows.len(), 500);
        assert!(class_counts(&sub.windows).values().all(|&c| c == 100));
        assert!(sub.warnings.is_empty());

        let mut labels = vec![0; 200];
        labels.extend([1; 30]);
        let sub = balanced_subset(&windows_with_labels(&labels), BalanceRequest::PerClass(100), 3);
        let counts = class_counts(&sub.windows);
        assert_eq!((counts[&0], counts[&1]), (100, 30));
        assert_eq!(sub.warnings.len(), 1);

        assert!(balanced_subset(&w, BalanceRequest::Total(0), 3).windows.is_empty());
        assert_eq!(
            balanced_subset(&w, BalanceRequest::PerClass(10), 3).windows,
            balanced_subset(&w, BalanceRequest::PerClass(10), 3).windows
        );
    }

    #[test]
    fn window_dump_round_trip() {
        let w = vec![WindowSample {
            features: vec![0.1, 1478198376.389427, 1.0 / 3.0],
            label: 2,
            span: (7, 13),
        }];
        let mut buf = Vec::new();
        write_windows(&w, &mut buf).unwrap();
        assert_eq!(read_windows(buf.as_slice()).unwrap(), w);
    }
}
