//! Seeded benign + attack traffic for desk-scale runs.
//!
//! Benign IDs transmit periodically with small jitter and deterministic
//! payload generators. One attack is injected per log over a time span:
//! DoS floods ID 0 with zero payloads, fuzzing sends random IDs and payloads,
//! spoofing replays a target ID with a falsified payload.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttackKind, CanFrame, MAX_STANDARD_ID};
use crate::error::{Error, Result};

/// Timestamps are quantized to microseconds, like the public captures.
const TICK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenignId {
    pub can_id: u32,
    /// Transmission period in seconds.
    pub period: f64,
    #[serde(default = "default_dlc")]
    pub dlc: u8,
}

fn default_dlc() -> u8 {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Injected frames per second.
    pub rate: f64,
    /// Attack window `[start, end)` in seconds from the log start.
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default)]
    pub start_time: f64,
    /// Log length in seconds.
    pub duration: f64,
    pub benign: Vec<BenignId>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
}

/// Several generated logs concatenated in time, one attack kind each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub segments: Vec<SynthConfig>,
}

fn micros(t: f64) -> f64 {
    (t / TICK).round() * TICK
}

/// Spoofed target ID and the falsified payload written to it.
fn spoof_target(kind: AttackKind) -> (u32, [u8; 8]) {
    match kind {
        AttackKind::GearSpoof => (0x43F, [0x01, 0x45, 0x60, 0xFF, 0x6B, 0x00, 0x00, 0x00]),
        AttackKind::RpmSpoof => (0x316, [0x05, 0x22, 0x68, 0x09, 0x22, 0x20, 0x00, 0x75]),
        AttackKind::SpeedSpoof => (0x4B1, [0x00, 0x00, 0xFF, 0xFF, 0x00, 0x00, 0x00, 0x00]),
        AttackKind::SteeringSpoof => (0x0A0, [0x7F, 0xFF, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00]),
        AttackKind::GasSpoof => (0x130, [0x00, 0xFF, 0xFF, 0x00, 0x00, 0x00, 0x00, 0x00]),
        _ => unreachable!("not a spoofing attack"),
    }
}

/// Benign payload for the `k`-th transmission of `id`: a rolling counter, a
/// slow signal and an ID-dependent constant pattern, with a little noise.
fn benign_payload(id: u32, k: u64, rng: &mut ChaCha8Rng) -> [u8; 8] {
    let phase = (k as f64) * 0.02 + f64::from(id % 97);
    let signal = ((phase.sin() + 1.0) * 60.0) as u8 + rng.random_range(0..4u8);
    let base = (id.wrapping_mul(2_654_435_761) >> 8).to_le_bytes();
    [
        (k % 256) as u8,
        signal,
        signal / 2,
        base[0],
        base[1] & 0x3F,
        base[2] & 0x0F,
        (k / 256 % 16) as u8,
        base[0] ^ (k % 16) as u8,
    ]
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    if cfg.benign.is_empty() {
        return Err(Error::Config("benign schedule is empty".into()));
    }
    if !(cfg.duration > 0.0 && cfg.duration.is_finite()) {
        return Err(Error::Config(format!("duration {} must be positive", cfg.duration)));
    }
    for b in &cfg.benign {
        if !(b.period > 0.0 && b.period.is_finite()) {
            return Err(Error::Config(format!("ID {:#x}: period must be positive", b.can_id)));
        }
        if b.can_id == 0 || b.can_id > MAX_STANDARD_ID {
            return Err(Error::Config(format!(
                "benign ID {:#x} must lie in 1..=0x7FF",
                b.can_id
            )));
        }
        if b.dlc > 8 {
            return Err(Error::Config(format!("ID {:#x}: DLC {} > 8", b.can_id, b.dlc)));
        }
    }
    if let Some(a) = &cfg.attack {
        if a.kind == AttackKind::None {
            return Err(Error::Config("attack kind must not be None".into()));
        }
        if !(a.rate >= 0.0 && a.rate.is_finite()) {
            return Err(Error::Config(format!("attack rate {} must be non-negative", a.rate)));
        }
        if !(0.0 <= a.start && a.start <= a.end && a.end <= cfg.duration) {
            return Err(Error::Config(format!(
                "attack span [{}, {}) outside [0, {}]",
                a.start, a.end, cfg.duration
            )));
        }
    }
    Ok(())
}

/// Generates one timestamp-sorted log. Identical configs give identical output.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<CanFrame>> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut frames = Vec::new();

    for b in &cfg.benign {
        let offset = rng.random_range(0.0..b.period);
        let mut k = 0u64;
        loop {
            let jitter = rng.random_range(-5e-5..5e-5);
            let t = offset + k as f64 * b.period + jitter;
            if t >= cfg.duration {
                break;
            }
            let payload = benign_payload(b.can_id, k, &mut rng);
            let frame = CanFrame::new(
                micros(cfg.start_time + t.max(0.0)),
                b.can_id,
                &payload[..b.dlc as usize],
                AttackKind::None,
            )?;
            frames.push(frame);
            k += 1;
        }
    }

    if let Some(a) = cfg.attack.as_ref().filter(|a| a.rate > 0.0) {
        let gap = 1.0 / a.rate;
        for k in 0u64.. {
            let t = a.start + k as f64 * gap;
            if t >= a.end {
                break;
            }
            let frame = match a.kind {
                AttackKind::DoS => CanFrame::new(micros(cfg.start_time + t), 0, &[0; 8], a.kind)?,
                AttackKind::Fuzzing => {
                    let id = rng.random_range(0..=MAX_STANDARD_ID);
                    let payload: [u8; 8] = rng.random();
                    CanFrame::new(micros(cfg.start_time + t), id, &payload, a.kind)?
                }
                kind => {
                    let (id, payload) = spoof_target(kind);
                    CanFrame::new(micros(cfg.start_time + t), id, &payload, kind)?
                }
            };
            frames.push(frame);
        }
    }

    frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(frames)
}

/// Benign schedule shared by the bundled corpus: 14 IDs between 10 ms and
/// 100 ms periods, roughly 990 frames per second.
pub fn default_benign() -> Vec<BenignId> {
    let schedule: [(u32, f64, u8); 14] = [
        (0x0A0, 0.010, 8),
        (0x0B4, 0.010, 8),
        (0x130, 0.020, 8),
        (0x153, 0.010, 8),
        (0x260, 0.020, 8),
        (0x2C0, 0.010, 8),
        (0x316, 0.010, 8),
        (0x329, 0.010, 8),
        (0x370, 0.020, 8),
        (0x43F, 0.010, 8),
        (0x4B1, 0.050, 8),
        (0x545, 0.010, 8),
        (0x5A0, 0.100, 2),
        (0x690, 0.100, 4),
    ];
    schedule
        .iter()
        .map(|&(can_id, period, dlc)| BenignId { can_id, period, dlc })
        .collect()
}

/// Four 80-second segments (DoS, fuzzing, gear spoofing, RPM spoofing), each
/// with the attack active from 30 s to 60 s. About 467,000 frames.
pub fn default_corpus_config(seed: u64) -> CorpusConfig {
    let attacks = [
        (AttackKind::DoS, 2000.0),
        (AttackKind::Fuzzing, 1000.0),
        (AttackKind::GearSpoof, 1000.0),
        (AttackKind::RpmSpoof, 1000.0),
    ];
    let duration = 80.0;
    let segments = attacks
        .iter()
        .enumerate()
        .map(|(i, &(kind, rate))| SynthConfig {
            seed: seed.wrapping_add(i as u64),
            start_time: i as f64 * duration,
            duration,
            benign: default_benign(),
            attack: Some(AttackSpec {
                kind,
                rate,
                start: 30.0,
                end: 60.0,
            }),
        })
        .collect();
    CorpusConfig { segments }
}

pub fn default_corpus(seed: u64) -> Result<Vec<CanFrame>> {
    generate_corpus(&default_corpus_config(seed))
}

impl CorpusConfig {
    pub fn generate(&self) -> Result<Vec<CanFrame>> {
        generate_corpus(self)
    }
}

fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<CanFrame>> {
    if cfg.segments.is_empty() {
        return Err(Error::Config("corpus has no segments".into()));
    }
    let mut frames = Vec::new();
    for seg in &cfg.segments {
        let mut part = generate_synthetic(seg)?;
        if let (Some(prev), Some(first)) = (frames.last(), part.first()) {
            let prev: &CanFrame = prev;
            if first.timestamp < prev.timestamp {
                return Err(Error::Config("corpus segments overlap in time".into()));
            }
        }
        frames.append(&mut part);
    }
    Ok(frames)
}
