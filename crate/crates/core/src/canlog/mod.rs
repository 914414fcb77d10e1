//! CAN log ingestion and synthetic traffic generation.
//!
//! Two on-disk dataset conventions are understood (HCRL Car-Hacking and
//! CIC-IoV), plus a synthetic convention that carries the attack kind per row.
//! Every accepted row becomes one [`CanFrame`]; rejected rows are counted in the
//! [`ParseReport`].

mod parse;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parse::{hex_to_dec, parse_log, parse_log_file, write_log, write_log_file, ParseReport, ParsedLog};
pub use synth::{
    default_benign, default_corpus, default_corpus_config, generate_synthetic, AttackSpec, BenignId, CorpusConfig,
    SynthConfig,
};

/// Largest identifier representable in an 11-bit standard frame.
pub const MAX_STANDARD_ID: u32 = 0x7FF;
/// Largest identifier representable in a 29-bit extended frame.
pub const MAX_EXTENDED_ID: u32 = 0x1FFF_FFFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flag {
    Normal,
    Injected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    None,
    DoS,
    Fuzzing,
    GearSpoof,
    RpmSpoof,
    SpeedSpoof,
    SteeringSpoof,
    GasSpoof,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::None,
        AttackKind::DoS,
        AttackKind::Fuzzing,
        AttackKind::GearSpoof,
        AttackKind::RpmSpoof,
        AttackKind::SpeedSpoof,
        AttackKind::SteeringSpoof,
        AttackKind::GasSpoof,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "Normal",
            AttackKind::DoS => "DoS",
            AttackKind::Fuzzing => "Fuzzing",
            AttackKind::GearSpoof => "GearSpoof",
            AttackKind::RpmSpoof => "RpmSpoof",
            AttackKind::SpeedSpoof => "SpeedSpoof",
            AttackKind::SteeringSpoof => "SteeringSpoof",
            AttackKind::GasSpoof => "GasSpoof",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let kind = match key.as_str() {
            "normal" | "none" | "benign" | "attackfree" => AttackKind::None,
            "dos" => AttackKind::DoS,
            "fuzzing" | "fuzzy" => AttackKind::Fuzzing,
            "gearspoof" | "gear" | "gearspoofing" => AttackKind::GearSpoof,
            "rpmspoof" | "rpm" | "rpmspoofing" => AttackKind::RpmSpoof,
            "speedspoof" | "speed" | "speedspoofing" => AttackKind::SpeedSpoof,
            "steeringspoof" | "steering" | "steeringwheel" | "steeringwheelspoofing" => AttackKind::SteeringSpoof,
            "gasspoof" | "gas" | "gasspoofing" => AttackKind::GasSpoof,
            _ => return Err(Error::Config(format!("unknown attack kind {s:?}"))),
        };
        Ok(kind)
    }
}

/// One parsed CAN message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanFrame {
    pub timestamp: f64,
    pub can_id: u32,
    pub dlc: u8,
    /// Always eight bytes; positions at or beyond `dlc` are zero.
    pub payload: [u8; 8],
    /// `AttackKind::None` for normal traffic.
    pub attack: AttackKind,
}

impl CanFrame {
    /// Builds a frame, zeroing payload bytes past `dlc`.
    pub fn new(timestamp: f64, can_id: u32, data: &[u8], attack: AttackKind) -> Result<Self> {
        if data.len() > 8 {
            return Err(Error::Data(format!("payload of {} bytes exceeds 8", data.len())));
        }
        let mut payload = [0u8; 8];
        payload[..data.len()].copy_from_slice(data);
        Ok(CanFrame {
            timestamp,
            can_id,
            dlc: data.len() as u8,
            payload,
            attack,
        })
    }

    pub fn flag(&self) -> Flag {
        if self.attack == AttackKind::None {
            Flag::Normal
        } else {
            Flag::Injected
        }
    }

    pub fn is_injected(&self) -> bool {
        self.flag() == Flag::Injected
    }

    pub fn data(&self) -> &[u8] {
        &self.payload[..self.dlc as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogFormat {
    /// `timestamp,id_hex,dlc,d0..d{dlc-1},flag` with flag `R` (normal) / `T` (injected);
    /// header optional.
    Hcrl,
    /// Header-driven: `ID`, `DATA_0`..`DATA_7` and `label` are required,
    /// `Timestamp`, `DLC` and `specific_class` are optional.
    CicIov,
    /// HCRL column order with a mandatory header and the attack kind name in the
    /// flag column (`R` for normal traffic).
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Radix {
    Hex,
    Decimal,
}

/// Describes how a CSV log maps onto [`CanFrame`]s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSchema {
    pub format: LogFormat,
    pub id_radix: Radix,
    pub byte_radix: Radix,
    pub normal_symbol: String,
    pub injected_symbol: String,
    /// Attack kind given to injected rows whose kind is not encoded per row.
    pub file_attack: AttackKind,
    pub extended_ids: bool,
    /// Abort when malformed rows exceed this fraction of all data rows.
    pub malformed_threshold: f64,
}

impl LogSchema {
    /// HCRL Car-Hacking: one attack kind per file.
    pub fn hcrl(file_attack: AttackKind) -> Self {
        LogSchema {
            format: LogFormat::Hcrl,
            id_radix: Radix::Hex,
            byte_radix: Radix::Hex,
            normal_symbol: "R".into(),
            injected_symbol: "T".into(),
            file_attack,
            extended_ids: false,
            malformed_threshold: 0.01,
        }
    }

    pub fn cic_iov() -> Self {
        LogSchema {
            format: LogFormat::CicIov,
            id_radix: Radix::Hex,
            byte_radix: Radix::Hex,
            normal_symbol: "BENIGN".into(),
            injected_symbol: "ATTACK".into(),
            file_attack: AttackKind::DoS,
            extended_ids: false,
            malformed_threshold: 0.01,
        }
    }

    pub fn synthetic() -> Self {
        LogSchema {
            format: LogFormat::Synthetic,
            id_radix: Radix::Hex,
            byte_radix: Radix::Hex,
            normal_symbol: "R".into(),
            injected_symbol: String::new(),
            file_attack: AttackKind::None,
            extended_ids: false,
            malformed_threshold: 0.01,
        }
    }

    pub fn max_id(&self) -> u32 {
        if self.extended_ids {
            MAX_EXTENDED_ID
        } else {
            MAX_STANDARD_ID
        }
    }
}
