use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;

use super::{AttackKind, CanFrame, LogFormat, LogSchema, Radix};
use crate::error::{Error, Result};

/// Maximum number of per-row error messages retained in a report.
const MAX_REPORTED_ERRORS: usize = 32;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Data rows seen (header excluded).
    pub rows: usize,
    pub accepted: usize,
    pub malformed: usize,
    pub injected: usize,
    pub normal: usize,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ParsedLog {
    pub frames: Vec<CanFrame>,
    pub report: ParseReport,
}

/// Parses a hexadecimal string (no prefix, no sign) into its value.
pub fn hex_to_dec(text: &str) -> Result<u64> {
    hex_at(text, 0, 0)
}

fn hex_at(text: &str, row: usize, column: usize) -> Result<u64> {
    radix_at(text, Radix::Hex, row, column)
}

fn radix_at(text: &str, radix: Radix, row: usize, column: usize) -> Result<u64> {
    let err = |message: String| Error::Parse { row, column, message };
    let (base, valid): (u32, fn(&char) -> bool) = match radix {
        Radix::Hex => (16, char::is_ascii_hexdigit),
        Radix::Decimal => (10, char::is_ascii_digit),
    };
    if text.is_empty() {
        return Err(err("empty numeric field".into()));
    }
    if let Some(bad) = text.chars().find(|c| !valid(c)) {
        return Err(err(format!("invalid digit {bad:?} in {text:?}")));
    }
    u64::from_str_radix(text, base).map_err(|e| err(format!("{text:?}: {e}")))
}

/// Normalized column name: lowercase alphanumerics only.
fn norm(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn hcrl_header() -> Vec<String> {
    let mut cols = vec!["timestamp".to_string(), "canid".into(), "dlc".into()];
    cols.extend((0..8).map(|i| format!("data{i}")));
    cols.push("flag".into());
    cols
}

struct CicColumns {
    timestamp: Option<usize>,
    id: usize,
    dlc: Option<usize>,
    data: [usize; 8],
    label: usize,
    class: Option<usize>,
}

impl CicColumns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let names: Vec<String> = header.iter().map(norm).collect();
        let find = |keys: &[&str]| names.iter().position(|n| keys.contains(&n.as_str()));
        let missing = |what: &str| Error::Schema(format!("CIC-IoV header lacks a {what} column"));
        let mut data = [0usize; 8];
        for (i, slot) in data.iter_mut().enumerate() {
            let key = format!("data{i}");
            *slot = find(&[key.as_str()]).ok_or_else(|| missing(&key))?;
        }
        Ok(CicColumns {
            timestamp: find(&["timestamp", "time"]),
            id: find(&["id", "canid", "arbitrationid"]).ok_or_else(|| missing("ID"))?,
            dlc: find(&["dlc", "datalength"]),
            data,
            label: find(&["label", "flag"]).ok_or_else(|| missing("label"))?,
            class: find(&["specificclass"]),
        })
    }
}

/// Parses a CSV log from any reader.
pub fn parse_log<R: Read>(reader: R, schema: &LogSchema) -> Result<ParsedLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut frames = Vec::new();
    let mut report = ParseReport::default();
    let mut cic: Option<CicColumns> = None;
    let mut first = true;
    let mut last_ts = f64::NEG_INFINITY;
    let mut record = csv::StringRecord::new();
    let mut ordinal = 0usize;

    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => match e.kind() {
                csv::ErrorKind::Io(_) => return Err(Error::io("<stream>", std::io::Error::other(e.to_string()))),
                _ => {
                    let row = e.position().map_or(0, |p| p.line() as usize);
                    first = false;
                    report.rows += 1;
                    note_malformed(&mut report, row, &e.to_string());
                    continue;
                }
            },
        }
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if first {
            first = false;
            match schema.format {
                LogFormat::CicIov => {
                    cic = Some(CicColumns::from_header(&record)?);
                    continue;
                }
                LogFormat::Hcrl | LogFormat::Synthetic => {
                    let looks_like_header = record[0].parse::<f64>().is_err();
                    if looks_like_header {
                        let names: Vec<String> = record.iter().map(norm).collect();
                        if names != hcrl_header() {
                            return Err(Error::Schema(format!(
                                "unexpected header {:?}",
                                record.iter().collect::<Vec<_>>()
                            )));
                        }
                        continue;
                    } else if schema.format == LogFormat::Synthetic {
                        return Err(Error::Schema("synthetic log requires a header row".into()));
                    }
                }
            }
        }

        report.rows += 1;
        let parsed = match schema.format {
            LogFormat::Hcrl | LogFormat::Synthetic => parse_hcrl_row(&record, schema, row),
            LogFormat::CicIov => {
                let cols = cic.as_ref().expect("header parsed before data rows");
                parse_cic_row(&record, cols, schema, row, ordinal)
            }
        };
        ordinal += 1;
        match parsed {
            Ok(frame) if frame.timestamp < last_ts => {
                note_malformed(&mut report, row, "timestamp decreases");
            }
            Ok(frame) => {
                last_ts = frame.timestamp;
                if frame.is_injected() {
                    report.injected += 1;
                } else {
                    report.normal += 1;
                }
                report.accepted += 1;
                frames.push(frame);
            }
            Err(e) => note_malformed(&mut report, row, &e.to_string()),
        }
    }

    if schema.format == LogFormat::CicIov && cic.is_none() {
        return Err(Error::Schema("CIC-IoV log has no header row".into()));
    }
    if report.rows > 0 {
        let fraction = report.malformed as f64 / report.rows as f64;
        if fraction > schema.malformed_threshold {
            return Err(Error::Data(format!(
                "{} of {} rows malformed ({:.2}% > {:.2}% threshold); first: {}",
                report.malformed,
                report.rows,
                fraction * 100.0,
                schema.malformed_threshold * 100.0,
                report.errors.first().map(String::as_str).unwrap_or("")
            )));
        }
    }
    if report.malformed > 0 {
        warn!("{} malformed rows skipped", report.malformed);
    }
    Ok(ParsedLog { frames, report })
}

pub fn parse_log_file(path: &Path, schema: &LogSchema) -> Result<ParsedLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_log(BufReader::new(file), schema).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn note_malformed(report: &mut ParseReport, row: usize, message: &str) {
    report.malformed += 1;
    if report.errors.len() < MAX_REPORTED_ERRORS {
        report.errors.push(format!("row {row}: {message}"));
    }
}

fn parse_timestamp(text: &str, row: usize, column: usize) -> Result<f64> {
    match text.parse::<f64>() {
        Ok(t) if t.is_finite() => Ok(t),
        _ => Err(Error::Parse {
            row,
            column,
            message: format!("bad timestamp {text:?}"),
        }),
    }
}

fn parse_id(text: &str, schema: &LogSchema, row: usize, column: usize) -> Result<u32> {
    let id = radix_at(text, schema.id_radix, row, column)?;
    if id > u64::from(schema.max_id()) {
        return Err(Error::Parse {
            row,
            column,
            message: format!("CAN ID {id:#x} exceeds {:#x}", schema.max_id()),
        });
    }
    Ok(id as u32)
}

fn parse_byte(text: &str, schema: &LogSchema, row: usize, column: usize) -> Result<u8> {
    let v = radix_at(text, schema.byte_radix, row, column)?;
    u8::try_from(v).map_err(|_| Error::Parse {
        row,
        column,
        message: format!("data byte {v} out of range"),
    })
}

fn parse_dlc(text: &str, row: usize, column: usize) -> Result<u8> {
    match text.parse::<u8>() {
        Ok(d) if d <= 8 => Ok(d),
        _ => Err(Error::Parse {
            row,
            column,
            message: format!("bad DLC {text:?}"),
        }),
    }
}

fn parse_hcrl_row(rec: &csv::StringRecord, schema: &LogSchema, row: usize) -> Result<CanFrame> {
    if rec.len() < 4 {
        return Err(Error::Parse {
            row,
            column: rec.len(),
            message: format!("expected at least 4 fields, got {}", rec.len()),
        });
    }
    let timestamp = parse_timestamp(&rec[0], row, 0)?;
    let can_id = parse_id(&rec[1], schema, row, 1)?;
    let dlc = parse_dlc(&rec[2], row, 2)?;
    let data_cols = rec.len() - 4;
    // Rows carry either exactly `dlc` data columns or a full eight.
    if data_cols != dlc as usize && data_cols != 8 {
        return Err(Error::Parse {
            row,
            column: rec.len() - 1,
            message: format!("DLC {dlc} but {data_cols} data columns"),
        });
    }
    let mut payload = [0u8; 8];
    for i in 0..dlc as usize {
        payload[i] = parse_byte(&rec[3 + i], schema, row, 3 + i)?;
    }
    let flag_col = rec.len() - 1;
    let symbol = &rec[flag_col];
    let attack = if symbol == schema.normal_symbol {
        AttackKind::None
    } else if schema.format == LogFormat::Synthetic {
        symbol.parse::<AttackKind>().map_err(|e| Error::Parse {
            row,
            column: flag_col,
            message: e.to_string(),
        })?
    } else if symbol == schema.injected_symbol {
        if schema.file_attack == AttackKind::None {
            return Err(Error::Parse {
                row,
                column: flag_col,
                message: "injected row in a log declared attack-free".into(),
            });
        }
        schema.file_attack
    } else {
        return Err(Error::Parse {
            row,
            column: flag_col,
            message: format!("unknown flag symbol {symbol:?}"),
        });
    };
    Ok(CanFrame {
        timestamp,
        can_id,
        dlc,
        payload,
        attack,
    })
}

fn parse_cic_row(
    rec: &csv::StringRecord,
    cols: &CicColumns,
    schema: &LogSchema,
    row: usize,
    ordinal: usize,
) -> Result<CanFrame> {
    let field = |c: usize| {
        rec.get(c).ok_or_else(|| Error::Parse {
            row,
            column: c,
            message: "missing field".into(),
        })
    };
    // Logs without a timestamp column get the row ordinal, which keeps order.
    let timestamp = match cols.timestamp {
        Some(c) => parse_timestamp(field(c)?, row, c)?,
        None => ordinal as f64,
    };
    let can_id = parse_id(field(cols.id)?, schema, row, cols.id)?;
    let dlc = match cols.dlc {
        Some(c) => parse_dlc(field(c)?, row, c)?,
        None => 8,
    };
    let mut payload = [0u8; 8];
    for (i, &c) in cols.data.iter().enumerate() {
        let byte = parse_byte(field(c)?, schema, row, c)?;
        if i < dlc as usize {
            payload[i] = byte;
        }
    }
    let label = field(cols.label)?;
    let injected = if label.eq_ignore_ascii_case(&schema.normal_symbol) {
        false
    } else if label.eq_ignore_ascii_case(&schema.injected_symbol) {
        true
    } else {
        return Err(Error::Parse {
            row,
            column: cols.label,
            message: format!("unknown label {label:?}"),
        });
    };
    let attack = match (injected, cols.class) {
        (false, _) => AttackKind::None,
        (true, Some(c)) => {
            let kind = field(c)?.parse::<AttackKind>().map_err(|e| Error::Parse {
                row,
                column: c,
                message: e.to_string(),
            })?;
            if kind == AttackKind::None {
                return Err(Error::Parse {
                    row,
                    column: c,
                    message: "attack label with benign class".into(),
                });
            }
            kind
        }
        (true, None) => schema.file_attack,
    };
    Ok(CanFrame {
        timestamp,
        can_id,
        dlc,
        payload,
        attack,
    })
}

fn cic_class_name(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::None => "BENIGN",
        AttackKind::DoS => "DOS",
        AttackKind::Fuzzing => "FUZZING",
        AttackKind::GearSpoof => "GEAR",
        AttackKind::RpmSpoof => "RPM",
        AttackKind::SpeedSpoof => "SPEED",
        AttackKind::SteeringSpoof => "STEERING_WHEEL",
        AttackKind::GasSpoof => "GAS",
    }
}

/// Serializes frames in the given schema's convention. HCRL output carries no
/// header and `dlc` data columns per row, like the published captures.
pub fn write_log<W: Write>(frames: &[CanFrame], schema: &LogSchema, mut out: W) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    let byte = |b: u8| match schema.byte_radix {
        Radix::Hex => format!("{b:02x}"),
        Radix::Decimal => b.to_string(),
    };
    let id = |v: u32| match schema.id_radix {
        Radix::Hex => format!("{v:04x}"),
        Radix::Decimal => v.to_string(),
    };
    match schema.format {
        LogFormat::Synthetic => {
            writeln!(
                out,
                "Timestamp,CAN ID,DLC,DATA[0],DATA[1],DATA[2],DATA[3],DATA[4],DATA[5],DATA[6],DATA[7],Flag"
            )
            .map_err(io)?;
        }
        LogFormat::CicIov => {
            writeln!(
                out,
                "Timestamp,ID,DLC,DATA_0,DATA_1,DATA_2,DATA_3,DATA_4,DATA_5,DATA_6,DATA_7,label,specific_class"
            )
            .map_err(io)?;
        }
        LogFormat::Hcrl => {}
    }
    for f in frames {
        let mut line = format!("{},{},{}", f.timestamp, id(f.can_id), f.dlc);
        match schema.format {
            LogFormat::Hcrl | LogFormat::Synthetic => {
                for &b in f.data() {
                    line.push(',');
                    line.push_str(&byte(b));
                }
                let flag = match (schema.format, f.attack) {
                    (_, AttackKind::None) => schema.normal_symbol.as_str(),
                    (LogFormat::Synthetic, kind) => kind.name(),
                    _ => schema.injected_symbol.as_str(),
                };
                line.push(',');
                line.push_str(flag);
            }
            LogFormat::CicIov => {
                for &b in &f.payload {
                    line.push(',');
                    line.push_str(&byte(b));
                }
                let label = if f.is_injected() {
                    &schema.injected_symbol
                } else {
                    &schema.normal_symbol
                };
                line.push(',');
                line.push_str(label);
                line.push(',');
                line.push_str(cic_class_name(f.attack));
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_log_file(frames: &[CanFrame], schema: &LogSchema, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_log(frames, schema, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
