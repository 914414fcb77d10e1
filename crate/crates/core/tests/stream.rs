mod common;

use std::io::{BufRead, Cursor, Read};

use canids_core::canlog::CanFrame;
use canids_core::error::Error;
use canids_core::pipeline::{self, ScoringPipeline};
use canids_core::stream::{format_wire, score_stream, ScoreOptions, StreamSummary, Verdict};
use common::{small_artifact, small_config};

fn frames(count: usize) -> Vec<CanFrame> {
    pipeline::load_frames(&small_config())
        .unwrap()
        .concat()
        .into_iter()
        .take(count)
        .collect()
}

fn wire(frames: &[CanFrame]) -> String {
    frames.iter().map(format_wire).collect()
}

fn score_text(text: &str, stride: usize) -> (Vec<Verdict>, StreamSummary) {
    let mut verdicts = Vec::new();
    let summary = score_stream(
        Cursor::new(text.as_bytes().to_vec()),
        small_artifact(),
        ScoreOptions { window: 7, stride },
        |v| {
            verdicts.push(v.clone());
            Ok(())
        },
    )
    .unwrap();
    (verdicts, summary)
}

fn offline_classes(frames: &[CanFrame]) -> Vec<usize> {
    let layout = small_artifact().profile.layout();
    let rows: Vec<Vec<f64>> = frames
        .chunks_exact(7)
        .map(|w| {
            let mut f = Vec::new();
            for frame in w {
                layout.push_features(frame, &mut f);
            }
            f
        })
        .collect();
    let raw = canids_core::neural::Matrix::from_rows(&rows).unwrap();
    ScoringPipeline {
        artifact: small_artifact(),
    }
    .score(&raw)
    .unwrap()
    .classes
}

#[test]
fn tumbling_windows_match_batch_and_note_trailing_frames() {
    let f = frames(7 * 40 + 3);
    let (verdicts, summary) = score_text(&wire(&f), 7);
    let offline = offline_classes(&f);
    assert_eq!(verdicts.len(), 40);
    for (k, v) in verdicts.iter().enumerate() {
        assert_eq!(v.window_index, k);
        assert_eq!(v.class, offline[k]);
        assert!(v.latency_us >= 0.0);
        assert_eq!(v.deadline_met, v.latency_us < 10_000.0);
        assert!((0.0..=1.0).contains(&v.probability));
    }
    assert_eq!(summary.frames, 283);
    assert_eq!(summary.discarded_trailing_frames, 3);
    assert_eq!(summary.notes.len(), 1);
    assert_eq!(summary.latency_us.count, 40);
    assert_eq!(summary.class_counts.iter().map(|(_, c)| c).sum::<usize>(), 40);
    assert!(summary.to_json().unwrap().contains("\"deadline_violations\""));
}

#[test]
fn malformed_line_skips_its_window_and_resynchronizes() {
    let f = frames(7 * 6);
    let mut lines: Vec<String> = f.iter().map(format_wire).collect();
    // Third frame of window 1.
    lines[9] = "garbage,line\n".into();
    let (verdicts, summary) = score_text(&lines.concat(), 7);
    assert_eq!(summary.malformed_lines, 1);
    assert_eq!(summary.skipped_windows, 1);
    // Window 1 lost its first two frames and the bad line; accumulation
    // restarts at frame 10, so the four following windows are shifted.
    assert_eq!(
        verdicts.iter().map(|v| v.window_index).collect::<Vec<_>>(),
        vec![0, 2, 3, 4, 5]
    );
    assert_eq!(summary.discarded_trailing_frames, 42 - 10 - 28);
    let offline = offline_classes(&f[10..38]);
    assert_eq!(verdicts[1..].iter().map(|v| v.class).collect::<Vec<_>>(), offline);
}

#[test]
fn sliding_mode_emits_one_verdict_per_frame_after_the_first_window() {
    let f = frames(50);
    let (verdicts, summary) = score_text(&wire(&f), 1);
    assert_eq!(verdicts.len(), 50 - 7 + 1);
    assert_eq!(summary.discarded_trailing_frames, 0);
    let offline = offline_classes(&f[3..10]);
    assert_eq!(verdicts[3].class, offline[0]);
}

/// Yields the buffered bytes, then fails like a reset connection.
struct Dropping {
    inner: Cursor<Vec<u8>>,
}

impl Read for Dropping {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        match self.inner.read(buf)? {
            0 => Err(std::io::Error::new(std::io::ErrorKind::ConnectionReset, "peer reset")),
            n => Ok(n),
        }
    }
}

#[test]
fn connection_drop_returns_summary_of_processed_windows() {
    let f = frames(7 * 5 + 2);
    let reader = std::io::BufReader::new(Dropping {
        inner: Cursor::new(wire(&f).into_bytes()),
    });
    let mut count = 0;
    let summary = score_stream(reader, small_artifact(), ScoreOptions { window: 7, stride: 7 }, |_| {
        count += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(count, 5);
    assert_eq!(summary.verdicts, 5);
    assert!(summary.connection_error.is_some());
}

#[test]
fn window_must_match_artifact() {
    let reader: Box<dyn BufRead> = Box::new(Cursor::new(Vec::new()));
    let err = score_stream(
        reader,
        small_artifact(),
        ScoreOptions { window: 29, stride: 29 },
        |_| Ok(()),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
