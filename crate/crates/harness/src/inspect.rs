//! Per-frame score dumps and the score/corruption agreement analysis.
//!
//! Dump format: tab-separated `clip frame w_local w_global flag` records,
//! one per frame. Clean frames have an empty flag, scores a strategy does
//! not compute are written as `-`. Lines starting with `#` are comments;
//! each clip is preceded by one summarizing its identity, camera and the
//! max/min ratio of its local scores.

use std::fmt::Write as _;

use loga_core::{AssemblyStrategy, Clip, FrameFlag, LogaModel};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const HEADER: &str = "# clip\tframe\tw_local\tw_global\tflag";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub clip: usize,
    pub frame: usize,
    pub w_local: Option<f64>,
    pub w_global: Option<f64>,
    pub flag: FrameFlag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScores {
    pub clip: usize,
    pub identity: usize,
    pub camera: usize,
    pub records: Vec<ScoreRecord>,
}

impl ClipScores {
    /// `max(w_local) / min(w_local)`, if the strategy has local scores.
    pub fn local_ratio(&self) -> Option<f64> {
        let w: Vec<f64> = self.records.iter().filter_map(|r| r.w_local).collect();
        if w.is_empty() {
            return None;
        }
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max / min)
    }
}

/// Scores of the clips with the given ids, in request order.
pub fn inspect_clips(
    model: &mut LogaModel<f32>,
    strategy: &dyn AssemblyStrategy<f32>,
    clips: &[&Clip],
    ids: &[usize],
) -> Result<Vec<ClipScores>> {
    let selected = ids
        .iter()
        .map(|&id| clips.iter().copied().find(|c| c.id == id).ok_or(HarnessError::UnknownClip(id)))
        .collect::<Result<Vec<_>>>()?;
    let outputs = model.describe(strategy, &selected)?;
    Ok(selected
        .iter()
        .zip(outputs)
        .map(|(c, o)| ClipScores {
            clip: c.id,
            identity: c.identity,
            camera: c.camera,
            records: c
                .flags
                .iter()
                .enumerate()
                .map(|(i, &flag)| ScoreRecord {
                    clip: c.id,
                    frame: i,
                    w_local: o.w_local.as_ref().map(|w| f64::from(w[i])),
                    w_global: o.w_global.as_ref().map(|w| f64::from(w[i])),
                    flag,
                })
                .collect(),
        })
        .collect())
}

fn score_field(w: Option<f64>, scale: f64) -> String {
    w.map_or_else(|| "-".to_string(), |w| format!("{}", w * scale))
}

/// Renders a dump; `scale` multiplies every score (e.g. 1000).
pub fn format_scores(clips: &[ClipScores], scale: f64) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    for c in clips {
        let ratio = c.local_ratio().map_or_else(|| "-".to_string(), |r| format!("{r:.4}"));
        writeln!(
            out,
            "# clip {} identity {} camera {} scale {} w_local max/min {}",
            c.clip, c.identity, c.camera, scale, ratio
        )
        .unwrap();
        for r in &c.records {
            let flag = if r.flag.is_clean() { "" } else { r.flag.name() };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.clip,
                r.frame,
                score_field(r.w_local, scale),
                score_field(r.w_global, scale),
                flag
            )
            .unwrap();
        }
    }
    out
}

/// Reads the records of a dump back; comments are skipped.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let bad = |line: usize, what: &str| HarnessError::Config(format!("score dump line {}: {what}", line + 1));
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(n, "expected 5 tab-separated fields"));
        }
        let score = |s: &str| -> Result<Option<f64>> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(n, "bad score"))
            }
        };
        records.push(ScoreRecord {
            clip: fields[0].parse().map_err(|_| bad(n, "bad clip id"))?,
            frame: fields[1].parse().map_err(|_| bad(n, "bad frame index"))?,
            w_local: score(fields[2])?,
            w_global: score(fields[3])?,
            flag: if fields[4].is_empty() {
                FrameFlag::Clean
            } else {
                FrameFlag::from_name(fields[4]).ok_or_else(|| bad(n, "unknown flag"))?
            },
        });
    }
    Ok(records)
}

/// How often the scores rank corrupted frames below clean ones.
///
/// A clip counts when it has at least one clean frame and at least one
/// occluded or identity-switched frame (misaligned frames are ignored). For
/// such a clip the local (global) score "separates" when the mean score of
/// its corrupted frames is strictly below the mean of its clean frames.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub clips: usize,
    pub local: usize,
    pub global: usize,
    pub both: usize,
}

impl SeparationReport {
    pub fn fraction(&self, count: usize) -> f64 {
        if self.clips == 0 {
            0.0
        } else {
            count as f64 / self.clips as f64
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.clips += other.clips;
        self.local += other.local;
        self.global += other.global;
        self.both += other.both;
    }
}

fn is_corrupted(f: FrameFlag) -> bool {
    matches!(f, FrameFlag::Occluded | FrameFlag::IdSwitch)
}

fn separates(w: &[f32], flags: &[FrameFlag]) -> bool {
    let mean = |pred: &dyn Fn(FrameFlag) -> bool| {
        let v: Vec<f64> = w.iter().zip(flags).filter(|(_, &f)| pred(f)).map(|(&x, _)| f64::from(x)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    mean(&|f| is_corrupted(f)) < mean(&|f| f.is_clean())
}

pub fn noise_separation(
    model: &mut LogaModel<f32>,
    strategy: &dyn AssemblyStrategy<f32>,
    clips: &[&Clip],
) -> Result<SeparationReport> {
    let mixed: Vec<&Clip> = clips
        .iter()
        .copied()
        .filter(|c| c.flags.iter().any(|&f| is_corrupted(f)) && c.flags.iter().any(|f| f.is_clean()))
        .collect();
    let outputs = model.describe(strategy, &mixed)?;
    let mut report = SeparationReport {
        clips: mixed.len(),
        ..Default::default()
    };
    for (c, o) in mixed.iter().zip(&outputs) {
        let local = o.w_local.as_ref().is_some_and(|w| separates(w, &c.flags));
        let global = o.w_global.as_ref().is_some_and(|w| separates(w, &c.flags));
        report.local += local as usize;
        report.global += global as usize;
        report.both += (local && global) as usize;
    }
    Ok(report)
}
