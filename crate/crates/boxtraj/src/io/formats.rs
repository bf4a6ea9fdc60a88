//! Trajectory JSON and detection-record JSONL.
//!
//! Trajectory files carry the generation canvas plus normalized frames:
//! `{ "canvas": [W, H], "frames": [[l, t, r, b], ...] }`. Detection streams
//! hold one object per line, `{ "frame": k, "boxes": [[l, t, r, b, score],
//! ...] }`; an optional per-line `"canvas": [W, H]` marks pixel-space boxes
//! that are normalized on ingestion.

use super::IoError;
use crate::geometry::{BoxParams, DetectionRecord, ScoredBox, Trajectory};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// On-disk trajectory representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub canvas: (u32, u32),
    pub frames: Vec<[f64; 4]>,
}

impl TrajectoryFile {
    pub fn from_trajectory(traj: &Trajectory, canvas: (u32, u32)) -> Self {
        Self {
            canvas,
            frames: traj.frames.iter().map(|b| b.coords()).collect(),
        }
    }

    pub fn to_trajectory(&self) -> Result<Trajectory, IoError> {
        let frames = self
            .frames
            .iter()
            .map(|c| {
                BoxParams::new(c[0], c[1], c[2], c[3]).map_err(|e| IoError::Invalid(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trajectory::new(frames))
    }
}

pub fn write_trajectory_json(
    path: &Path,
    traj: &Trajectory,
    canvas: (u32, u32),
) -> Result<(), IoError> {
    let file = TrajectoryFile::from_trajectory(traj, canvas);
    let json = serde_json::to_string_pretty(&file).map_err(|e| IoError::Invalid(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_trajectory_json(path: &Path) -> Result<TrajectoryFile, IoError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionLine {
    frame: usize,
    boxes: Vec<[f64; 5]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    canvas: Option<(u32, u32)>,
}

pub fn read_detections_jsonl(path: &Path) -> Result<Vec<DetectionRecord>, IoError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DetectionLine = serde_json::from_str(line).map_err(|e| IoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let (sx, sy) = match parsed.canvas {
            Some((w, h)) => (w as f64, h as f64),
            None => (1.0, 1.0),
        };
        let boxes = parsed
            .boxes
            .iter()
            .map(|b| {
                let bbox = BoxParams::new(b[0] / sx, b[1] / sy, b[2] / sx, b[3] / sy)
                    .map_err(|e| IoError::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                Ok(ScoredBox { bbox, score: b[4] })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        records.push(DetectionRecord {
            frame_index: parsed.frame,
            boxes,
        });
    }
    Ok(records)
}

pub fn write_detections_jsonl(path: &Path, records: &[DetectionRecord]) -> Result<(), IoError> {
    let mut out = String::new();
    for rec in records {
        let line = DetectionLine {
            frame: rec.frame_index,
            boxes: rec
                .boxes
                .iter()
                .map(|d| {
                    [
                        d.bbox.left,
                        d.bbox.top,
                        d.bbox.right,
                        d.bbox.bottom,
                        d.score,
                    ]
                })
                .collect(),
            canvas: None,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| IoError::Invalid(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
