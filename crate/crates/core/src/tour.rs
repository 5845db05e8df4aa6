//! Demonstration tours: frames, narratives, persistence and rate reduction.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{Observation2, Pose2};

pub const TOUR_FORMAT_VERSION: u32 = 1;
const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum TourError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("tour validation failed ({invariant}): {detail}")]
    Validation {
        invariant: &'static str,
        detail: String,
    },
    #[error("frame index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid target rate {target} for a {fps} fps tour")]
    InvalidRate { target: f64, fps: f64 },
    #[error("unsupported tour format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

fn invalid(invariant: &'static str, detail: impl Into<String>) -> TourError {
    TourError::Validation {
        invariant,
        detail: detail.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TourFrame {
    /// 1-based position in the tour.
    pub index: usize,
    /// Seconds from tour start.
    pub timestamp: f64,
    pub descriptor: Vec<f64>,
    pub observations: Vec<Observation2>,
    pub narrative: Option<String>,
    pub pose: Option<Pose2>,
}

/// An ordered, validated tour.
///
/// `source_index[i]` is the full-rate index of frame `i + 1`; it is the
/// identity for tours that were never subsampled.
#[derive(Clone, Debug, PartialEq)]
pub struct Tour {
    frames: Vec<TourFrame>,
    fps: f64,
    descriptor_dim: usize,
    source_index: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TourHeader {
    version: u32,
    fps: f64,
    descriptor_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_index: Option<Vec<usize>>,
}

impl Tour {
    pub fn new(frames: Vec<TourFrame>, fps: f64, descriptor_dim: usize) -> Result<Self, TourError> {
        let source_index = (1..=frames.len()).collect();
        Self::with_source_index(frames, fps, descriptor_dim, source_index)
    }

    fn with_source_index(
        frames: Vec<TourFrame>,
        fps: f64,
        descriptor_dim: usize,
        source_index: Vec<usize>,
    ) -> Result<Self, TourError> {
        let tour = Self {
            frames,
            fps,
            descriptor_dim,
            source_index,
        };
        tour.validate()?;
        Ok(tour)
    }

    pub fn validate(&self) -> Result<(), TourError> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(invalid("fps positive", format!("fps = {}", self.fps)));
        }
        if self.descriptor_dim == 0 {
            return Err(invalid("descriptor dimension", "descriptor_dim must be >= 1"));
        }
        if self.source_index.len() != self.frames.len() {
            return Err(invalid(
                "source index",
                format!("{} source indices for {} frames", self.source_index.len(), self.frames.len()),
            ));
        }
        if self.source_index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("source index", "original indices must strictly increase"));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i + 1 {
                return Err(invalid(
                    "indices consecutive",
                    format!("frame at position {} has index {}", i + 1, f.index),
                ));
            }
            if i > 0 && f.timestamp.partial_cmp(&self.frames[i - 1].timestamp) != Some(std::cmp::Ordering::Greater) {
                return Err(invalid(
                    "timestamps strictly increasing",
                    format!("frame {} at t={} after t={}", f.index, f.timestamp, self.frames[i - 1].timestamp),
                ));
            }
            if f.descriptor.len() != self.descriptor_dim {
                return Err(invalid(
                    "descriptor dimension",
                    format!("frame {} has {} entries, expected {}", f.index, f.descriptor.len(), self.descriptor_dim),
                ));
            }
            let norm = f.descriptor.iter().map(|d| d * d).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(invalid("descriptor unit norm", format!("frame {} has norm {norm}", f.index)));
            }
            if let Some(p) = &f.pose {
                if !p.is_finite() {
                    return Err(invalid("finite pose", format!("frame {}", f.index)));
                }
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> &[TourFrame] {
        &self.frames
    }

    /// Frame by 1-based index.
    pub fn frame(&self, index: usize) -> Option<&TourFrame> {
        index.checked_sub(1).and_then(|i| self.frames.get(i))
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_index
    }

    /// Full-rate index of 1-based frame `index`.
    pub fn to_source_index(&self, index: usize) -> Option<usize> {
        index.checked_sub(1).and_then(|i| self.source_index.get(i)).copied()
    }

    /// Inverse of [`Tour::to_source_index`].
    pub fn from_source_index(&self, source: usize) -> Option<usize> {
        self.source_index.binary_search(&source).ok().map(|i| i + 1)
    }

    pub fn attach_narrative(&self, index: usize, text: impl Into<String>) -> Result<Tour, TourError> {
        if index == 0 || index > self.len() {
            return Err(TourError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let mut out = self.clone();
        out.frames[index - 1].narrative = Some(text.into());
        Ok(out)
    }

    /// Keeps every `⌈fps / target_fps⌉`-th frame starting at frame 1, plus
    /// every narrated frame, and re-indexes the result.
    pub fn subsample(&self, target_fps: f64) -> Result<Tour, TourError> {
        if target_fps.is_nan() || target_fps <= 0.0 || target_fps > self.fps {
            return Err(TourError::InvalidRate {
                target: target_fps,
                fps: self.fps,
            });
        }
        let stride = stride_for(self.fps, target_fps);
        let mut frames = Vec::new();
        let mut source = Vec::new();
        for (i, f) in self.frames.iter().enumerate() {
            if i % stride == 0 || f.narrative.is_some() {
                let mut kept = f.clone();
                kept.index = frames.len() + 1;
                frames.push(kept);
                source.push(self.source_index[i]);
            }
        }
        Tour::with_source_index(frames, target_fps, self.descriptor_dim, source)
    }

    pub fn save(&self, dir: &Path) -> Result<(), TourError> {
        let io = |path: PathBuf| move |source| TourError::Io { path, source };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let identity = self.source_index.iter().enumerate().all(|(i, &s)| s == i + 1);
        let header = TourHeader {
            version: TOUR_FORMAT_VERSION,
            fps: self.fps,
            descriptor_dim: self.descriptor_dim,
            source_index: (!identity).then(|| self.source_index.clone()),
        };
        let header_path = dir.join("tour.json");
        let text = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(&header_path, text + "\n").map_err(io(header_path.clone()))?;

        let frames_path = dir.join("frames.jsonl");
        let file = fs::File::create(&frames_path).map_err(io(frames_path.clone()))?;
        let mut w = BufWriter::new(file);
        for f in &self.frames {
            let line = serde_json::to_string(f).expect("frame serializes");
            writeln!(w, "{line}").map_err(io(frames_path.clone()))?;
        }
        w.flush().map_err(io(frames_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Tour, TourError> {
        let header_path = dir.join("tour.json");
        let text = fs::read_to_string(&header_path).map_err(|source| TourError::Io {
            path: header_path.clone(),
            source,
        })?;
        let header: TourHeader = serde_json::from_str(&text).map_err(|e| TourError::Parse {
            file: header_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if header.version != TOUR_FORMAT_VERSION {
            return Err(TourError::Version {
                found: header.version,
                expected: TOUR_FORMAT_VERSION,
            });
        }
        let frames_path = dir.join("frames.jsonl");
        let file = fs::File::open(&frames_path).map_err(|source| TourError::Io {
            path: frames_path.clone(),
            source,
        })?;
        let mut frames = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| TourError::Io {
                path: frames_path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: TourFrame = serde_json::from_str(&line).map_err(|e| TourError::Parse {
                file: frames_path.clone(),
                line: n + 1,
                message: e.to_string(),
            })?;
            frames.push(frame);
        }
        let source = header
            .source_index
            .unwrap_or_else(|| (1..=frames.len()).collect());
        Tour::with_source_index(frames, header.fps, header.descriptor_dim, source)
    }
}

/// Subsampling stride; ratios within 1e-9 of an integer are not rounded up.
pub fn stride_for(fps: f64, target_fps: f64) -> usize {
    let ratio = fps / target_fps;
    let nearest = ratio.round();
    let stride = if (ratio - nearest).abs() < 1e-9 {
        nearest
    } else {
        ratio.ceil()
    };
    (stride as usize).max(1)
}

pub fn load_tour(dir: &Path) -> Result<Tour, TourError> {
    Tour::load(dir)
}

pub fn save_tour(tour: &Tour, dir: &Path) -> Result<(), TourError> {
    tour.save(dir)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn synthetic_frames(n: usize, dim: usize) -> Vec<TourFrame> {
        (1..=n)
            .map(|i| {
                let mut descriptor = vec![0.0; dim];
                descriptor[i % dim] = 1.0;
                TourFrame {
                    index: i,
                    timestamp: (i - 1) as f64,
                    descriptor,
                    observations: vec![],
                    narrative: None,
                    pose: Some(Pose2::new(i as f64 * 0.5, 0.0, 0.0)),
                }
            })
            .collect()
    }

    fn tour(n: usize) -> Tour {
        Tour::new(synthetic_frames(n, 4), 1.0, 4).unwrap()
    }

    #[test]
    fn rejects_duplicate_index() {
        let mut frames = synthetic_frames(3, 4);
        frames[2].index = 2;
        let err = Tour::new(frames, 1.0, 4).unwrap_err();
        assert!(err.to_string().contains("indices consecutive"), "{err}");
    }

    #[test]
    fn rejects_non_monotone_time_and_bad_descriptor() {
        let mut frames = synthetic_frames(3, 4);
        frames[1].timestamp = 0.0;
        assert!(Tour::new(frames, 1.0, 4).unwrap_err().to_string().contains("timestamps"));
        let mut frames = synthetic_frames(3, 4);
        frames[0].descriptor = vec![0.5; 4];
        assert!(Tour::new(frames.clone(), 1.0, 4).is_ok());
        frames[0].descriptor = vec![0.6; 4];
        assert!(Tour::new(frames, 1.0, 4).unwrap_err().to_string().contains("unit norm"));
        assert!(Tour::new(synthetic_frames(2, 4), 0.0, 4).is_err());
    }

    #[test]
    fn narrative_attachment() {
        let t = tour(948);
        let t = t.attach_narrative(434, "Lewis' desk").unwrap();
        assert_eq!(t.frame(434).unwrap().narrative.as_deref(), Some("Lewis' desk"));
        assert_eq!(t.frames().iter().filter(|f| f.narrative.is_some()).count(), 1);
        assert!(matches!(
            t.attach_narrative(0, "x"),
            Err(TourError::IndexOutOfRange { index: 0, .. })
        ));
        assert!(t.attach_narrative(949, "x").is_err());
        let t = t.attach_narrative(434, "kitchen").unwrap();
        assert_eq!(t.frame(434).unwrap().narrative.as_deref(), Some("kitchen"));
    }

    #[test]
    fn subsample_stride() {
        let t = tour(948);
        let s = t.subsample(0.2).unwrap();
        assert_eq!(s.len(), 190);
        assert_eq!(s.to_source_index(45), Some(221));
        assert_eq!(s.frame(190).unwrap().index, 190);
        assert_eq!(s.to_source_index(190), Some(946));
        assert_eq!(t.subsample(1.0).unwrap(), t);
        assert!(t.subsample(0.0).is_err());
        assert!(t.subsample(2.0).is_err());
    }

    #[test]
    fn subsample_keeps_narrated_frames() {
        // stride 5 keeps 1, 6, 11, ...; frame 8 would be dropped
        let t = tour(20).attach_narrative(8, "printer").unwrap();
        let plain: Vec<usize> = tour(20).subsample(0.2).unwrap().source_indices().to_vec();
        assert_eq!(plain, vec![1, 6, 11, 16]);
        let s = t.subsample(0.2).unwrap();
        assert_eq!(s.source_indices(), &[1, 6, 8, 11, 16]);
        let kept = s.from_source_index(8).unwrap();
        assert_eq!(s.frame(kept).unwrap().narrative.as_deref(), Some("printer"));
        for i in 1..=s.len() {
            assert_eq!(s.from_source_index(s.to_source_index(i).unwrap()), Some(i));
        }
        // nested subsampling still maps to the full-rate tour
        let s2 = s.subsample(0.1).unwrap();
        assert_eq!(s2.source_indices(), &[1, 8, 16]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = tour(5).attach_narrative(3, "kitchen").unwrap();
        t.save(dir.path()).unwrap();
        assert_eq!(Tour::load(dir.path()).unwrap(), t);
        let s = tour(12).subsample(0.5).unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(Tour::load(dir.path()).unwrap(), s);
    }

    #[test]
    fn load_reports_line_and_invariant() {
        let dir = tempfile::tempdir().unwrap();
        tour(3).save(dir.path()).unwrap();
        let p = dir.path().join("frames.jsonl");
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "{\"index\": 2, oops";
        fs::write(&p, lines.join("\n")).unwrap();
        match Tour::load(dir.path()) {
            Err(TourError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let t = tour(3);
        let mut frames = t.frames().to_vec();
        frames[2].index = 2;
        let body: Vec<String> = frames.iter().map(|f| serde_json::to_string(f).unwrap()).collect();
        fs::write(&p, body.join("\n")).unwrap();
        let err = Tour::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("indices consecutive"));
    }
}
