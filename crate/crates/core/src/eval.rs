//! Scoring predictions against annotations, and timing the pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::frame_io::{self, SequenceSource};
use crate::geom::Vec2;
use crate::pipeline::{Pipeline, StageTimings};

/// Per-frame focus positions from one annotator (or a merge of several).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationTrack {
    pub points: BTreeMap<usize, Vec2>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    frame: usize,
    x: f64,
    y: f64,
}

impl AnnotationTrack {
    pub fn from_points(points: impl IntoIterator<Item = (usize, Vec2)>) -> Result<Self> {
        let mut track = Self::default();
        for (frame, p) in points {
            if track.points.insert(frame, p).is_some() {
                return Err(Error::InvalidInput(format!("frame {frame} annotated twice")));
            }
        }
        Ok(track)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads a `frame,x,y` CSV. Errors carry the 1-based file line.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
        let headers = reader.headers().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
        if headers.iter().collect::<Vec<_>>() != ["frame", "x", "y"] {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "header must be `frame,x,y`".into(),
            });
        }
        let mut track = Self::default();
        for row in reader.deserialize::<CsvRow>() {
            let row = row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            if !(row.x.is_finite() && row.y.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{}: frame {} has non-finite coordinates",
                    path.display(),
                    row.frame
                )));
            }
            if track.points.insert(row.frame, Vec2::new(row.x, row.y)).is_some() {
                return Err(Error::InvalidInput(format!(
                    "{}: frame {} annotated twice",
                    path.display(),
                    row.frame
                )));
            }
        }
        Ok(track)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        let io = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
        w.write_record(["frame", "x", "y"]).map_err(io)?;
        for (f, p) in &self.points {
            w.write_record([f.to_string(), p.x.to_string(), p.y.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Fails if any point lies outside `[0, width) × [0, height)`.
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for (f, p) in &self.points {
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64) {
                return Err(Error::InvalidInput(format!(
                    "frame {f}: ({}, {}) outside {width}x{height}",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedTrack {
    pub track: AnnotationTrack,
    /// Frames present in at least one track but not in all of them.
    pub dropped: usize,
}

/// Averages tracks frame by frame, keeping only frames every track has.
pub fn merge_annotations(tracks: &[AnnotationTrack]) -> Result<MergedTrack> {
    let Some(first) = tracks.first() else {
        return Err(Error::InvalidInput("no annotation tracks".into()));
    };
    let all: BTreeSet<usize> = tracks.iter().flat_map(|t| t.points.keys().copied()).collect();
    let mut merged = AnnotationTrack::default();
    for &frame in first.points.keys() {
        let pts: Option<Vec<Vec2>> = tracks.iter().map(|t| t.points.get(&frame).copied()).collect();
        if let Some(pts) = pts {
            let n = pts.len() as f64;
            let sum = pts.iter().fold(Vec2::ZERO, |a, &p| a + p);
            merged.points.insert(frame, sum * (1.0 / n));
        }
    }
    Ok(MergedTrack {
        dropped: all.len() - merged.points.len(),
        track: merged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean of `(|dx| + |dy|) / 2`, px.
    pub mae: f64,
    /// Mean of `(dx² + dy²) / 2`, px².
    pub mse: f64,
    pub mae_x: f64,
    pub mae_y: f64,
    pub mse_x: f64,
    pub mse_y: f64,
    /// Mean Euclidean distance, px.
    pub mean_distance: f64,
    /// Frames scored (present in both inputs).
    pub frames: usize,
    /// Scored frames over frames present in either input.
    pub coverage: f64,
    /// Frames dropped while merging annotator tracks.
    pub dropped: usize,
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let rows = [
            ("mae", format!("{:.4}", self.mae)),
            ("mse", format!("{:.4}", self.mse)),
            ("mae_x", format!("{:.4}", self.mae_x)),
            ("mae_y", format!("{:.4}", self.mae_y)),
            ("mse_x", format!("{:.4}", self.mse_x)),
            ("mse_y", format!("{:.4}", self.mse_y)),
            ("mean_distance", format!("{:.4}", self.mean_distance)),
            ("frames", self.frames.to_string()),
            ("coverage", format!("{:.4}", self.coverage)),
            ("dropped", self.dropped.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<14}{v:>14}");
        }
        s
    }
}

/// Compares predicted positions with a truth track on their shared frames.
pub fn score(predictions: &BTreeMap<usize, Vec2>, truth: &AnnotationTrack) -> Result<MetricReport> {
    let pairs: Vec<(Vec2, Vec2)> = predictions
        .iter()
        .filter_map(|(f, &p)| truth.points.get(f).map(|&t| (p, t)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(Vec2) -> f64| pairs.iter().map(|&(p, t)| f(p - t)).sum::<f64>() / n;
    let union: BTreeSet<usize> = predictions.keys().chain(truth.points.keys()).copied().collect();
    Ok(MetricReport {
        mae: mean(&|d| (d.x.abs() + d.y.abs()) / 2.0),
        mse: mean(&|d| (d.x * d.x + d.y * d.y) / 2.0),
        mae_x: mean(&|d| d.x.abs()),
        mae_y: mean(&|d| d.y.abs()),
        mse_x: mean(&|d| d.x * d.x),
        mse_y: mean(&|d| d.y * d.y),
        mean_distance: mean(&|d| d.norm()),
        frames: pairs.len(),
        coverage: pairs.len() as f64 / union.len() as f64,
        dropped: 0,
    })
}

/// Binds annotation files to a clip. Relative paths resolve against the
/// metadata file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMetadata {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub height: Option<usize>,
    #[serde(default)]
    pub annotations: Vec<PathBuf>,
}

impl ClipMetadata {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut meta: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for a in &mut meta.annotations {
            if a.is_relative() {
                *a = base.join(&*a);
            }
        }
        Ok(meta)
    }
}

/// Median and nearest-rank 95th percentile of one stage, ms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStat {
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl StageStat {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            median_ms: median,
            p95_ms: s[rank - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub width: usize,
    pub height: usize,
    /// Correspondences per pair fed to the rigid fit.
    pub correspondences: usize,
    pub warmup: usize,
    pub frames_timed: usize,
    pub workers: usize,
    pub flow: StageStat,
    pub correspondence: StageStat,
    pub fit: StageStat,
    pub compensate: StageStat,
    pub focus: StageStat,
    pub aggregate: StageStat,
    /// Whole pair, summed per sample before taking statistics.
    pub total: StageStat,
}

impl TimingReport {
    pub fn stages(&self) -> [(&'static str, StageStat); 7] {
        [
            ("flow", self.flow),
            ("correspondence", self.correspondence),
            ("fit", self.fit),
            ("compensate", self.compensate),
            ("focus", self.focus),
            ("aggregate", self.aggregate),
            ("total", self.total),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{}x{}  N = {}  warmup = {}  timed = {}  workers = {}\n",
            self.width, self.height, self.correspondences, self.warmup, self.frames_timed, self.workers
        );
        let _ = writeln!(s, "{:<16}{:>12}{:>12}", "stage", "median ms", "p95 ms");
        for (name, st) in self.stages() {
            let _ = writeln!(s, "{name:<16}{:>12.3}{:>12.3}", st.median_ms, st.p95_ms);
        }
        s
    }
}

/// Times every stage over `timed` pairs after running `warmup` pairs, on a
/// pool of `workers` threads.
pub fn bench(
    config: &PipelineConfig,
    source: &SequenceSource,
    warmup: usize,
    timed: usize,
    workers: usize,
) -> Result<TimingReport> {
    if timed < 1 {
        return Err(Error::InvalidParams("timed frames must be >= 1".into()));
    }
    if workers < 1 {
        return Err(Error::InvalidParams("workers must be >= 1".into()));
    }
    let source = source.clone().with_target_size(config.size_tuple().or(source.target_size));
    let stream = frame_io::open_sequence(&source)?;
    let needed = warmup + timed + 1;
    if stream.frame_count() < needed {
        return Err(Error::InsufficientFrames {
            needed,
            available: stream.frame_count(),
        });
    }
    let (width, height) = stream.dims();
    let frames = stream.take(needed).collect::<Result<Vec<_>>>()?;

    let (samples, correspondences) = crate::with_workers(workers, || -> Result<_> {
        let mut pipeline = Pipeline::new(config.clone())?;
        let mut samples: Vec<StageTimings> = Vec::with_capacity(timed);
        let mut n = 0;
        for (i, f) in frames.into_iter().enumerate() {
            if let Some(out) = pipeline.push_frame(f)? {
                n = out.correspondences;
                if i > warmup {
                    samples.push(out.timings);
                }
            }
        }
        Ok((samples, n))
    })?;

    let stat = |k: usize| StageStat::from_samples(&samples.iter().map(|s| s.as_array()[k]).collect::<Vec<_>>());
    Ok(TimingReport {
        width,
        height,
        correspondences,
        warmup,
        frames_timed: samples.len(),
        workers,
        flow: stat(0),
        correspondence: stat(1),
        fit: stat(2),
        compensate: stat(3),
        focus: stat(4),
        aggregate: stat(5),
        total: StageStat::from_samples(&samples.iter().map(StageTimings::total).collect::<Vec<_>>()),
    })
}
