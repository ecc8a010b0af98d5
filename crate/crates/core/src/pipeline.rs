//! Frame-pair pipeline and the `process` driver that writes a run to disk.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{self, AggregatorState, AttentionMask};
use crate::config::PipelineConfig;
use crate::ego_motion::{self, EgoNoiseField, RigidTransform};
use crate::error::{Error, Result};
use crate::focus::{self, FieldSource, FocusEstimate, FocusFallback};
use crate::frame_io::{self, Frame, SequenceSource};
use crate::optical_flow::{self, FlowField, FlowPyramid};
use crate::viz;

/// Wall time of each stage for one pair, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub flow: f64,
    pub correspondence: f64,
    pub fit: f64,
    pub compensate: f64,
    pub focus: f64,
    pub aggregate: f64,
}

impl StageTimings {
    pub const NAMES: [&'static str; 6] =
        ["flow", "correspondence", "fit", "compensate", "focus", "aggregate"];

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.flow,
            self.correspondence,
            self.fit,
            self.compensate,
            self.focus,
            self.aggregate,
        ]
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

fn lap(t: &mut Instant) -> f64 {
    let now = Instant::now();
    let ms = now.duration_since(*t).as_secs_f64() * 1e3;
    *t = now;
    ms
}

/// Everything computed for one consecutive pair.
#[derive(Debug, Clone)]
pub struct PairOutput {
    /// Index of the later frame; predictions are keyed by it.
    pub frame: usize,
    pub flow: FlowField,
    pub transform: RigidTransform,
    pub correspondences: usize,
    pub eps: EgoNoiseField,
    pub compensated: FlowField,
    pub rays: usize,
    pub estimate: FocusEstimate,
    pub candidates: Vec<FocusEstimate>,
    pub activity: f64,
    pub sigma: f64,
    pub mask: AttentionMask,
    pub stabilized: (usize, usize),
    pub timings: StageTimings,
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub score: usize,
    pub sigma: f64,
    pub low_confidence: bool,
}

impl PairOutput {
    pub fn prediction(&self) -> PredictionRecord {
        PredictionRecord {
            frame: self.frame,
            x: self.stabilized.0 as f64,
            y: self.stabilized.1 as f64,
            score: self.estimate.score,
            sigma: self.sigma,
            low_confidence: self.estimate.low_confidence,
        }
    }
}

/// Stateful pipeline: feed frames in order, get one output per pair.
pub struct Pipeline {
    config: PipelineConfig,
    state: AggregatorState,
    fallback: FocusFallback,
    previous: Option<FlowPyramid>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            state: AggregatorState::new(config.aggregation.window),
            fallback: FocusFallback::default(),
            previous: None,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Returns `None` for the first frame, otherwise the output for the pair
    /// ending at `frame`.
    pub fn push_frame(&mut self, frame: Frame) -> Result<Option<PairOutput>> {
        let t = Instant::now();
        let pyramid = FlowPyramid::build(&frame, &self.config.flow)?;
        let out = match self.previous.take() {
            Some(prev) => Some(self.run_pair(&prev, &pyramid, frame.index(), t)?),
            None => None,
        };
        self.previous = Some(pyramid);
        Ok(out)
    }

    /// Processes a pair without touching the cached previous frame. The
    /// aggregation window still advances.
    pub fn process_pair(&mut self, prev: &Frame, next: &Frame) -> Result<PairOutput> {
        let t = Instant::now();
        let p1 = FlowPyramid::build(prev, &self.config.flow)?;
        let p2 = FlowPyramid::build(next, &self.config.flow)?;
        self.run_pair(&p1, &p2, next.index(), t)
    }

    /// `t` marks the start of the flow stage, before `next` was expanded.
    fn run_pair(
        &mut self,
        prev: &FlowPyramid,
        next: &FlowPyramid,
        index: usize,
        mut t: Instant,
    ) -> Result<PairOutput> {
        let cfg = &self.config;
        let (w, h) = next.dims();
        let mut timings = StageTimings::default();

        let flow = optical_flow::flow_between(prev, next)?;
        timings.flow = lap(&mut t);

        let (p1, p2) = ego_motion::build_correspondences(&flow, cfg.stride);
        timings.correspondence = lap(&mut t);

        let transform = ego_motion::fit_rigid(&p1, &p2)?;
        timings.fit = lap(&mut t);

        let eps = ego_motion::ego_noise(&flow, &transform);
        let compensated = ego_motion::compensate(&flow, &eps)?;
        timings.compensate = lap(&mut t);

        let field = match cfg.focus.field_source {
            FieldSource::Compensated => &compensated,
            FieldSource::Raw => &flow,
            FieldSource::Ego => eps.as_flow(),
        };
        let rays = focus::extract_rays(field, cfg.focus.magnitude_threshold, cfg.focus.stride);
        let clustered = focus::cluster_and_score(&rays, &cfg.focus);
        let (estimate, candidates) = self.fallback.resolve(clustered, w, h);
        timings.focus = lap(&mut t);

        let activity = optical_flow::mean_magnitude(&flow);
        let sigma = aggregation::sigma_from_activity(activity, &cfg.aggregation);
        self.state.push_focus(estimate.point, sigma, index);
        let mask = aggregation::render_mask(&self.state, w, h)?;
        let stabilized = aggregation::stabilized_focus(&mask);
        timings.aggregate = lap(&mut t);

        Ok(PairOutput {
            frame: index,
            correspondences: p1.len(),
            rays: rays.len(),
            flow,
            transform,
            eps,
            compensated,
            estimate,
            candidates,
            activity,
            sigma,
            mask,
            stabilized,
            timings,
        })
    }
}

#[derive(Debug, Serialize)]
struct DiagRecord<'a> {
    frame: usize,
    transform: [f64; 6],
    theta_deg: f64,
    correspondences: usize,
    activity: f64,
    rays: usize,
    estimate: &'a FocusEstimate,
    candidates: &'a [FocusEstimate],
    timings_ms: StageTimings,
}

/// Written as `manifest.json` at the end of every run, failed or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: String,
    pub source: String,
    pub width: usize,
    pub height: usize,
    pub frames_read: usize,
    pub pairs_processed: usize,
    /// Frame at which processing stopped, when it failed.
    pub failed_at_frame: Option<usize>,
    pub error: Option<String>,
    pub files: Vec<String>,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessSummary {
    pub pairs: usize,
    pub predictions: PathBuf,
    pub manifest: PathBuf,
}

fn describe(source: &SequenceSource) -> String {
    match &source.kind {
        frame_io::SourceKind::ImageDirectory(p) | frame_io::SourceKind::Y4m(p) => {
            p.display().to_string()
        }
        frame_io::SourceKind::Synthetic(_) => "synthetic".into(),
    }
}

struct RunWriter {
    dir: PathBuf,
    predictions: BufWriter<File>,
    diag: Option<BufWriter<File>>,
    files: Vec<String>,
}

impl RunWriter {
    fn create(dir: &Path, cfg: &PipelineConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(p, e))
        };
        let toggles = &cfg.output;
        for (on, sub) in [
            (toggles.overlay, "overlay"),
            (toggles.flow, "flow"),
            (toggles.eps, "eps"),
            (toggles.mask, "mask"),
            (toggles.panel, "panel"),
        ] {
            if on {
                let p = dir.join(sub);
                std::fs::create_dir_all(&p).map_err(|e| Error::io(p, e))?;
            }
        }
        let config_path = dir.join("config.toml");
        std::fs::write(&config_path, cfg.to_toml_string()).map_err(|e| Error::io(&config_path, e))?;
        let mut files = vec!["config.toml".to_string(), "predictions.jsonl".to_string()];
        let diag = if toggles.diag {
            files.push("diag.jsonl".into());
            Some(open("diag.jsonl")?)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            predictions: open("predictions.jsonl")?,
            diag,
            files,
        })
    }

    fn line(out: &mut BufWriter<File>, path: &Path, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string(value).expect("record serialises");
        writeln!(out, "{text}").map_err(|e| Error::io(path, e))
    }

    fn rgb(&mut self, rel: String, img: &image::RgbImage) -> Result<()> {
        frame_io::write_color_image(img, &self.dir.join(&rel))?;
        self.files.push(rel);
        Ok(())
    }

    fn write_pair(&mut self, out: &PairOutput, frame: &Frame, cfg: &PipelineConfig) -> Result<()> {
        let path = self.dir.join("predictions.jsonl");
        Self::line(&mut self.predictions, &path, &out.prediction())?;
        if let Some(diag) = &mut self.diag {
            let rec = DiagRecord {
                frame: out.frame,
                transform: out.transform.to_six(),
                theta_deg: out.transform.angle().to_degrees(),
                correspondences: out.correspondences,
                activity: out.activity,
                rays: out.rays,
                estimate: &out.estimate,
                candidates: &out.candidates,
                timings_ms: out.timings,
            };
            Self::line(diag, &self.dir.join("diag.jsonl"), &rec)?;
        }
        let n = out.frame;
        let toggles = &cfg.output;
        let focus = (out.stabilized.0 as f64, out.stabilized.1 as f64);
        if toggles.overlay {
            let img = viz::render_overlay(frame, &out.mask, focus, &cfg.style)?;
            self.rgb(format!("overlay/{n:06}.png"), &img)?;
        }
        if toggles.flow {
            self.rgb(format!("flow/{n:06}_raw.png"), &viz::flow_to_color(&out.flow))?;
            self.rgb(format!("flow/{n:06}_compensated.png"), &viz::flow_to_color(&out.compensated))?;
        }
        if toggles.eps {
            let rel = format!("eps/{n:06}.png");
            frame_io::write_image(&viz::magnitude_map(out.eps.as_flow()), &self.dir.join(&rel))?;
            self.files.push(rel);
        }
        if toggles.mask {
            let rel = format!("mask/{n:06}.png");
            frame_io::write_image(&out.mask.to_scalar_field(), &self.dir.join(&rel))?;
            self.files.push(rel);
        }
        if toggles.panel {
            let img = viz::render_panel(
                frame,
                focus,
                out.eps.as_flow(),
                &out.flow,
                &out.compensated,
                &cfg.style,
            )?;
            self.rgb(format!("panel/{n:06}.png"), &img)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let p = self.dir.join("predictions.jsonl");
        self.predictions.flush().map_err(|e| Error::io(&p, e))?;
        if let Some(d) = &mut self.diag {
            let p = self.dir.join("diag.jsonl");
            d.flush().map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

/// Runs the pipeline over `source`, writing predictions, the enabled
/// artifacts, the resolved `config.toml` and a `manifest.json` into `out_dir`.
///
/// On failure everything written so far is kept and the manifest records
/// the frame at which the run stopped.
pub fn process(source: &SequenceSource, config: &PipelineConfig, out_dir: &Path) -> Result<ProcessSummary> {
    config.validate()?;
    let source = source.clone().with_target_size(config.size_tuple().or(source.target_size));
    let mut writer = RunWriter::create(out_dir, config)?;
    let mut stream = match frame_io::open_sequence(&source) {
        Ok(s) => s,
        Err(e) => {
            let failed_at = match &e {
                Error::AtFrame { index, .. } => Some(*index),
                _ => None,
            };
            let manifest = RunManifest {
                status: "failed".into(),
                source: describe(&source),
                width: 0,
                height: 0,
                frames_read: 0,
                pairs_processed: 0,
                failed_at_frame: failed_at,
                error: Some(e.to_string()),
                files: writer.files.clone(),
                config: config.clone(),
            };
            write_manifest(out_dir, &manifest)?;
            return Err(e);
        }
    };
    let (width, height) = stream.dims();
    let mut pipeline = Pipeline::new(config.clone())?;

    let mut frames_read = 0;
    let mut pairs = 0;
    let mut failure: Option<(usize, Error)> = None;
    for item in stream.by_ref() {
        let frame = match item {
            Ok(f) => f,
            Err(e) => {
                failure = Some((frames_read, e));
                break;
            }
        };
        frames_read += 1;
        let index = frame.index();
        let step = pipeline
            .push_frame(frame.clone())
            .and_then(|out| match out {
                Some(out) => writer.write_pair(&out, &frame, config).map(|_| true),
                None => Ok(false),
            });
        match step {
            Ok(true) => pairs += 1,
            Ok(false) => {}
            Err(e) => {
                failure = Some((index, e.at_frame(index)));
                break;
            }
        }
    }
    let flushed = writer.flush();

    let manifest = RunManifest {
        status: if failure.is_some() { "failed" } else { "ok" }.into(),
        source: describe(&source),
        width,
        height,
        frames_read,
        pairs_processed: pairs,
        failed_at_frame: failure.as_ref().map(|(i, _)| *i),
        error: failure.as_ref().map(|(_, e)| e.to_string()),
        files: writer.files.clone(),
        config: config.clone(),
    };
    let manifest_path = write_manifest(out_dir, &manifest)?;

    if let Some((_, e)) = failure {
        return Err(e);
    }
    flushed?;
    Ok(ProcessSummary {
        pairs,
        predictions: out_dir.join("predictions.jsonl"),
        manifest: manifest_path,
    })
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads `predictions.jsonl`.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
