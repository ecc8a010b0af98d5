use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motor_focus::config::PipelineConfig;
use motor_focus::eval::{self, AnnotationTrack, ClipMetadata};
use motor_focus::focus::FieldSource;
use motor_focus::frame_io::{self, SequenceSource};
use motor_focus::synth::{self, SynthSpec};
use motor_focus::{pipeline, Error, Vec2};

/// Used when a frame directory mixes sizes and nothing else pins one.
const FALLBACK_SIZE: [usize; 2] = [512, 512];

#[derive(Parser)]
#[command(name = "motorfocus", version, about = "Predict where a head-mounted camera is heading")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a sequence and write predictions.
    Process {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predictions against one or more annotation tracks.
    Evaluate {
        /// predictions.jsonl written by `process`.
        #[arg(long)]
        predictions: PathBuf,
        /// Annotation CSV (`frame,x,y`); repeat for several annotators.
        #[arg(long = "annotations")]
        annotations: Vec<PathBuf>,
        /// Clip metadata JSON listing annotation files and frame size.
        #[arg(long)]
        clip: Option<PathBuf>,
        /// Where to write the report JSON (default: metrics.json next to
        /// the predictions).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render a synthetic sequence with ground truth from a spec file.
    Synth {
        /// Spec as TOML or JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Time each pipeline stage.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Report JSON path.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Pairs timed after warm-up.
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Frame directory, YUV4MPEG2 file, or a synth spec (.toml/.json).
    #[arg(long)]
    input: PathBuf,
    /// Pipeline config (TOML), or a run's manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Processing size, e.g. 512x512.
    #[arg(long, value_parser = parse_size)]
    size: Option<[usize; 2]>,
    /// Correspondence stride for the rigid fit.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    /// Aggregation window, frames.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_field_source)]
    field_source: Option<FieldSource>,
    /// Extra outputs: overlay, flow, eps, mask, diag, panel.
    #[arg(long, value_delimiter = ',')]
    emit: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok([num(w)?, num(h)?])
}

fn parse_field_source(s: &str) -> Result<FieldSource, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.size {
            cfg.size = Some(s);
        }
        if let Some(s) = self.stride {
            cfg.stride = s;
        }
        if let Some(k) = self.clusters {
            cfg.focus.clusters = k;
        }
        if let Some(w) = self.window {
            cfg.aggregation.window = w;
        }
        if let Some(f) = self.field_source {
            cfg.focus.field_source = f;
        }
        if let Some(seed) = self.seed {
            cfg.focus.seed = seed;
        }
        for name in &self.emit {
            cfg.output.enable(name.trim())?;
        }
        if cfg.size.is_none() && self.input.is_dir() && frame_io::directory_has_mixed_sizes(&self.input)? {
            cfg.size = Some(FALLBACK_SIZE);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn source(&self) -> Result<SequenceSource, Error> {
        if is_spec_file(&self.input) {
            return Ok(SequenceSource::synthetic(read_spec(&self.input)?));
        }
        SequenceSource::from_path(&self.input)
    }
}

fn is_spec_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("toml") || e.eq_ignore_ascii_case("json"))
}

fn read_spec(path: &Path) -> Result<SynthSpec, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let spec: SynthSpec = if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    spec.validate()?;
    Ok(spec)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serialises") + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn process(run: &RunArgs, output: &Path) -> Result<(), Error> {
    let cfg = run.config()?;
    let summary = pipeline::process(&run.source()?, &cfg, output)?;
    println!("{} pairs -> {}", summary.pairs, summary.predictions.display());
    Ok(())
}

fn evaluate(
    predictions: &Path,
    annotations: &[PathBuf],
    clip: Option<&Path>,
    output: Option<&Path>,
) -> Result<(), Error> {
    let meta = clip.map(ClipMetadata::read).transpose()?.unwrap_or_default();
    let paths: Vec<&PathBuf> = meta.annotations.iter().chain(annotations).collect();
    if paths.is_empty() {
        return Err(Error::InvalidInput("no annotation files given".into()));
    }
    let tracks = paths
        .iter()
        .map(|p| AnnotationTrack::read_csv(p))
        .collect::<Result<Vec<_>, _>>()?;
    if let (Some(w), Some(h)) = (meta.width, meta.height) {
        for t in &tracks {
            t.check_bounds(w, h)?;
        }
    }
    let merged = eval::merge_annotations(&tracks)?;
    let preds: BTreeMap<usize, Vec2> = pipeline::read_predictions(predictions)?
        .into_iter()
        .map(|r| (r.frame, Vec2::new(r.x, r.y)))
        .collect();
    let mut report = eval::score(&preds, &merged.track)?;
    report.dropped = merged.dropped;
    print!("{}", report.to_table());
    let out = match output {
        Some(p) => p.to_path_buf(),
        None => predictions.with_file_name("metrics.json"),
    };
    write_json(&out, &report)
}

fn synth_cmd(spec: &Path, output: &Path) -> Result<(), Error> {
    let spec = read_spec(spec)?;
    let seq = synth::generate_sequence(&spec)?;
    synth::emit_to_directory(&seq, output)?;
    println!("{} frames -> {}", seq.frames.len(), output.display());
    Ok(())
}

fn bench(run: &RunArgs, output: &Path, warmup: usize, frames: usize, workers: usize) -> Result<(), Error> {
    let cfg = run.config()?;
    let report = eval::bench(&cfg, &run.source()?, warmup, frames, workers)?;
    print!("{}", report.to_table());
    write_json(output, &report)
}

/// 2 for bad input or configuration, 3 for pipeline failures, 4 when
/// predictions and annotations share no frame.
fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::NoOverlap => 4,
        Error::DegenerateFit(_)
        | Error::NoConvergence(_)
        | Error::EmptyState
        | Error::DimensionMismatch { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Process { run, output } => process(run, output),
        Command::Evaluate {
            predictions,
            annotations,
            clip,
            output,
        } => evaluate(predictions, annotations, clip.as_deref(), output.as_deref()),
        Command::Synth { spec, output } => synth_cmd(spec, output),
        Command::Bench {
            run,
            output,
            warmup,
            frames,
            workers,
        } => bench(run, output, *warmup, *frames, *workers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
