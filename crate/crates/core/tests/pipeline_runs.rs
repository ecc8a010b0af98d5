use std::path::Path;

use motor_focus::config::PipelineConfig;
use motor_focus::eval;
use motor_focus::frame_io::{self, SequenceSource};
use motor_focus::pipeline::{self, RunManifest};
use motor_focus::synth::{self, MotionStep, RadialMotion, SynthSpec};
use motor_focus::Error;

fn clip(width: usize, height: usize, frames: usize) -> SynthSpec {
    SynthSpec {
        width,
        height,
        frame_count: frames,
        texture_seed: 21,
        texture_sigma: 1.5,
        motion: vec![MotionStep {
            theta_deg: 0.3,
            tx: 1.0,
            radial: Some(RadialMotion { foe: [width as f64 / 2.0, height as f64 / 2.0], rate: 0.02 }),
            ..Default::default()
        }],
    }
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn ten_frames_give_nine_records_and_overlays() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    for name in ["overlay", "flow", "eps", "diag", "panel"] {
        cfg.output.enable(name).unwrap();
    }
    let summary = pipeline::process(&SequenceSource::synthetic(clip(96, 80, 10)), &cfg, dir.path()).unwrap();
    assert_eq!(summary.pairs, 9);
    let preds = pipeline::read_predictions(&summary.predictions).unwrap();
    assert_eq!(preds.iter().map(|p| p.frame).collect::<Vec<_>>(), (1..10).collect::<Vec<_>>());
    for i in 1..10 {
        for rel in [
            format!("overlay/{i:06}.png"),
            format!("flow/{i:06}_raw.png"),
            format!("flow/{i:06}_compensated.png"),
            format!("eps/{i:06}.png"),
            format!("panel/{i:06}.png"),
        ] {
            assert!(dir.path().join(&rel).is_file(), "{rel}");
        }
    }
    assert_eq!(std::fs::read_dir(dir.path().join("overlay")).unwrap().count(), 9);
    let diag = std::fs::read_to_string(dir.path().join("diag.jsonl")).unwrap();
    assert_eq!(diag.lines().count(), 9);
    let m = manifest(dir.path());
    assert_eq!((m.status.as_str(), m.pairs_processed, m.failed_at_frame), ("ok", 9, None));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = PipelineConfig::default();
    cfg.focus.clusters = 2;
    cfg.aggregation.window = 4;
    let src = SequenceSource::synthetic(clip(80, 64, 5));
    pipeline::process(&src, &cfg, a.path()).unwrap();

    let from_toml = PipelineConfig::load(&a.path().join("config.toml")).unwrap();
    let from_manifest = PipelineConfig::load(&a.path().join("manifest.json")).unwrap();
    assert_eq!(from_toml, cfg);
    assert_eq!(from_manifest, cfg);
    pipeline::process(&src, &from_manifest, b.path()).unwrap();
    assert_eq!(
        std::fs::read(a.path().join("predictions.jsonl")).unwrap(),
        std::fs::read(b.path().join("predictions.jsonl")).unwrap()
    );
}

#[test]
fn failure_keeps_partial_output_and_marks_the_frame() {
    let src_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let seq = synth::generate_sequence(&clip(64, 48, 5)).unwrap();
    synth::emit_to_directory(&seq, src_dir.path()).unwrap();
    // Header intact, pixel data cut short: opening succeeds, decoding fails.
    let victim = src_dir.path().join("0003.png");
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();

    let err = pipeline::process(
        &SequenceSource::image_directory(src_dir.path()),
        &PipelineConfig::default(),
        out.path(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::AtFrame { index: 3, .. }), "{err}");
    let m = manifest(out.path());
    assert_eq!(m.status, "failed");
    assert_eq!(m.failed_at_frame, Some(3));
    assert_eq!(m.pairs_processed, 2);
    assert_eq!(pipeline::read_predictions(&out.path().join("predictions.jsonl")).unwrap().len(), 2);
}

#[test]
fn unreadable_header_fails_before_processing() {
    let src_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let seq = synth::generate_sequence(&clip(64, 48, 4)).unwrap();
    synth::emit_to_directory(&seq, src_dir.path()).unwrap();
    std::fs::write(src_dir.path().join("0002.png"), b"not a png").unwrap();

    let src = SequenceSource::image_directory(src_dir.path());
    assert!(frame_io::directory_has_mixed_sizes(src_dir.path()).is_err());
    let err = pipeline::process(&src, &PipelineConfig::default(), out.path()).unwrap_err();
    assert!(matches!(err, Error::AtFrame { index: 2, .. }), "{err}");
    let m = manifest(out.path());
    assert_eq!((m.status.as_str(), m.failed_at_frame, m.pairs_processed), ("failed", Some(2), 0));
}

#[test]
fn mixed_sizes_need_a_processing_size() {
    let dir = tempfile::tempdir().unwrap();
    for (i, (w, h)) in [(64u32, 48u32), (64, 48), (80, 60)].into_iter().enumerate() {
        image::GrayImage::from_pixel(w, h, image::Luma([(i * 40) as u8]))
            .save(dir.path().join(format!("{i}.png")))
            .unwrap();
    }
    let src = SequenceSource::image_directory(dir.path());
    assert!(frame_io::directory_has_mixed_sizes(dir.path()).unwrap());
    assert!(frame_io::open_sequence(&src).is_err());
    let stream = frame_io::open_sequence(&src.clone().with_target_size(Some((32, 32)))).unwrap();
    assert_eq!(stream.dims(), (32, 32));
    assert_eq!(stream.count(), 3);
}

#[test]
fn bench_reports_correspondence_counts() {
    let src = SequenceSource::synthetic(clip(512, 512, 3));
    let r = eval::bench(&PipelineConfig::default(), &src, 0, 1, 1).unwrap();
    assert_eq!(r.correspondences, 262_144);
    assert_eq!(r.frames_timed, 1);
    assert_eq!(r.flow.median_ms, r.flow.p95_ms);

    let cfg = PipelineConfig { stride: 4, ..Default::default() };
    assert_eq!(eval::bench(&cfg, &src, 0, 1, 1).unwrap().correspondences, 16_384);

    match eval::bench(&PipelineConfig::default(), &src, 3, 1, 1) {
        Err(Error::InsufficientFrames { needed: 5, available: 3 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn bench_is_insensitive_to_warmup() {
    let src = SequenceSource::synthetic(clip(192, 160, 20));
    let cfg = PipelineConfig::default();
    // Median over a few repeats so one noisy run cannot decide the check.
    let total = |warmup: usize| {
        let mut runs: Vec<f64> = (0..3)
            .map(|_| eval::bench(&cfg, &src, warmup, 8, 1).unwrap().total.median_ms)
            .collect();
        runs.sort_by(f64::total_cmp);
        runs[1]
    };
    let (a, b) = (total(1), total(8));
    let drift = (a - b).abs() / a.min(b);
    assert!(drift < 0.2, "medians {a:.2} ms vs {b:.2} ms");
}
