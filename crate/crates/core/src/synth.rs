//! Synthetic sequences and ray fields with exact ground truth.
//!
//! Frame 0 is blurred seeded noise. Every later frame is its predecessor
//! warped by the scripted motion through inverse mapping with bilinear
//! sampling, so the analytic forward flow is known at every pixel.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ego_motion::RigidTransform;
use crate::error::{Error, Result};
use crate::focus::MotionRay;
use crate::frame_io::{self, Frame};
use crate::geom::Vec2;
use crate::imgproc;
use crate::optical_flow::FlowField;
use crate::par;

/// Grid spacing of generated ray fields.
pub const RAY_GRID_STRIDE: usize = 8;
/// Flow magnitude per pixel of distance from the focus in ray fields.
pub const RAY_RATE: f64 = 0.02;

fn default_texture_sigma() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub texture_seed: u64,
    #[serde(default = "default_texture_sigma")]
    pub texture_sigma: f64,
    /// One step per transition, or a single step applied to all of them.
    #[serde(default)]
    pub motion: Vec<MotionStep>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionStep {
    /// Rotation about the image origin, degrees.
    pub theta_deg: f64,
    pub tx: f64,
    pub ty: f64,
    pub radial: Option<RadialMotion>,
    pub patch: Option<PatchMotion>,
}

/// Expansion `p ↦ foe + (1 + rate)(p − foe)` applied after the rigid part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialMotion {
    pub foe: [f64; 2],
    pub rate: f64,
}

/// A rectangle `[x, y, w, h]` of the source frame that moves by an extra
/// displacement on top of the global motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchMotion {
    pub rect: [f64; 4],
    pub extra: [f64; 2],
}

impl PatchMotion {
    pub fn contains(&self, p: Vec2) -> bool {
        let [x, y, w, h] = self.rect;
        p.x >= x && p.x < x + w && p.y >= y && p.y < y + h
    }
}

impl MotionStep {
    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            tx,
            ty,
            ..Default::default()
        }
    }

    pub fn rigid(&self) -> RigidTransform {
        RigidTransform::from_angle(self.theta_deg.to_radians(), Vec2::new(self.tx, self.ty))
    }

    /// Global forward map (patch excluded).
    pub fn forward(&self, p: Vec2) -> Vec2 {
        let q = self.rigid().apply(p);
        match &self.radial {
            Some(r) => {
                let foe = Vec2::new(r.foe[0], r.foe[1]);
                foe + (q - foe) * (1.0 + r.rate)
            }
            None => q,
        }
    }

    fn inverse(&self, q: Vec2) -> Vec2 {
        let q = match &self.radial {
            Some(r) => {
                let foe = Vec2::new(r.foe[0], r.foe[1]);
                foe + (q - foe) * (1.0 / (1.0 + r.rate))
            }
            None => q,
        };
        (q - Vec2::new(self.tx, self.ty)).rotated(-self.theta_deg.to_radians())
    }

    /// Exact displacement of source pixel `p`.
    pub fn displacement(&self, p: Vec2) -> Vec2 {
        let mut d = self.forward(p) - p;
        if let Some(patch) = &self.patch {
            if patch.contains(p) {
                d += Vec2::new(patch.extra[0], patch.extra[1]);
            }
        }
        d
    }

    fn max_displacement(&self, width: usize, height: usize) -> f64 {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        let corners = [Vec2::ZERO, Vec2::new(w, 0.0), Vec2::new(0.0, h), Vec2::new(w, h)];
        let global = corners
            .iter()
            .map(|&c| (self.forward(c) - c).norm())
            .fold(0.0, f64::max);
        let patch = self.patch.as_ref().map_or(0.0, |p| {
            let extra = Vec2::new(p.extra[0], p.extra[1]);
            let [x, y, pw, ph] = p.rect;
            [Vec2::new(x, y), Vec2::new(x + pw, y), Vec2::new(x, y + ph), Vec2::new(x + pw, y + ph)]
                .iter()
                .map(|&c| (self.forward(c) - c + extra).norm())
                .fold(0.0, f64::max)
        });
        global.max(patch)
    }
}

impl SynthSpec {
    /// Step driving the transition into frame `to` (1-based).
    pub fn step_for(&self, to: usize) -> MotionStep {
        match self.motion.len() {
            0 => MotionStep::default(),
            1 => self.motion[0].clone(),
            _ => self.motion[to - 1].clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.width < frame_io::MIN_FRAME_SIDE || self.height < frame_io::MIN_FRAME_SIDE {
            return bad(format!("size {}x{} below minimum", self.width, self.height));
        }
        if self.frame_count < 1 {
            return bad("frame_count must be >= 1".into());
        }
        if !(self.texture_sigma > 0.0) {
            return bad("texture_sigma must be > 0".into());
        }
        let transitions = self.frame_count - 1;
        if self.motion.len() > 1 && self.motion.len() != transitions {
            return bad(format!(
                "motion has {} steps; expected 1 or {transitions}",
                self.motion.len()
            ));
        }
        let bound = 0.25 * self.width.min(self.height) as f64;
        for to in 1..self.frame_count {
            let step = self.step_for(to);
            let d = step.max_displacement(self.width, self.height);
            if !(d <= bound) {
                return bad(format!(
                    "frame {to}: displacement {d:.2} px exceeds bound {bound:.2} px"
                ));
            }
            if let Some(r) = &step.radial {
                if !(r.rate > -1.0) {
                    return bad(format!("frame {to}: radial rate {} must be > -1", r.rate));
                }
            }
        }
        Ok(())
    }
}

/// Exact motion from frame `from` to frame `to = from + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTruth {
    pub from: usize,
    pub to: usize,
    pub flow: FlowField,
    pub transform: RigidTransform,
    pub foe: Option<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<Frame>,
    pub truths: Vec<PairTruth>,
}

/// Seeded noise blurred by `sigma`, stretched to `[0, 1]`.
pub fn texture(width: usize, height: usize, seed: u64, sigma: f64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f32> = (0..width * height).map(|_| rng.random::<f32>()).collect();
    let blurred = imgproc::gaussian_blur(&noise, width, height, sigma);
    let (lo, hi) = blurred
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(f32::EPSILON);
    blurred
        .iter()
        .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect()
}

/// Warps `src` by `step`: each output pixel samples its pre-image.
pub fn warp(src: &[f32], width: usize, height: usize, step: &MotionStep) -> Vec<f32> {
    let mut out = vec![0f32; width * height];
    par::for_each_row(&mut out, width, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let q = Vec2::new(x as f64, y as f64);
            let mut p = step.inverse(q);
            if let Some(patch) = &step.patch {
                let pp = step.inverse(q - Vec2::new(patch.extra[0], patch.extra[1]));
                if patch.contains(pp) {
                    p = pp;
                }
            }
            *o = imgproc::sample_bilinear(src, width, height, p.x, p.y);
        }
    });
    out
}

pub fn truth_flow(step: &MotionStep, width: usize, height: usize) -> FlowField {
    FlowField::from_fn(width, height, |x, y| {
        let d = step.displacement(Vec2::new(x as f64, y as f64));
        [d.x as f32, d.y as f32]
    })
}

pub fn generate_sequence(spec: &SynthSpec) -> Result<SynthSequence> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut data = texture(w, h, spec.texture_seed, spec.texture_sigma);
    let mut frames = vec![Frame::new(w, h, 0, data.clone())?];
    let mut truths = Vec::with_capacity(spec.frame_count.saturating_sub(1));
    for to in 1..spec.frame_count {
        let step = spec.step_for(to);
        data = warp(&data, w, h, &step);
        frames.push(Frame::new(w, h, to, data.clone())?);
        truths.push(PairTruth {
            from: to - 1,
            to,
            flow: truth_flow(&step, w, h),
            transform: step.rigid(),
            foe: step.radial.as_ref().map(|r| Vec2::new(r.foe[0], r.foe[1])),
        });
    }
    Ok(SynthSequence { frames, truths })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthRecord {
    pub frame: usize,
    pub from: usize,
    pub transform: [f64; 6],
    pub foe: Option<[f64; 2]>,
    pub flow: String,
}

/// Writes frames as `NNNN.png` (16-bit), flows as `flow/NNNN.flo` and one
/// `truth.jsonl` record per transition keyed by the later frame.
pub fn emit_to_directory(seq: &SynthSequence, dir: &Path) -> Result<()> {
    let flow_dir = dir.join("flow");
    std::fs::create_dir_all(&flow_dir).map_err(|e| Error::io(&flow_dir, e))?;
    for f in &seq.frames {
        frame_io::write_frame_png16(f, &dir.join(format!("{:04}.png", f.index())))?;
    }
    let truth_path = dir.join("truth.jsonl");
    let mut out = std::fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
    for t in &seq.truths {
        let rel = format!("flow/{:04}.flo", t.to);
        t.flow.write(&dir.join(&rel))?;
        let rec = TruthRecord {
            frame: t.to,
            from: t.from,
            transform: t.transform.to_six(),
            foe: t.foe.map(|p| [p.x, p.y]),
            flow: rel,
        };
        let line = serde_json::to_string(&rec).expect("truth record serialises");
        writeln!(out, "{line}").map_err(|e| Error::io(&truth_path, e))?;
    }
    Ok(())
}

/// Rays with a known focus, plus which of them were scrambled.
#[derive(Debug, Clone, PartialEq)]
pub struct RayField {
    pub rays: Vec<MotionRay>,
    pub outlier: Vec<bool>,
}

fn grid_points(width: usize, height: usize) -> Vec<Vec2> {
    (0..height)
        .step_by(RAY_GRID_STRIDE)
        .flat_map(|y| {
            (0..width)
                .step_by(RAY_GRID_STRIDE)
                .map(move |x| Vec2::new(x as f64, y as f64))
        })
        .collect()
}

fn radial_ray(p: Vec2, foe: Vec2) -> Option<MotionRay> {
    let d = p - foe;
    (d.norm() > 1e-9).then(|| MotionRay::from_vector(p, d * RAY_RATE)).flatten()
}

/// Radial rays pointing away from `foe` on a grid; a seeded
/// `⌊outlier_fraction·N⌋` of them get uniform-random directions.
pub fn generate_ray_field(
    foe: Vec2,
    width: usize,
    height: usize,
    outlier_fraction: f64,
    seed: u64,
) -> Result<RayField> {
    if !(0.0..1.0).contains(&outlier_fraction) {
        return Err(Error::InvalidInput(format!(
            "outlier fraction {outlier_fraction} not in [0, 1)"
        )));
    }
    let mut rays: Vec<MotionRay> = grid_points(width, height)
        .into_iter()
        .filter_map(|p| radial_ray(p, foe))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..rays.len()).collect();
    order.shuffle(&mut rng);
    let n_out = (outlier_fraction * rays.len() as f64).floor() as usize;
    let mut outlier = vec![false; rays.len()];
    for &i in &order[..n_out] {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        rays[i].dir = Vec2::new(a.cos(), a.sin());
        outlier[i] = true;
    }
    Ok(RayField { rays, outlier })
}

/// Superimposes radial fields: each grid point is randomly given to one
/// source so that source `k` owns `⌊fraction_k·N⌋` points (the last source
/// takes the remainder).
pub fn generate_mixture_ray_field(
    sources: &[(Vec2, f64)],
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Vec<(MotionRay, usize)>> {
    if sources.is_empty() {
        return Err(Error::InvalidInput("no sources".into()));
    }
    let pts = grid_points(width, height);
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut owner = vec![sources.len() - 1; pts.len()];
    let mut start = 0;
    for (k, (_, frac)) in sources.iter().enumerate().take(sources.len() - 1) {
        let n = (frac * pts.len() as f64).floor() as usize;
        for &i in &order[start..(start + n).min(pts.len())] {
            owner[i] = k;
        }
        start += n;
    }
    Ok(pts
        .into_iter()
        .zip(owner)
        .filter_map(|(p, k)| radial_ray(p, sources[k].0).map(|r| (r, k)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(step: MotionStep, frames: usize) -> SynthSpec {
        SynthSpec {
            width: 64,
            height: 48,
            frame_count: frames,
            texture_seed: 3,
            texture_sigma: 1.5,
            motion: vec![step],
        }
    }

    #[test]
    fn identity_script_repeats_frame() {
        let seq = generate_sequence(&spec(MotionStep::default(), 4)).unwrap();
        assert_eq!(seq.frames.len(), 4);
        for f in &seq.frames[1..] {
            assert_eq!(f.data(), seq.frames[0].data());
        }
        assert!(seq.truths.iter().all(|t| t.flow.max_abs_component() == 0.0));
    }

    #[test]
    fn translation_truth() {
        let seq = generate_sequence(&spec(MotionStep::translation(3.0, -2.0), 2)).unwrap();
        let t = &seq.truths[0];
        assert!(t.flow.vectors().iter().all(|v| *v == [3.0, -2.0]));
        assert_eq!(t.transform.r, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(t.transform.t, Vec2::new(3.0, -2.0));
        assert_eq!(t.foe, None);
    }

    #[test]
    fn radial_truth() {
        let step = MotionStep {
            radial: Some(RadialMotion { foe: [32.0, 24.0], rate: 0.02 }),
            ..Default::default()
        };
        let seq = generate_sequence(&spec(step, 2)).unwrap();
        let t = &seq.truths[0];
        assert_eq!(t.foe, Some(Vec2::new(32.0, 24.0)));
        let v = t.flow.get(10, 40);
        assert!((v[0] - 0.02 * (10.0 - 32.0)).abs() < 1e-6);
        assert!((v[1] - 0.02 * (40.0 - 24.0)).abs() < 1e-6);
    }

    #[test]
    fn displacement_bound_names_frame() {
        let mut s = spec(MotionStep::translation(1.0, 0.0), 4);
        s.motion = vec![
            MotionStep::translation(1.0, 0.0),
            MotionStep::translation(1.0, 0.0),
            MotionStep::translation(30.0, 0.0),
        ];
        let err = generate_sequence(&s).unwrap_err().to_string();
        assert!(err.contains("frame 3"), "{err}");
        s.motion.pop();
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("expected 1 or 3"), "{err}");
    }

    #[test]
    fn reproducible() {
        let s = spec(MotionStep { theta_deg: 1.0, tx: 1.0, ty: 0.5, ..Default::default() }, 3);
        assert_eq!(generate_sequence(&s).unwrap(), generate_sequence(&s).unwrap());
    }

    #[test]
    fn ray_field_examples() {
        let foe = Vec2::new(100.0, 80.0);
        let clean = generate_ray_field(foe, 200, 160, 0.0, 1).unwrap();
        assert!(clean.rays.iter().all(|r| r.distance_to(foe) < 1e-9));

        let centred = generate_ray_field(Vec2::new(96.0, 96.0), 200, 200, 0.0, 1).unwrap();
        for r in &centred.rays {
            let mirror = Vec2::new(192.0, 192.0) - r.base;
            if let Some(m) = centred.rays.iter().find(|o| o.base == mirror) {
                assert!((m.dir + r.dir).norm() < 1e-12);
            }
        }

        let a = generate_ray_field(foe, 200, 160, 0.2, 9).unwrap();
        let b = generate_ray_field(foe, 200, 160, 0.2, 9).unwrap();
        assert_eq!(a, b);
        let n_out = a.outlier.iter().filter(|&&o| o).count();
        assert_eq!(n_out, (0.2 * a.rays.len() as f64).floor() as usize);
        assert!(generate_ray_field(foe, 200, 160, 1.0, 9).is_err());
    }

    #[test]
    fn mixture_fractions() {
        let rays = generate_mixture_ray_field(
            &[(Vec2::new(10.0, 10.0), 0.7), (Vec2::new(90.0, 90.0), 0.3)],
            160,
            160,
            5,
        )
        .unwrap();
        let n0 = rays.iter().filter(|(_, k)| *k == 0).count();
        let total = (160 / RAY_GRID_STRIDE) * (160 / RAY_GRID_STRIDE);
        assert_eq!(n0, (0.7 * total as f64).floor() as usize);
        for (r, k) in &rays {
            let foe = if *k == 0 { Vec2::new(10.0, 10.0) } else { Vec2::new(90.0, 90.0) };
            assert!(r.distance_to(foe) < 1e-9);
        }
    }

    #[test]
    fn emits_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let seq = generate_sequence(&spec(MotionStep::translation(1.0, 0.0), 3)).unwrap();
        emit_to_directory(&seq, dir.path()).unwrap();
        assert!(dir.path().join("0002.png").exists());
        let truth = std::fs::read_to_string(dir.path().join("truth.jsonl")).unwrap();
        assert_eq!(truth.lines().count(), 2);
        let rec: TruthRecord = serde_json::from_str(truth.lines().next().unwrap()).unwrap();
        assert_eq!(rec.frame, 1);
        let flow = FlowField::read(&dir.path().join(rec.flow)).unwrap();
        assert_eq!(flow, seq.truths[0].flow);
    }
}
