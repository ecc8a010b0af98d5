//! Focus-of-expansion estimation from a motion field.
//!
//! Every sampled flow vector defines a line through its pixel. The focus is
//! the point minimising the weighted sum of squared perpendicular distances
//! to those lines, solved in closed form from 2x2 normal equations. Scenes
//! with several motion sources are split into clusters first; each cluster
//! yields a candidate, and the candidate whose neighbourhood the most lines
//! pass through wins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::optical_flow::FlowField;
use crate::par;

/// Rays used to rank consensus hypotheses.
const HYPOTHESIS_SAMPLE: usize = 2048;

/// Which field the rays are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldSource {
    /// Flow with the fitted camera motion removed.
    #[default]
    Compensated,
    /// Flow as measured.
    Raw,
    /// The camera-motion displacement alone.
    Ego,
}

impl std::str::FromStr for FieldSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compensated" => Ok(Self::Compensated),
            "raw" => Ok(Self::Raw),
            "ego" => Ok(Self::Ego),
            other => Err(Error::Config(format!("unknown field source `{other}`"))),
        }
    }
}

/// How rays are split into candidate groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    /// Greedy consensus: repeatedly take the lines through the best
    /// pairwise-intersection hypothesis among the rays not yet claimed.
    #[default]
    Consensus,
    /// k-means on ray direction embedded on the unit circle.
    Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocusParams {
    pub clusters: usize,
    /// Minimum flow magnitude (px/frame) for a pixel to become a ray.
    pub magnitude_threshold: f64,
    pub stride: usize,
    /// Distance (px) within which a ray's line counts as passing a point.
    pub inlier_radius: f64,
    pub field_source: FieldSource,
    pub cluster_method: ClusterMethod,
    /// Pairwise-intersection hypotheses drawn per consensus cluster.
    pub hypotheses: usize,
    pub seed: u64,
}

impl Default for FocusParams {
    fn default() -> Self {
        Self {
            clusters: 3,
            magnitude_threshold: 0.5,
            stride: 4,
            inlier_radius: 10.0,
            field_source: FieldSource::Compensated,
            cluster_method: ClusterMethod::Consensus,
            hypotheses: 64,
            seed: 0,
        }
    }
}

impl FocusParams {
    pub fn validate(&self) -> Result<()> {
        if self.clusters < 1 {
            return Err(Error::InvalidParams("clusters must be >= 1".into()));
        }
        if self.stride < 1 {
            return Err(Error::InvalidParams("focus stride must be >= 1".into()));
        }
        if !(self.magnitude_threshold >= 0.0) {
            return Err(Error::InvalidParams("magnitude threshold must be >= 0".into()));
        }
        if !(self.inlier_radius > 0.0) {
            return Err(Error::InvalidParams("inlier radius must be > 0".into()));
        }
        if self.hypotheses < 1 {
            return Err(Error::InvalidParams("hypotheses must be >= 1".into()));
        }
        Ok(())
    }
}

/// A line through `base` along unit `dir`, weighted by flow magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionRay {
    pub base: Vec2,
    pub dir: Vec2,
    pub weight: f64,
}

impl MotionRay {
    /// Ray through `base` along `v`; `None` for a zero vector.
    pub fn from_vector(base: Vec2, v: Vec2) -> Option<Self> {
        let m = v.norm();
        (m > 0.0 && m.is_finite()).then(|| Self {
            base,
            dir: v * (1.0 / m),
            weight: m,
        })
    }

    /// Perpendicular distance from `p` to the ray's line.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.dir.cross(p - self.base).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusEstimate {
    pub point: Vec2,
    /// Rays (over all rays) whose line passes within the inlier radius.
    pub score: usize,
    /// Mean squared point-to-line distance over the cluster, px².
    pub mean_residual: f64,
    pub cluster_id: usize,
    /// Rays in the cluster the point was solved from.
    pub cluster_size: usize,
    pub low_confidence: bool,
}

/// One ray per sampled pixel whose vector is at least `threshold` long.
pub fn extract_rays(field: &FlowField, threshold: f64, stride: usize) -> Vec<MotionRay> {
    let stride = stride.max(1);
    let mut rays = Vec::new();
    for y in (0..field.height()).step_by(stride) {
        for x in (0..field.width()).step_by(stride) {
            let [vx, vy] = field.get(x, y);
            let v = Vec2::new(vx as f64, vy as f64);
            if v.norm() >= threshold {
                if let Some(r) = MotionRay::from_vector(Vec2::new(x as f64, y as f64), v) {
                    rays.push(r);
                }
            }
        }
    }
    rays
}

/// Closed-form minimiser of `Σ wᵢ·dist(c, lineᵢ)²`: solves
/// `Σ wᵢ(I − dᵢdᵢᵀ)·c = Σ wᵢ(I − dᵢdᵢᵀ)·pᵢ`. Returns the point and the
/// unweighted mean squared distance at it.
pub fn solve_convergence(rays: &[MotionRay]) -> Result<(Vec2, f64)> {
    if rays.len() < 2 {
        return Err(Error::NoConvergence(format!(
            "{} ray(s); need at least 2",
            rays.len()
        )));
    }
    // Work relative to the base centroid so large coordinates do not cost
    // precision.
    let origin = rays.iter().fold(Vec2::ZERO, |a, r| a + r.base) * (1.0 / rays.len() as f64);
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in rays {
        let (dx, dy, w) = (r.dir.x, r.dir.y, r.weight);
        let p = r.base - origin;
        let (m11, m12, m22) = (w * (1.0 - dx * dx), -w * dx * dy, w * (1.0 - dy * dy));
        a11 += m11;
        a12 += m12;
        a22 += m22;
        b1 += m11 * p.x + m12 * p.y;
        b2 += m12 * p.x + m22 * p.y;
    }
    let det = a11 * a22 - a12 * a12;
    let trace = a11 + a22;
    if !(det > 1e-10 * trace * trace) {
        return Err(Error::NoConvergence("ray directions are (nearly) parallel".into()));
    }
    let c = origin + Vec2::new((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det);
    let residual = rays.iter().map(|r| r.distance_to(c).powi(2)).sum::<f64>() / rays.len() as f64;
    Ok((c, residual))
}

/// Number of rays whose line passes within `radius` of `p`.
pub fn inlier_count(p: Vec2, rays: &[MotionRay], radius: f64) -> usize {
    rays.iter().filter(|r| r.distance_to(p) <= radius).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub candidates: Vec<FocusEstimate>,
    pub selected: FocusEstimate,
}

/// Splits rays into up to `params.clusters` groups, solves each for a
/// candidate focus, scores candidates by inlier count over all rays and
/// selects the best (ties: lower residual, then lower cluster id).
pub fn cluster_and_score(rays: &[MotionRay], params: &FocusParams) -> Result<ClusterResult> {
    params.validate()?;
    if rays.is_empty() {
        return Err(Error::NoConvergence("no rays".into()));
    }
    let groups = match params.cluster_method {
        ClusterMethod::Consensus => consensus_clusters(rays, params),
        ClusterMethod::Direction => direction_clusters(rays, params.clusters, params.seed),
    };
    let solved = par::map_range(groups.len(), |k| {
        let members: Vec<MotionRay> = groups[k].iter().map(|&i| rays[i]).collect();
        solve_convergence(&members).ok().map(|(point, mean_residual)| FocusEstimate {
            point,
            score: inlier_count(point, rays, params.inlier_radius),
            mean_residual,
            cluster_id: k,
            cluster_size: members.len(),
            low_confidence: false,
        })
    });
    let candidates: Vec<FocusEstimate> = solved.into_iter().flatten().collect();
    let selected = candidates
        .iter()
        .min_by(|a, b| {
            b.score
                .cmp(&a.score)
                .then(a.mean_residual.total_cmp(&b.mean_residual))
                .then(a.cluster_id.cmp(&b.cluster_id))
        })
        .cloned()
        .ok_or_else(|| Error::NoConvergence("every cluster is degenerate".into()))?;
    Ok(ClusterResult {
        candidates,
        selected,
    })
}

fn line_intersection(a: &MotionRay, b: &MotionRay) -> Option<Vec2> {
    let denom = a.dir.cross(b.dir);
    if denom.abs() < 1e-3 {
        return None;
    }
    let s = (b.base - a.base).cross(b.dir) / denom;
    let p = a.base + a.dir * s;
    p.is_finite().then_some(p)
}

fn consensus_clusters(rays: &[MotionRay], params: &FocusParams) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut remaining: Vec<usize> = (0..rays.len()).collect();
    let mut clusters = Vec::new();
    for _ in 0..params.clusters {
        if remaining.len() < 2 {
            break;
        }
        let mut hyps = Vec::with_capacity(params.hypotheses);
        for _ in 0..params.hypotheses * 4 {
            if hyps.len() == params.hypotheses {
                break;
            }
            let i = remaining[rng.random_range(0..remaining.len())];
            let j = remaining[rng.random_range(0..remaining.len())];
            if i != j {
                if let Some(p) = line_intersection(&rays[i], &rays[j]) {
                    hyps.push(p);
                }
            }
        }
        if hyps.is_empty() {
            break;
        }
        let step = remaining.len().div_ceil(HYPOTHESIS_SAMPLE);
        let sample: Vec<MotionRay> = remaining.iter().step_by(step).map(|&i| rays[i]).collect();
        let counts = par::map_range(hyps.len(), |h| {
            inlier_count(hyps[h], &sample, params.inlier_radius)
        });
        let best = (0..hyps.len())
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("non-empty");
        let hyp = hyps[best];
        let (members, rest): (Vec<usize>, Vec<usize>) = remaining
            .iter()
            .partition(|&&i| rays[i].distance_to(hyp) <= params.inlier_radius);
        if members.len() < 2 {
            break;
        }
        clusters.push(members);
        remaining = rest;
    }
    clusters
}

/// Seeded k-means++ then Lloyd iterations on `(cos θ, sin θ)`.
fn direction_clusters(rays: &[MotionRay], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let pts: Vec<Vec2> = rays.iter().map(|r| r.dir).collect();
    let k = k.min(pts.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![pts[rng.random_range(0..pts.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = pts
            .iter()
            .map(|p| centers.iter().map(|c| (*p - *c).norm_sq()).fold(f64::MAX, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = pts.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        centers.push(pts[pick]);
    }
    let mut assign = vec![0usize; pts.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let best = (0..centers.len())
                .min_by(|&a, &b| (*p - centers[a]).norm_sq().total_cmp(&(*p - centers[b]).norm_sq()))
                .unwrap_or(0);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![(Vec2::ZERO, 0usize); centers.len()];
        for (i, p) in pts.iter().enumerate() {
            sums[assign[i]].0 += *p;
            sums[assign[i]].1 += 1;
        }
        for (c, (s, n)) in centers.iter_mut().zip(sums) {
            if n > 0 {
                *c = s * (1.0 / n as f64);
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups = vec![Vec::new(); centers.len()];
    for (i, a) in assign.into_iter().enumerate() {
        groups[a].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// Clamps a focus into the frame rectangle grown by half its size per side,
/// flagging it low-confidence when that changes it.
pub fn clamp_to_frame(mut est: FocusEstimate, width: usize, height: usize) -> FocusEstimate {
    let (w, h) = (width as f64, height as f64);
    let clamped = Vec2::new(
        est.point.x.clamp(-0.5 * w, 1.5 * w),
        est.point.y.clamp(-0.5 * h, 1.5 * h),
    );
    if clamped != est.point {
        est.point = clamped;
        est.low_confidence = true;
    }
    est
}

/// Carries the last good focus forward when a frame fails to converge.
#[derive(Debug, Clone, Default)]
pub struct FocusFallback {
    previous: Option<Vec2>,
}

impl FocusFallback {
    pub fn resolve(
        &mut self,
        result: Result<ClusterResult>,
        width: usize,
        height: usize,
    ) -> (FocusEstimate, Vec<FocusEstimate>) {
        match result {
            Ok(r) => {
                let selected = clamp_to_frame(r.selected, width, height);
                self.previous = Some(selected.point);
                (selected, r.candidates)
            }
            Err(_) => {
                let (point, low_confidence) = match self.previous {
                    Some(p) => (p, false),
                    None => (Vec2::new(width as f64 / 2.0, height as f64 / 2.0), true),
                };
                let est = FocusEstimate {
                    point,
                    score: 0,
                    mean_residual: 0.0,
                    cluster_id: 0,
                    cluster_size: 0,
                    low_confidence,
                };
                (est, Vec::new())
            }
        }
    }
}
