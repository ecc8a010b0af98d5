//! Camera ego-motion from all-pixel flow correspondences.
//!
//! Every sampled pixel `p` of the first frame is a keypoint, matched to
//! `p + f(p)` in the second. The least-squares rigid transform between the
//! two sets comes from the SVD of their centred 2x2 cross-covariance, which
//! is evaluated in closed form. Its induced displacement `ε(p) = R·p + T − p`
//! is then removed from the flow.

use std::ops::Add;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::optical_flow::FlowField;
use crate::par;

const SUM_BLOCK: usize = 8192;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub points: Vec<Vec2>,
}

impl PointSet {
    pub fn new(points: Vec<Vec2>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl From<Vec<Vec2>> for PointSet {
    fn from(points: Vec<Vec2>) -> Self {
        Self { points }
    }
}

/// `p ↦ R·p + T`, with `R` a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub r: [[f64; 2]; 2],
    pub t: Vec2,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        r: [[1.0, 0.0], [0.0, 1.0]],
        t: Vec2::ZERO,
    };

    pub fn from_angle(theta: f64, t: Vec2) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            r: [[c, -s], [s, c]],
            t,
        }
    }

    /// Rotation angle in radians, in (−π, π].
    pub fn angle(&self) -> f64 {
        self.r[1][0].atan2(self.r[0][0])
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            self.r[0][0] * p.x + self.r[0][1] * p.y + self.t.x,
            self.r[1][0] * p.x + self.r[1][1] * p.y + self.t.y,
        )
    }

    /// `RᵀR = I` and `det R = +1`, each within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let [[a, b], [c, d]] = self.r;
        (a * a + c * c - 1.0).abs() <= tol
            && (b * b + d * d - 1.0).abs() <= tol
            && (a * b + c * d).abs() <= tol
            && (a * d - b * c - 1.0).abs() <= tol
    }

    /// `(r00, r01, r10, r11, tx, ty)` as written to diagnostics.
    pub fn to_six(&self) -> [f64; 6] {
        [
            self.r[0][0],
            self.r[0][1],
            self.r[1][0],
            self.r[1][1],
            self.t.x,
            self.t.y,
        ]
    }
}

/// Sample the first-frame grid at `stride` and pair each point with where
/// the flow moves it.
pub fn build_correspondences(flow: &FlowField, stride: usize) -> (PointSet, PointSet) {
    let stride = stride.max(1);
    let (w, h) = flow.dims();
    let n = w.div_ceil(stride) * h.div_ceil(stride);
    let mut p1 = Vec::with_capacity(n);
    let mut p2 = Vec::with_capacity(n);
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            let [dx, dy] = flow.get(x, y);
            let p = Vec2::new(x as f64, y as f64);
            p1.push(p);
            p2.push(Vec2::new(p.x + dx as f64, p.y + dy as f64));
        }
    }
    (PointSet::new(p1), PointSet::new(p2))
}

#[derive(Clone, Copy)]
struct Sums<const K: usize>([f64; K]);

impl<const K: usize> Add for Sums<K> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Sums(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

/// Singular value decomposition `M = U·diag(σ)·Vᵀ` of a 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd2 {
    pub u: [[f64; 2]; 2],
    pub sigma: [f64; 2],
    pub vt: [[f64; 2]; 2],
}

fn rot(a: f64) -> [[f64; 2]; 2] {
    let (s, c) = a.sin_cos();
    [[c, -s], [s, c]]
}

pub(crate) fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
}

/// Closed-form 2x2 SVD. Splitting `M` into a similarity part `(E, H)` and an
/// anti-similarity part `(F, G)` gives `M = Rot(φ)·diag(s₁, s₂)·Rot(θ)`;
/// a negative `s₂` is folded into `U` so both singular values are `≥ 0`.
pub fn svd2x2(m: [[f64; 2]; 2]) -> Svd2 {
    let [[a, b], [c, d]] = m;
    let e = 0.5 * (a + d);
    let f = 0.5 * (a - d);
    let g = 0.5 * (c + b);
    let h = 0.5 * (c - b);
    let q = e.hypot(h);
    let r = f.hypot(g);
    let a1 = g.atan2(f);
    let a2 = h.atan2(e);
    let theta = 0.5 * (a2 - a1);
    let phi = 0.5 * (a2 + a1);
    let (s1, s2) = (q + r, q - r);
    let mut u = rot(phi);
    if s2 < 0.0 {
        u[0][1] = -u[0][1];
        u[1][1] = -u[1][1];
    }
    Svd2 {
        u,
        sigma: [s1, s2.abs()],
        vt: rot(theta),
    }
}

/// `R = U·Vᵀ`, or `U·diag(1, −1)·Vᵀ` when that product would be a reflection.
pub fn rotation_from_svd(svd: &Svd2) -> [[f64; 2]; 2] {
    let r = mat_mul(&svd.u, &svd.vt);
    let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
    if det < 0.0 {
        let mut u = svd.u;
        u[0][1] = -u[0][1];
        u[1][1] = -u[1][1];
        mat_mul(&u, &svd.vt)
    } else {
        r
    }
}

/// Least-squares rigid alignment minimising `Σ‖R·p1ᵢ + T − p2ᵢ‖²`.
pub fn fit_rigid(p1: &PointSet, p2: &PointSet) -> Result<RigidTransform> {
    let n = p1.len();
    if n != p2.len() {
        return Err(Error::InvalidInput(format!(
            "point sets differ in size: {n} vs {}",
            p2.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 points, got {n}")));
    }
    let (a, b) = (&p1.points, &p2.points);
    if a.iter().chain(b).any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinates".into()));
    }

    let sums = par::block_sum(n, SUM_BLOCK, Sums([0.0; 4]), |r| {
        let mut s = [0.0; 4];
        for i in r {
            s[0] += a[i].x;
            s[1] += a[i].y;
            s[2] += b[i].x;
            s[3] += b[i].y;
        }
        Sums(s)
    });
    let inv_n = 1.0 / n as f64;
    let mu1 = Vec2::new(sums.0[0] * inv_n, sums.0[1] * inv_n);
    let mu2 = Vec2::new(sums.0[2] * inv_n, sums.0[3] * inv_n);

    // M = Σ q2·q1ᵀ over centred points, plus the spread of each set.
    let cov = par::block_sum(n, SUM_BLOCK, Sums([0.0; 6]), |r| {
        let mut s = [0.0; 6];
        for i in r {
            let q1 = a[i] - mu1;
            let q2 = b[i] - mu2;
            s[0] += q2.x * q1.x;
            s[1] += q2.x * q1.y;
            s[2] += q2.y * q1.x;
            s[3] += q2.y * q1.y;
            s[4] += q1.norm_sq();
            s[5] += q2.norm_sq();
        }
        Sums(s)
    });
    let [m00, m01, m10, m11, spread1, spread2] = cov.0;
    if spread1 == 0.0 || spread2 == 0.0 {
        return Err(Error::DegenerateFit("all points coincide".into()));
    }
    let m = [[m00, m01], [m10, m11]];
    // The rotation is defined by the similarity part of M; if it vanishes
    // every rotation fits equally well.
    let sim = (0.5 * (m00 + m11)).hypot(0.5 * (m10 - m01));
    if sim <= 1e-12 * (spread1 * spread2).sqrt() {
        return Err(Error::DegenerateFit("rotation is unobservable".into()));
    }
    let r = rotation_from_svd(&svd2x2(m));
    let rm = Vec2::new(r[0][0] * mu1.x + r[0][1] * mu1.y, r[1][0] * mu1.x + r[1][1] * mu1.y);
    Ok(RigidTransform { r, t: mu2 - rm })
}

/// Per-pixel displacement attributed to camera motion.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoNoiseField(FlowField);

impl EgoNoiseField {
    pub fn as_flow(&self) -> &FlowField {
        &self.0
    }

    pub fn into_flow(self) -> FlowField {
        self.0
    }
}

/// `ε(p) = (R·p + T) − p` on the grid of `flow`.
pub fn ego_noise(flow: &FlowField, h: &RigidTransform) -> EgoNoiseField {
    let (w, hgt) = flow.dims();
    EgoNoiseField(FlowField::from_fn(w, hgt, |x, y| {
        let p = Vec2::new(x as f64, y as f64);
        let d = h.apply(p) - p;
        [d.x as f32, d.y as f32]
    }))
}

/// `f′ = f − ε`.
pub fn compensate(flow: &FlowField, eps: &EgoNoiseField) -> Result<FlowField> {
    let e = eps.as_flow();
    if flow.dims() != e.dims() {
        return Err(Error::DimensionMismatch {
            expected: flow.dims(),
            found: e.dims(),
        });
    }
    let vectors = flow
        .vectors()
        .iter()
        .zip(e.vectors())
        .map(|(f, d)| [f[0] - d[0], f[1] - d[1]])
        .collect();
    FlowField::new(flow.width(), flow.height(), vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn correspondence_count_and_grid() {
        let (p1, p2) = build_correspondences(&FlowField::zeros(4, 4), 2);
        assert_eq!(p1.len(), 4);
        assert_eq!(
            p1.points,
            vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(2.0, 0.0),
                Vec2::new(0.0, 2.0),
                Vec2::new(2.0, 2.0)
            ]
        );
        assert_eq!(p1, p2);
        let (p1, _) = build_correspondences(&FlowField::zeros(512, 512), 1);
        assert_eq!(p1.len(), 262_144);
        let (p1, _) = build_correspondences(&FlowField::zeros(10, 7), 3);
        assert_eq!(p1.len(), 4 * 3);
    }

    #[test]
    fn identity_fit() {
        let pts: Vec<Vec2> = (0..50)
            .map(|i| Vec2::new((i * 7 % 31) as f64, (i * 13 % 17) as f64))
            .collect();
        let p = PointSet::new(pts);
        let t = fit_rigid(&p, &p).unwrap();
        assert!(t.angle().abs() < 1e-9);
        assert!(t.t.norm() < 1e-9);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let same = PointSet::new(vec![Vec2::new(3.0, 3.0); 10]);
        assert!(matches!(fit_rigid(&same, &same), Err(Error::DegenerateFit(_))));
        let two = PointSet::new(vec![Vec2::ZERO, Vec2::new(1.0, 0.0)]);
        assert!(fit_rigid(&two, &two).is_err());
        let mut nan = PointSet::new(vec![Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]);
        let ok = nan.clone();
        nan.points[1].x = f64::NAN;
        assert!(matches!(fit_rigid(&nan, &ok), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ego_noise_examples() {
        let f = FlowField::zeros(8, 8);
        let e = ego_noise(&f, &RigidTransform::IDENTITY);
        assert!(e.as_flow().vectors().iter().all(|v| *v == [0.0, 0.0]));
        let shift = RigidTransform::from_angle(0.0, Vec2::new(2.0, 0.0));
        let e = ego_noise(&f, &shift);
        assert!(e.as_flow().vectors().iter().all(|v| *v == [2.0, 0.0]));
        let quarter = RigidTransform::from_angle(std::f64::consts::FRAC_PI_2, Vec2::ZERO);
        let v = ego_noise(&f, &quarter).as_flow().get(1, 0);
        assert!((v[0] + 1.0).abs() < 1e-6 && (v[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn compensate_examples() {
        let flow = FlowField::uniform(8, 8, [3.0, 0.0]);
        let eps = ego_noise(&flow, &RigidTransform::from_angle(0.0, Vec2::new(2.0, 0.0)));
        let out = compensate(&flow, &eps).unwrap();
        assert!(out.vectors().iter().all(|v| *v == [1.0, 0.0]));
        let self_eps = EgoNoiseField(flow.clone());
        assert_eq!(compensate(&flow, &self_eps).unwrap(), FlowField::zeros(8, 8));
        let other = ego_noise(&FlowField::zeros(4, 4), &RigidTransform::IDENTITY);
        assert!(compensate(&flow, &other).is_err());
    }

    #[test]
    fn reflection_guard_yields_proper_rotation() {
        let m = [[1.0, 0.0], [0.0, -3.0]];
        let svd = svd2x2(m);
        let r = rotation_from_svd(&svd);
        let t = RigidTransform { r, t: Vec2::ZERO };
        assert!(t.is_proper(1e-12));
    }

    fn reconstruct(s: &Svd2) -> [[f64; 2]; 2] {
        let d = [[s.sigma[0], 0.0], [0.0, s.sigma[1]]];
        mat_mul(&mat_mul(&s.u, &d), &s.vt)
    }

    proptest! {
        #[test]
        fn svd2x2_reconstructs(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3, d in -1e3f64..1e3) {
            let m = [[a, b], [c, d]];
            let s = svd2x2(m);
            let back = reconstruct(&s);
            let scale = 1.0 + a.abs().max(b.abs()).max(c.abs()).max(d.abs());
            for i in 0..2 { for j in 0..2 {
                prop_assert!((back[i][j] - m[i][j]).abs() < 1e-9 * scale);
            }}
            prop_assert!(s.sigma[0] >= s.sigma[1] && s.sigma[1] >= 0.0);
            let [[p, q], [r, w]] = s.u;
            prop_assert!((p * p + r * r - 1.0).abs() < 1e-12);
            prop_assert!((q * q + w * w - 1.0).abs() < 1e-12);
            prop_assert!((p * q + r * w).abs() < 1e-12);
        }

        #[test]
        fn fitted_rotation_is_proper(seed in 0u64..1000, w in 16usize..40, h in 16usize..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let flow = FlowField::from_fn(w, h, |_, _| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
            let (p1, p2) = build_correspondences(&flow, 1);
            let t = fit_rigid(&p1, &p2).unwrap();
            prop_assert!(t.is_proper(1e-6));
        }

        #[test]
        fn compensation_of_exact_rigid_flow_vanishes(theta in -0.2f64..0.2, tx in -10.0f64..10.0, ty in -10.0f64..10.0) {
            let h = RigidTransform::from_angle(theta, Vec2::new(tx, ty));
            let flow = ego_noise(&FlowField::zeros(24, 20), &h).into_flow();
            let (p1, p2) = build_correspondences(&flow, 1);
            let fit = fit_rigid(&p1, &p2).unwrap();
            let resid = compensate(&flow, &ego_noise(&flow, &fit)).unwrap();
            prop_assert!(resid.max_abs_component() < 1e-3);
        }
    }
}
