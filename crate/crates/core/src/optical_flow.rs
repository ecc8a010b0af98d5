//! Dense optical flow by two-frame polynomial expansion (Farnebäck).
//!
//! Each level of a Gaussian pyramid approximates every pixel's neighbourhood
//! by a quadratic `f(p) = pᵀAp + bᵀp + c`. Under brightness constancy a
//! displacement `d` maps `b₁` to `b₂ = b₁ − 2Ad`, so `d` is recovered from a
//! windowed least-squares solve of `A d = Δb`, refined coarse to fine.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::Frame;
use crate::imgproc::{self, clamp_index};
use crate::par;

/// Magic tag at the start of a serialised flow field.
pub const FLOW_MAGIC: [u8; 8] = *b"MFFLOW\0\x01";

/// Coarsest pyramid level side length.
const MIN_LEVEL_SIDE: usize = 32;

/// Regulariser added to the 2x2 determinant (intensities scaled to 0..255).
const DET_EPS: f32 = 1e-3;

/// Rows per band in the vertical box filter.
const BAND_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    /// Ratio between consecutive pyramid levels, in (0, 1).
    pub pyramid_scale: f64,
    /// Number of pyramid levels including full resolution.
    pub levels: usize,
    /// Side of the averaging window for the displacement solve (odd, >= 5).
    pub window_size: usize,
    /// Solver iterations per level.
    pub iterations: usize,
    /// Side of the polynomial expansion neighbourhood (odd).
    pub poly_neighborhood: usize,
    /// Gaussian applicability width of the expansion.
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_scale: 0.5,
            levels: 3,
            window_size: 15,
            iterations: 3,
            poly_neighborhood: 5,
            poly_sigma: 1.2,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad(format!("pyramid_scale {} not in (0, 1)", self.pyramid_scale));
        }
        if self.levels < 1 {
            return bad("levels must be >= 1".into());
        }
        if self.window_size < 5 || self.window_size % 2 == 0 {
            return bad(format!("window_size {} must be odd and >= 5", self.window_size));
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if self.poly_neighborhood < 3 || self.poly_neighborhood % 2 == 0 {
            return bad(format!(
                "poly_neighborhood {} must be odd and >= 3",
                self.poly_neighborhood
            ));
        }
        if !(self.poly_sigma > 0.0 && self.poly_sigma.is_finite()) {
            return bad(format!("poly_sigma {} must be positive", self.poly_sigma));
        }
        Ok(())
    }
}

/// Dense per-pixel displacement `(vx, vy)` in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, vectors: Vec<[f32; 2]>) -> Result<Self> {
        if width == 0 || height == 0 || vectors.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "flow field {width}x{height} with {} vectors",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::InvalidInput("flow field has non-finite vectors".into()));
        }
        Ok(Self {
            width,
            height,
            vectors,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            vectors: vec![[0.0; 2]; width * height],
        }
    }

    pub fn uniform(width: usize, height: usize, v: [f32; 2]) -> Self {
        Self {
            width,
            height,
            vectors: vec![v; width * height],
        }
    }

    /// Builds a field from `f(x, y)`, called in row-major order.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut vectors = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                vectors.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            vectors,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.vectors[y * self.width + x]
    }

    /// Largest absolute component over the field.
    pub fn max_abs_component(&self) -> f32 {
        self.vectors
            .iter()
            .fold(0f32, |m, v| m.max(v[0].abs()).max(v[1].abs()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.vectors.len());
        out.extend_from_slice(&FLOW_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v[0].to_le_bytes());
            out.extend_from_slice(&v[1].to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("flow file: {m}"));
        if bytes.len() < 16 || bytes[..8] != FLOW_MAGIC {
            return Err(bad("missing magic tag"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (w, h) = (word(8) as usize, word(12) as usize);
        if bytes.len() != 16 + 8 * w * h {
            return Err(bad("payload length does not match dimensions"));
        }
        let vectors = bytes[16..]
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                ]
            })
            .collect();
        FlowField::new(w, h, vectors)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Mean Euclidean length of the flow vectors.
pub fn mean_magnitude(flow: &FlowField) -> f64 {
    let sum = par::block_sum(flow.len(), 4096, 0f64, |r| {
        flow.vectors[r]
            .iter()
            .map(|v| (v[0] as f64).hypot(v[1] as f64))
            .sum()
    });
    sum / flow.len() as f64
}

/// Quadratic coefficients `[bx, by, axx, ayy, axy]` of one pixel; `axy`
/// multiplies the `x·y` term, so the off-diagonal of `A` is `axy / 2`.
type Poly = [f32; 5];

/// Least-squares quadratic fit of every pixel's Gaussian-weighted
/// neighbourhood. Separable: rows produce `Σg·f`, `Σx·g·f`, `Σx²·g·f`, then
/// columns combine them into the six basis correlations.
fn poly_expand(img: &[f32], width: usize, height: usize, n: usize, sigma: f64) -> Vec<Poly> {
    let g = imgproc::gaussian_kernel(sigma, n);
    let ni = n as isize;
    let (mut m2, mut m4) = (0f64, 0f64);
    for (i, &gi) in g.iter().enumerate() {
        let x = (i as isize - ni) as f64;
        m2 += x * x * gi as f64;
        m4 += x.powi(4) * gi as f64;
    }
    let inv_m2 = (1.0 / m2) as f32;
    let inv_m2sq = (1.0 / (m2 * m2)) as f32;
    let inv_q = (1.0 / (m4 - m2 * m2)) as f32;
    let m2f = m2 as f32;

    let mut rows = vec![[0f32; 3]; width * height];
    par::for_each_row(&mut rows, width, |y, out| {
        let src = &img[y * width..(y + 1) * width];
        let padded: Vec<f32> = (-ni..width as isize + ni)
            .map(|x| src[clamp_index(x, width)])
            .collect();
        for (x, o) in out.iter_mut().enumerate() {
            let win = &padded[x..x + 2 * n + 1];
            let mut acc = [0f32; 3];
            for (k, (&gk, &v)) in g.iter().zip(win).enumerate() {
                let t = (k as isize - ni) as f32;
                let gv = gk * v;
                acc[0] += gv;
                acc[1] += t * gv;
                acc[2] += t * t * gv;
            }
            *o = acc;
        }
    });

    let mut coeffs = vec![[0f32; 5]; width * height];
    par::for_each_row(&mut coeffs, width, |y, out| {
        // [c1, cx, cxx, cy, cyy, cxy]
        let mut acc = vec![[0f32; 6]; width];
        for (k, &gk) in g.iter().enumerate() {
            let t = (k as isize - ni) as f32;
            let sy = clamp_index(y as isize + k as isize - ni, height);
            let line = &rows[sy * width..(sy + 1) * width];
            for (a, r) in acc.iter_mut().zip(line) {
                a[0] += gk * r[0];
                a[1] += gk * r[1];
                a[2] += gk * r[2];
                a[3] += t * gk * r[0];
                a[4] += t * t * gk * r[0];
                a[5] += t * gk * r[1];
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            let [c1, cx, cxx, cy, cyy, cxy] = *a;
            let s = (cxx + cyy - 2.0 * m2f * c1) * inv_q;
            let d = (cxx - cyy) * inv_q;
            *o = [
                cx * inv_m2,
                cy * inv_m2,
                0.5 * (s + d),
                0.5 * (s - d),
                cxy * inv_m2sq,
            ];
        }
    });
    coeffs
}

/// Per-pixel normal-equation terms `[g11, g12, g22, h1, h2]` of `A d = Δb`.
fn update_matrices(
    p1: &[Poly],
    p2: &[Poly],
    flow: &[[f32; 2]],
    width: usize,
    height: usize,
    m: &mut [[f32; 5]],
) {
    let (xmax, ymax) = ((width - 1) as f32, (height - 1) as f32);
    par::for_each_row(m, width, |y, out| {
        let row = y * width..(y + 1) * width;
        for (x, (o, (r1, &[dx, dy]))) in out
            .iter_mut()
            .zip(p1[row.clone()].iter().zip(&flow[row]))
            .enumerate()
        {
            // Bilinear sample of p2 at the displaced position, clamped.
            let sx = (x as f32 + dx).clamp(0.0, xmax);
            let sy = (y as f32 + dy).clamp(0.0, ymax);
            let (x0, y0) = (sx as usize, sy as usize);
            let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
            let x1 = if x0 < width - 1 { x0 + 1 } else { x0 };
            let y1 = if y0 < height - 1 { y0 + 1 } else { y0 };
            let (q00, q01) = (&p2[y0 * width + x0], &p2[y0 * width + x1]);
            let (q10, q11) = (&p2[y1 * width + x0], &p2[y1 * width + x1]);
            let (w00, w01) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy));
            let (w10, w11) = ((1.0 - fx) * fy, fx * fy);
            let mut r2 = [0f32; 5];
            for k in 0..5 {
                r2[k] = q00[k] * w00 + q01[k] * w01 + q10[k] * w10 + q11[k] * w11;
            }
            let a = 0.5 * (r1[2] + r2[2]);
            let e = 0.5 * (r1[3] + r2[3]);
            let c = 0.25 * (r1[4] + r2[4]);
            let bx = -0.5 * (r2[0] - r1[0]) + a * dx + c * dy;
            let by = -0.5 * (r2[1] - r1[1]) + c * dx + e * dy;
            *o = [
                a * a + c * c,
                c * (a + e),
                c * c + e * e,
                a * bx + c * by,
                c * bx + e * by,
            ];
        }
    });
}

/// Box average over a `size`×`size` window with replicated edges, using
/// `horiz` as scratch.
fn box_blur5(
    src: &[[f32; 5]],
    width: usize,
    height: usize,
    size: usize,
    horiz: &mut [[f32; 5]],
    out: &mut [[f32; 5]],
) {
    let r = size / 2;
    let ri = r as isize;
    let norm = 1.0 / (size * size) as f64;

    par::for_each_row(horiz, width, |y, out| {
        let line = &src[y * width..(y + 1) * width];
        let at = |x: isize| &line[clamp_index(x, width)];
        let mut acc = [0f64; 5];
        for x in -ri..=ri {
            let v = at(x);
            for k in 0..5 {
                acc[k] += v[k] as f64;
            }
        }
        for (x, o) in out.iter_mut().enumerate() {
            for k in 0..5 {
                o[k] = acc[k] as f32;
            }
            let add = at(x as isize + ri + 1);
            let sub = at(x as isize - ri);
            for k in 0..5 {
                acc[k] += add[k] as f64 - sub[k] as f64;
            }
        }
    });

    let horiz = &*horiz;
    par::for_each_band(out, width, BAND_ROWS, |y0, band| {
        let row = |y: isize| {
            let sy = clamp_index(y, height);
            &horiz[sy * width..(sy + 1) * width]
        };
        let mut acc = vec![[0f64; 5]; width];
        for y in y0 as isize - ri..=y0 as isize + ri {
            for (a, v) in acc.iter_mut().zip(row(y)) {
                for k in 0..5 {
                    a[k] += v[k] as f64;
                }
            }
        }
        for (j, line) in band.chunks_mut(width).enumerate() {
            let y = (y0 + j) as isize;
            for (o, a) in line.iter_mut().zip(&acc) {
                for k in 0..5 {
                    o[k] = (a[k] * norm) as f32;
                }
            }
            let (add, sub) = (row(y + ri + 1), row(y - ri));
            for ((a, p), m) in acc.iter_mut().zip(add).zip(sub) {
                for k in 0..5 {
                    a[k] += p[k] as f64 - m[k] as f64;
                }
            }
        }
    });
}

fn solve_flow(m: &[[f32; 5]], flow: &mut [[f32; 2]]) {
    for (f, &[g11, g12, g22, h1, h2]) in flow.iter_mut().zip(m) {
        let idet = 1.0 / (g11 * g22 - g12 * g12 + DET_EPS);
        *f = [(g22 * h1 - g12 * h2) * idet, (g11 * h2 - g12 * h1) * idet];
    }
}

fn upsample_flow(
    flow: &[[f32; 2]],
    width: usize,
    height: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<[f32; 2]> {
    let sx = new_width as f32 / width as f32;
    let sy = new_height as f32 / height as f32;
    let vx: Vec<f32> = flow.iter().map(|v| v[0]).collect();
    let vy: Vec<f32> = flow.iter().map(|v| v[1]).collect();
    let ux = imgproc::resize_bilinear(&vx, width, height, new_width, new_height);
    let uy = imgproc::resize_bilinear(&vy, width, height, new_width, new_height);
    ux.into_iter()
        .zip(uy)
        .map(|(x, y)| [x * sx, y * sy])
        .collect()
}

/// Pyramid level sizes, finest first.
fn level_sizes(width: usize, height: usize, params: &FlowParams) -> Vec<(usize, usize, f64)> {
    let mut sizes = vec![(width, height, 1.0)];
    let mut scale = 1.0;
    for _ in 1..params.levels {
        scale *= params.pyramid_scale;
        let w = (width as f64 * scale).round() as usize;
        let h = (height as f64 * scale).round() as usize;
        if w.min(h) < MIN_LEVEL_SIDE.max(params.window_size) {
            break;
        }
        sizes.push((w, h, scale));
    }
    sizes
}

/// Polynomial expansions of one frame at every pyramid level, coarsest
/// first. Building one per frame lets a frame shared by two consecutive
/// pairs be expanded once.
#[derive(Debug, Clone)]
pub struct FlowPyramid {
    width: usize,
    height: usize,
    params: FlowParams,
    levels: Vec<(usize, usize, Vec<Poly>)>,
}

impl FlowPyramid {
    pub fn build(frame: &Frame, params: &FlowParams) -> Result<Self> {
        params.validate()?;
        let (width, height) = frame.dims();
        if width.min(height) < params.window_size {
            return Err(Error::InvalidInput(format!(
                "frame {width}x{height} smaller than flow window {}",
                params.window_size
            )));
        }
        let img: Vec<f32> = frame.data().iter().map(|v| v * 255.0).collect();
        let n = params.poly_neighborhood / 2;
        let levels = level_sizes(width, height, params)
            .into_iter()
            .rev()
            .map(|(w, h, scale)| {
                let poly = if scale == 1.0 {
                    poly_expand(&img, w, h, n, params.poly_sigma)
                } else {
                    let sigma = (1.0 / scale - 1.0) * 0.5;
                    let blurred = imgproc::gaussian_blur(&img, width, height, sigma);
                    let small = imgproc::resize_bilinear(&blurred, width, height, w, h);
                    poly_expand(&small, w, h, n, params.poly_sigma)
                };
                (w, h, poly)
            })
            .collect();
        Ok(Self {
            width,
            height,
            params: *params,
            levels,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }
}

/// Flow between two prepared frames built with the same parameters.
pub fn flow_between(prev: &FlowPyramid, next: &FlowPyramid) -> Result<FlowField> {
    if prev.dims() != next.dims() {
        return Err(Error::DimensionMismatch {
            expected: prev.dims(),
            found: next.dims(),
        });
    }
    if prev.params != next.params {
        return Err(Error::InvalidParams("pyramids built with different flow parameters".into()));
    }
    let params = &prev.params;
    // Scratch sized for the finest level, reused by every iteration.
    let full = prev.width * prev.height;
    let mut terms = vec![[0f32; 5]; full];
    let mut scratch = vec![[0f32; 5]; full];
    let mut blurred = vec![[0f32; 5]; full];
    let mut flow: Option<(Vec<[f32; 2]>, usize, usize)> = None;
    for ((w, h, p1), (_, _, p2)) in prev.levels.iter().zip(&next.levels) {
        let (w, h) = (*w, *h);
        let n = w * h;
        let mut current = match flow.take() {
            Some((f, fw, fh)) => upsample_flow(&f, fw, fh, w, h),
            None => vec![[0.0; 2]; n],
        };
        for _ in 0..params.iterations {
            update_matrices(p1, p2, &current, w, h, &mut terms[..n]);
            box_blur5(&terms[..n], w, h, params.window_size, &mut scratch[..n], &mut blurred[..n]);
            solve_flow(&blurred[..n], &mut current);
        }
        flow = Some((current, w, h));
    }
    let (vectors, _, _) = flow.expect("at least one pyramid level");
    FlowField::new(prev.width, prev.height, vectors)
}

/// Dense flow from `prev` to `next`: `prev(x, y) ≈ next(x + vx, y + vy)`.
pub fn compute_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField> {
    if prev.dims() != next.dims() {
        return Err(Error::DimensionMismatch {
            expected: prev.dims(),
            found: next.dims(),
        });
    }
    flow_between(&FlowPyramid::build(prev, params)?, &FlowPyramid::build(next, params)?)
}
