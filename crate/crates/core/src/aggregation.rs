//! Temporal stabilisation of per-frame foci by Gaussian splatting.
//!
//! Each frame contributes a unit-peak Gaussian at its focus, with a spread
//! inversely proportional to the frame's mean flow magnitude. The most
//! recent `window` Gaussians are summed and max-normalised into an
//! attention mask whose argmax is the stabilised focus.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::ScalarField;
use crate::geom::Vec2;
use crate::par;

/// Gaussians are evaluated out to this many sigmas from their centre.
const SUPPORT_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationParams {
    /// Frames kept in the ring buffer.
    pub window: usize,
    /// `sigma = kappa / u`, px²/frame.
    pub kappa: f64,
    /// Activity floor (px/frame) guarding the division.
    pub u_floor: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        Self {
            window: 10,
            kappa: 400.0,
            u_floor: 0.1,
            sigma_min: 10.0,
            sigma_max: 200.0,
        }
    }
}

impl AggregationParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidParams("aggregation window must be >= 1".into()));
        }
        if !(self.kappa > 0.0 && self.u_floor > 0.0) {
            return Err(Error::InvalidParams("kappa and u_floor must be > 0".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max) {
            return Err(Error::InvalidParams(format!(
                "sigma clamps [{}, {}] invalid",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }
}

/// `clamp(kappa / max(u, u_floor), sigma_min, sigma_max)`.
pub fn sigma_from_activity(u: f64, params: &AggregationParams) -> f64 {
    (params.kappa / u.max(params.u_floor)).clamp(params.sigma_min, params.sigma_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianEntry {
    pub center: Vec2,
    pub sigma: f64,
    pub frame_index: usize,
}

/// Ring buffer of the most recent Gaussians, evicted oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorState {
    capacity: usize,
    entries: VecDeque<GaussianEntry>,
}

impl AggregatorState {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.max(1) + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &GaussianEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, entry: GaussianEntry) {
        self.entries.push_back(entry);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    pub fn push_focus(&mut self, center: Vec2, sigma: f64, frame_index: usize) {
        self.push(GaussianEntry {
            center,
            sigma,
            frame_index,
        });
    }
}

/// Max-normalised attention values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl AttentionMask {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn to_scalar_field(&self) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.values.clone(),
        }
    }
}

struct Splat {
    cy: f64,
    inv_two_s2: f64,
    x0: usize,
    gx: Vec<f64>,
    y_range: (usize, usize),
}

/// Sum of unit-peak Gaussians, divided by its maximum.
pub fn render_mask(state: &AggregatorState, width: usize, height: usize) -> Result<AttentionMask> {
    if state.is_empty() {
        return Err(Error::EmptyState);
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("mask dimensions must be positive".into()));
    }
    let span = |c: f64, s: f64, len: usize| -> Option<(usize, usize)> {
        let lo = (c - SUPPORT_SIGMAS * s).ceil().max(0.0);
        let hi = (c + SUPPORT_SIGMAS * s).floor().min(len as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };
    let splats: Vec<Splat> = state
        .entries
        .iter()
        .filter_map(|e| {
            let inv_two_s2 = 1.0 / (2.0 * e.sigma * e.sigma);
            let (x0, x1) = span(e.center.x, e.sigma, width)?;
            let y_range = span(e.center.y, e.sigma, height)?;
            let gx = (x0..=x1)
                .map(|x| (-(x as f64 - e.center.x).powi(2) * inv_two_s2).exp())
                .collect();
            Some(Splat {
                cy: e.center.y,
                inv_two_s2,
                x0,
                gx,
                y_range,
            })
        })
        .collect();

    let mut values = vec![0f32; width * height];
    par::for_each_row(&mut values, width, |y, row| {
        for s in &splats {
            if y < s.y_range.0 || y > s.y_range.1 {
                continue;
            }
            let gy = (-(y as f64 - s.cy).powi(2) * s.inv_two_s2).exp();
            for (o, g) in row[s.x0..s.x0 + s.gx.len()].iter_mut().zip(&s.gx) {
                *o += (g * gy) as f32;
            }
        }
    });
    let max = values.iter().copied().fold(0f32, f32::max);
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    Ok(AttentionMask {
        width,
        height,
        values,
    })
}

/// Pixel with the largest mask value; ties go to the first in row-major
/// order.
pub fn stabilized_focus(mask: &AttentionMask) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in mask.values.iter().enumerate() {
        if v > mask.values[best] {
            best = i;
        }
    }
    (best % mask.width, best / mask.width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state_with(entries: &[(f64, f64, f64)], cap: usize) -> AggregatorState {
        let mut s = AggregatorState::new(cap);
        for (i, &(x, y, sigma)) in entries.iter().enumerate() {
            s.push_focus(Vec2::new(x, y), sigma, i);
        }
        s
    }

    #[test]
    fn sigma_examples() {
        let p = AggregationParams::default();
        assert_eq!(sigma_from_activity(p.kappa / 50.0, &p), 50.0);
        assert_eq!(sigma_from_activity(0.0, &p), p.sigma_max);
        let s1 = sigma_from_activity(4.0, &p);
        let s2 = sigma_from_activity(8.0, &p);
        assert!((s2 - s1 / 2.0).abs() < 1e-12);
        assert_eq!(sigma_from_activity(1e6, &p), p.sigma_min);
    }

    #[test]
    fn ring_semantics() {
        let mut s = AggregatorState::new(10);
        s.push_focus(Vec2::ZERO, 10.0, 0);
        assert_eq!(s.len(), 1);
        for i in 1..11 {
            s.push_focus(Vec2::ZERO, 10.0, i);
        }
        let idx: Vec<usize> = s.entries().map(|e| e.frame_index).collect();
        assert_eq!(idx, (1..11).collect::<Vec<_>>());

        let mut one = AggregatorState::new(1);
        for i in 0..5 {
            one.push_focus(Vec2::new(i as f64, 0.0), 10.0, i);
            assert_eq!(one.len(), 1);
            assert_eq!(one.entries().next().unwrap().frame_index, i);
        }
    }

    #[test]
    fn single_entry_mask() {
        let m = render_mask(&state_with(&[(100.0, 100.0, 20.0)], 10), 256, 256).unwrap();
        assert_eq!(stabilized_focus(&m), (100, 100));
        assert_eq!(m.get(100, 100), 1.0);
        assert!((m.get(120, 100) - (-0.5f32).exp()).abs() < 1e-6);
    }

    #[test]
    fn duplicate_entries_normalise_away() {
        let one = render_mask(&state_with(&[(60.0, 70.0, 15.0)], 10), 128, 128).unwrap();
        let two = render_mask(&state_with(&[(60.0, 70.0, 15.0), (60.0, 70.0, 15.0)], 10), 128, 128).unwrap();
        for (a, b) in one.values.iter().zip(&two.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_twin_peaks_tie_to_row_major_first() {
        let m = render_mask(&state_with(&[(300.0, 300.0, 30.0), (100.0, 100.0, 30.0)], 10), 400, 400).unwrap();
        assert!((m.get(100, 100) - m.get(300, 300)).abs() < 1e-6);
        assert_eq!(stabilized_focus(&m), (100, 100));
    }

    #[test]
    fn stacked_frames_dominate() {
        let entries = [(300.0, 300.0, 40.0), (100.0, 100.0, 40.0), (100.0, 100.0, 40.0), (100.0, 100.0, 40.0)];
        let m = render_mask(&state_with(&entries, 10), 400, 400).unwrap();
        assert_eq!(stabilized_focus(&m), (100, 100));
    }

    #[test]
    fn empty_state_is_an_error() {
        assert!(matches!(render_mask(&AggregatorState::new(3), 10, 10), Err(Error::EmptyState)));
    }

    proptest! {
        #[test]
        fn mask_range_and_single_entry_identity(x in 0.0f64..199.0, y in 0.0f64..149.0, sigma in 10.0f64..200.0) {
            let m = render_mask(&state_with(&[(x, y, sigma)], 10), 200, 150).unwrap();
            prop_assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(m.values.iter().copied().fold(0f32, f32::max), 1.0);
            // Wide bumps can round neighbouring pixels to the same f32, so the
            // nearest pixel must reach the peak and the argmax may sit one over.
            prop_assert_eq!(m.get(x.round() as usize, y.round() as usize), 1.0);
            let (fx, fy) = stabilized_focus(&m);
            prop_assert!((fx as f64 - x).abs() <= 1.0 && (fy as f64 - y).abs() <= 1.0);
        }

        #[test]
        fn eviction_matches_fresh_state(centers in prop::collection::vec((0.0f64..120.0, 0.0f64..100.0, 10.0f64..60.0), 1..25), cap in 1usize..12) {
            let full = state_with(&centers, cap);
            let tail = &centers[centers.len().saturating_sub(cap)..];
            let mut fresh = AggregatorState::new(cap);
            for (i, &(x, y, s)) in tail.iter().enumerate() {
                fresh.push_focus(Vec2::new(x, y), s, centers.len() - tail.len() + i);
            }
            prop_assert_eq!(render_mask(&full, 120, 100).unwrap(), render_mask(&fresh, 120, 100).unwrap());
        }

        #[test]
        fn sigma_non_increasing(u1 in 0.0f64..100.0, du in 0.0f64..100.0) {
            let p = AggregationParams::default();
            prop_assert!(sigma_from_activity(u1 + du, &p) <= sigma_from_activity(u1, &p));
        }
    }
}
