//! Diagnostic rendering: flow colour coding, magnitude maps, attention
//! overlays and the four-cell comparison panel.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::aggregation::AttentionMask;
use crate::error::{Error, Result};
use crate::frame_io::{Frame, ScalarField};
use crate::optical_flow::FlowField;

const MARKER: Rgb<u8> = Rgb([255, 32, 32]);
const ARROW: Rgb<u8> = Rgb([255, 255, 0]);

/// 256-entry perceptual ramp (viridis), dark purple at 0 to yellow at 1.
pub static VIRIDIS: [[u8; 3]; 256] = [
    [68, 1, 84], [68, 2, 86], [69, 4, 87], [69, 5, 89], [70, 7, 90], [70, 8, 92],
    [70, 10, 93], [70, 11, 94], [71, 13, 96], [71, 14, 97], [71, 16, 99], [71, 17, 100],
    [71, 19, 101], [72, 20, 103], [72, 22, 104], [72, 23, 105], [72, 24, 106], [72, 26, 108],
    [72, 27, 109], [72, 28, 110], [72, 29, 111], [72, 31, 112], [72, 32, 113], [72, 33, 115],
    [72, 35, 116], [72, 36, 117], [72, 37, 118], [72, 38, 119], [72, 40, 120], [72, 41, 121],
    [71, 42, 122], [71, 44, 122], [71, 45, 123], [71, 46, 124], [71, 47, 125], [70, 48, 126],
    [70, 50, 126], [70, 51, 127], [70, 52, 128], [69, 53, 129], [69, 55, 129], [69, 56, 130],
    [68, 57, 131], [68, 58, 131], [68, 59, 132], [67, 61, 132], [67, 62, 133], [66, 63, 133],
    [66, 64, 134], [66, 65, 134], [65, 66, 135], [65, 68, 135], [64, 69, 136], [64, 70, 136],
    [63, 71, 136], [63, 72, 137], [62, 73, 137], [62, 74, 137], [62, 76, 138], [61, 77, 138],
    [61, 78, 138], [60, 79, 138], [60, 80, 139], [59, 81, 139], [59, 82, 139], [58, 83, 139],
    [58, 84, 140], [57, 85, 140], [57, 86, 140], [56, 88, 140], [56, 89, 140], [55, 90, 140],
    [55, 91, 141], [54, 92, 141], [54, 93, 141], [53, 94, 141], [53, 95, 141], [52, 96, 141],
    [52, 97, 141], [51, 98, 141], [51, 99, 141], [50, 100, 142], [50, 101, 142], [49, 102, 142],
    [49, 103, 142], [49, 104, 142], [48, 105, 142], [48, 106, 142], [47, 107, 142], [47, 108, 142],
    [46, 109, 142], [46, 110, 142], [46, 111, 142], [45, 112, 142], [45, 113, 142], [44, 113, 142],
    [44, 114, 142], [44, 115, 142], [43, 116, 142], [43, 117, 142], [42, 118, 142], [42, 119, 142],
    [42, 120, 142], [41, 121, 142], [41, 122, 142], [41, 123, 142], [40, 124, 142], [40, 125, 142],
    [39, 126, 142], [39, 127, 142], [39, 128, 142], [38, 129, 142], [38, 130, 142], [38, 130, 142],
    [37, 131, 142], [37, 132, 142], [37, 133, 142], [36, 134, 142], [36, 135, 142], [35, 136, 142],
    [35, 137, 142], [35, 138, 141], [34, 139, 141], [34, 140, 141], [34, 141, 141], [33, 142, 141],
    [33, 143, 141], [33, 144, 141], [33, 145, 140], [32, 146, 140], [32, 146, 140], [32, 147, 140],
    [31, 148, 140], [31, 149, 139], [31, 150, 139], [31, 151, 139], [31, 152, 139], [31, 153, 138],
    [31, 154, 138], [30, 155, 138], [30, 156, 137], [30, 157, 137], [31, 158, 137], [31, 159, 136],
    [31, 160, 136], [31, 161, 136], [31, 161, 135], [31, 162, 135], [32, 163, 134], [32, 164, 134],
    [33, 165, 133], [33, 166, 133], [34, 167, 133], [34, 168, 132], [35, 169, 131], [36, 170, 131],
    [37, 171, 130], [37, 172, 130], [38, 173, 129], [39, 173, 129], [40, 174, 128], [41, 175, 127],
    [42, 176, 127], [44, 177, 126], [45, 178, 125], [46, 179, 124], [47, 180, 124], [49, 181, 123],
    [50, 182, 122], [52, 182, 121], [53, 183, 121], [55, 184, 120], [56, 185, 119], [58, 186, 118],
    [59, 187, 117], [61, 188, 116], [63, 188, 115], [64, 189, 114], [66, 190, 113], [68, 191, 112],
    [70, 192, 111], [72, 193, 110], [74, 193, 109], [76, 194, 108], [78, 195, 107], [80, 196, 106],
    [82, 197, 105], [84, 197, 104], [86, 198, 103], [88, 199, 101], [90, 200, 100], [92, 200, 99],
    [94, 201, 98], [96, 202, 96], [99, 203, 95], [101, 203, 94], [103, 204, 92], [105, 205, 91],
    [108, 205, 90], [110, 206, 88], [112, 207, 87], [115, 208, 86], [117, 208, 84], [119, 209, 83],
    [122, 209, 81], [124, 210, 80], [127, 211, 78], [129, 211, 77], [132, 212, 75], [134, 213, 73],
    [137, 213, 72], [139, 214, 70], [142, 214, 69], [144, 215, 67], [147, 215, 65], [149, 216, 64],
    [152, 216, 62], [155, 217, 60], [157, 217, 59], [160, 218, 57], [162, 218, 55], [165, 219, 54],
    [168, 219, 52], [170, 220, 50], [173, 220, 48], [176, 221, 47], [178, 221, 45], [181, 222, 43],
    [184, 222, 41], [186, 222, 40], [189, 223, 38], [192, 223, 37], [194, 223, 35], [197, 224, 33],
    [200, 224, 32], [202, 225, 31], [205, 225, 29], [208, 225, 28], [210, 226, 27], [213, 226, 26],
    [216, 226, 25], [218, 227, 25], [221, 227, 24], [223, 227, 24], [226, 228, 24], [229, 228, 25],
    [231, 228, 25], [234, 229, 26], [236, 229, 27], [239, 229, 28], [241, 229, 29], [244, 230, 30],
    [246, 230, 32], [248, 230, 33], [251, 231, 35], [253, 231, 37],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Viridis,
    Gray,
}

impl Colormap {
    pub fn map(self, v: f32) -> Rgb<u8> {
        let i = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
        match self {
            Colormap::Viridis => Rgb(VIRIDIS[i]),
            Colormap::Gray => Rgb([i as u8; 3]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayStyle {
    /// Spacing of flow arrows in the field panels.
    pub arrow_stride: usize,
    pub colormap: Colormap,
    /// Blend weight of the colour-mapped mask at its peak.
    pub alpha: f32,
    pub marker_radius: usize,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            arrow_stride: 16,
            colormap: Colormap::Viridis,
            alpha: 0.5,
            marker_radius: 6,
        }
    }
}

impl OverlayStyle {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParams(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        if self.arrow_stride < 4 {
            return Err(Error::InvalidParams("arrow stride must be >= 4".into()));
        }
        Ok(())
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb<u8> {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([q(r), q(g), q(b)])
}

/// Hue in degrees of a flow vector: 0° along +x, increasing towards +y.
pub fn flow_hue(v: [f32; 2]) -> f64 {
    (v[1] as f64).atan2(v[0] as f64).to_degrees().rem_euclid(360.0)
}

fn magnitudes(flow: &FlowField) -> Vec<f32> {
    flow.vectors().iter().map(|v| v[0].hypot(v[1])).collect()
}

/// 99th-percentile magnitude, falling back to the maximum when that is zero.
fn robust_scale(mags: &[f32]) -> f32 {
    let mut sorted = mags.to_vec();
    let k = ((sorted.len() - 1) as f64 * 0.99).floor() as usize;
    let (_, p99, _) = sorted.select_nth_unstable_by(k, f32::total_cmp);
    let p99 = *p99;
    if p99 > 0.0 {
        p99
    } else {
        mags.iter().copied().fold(0.0, f32::max)
    }
}

/// Hue encodes direction, saturation encodes magnitude relative to the
/// frame's 99th percentile; zero motion is white.
pub fn flow_to_color(flow: &FlowField) -> RgbImage {
    let mags = magnitudes(flow);
    let scale = robust_scale(&mags);
    let (w, h) = flow.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let s = if scale > 0.0 { (mags[i] / scale).min(1.0) } else { 0.0 };
        hsv_to_rgb(flow_hue(flow.vectors()[i]), s as f64, 1.0)
    })
}

/// Per-pixel magnitude divided by the frame maximum.
pub fn magnitude_map(field: &FlowField) -> ScalarField {
    let mags = magnitudes(field);
    let max = mags.iter().copied().fold(0.0, f32::max);
    let data = if max > 0.0 {
        mags.iter().map(|m| m / max).collect()
    } else {
        vec![0.0; mags.len()]
    };
    ScalarField {
        width: field.width(),
        height: field.height(),
        data,
    }
}

pub fn heatmap(field: &ScalarField, colormap: Colormap) -> RgbImage {
    RgbImage::from_fn(field.width as u32, field.height as u32, |x, y| {
        colormap.map(field.data[y as usize * field.width + x as usize])
    })
}

pub fn grayscale(frame: &Frame) -> RgbImage {
    RgbImage::from_fn(frame.width() as u32, frame.height() as u32, |x, y| {
        Colormap::Gray.map(frame.get(x as usize, y as usize))
    })
}

/// Ring of radius `radius` (about 1.5 px thick) centred on `(cx, cy)`.
pub fn draw_marker(img: &mut RgbImage, cx: f64, cy: f64, radius: usize) {
    let r = radius as f64;
    let inner = (r - 1.5).max(0.0);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, x1) = ((cx - r).floor() as i64, (cx + r).ceil() as i64);
    let (y0, y1) = ((cy - r).floor() as i64, (cy + r).ceil() as i64);
    for y in y0.max(0)..=y1.min(h - 1) {
        for x in x0.max(0)..=x1.min(w - 1) {
            let d = (x as f64 - cx).hypot(y as f64 - cy);
            if d <= r && d >= inner {
                img.put_pixel(x as u32, y as u32, MARKER);
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (a.0 + (b.0 - a.0) * t).round();
        let y = (a.1 + (b.1 - a.1) * t).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Sparse arrows over `img`, lengths scaled so the 99th-percentile vector
/// spans most of a grid cell.
pub fn draw_flow_arrows(img: &mut RgbImage, flow: &FlowField, stride: usize) {
    let scale = robust_scale(&magnitudes(flow));
    if scale <= 0.0 {
        return;
    }
    let gain = 0.9 * stride as f64 / scale as f64;
    let half = stride / 2;
    for y in (half..flow.height()).step_by(stride) {
        for x in (half..flow.width()).step_by(stride) {
            let [vx, vy] = flow.get(x, y);
            let (dx, dy) = (vx as f64 * gain, vy as f64 * gain);
            if dx.hypot(dy) < 1.0 {
                continue;
            }
            let a = (x as f64, y as f64);
            let b = (a.0 + dx, a.1 + dy);
            draw_line(img, a, b, ARROW);
            let ang = dy.atan2(dx);
            let head = (dx.hypot(dy) * 0.3).min(4.0);
            for side in [-0.5f64, 0.5] {
                let t = ang + std::f64::consts::PI + side;
                draw_line(img, b, (b.0 + head * t.cos(), b.1 + head * t.sin()), ARROW);
            }
        }
    }
}

/// Grayscale frame blended with the colour-mapped mask (weight
/// `alpha × mask`), plus a ring at `focus`.
pub fn render_overlay(
    frame: &Frame,
    mask: &AttentionMask,
    focus: (f64, f64),
    style: &OverlayStyle,
) -> Result<RgbImage> {
    style.validate()?;
    if frame.dims() != (mask.width, mask.height) {
        return Err(Error::DimensionMismatch {
            expected: frame.dims(),
            found: (mask.width, mask.height),
        });
    }
    let mut img = RgbImage::from_fn(frame.width() as u32, frame.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let g = frame.get(x, y) * 255.0;
        let m = mask.get(x, y);
        let c = style.colormap.map(m);
        let a = style.alpha * m;
        Rgb(std::array::from_fn(|k| {
            ((1.0 - a) * g + a * c[k] as f32).round().clamp(0.0, 255.0) as u8
        }))
    });
    if style.marker_radius > 0 {
        draw_marker(&mut img, focus.0, focus.1, style.marker_radius);
    }
    Ok(img)
}

/// Four cells left to right: frame with predicted focus, camera-motion
/// magnitude, raw flow, compensated flow.
pub fn render_panel(
    frame: &Frame,
    focus: (f64, f64),
    eps: &FlowField,
    raw: &FlowField,
    compensated: &FlowField,
    style: &OverlayStyle,
) -> Result<RgbImage> {
    for f in [eps, raw, compensated] {
        if f.dims() != frame.dims() {
            return Err(Error::DimensionMismatch {
                expected: frame.dims(),
                found: f.dims(),
            });
        }
    }
    let mut first = grayscale(frame);
    draw_marker(&mut first, focus.0, focus.1, style.marker_radius.max(1));
    let cells = [
        first,
        heatmap(&magnitude_map(eps), style.colormap),
        flow_to_color(raw),
        flow_to_color(compensated),
    ];
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let mut out = RgbImage::new(4 * w, h);
    for (i, cell) in cells.iter().enumerate() {
        image::imageops::replace(&mut out, cell, (i as u32 * w) as i64, 0);
    }
    Ok(out)
}
