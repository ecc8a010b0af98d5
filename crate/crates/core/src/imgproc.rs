//! Small raster kernels shared by flow, synthesis and ingestion.

use crate::par;

/// Normalised 1-D Gaussian taps of radius `radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f32> {
    let r = radius as isize;
    let two_s2 = 2.0 * sigma * sigma;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / two_s2).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / sum) as f32).collect()
}

/// Separable Gaussian blur with replicated edges.
pub fn gaussian_blur(src: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = ((sigma * 3.0).ceil() as usize).max(1);
    let k = gaussian_kernel(sigma, radius);
    convolve_separable(src, width, height, &k, &k)
}

/// Correlates rows with `kx` and columns with `ky`, replicating edges.
pub fn convolve_separable(
    src: &[f32],
    width: usize,
    height: usize,
    kx: &[f32],
    ky: &[f32],
) -> Vec<f32> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![0f32; src.len()];
    par::for_each_row(&mut tmp, width, |y, row| {
        let line = &src[y * width..(y + 1) * width];
        let padded: Vec<f32> = (-rx..width as isize + rx)
            .map(|x| line[clamp_index(x, width)])
            .collect();
        for (out, win) in row.iter_mut().zip(padded.windows(kx.len())) {
            *out = kx.iter().zip(win).map(|(&w, &v)| w * v).sum();
        }
    });
    let mut dst = vec![0f32; src.len()];
    par::for_each_row(&mut dst, width, |y, row| {
        for (i, &w) in ky.iter().enumerate() {
            let sy = clamp_index(y as isize + i as isize - ry, height);
            let line = &tmp[sy * width..(sy + 1) * width];
            for (o, &v) in row.iter_mut().zip(line) {
                *o += w * v;
            }
        }
    });
    dst
}

#[inline]
pub(crate) fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Bilinear sample at a real-valued position, clamping to the grid.
#[inline]
pub fn sample_bilinear(src: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let top = src[y0 * width + x0] * (1.0 - fx) + src[y0 * width + x1] * fx;
    let bot = src[y1 * width + x0] * (1.0 - fx) + src[y1 * width + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear resize using pixel-centre alignment.
pub fn resize_bilinear(
    src: &[f32],
    width: usize,
    height: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f32> {
    if width == new_width && height == new_height {
        return src.to_vec();
    }
    let sx = width as f64 / new_width as f64;
    let sy = height as f64 / new_height as f64;
    let mut dst = vec![0f32; new_width * new_height];
    par::for_each_row(&mut dst, new_width, |y, row| {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for (x, out) in row.iter_mut().enumerate() {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            *out = sample_bilinear(src, width, height, fx, fy);
        }
    });
    dst
}
