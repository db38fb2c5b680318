//! Trajectory smoothing and feature-distribution diagnostics.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::wrap_unit;
use crate::image::Image;

pub const DEFAULT_SIGMA: f64 = 2.0;

/// Rotation (normalized Euler) and translation of one frame of a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPose {
    pub r: [f64; 3],
    pub t: [f64; 3],
}

/// Gaussian weights for offsets `-R..=R`, `R = ⌈3σ⌉`, summing to one.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("smoothing sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Normalized weights used at frame `i` of an `n`-frame track, as `(first index, weights)`.
pub fn kernel_at(kernel: &[f64], i: usize, n: usize) -> (usize, Vec<f64>) {
    let radius = kernel.len() / 2;
    let lo = i.saturating_sub(radius);
    let hi = (i + radius).min(n - 1);
    let w: Vec<f64> = (lo..=hi).map(|j| kernel[j + radius - i]).collect();
    let total: f64 = w.iter().sum();
    (lo, w.into_iter().map(|x| x / total).collect())
}

/// Gaussian smoothing with edge renormalization.
///
/// Translations are averaged linearly. Each rotation angle is averaged on the circle:
/// the result is the direction of the weighted mean of unit vectors, computed relative
/// to the centre frame so that constant tracks are reproduced exactly.
pub fn gaussian_smooth_track(track: &[TrackPose], sigma: f64) -> Result<Vec<TrackPose>> {
    let kernel = gaussian_kernel(sigma)?;
    let n = track.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, w) = kernel_at(&kernel, i, n);
        let centre = track[i];
        let mut t = centre.t;
        let mut r = centre.r;
        for c in 0..3 {
            let shift: f64 = w.iter().enumerate().map(|(k, wk)| wk * (track[lo + k].t[c] - centre.t[c])).sum();
            t[c] = centre.t[c] + shift;

            let (mut s, mut co) = (0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                let delta = wrap_unit(track[lo + k].r[c] - centre.r[c] + 0.5) - 0.5;
                s += wk * (TAU * delta).sin();
                co += wk * (TAU * delta).cos();
            }
            r[c] = wrap_unit(centre.r[c] + s.atan2(co) / TAU);
        }
        out.push(TrackPose { r, t });
    }
    Ok(out)
}

/// Standardized features with the indices of the dimensions that were kept.
pub fn standardize(features: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let n = features.len();
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != dim) || dim == 0 {
        return Err(Error::Shape("feature vectors must share one non-zero dimension".into()));
    }
    let mut kept = Vec::new();
    let mut stats = Vec::new();
    for d in 0..dim {
        let mean = features.iter().map(|f| f[d]).sum::<f64>() / n as f64;
        let var = features.iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = features.iter().map(|f| f[d].abs()).fold(0.0, f64::max).max(1.0);
        if var.sqrt() <= 1e-12 * scale {
            log::warn!("feature dimension {d} has zero variance and is dropped");
            continue;
        }
        kept.push(d);
        stats.push((mean, var.sqrt()));
    }
    if kept.is_empty() {
        return Err(Error::Degenerate("all feature vectors are identical".into()));
    }
    let z = features
        .iter()
        .map(|f| kept.iter().zip(&stats).map(|(&d, (m, s))| (f[d] - m) / s).collect())
        .collect();
    Ok((z, kept))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub points: Vec<[f64; 2]>,
    /// Fraction of total standardized variance per component.
    pub explained: [f64; 2],
    /// Loadings over the kept dimensions.
    pub components: [Vec<f64>; 2],
    pub kept_dims: Vec<usize>,
}

/// Standardize, then project onto the two leading covariance eigenvectors. Each
/// component is signed so its first non-zero loading is positive.
pub fn pca_project(features: &[Vec<f64>]) -> Result<PcaProjection> {
    if features.len() < 3 {
        return Err(Error::Degenerate(format!("PCA needs at least 3 points, got {}", features.len())));
    }
    let (z, kept_dims) = standardize(features)?;
    let n = z.len();
    let d = kept_dims.len();
    let zm = DMatrix::from_fn(n, d, |i, j| z[i][j]);
    let cov = (zm.transpose() * &zm) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for (c, &idx) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        explained[c] = eig.eigenvalues[idx].max(0.0) / total;
        components[c] = v;
    }
    let points = z
        .iter()
        .map(|row| {
            let dot = |v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            [dot(&components[0]), dot(&components[1])]
        })
        .collect();
    Ok(PcaProjection {
        points,
        explained,
        components,
        kept_dims,
    })
}

pub const HUE_BINS: usize = 8;
pub const ORIENTATION_BINS: usize = 8;
/// Length of [`image_descriptor`].
pub const DESCRIPTOR_DIM: usize = HUE_BINS + ORIENTATION_BINS;

/// Hand-crafted 16-D descriptor.
///
/// Entries 0..8 are a hue histogram. Each pixel puts its saturation on its hue bin and
/// spreads the rest evenly, so achromatic pixels (which have no hue) give a flat
/// histogram. Entries 8..16 are an unsigned gradient-orientation histogram of luminance,
/// weighted by gradient magnitude in units of the full intensity range per pixel.
pub fn image_descriptor(img: &Image) -> Vec<f64> {
    let mut out = vec![0.0; DESCRIPTOR_DIM];
    let npix = (img.width * img.height).max(1) as f64;
    for px in img.data.chunks_exact(3) {
        let [r, g, b] = [px[0], px[1], px[2]].map(|v| f64::from(v) / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let chroma = max - min;
        let sat = if max > 0.0 { chroma / max } else { 0.0 };
        let spread = (1.0 - sat) / HUE_BINS as f64;
        for bin in out.iter_mut().take(HUE_BINS) {
            *bin += spread / npix;
        }
        if chroma > 0.0 {
            let h = if max == r {
                ((g - b) / chroma).rem_euclid(6.0)
            } else if max == g {
                (b - r) / chroma + 2.0
            } else {
                (r - g) / chroma + 4.0
            } / 6.0;
            let bin = ((h * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
            out[bin] += sat / npix;
        }
    }
    if img.width >= 3 && img.height >= 3 {
        let lum = |x: usize, y: usize| {
            let p = img.pixel(x, y);
            (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])) / 255.0
        };
        let interior = ((img.width - 2) * (img.height - 2)) as f64;
        for y in 1..img.height - 1 {
            for x in 1..img.width - 1 {
                let gx = 0.5 * (lum(x + 1, y) - lum(x - 1, y));
                let gy = 0.5 * (lum(x, y + 1) - lum(x, y - 1));
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let theta = gy.atan2(gx).rem_euclid(PI);
                let bin = ((theta / PI * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1);
                out[HUE_BINS + bin] += mag / interior;
            }
        }
    }
    out
}

pub fn extract_image_features(images: &[Image]) -> Result<Vec<Vec<f64>>> {
    if images.is_empty() {
        return Err(Error::Degenerate("no images to describe".into()));
    }
    Ok(images.iter().map(image_descriptor).collect())
}
