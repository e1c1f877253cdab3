//! Hand-crafted fisheye descriptors and their spherical sweep onto the ERP grid.

use crate::image::Map2;
use crate::rig::{sweep_project, Camera, ErpGrid, InverseDepthSampling};
use crate::math::Vec3;
use crate::Scalar;
use rayon::prelude::*;

/// Descriptor channels, in storage order.
pub const CHANNEL_NAMES: [&str; 8] = [
    "intensity", "grad_x", "grad_y", "mean3", "std3", "orient0", "orient60", "orient120",
];

pub const NUM_CHANNELS: usize = CHANNEL_NAMES.len();

/// Channel-major `C × H × W` descriptor image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> FeatureMap<T> {
    #[inline]
    pub fn at(&self, ch: usize, col: usize, row: usize) -> T {
        self.data[(ch * self.height + row) * self.width + col]
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.width * self.height;
        &self.data[ch * n..(ch + 1) * n]
    }

    /// Multiplies every channel by `alpha`.
    pub fn scaled(&self, alpha: T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Bilinear sample of all channels at continuous pixel `(u, v)` into `out`.
    /// Fails when the footprint leaves the image or touches an invalid pixel.
    pub fn sample_bilinear(&self, u: T, v: T, out: &mut [T]) -> bool {
        let (w, h) = (self.width, self.height);
        if w < 2 || h < 2 {
            return false;
        }
        let (wl, hl) = (T::from_usize_lossy(w - 1), T::from_usize_lossy(h - 1));
        if !(u >= T::zero() && v >= T::zero() && u <= wl && v <= hl) {
            return false;
        }
        let x0 = u.floor().to_usize().unwrap().min(w - 2);
        let y0 = v.floor().to_usize().unwrap().min(h - 2);
        let fx = u - T::from_usize_lossy(x0);
        let fy = v - T::from_usize_lossy(y0);
        let taps = [y0 * w + x0, y0 * w + x0 + 1, (y0 + 1) * w + x0, (y0 + 1) * w + x0 + 1];
        if taps.iter().any(|&i| !self.valid[i]) {
            return false;
        }
        let one = T::one();
        let wts = [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy];
        let n = w * h;
        for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
            let base = ch * n;
            *o = wts[0] * self.data[base + taps[0]]
                + wts[1] * self.data[base + taps[1]]
                + wts[2] * self.data[base + taps[2]]
                + wts[3] * self.data[base + taps[3]];
        }
        true
    }
}

/// Descriptor of one 3×3 neighborhood; `at(dc, dr)` returns the sample at
/// offset `(dc, dr)` from the center, both in `-1..=1`.
///
/// Orientation channels are the mean over the four 2×2 sub-blocks of the
/// absolute gradient projected on 0°, 60° and 120°.
pub fn describe_window<T: Scalar>(at: impl Fn(isize, isize) -> T) -> [T; NUM_CHANNELS] {
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let ninth = T::lit(1.0 / 9.0);
    let dirs: [(T, T); 3] = [0.0f64, 60.0, 120.0].map(|deg: f64| {
        let (s, c) = deg.to_radians().sin_cos();
        (T::lit(c), T::lit(s))
    });
    let k = at(0, 0);
    let gx = (at(1, 0) - at(-1, 0)) * half;
    let gy = (at(0, 1) - at(0, -1)) * half;
    // moments taken relative to the center pixel
    let (mut s, mut s2) = (T::zero(), T::zero());
    for dr in -1..=1 {
        for dc in -1..=1 {
            let v = at(dc, dr) - k;
            s += v;
            s2 += v * v;
        }
    }
    let m = s * ninth;
    let var = (s2 * ninth - m * m).max(T::zero());
    let mut energy = [T::zero(); 3];
    for (bx, by) in [(-1, -1), (0, -1), (-1, 0), (0, 0)] {
        let (a, b) = (at(bx, by), at(bx + 1, by));
        let (c, d) = (at(bx, by + 1), at(bx + 1, by + 1));
        let bgx = ((b - a) + (d - c)) * half;
        let bgy = ((c - a) + (d - b)) * half;
        for (e, (ux, uy)) in energy.iter_mut().zip(&dirs) {
            *e += (bgx * *ux + bgy * *uy).abs() * quarter;
        }
    }
    [k, gx, gy, k + m, var.sqrt(), energy[0], energy[1], energy[2]]
}

/// Unstandardized descriptors. A pixel is valid iff its whole 3×3 window is
/// inside the image and valid; invalid pixels carry zeros.
pub fn raw_features<T: Scalar>(img: &Map2<T>) -> FeatureMap<T> {
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let mut data = vec![T::zero(); NUM_CHANNELS * n];
    let mut valid = vec![false; n];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let window_ok = (r - 1..=r + 1).all(|rr| (c - 1..=c + 1).all(|cc| img.is_valid(cc, rr)));
            if !window_ok {
                continue;
            }
            let i = r * w + c;
            valid[i] = true;
            let vals = describe_window(|dc, dr| img.get((c as isize + dc) as usize, (r as isize + dr) as usize));
            for (ch, v) in vals.into_iter().enumerate() {
                data[ch * n + i] = v;
            }
        }
    }
    FeatureMap {
        channels: NUM_CHANNELS,
        width: w,
        height: h,
        data,
        valid,
    }
}

/// Standardizes each channel to zero mean and unit variance over valid pixels.
/// Constant channels become all-zero.
pub fn standardize<T: Scalar>(fm: &mut FeatureMap<T>) {
    let n = fm.width * fm.height;
    for ch in 0..fm.channels {
        standardize_strided(&mut fm.data[ch * n..(ch + 1) * n], 1, 0, &fm.valid);
    }
}

/// Standardizes `data[i * stride + offset]` over the entries where `valid[i]`;
/// invalid entries are zeroed.
fn standardize_strided<T: Scalar>(data: &mut [T], stride: usize, offset: usize, valid: &[bool]) {
    let count = valid.iter().filter(|&&v| v).count();
    let idx = |i: usize| i * stride + offset;
    if count == 0 {
        (0..valid.len()).for_each(|i| data[idx(i)] = T::zero());
        return;
    }
    let cnt = T::from_usize_lossy(count);
    let mean = (0..valid.len())
        .filter(|&i| valid[i])
        .fold(T::zero(), |a, i| a + data[idx(i)])
        / cnt;
    let var = (0..valid.len())
        .filter(|&i| valid[i])
        .fold(T::zero(), |a, i| a + (data[idx(i)] - mean) * (data[idx(i)] - mean))
        / cnt;
    let sd = var.sqrt();
    let constant = sd <= T::lit(1e-12) * (T::one() + mean.abs());
    for (i, &ok) in valid.iter().enumerate() {
        let v = &mut data[idx(i)];
        *v = if ok && !constant { (*v - mean) / sd } else { T::zero() };
    }
}

pub fn extract_features<T: Scalar>(img: &Map2<T>) -> FeatureMap<T> {
    let mut fm = raw_features(img);
    standardize(&mut fm);
    fm
}

/// Per-view descriptor volume on the concentric sweep spheres.
///
/// Storage order is `D × H × W × C` (channels innermost); invalid voxels hold
/// all-zero features.
#[derive(Debug, Clone, PartialEq)]
pub struct SweptFeatureVolume<T> {
    pub channels: usize,
    pub bins: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> SweptFeatureVolume<T> {
    #[inline]
    pub fn voxel_index(&self, d: usize, col: usize, row: usize) -> usize {
        (d * self.height + row) * self.width + col
    }

    #[inline]
    pub fn feature(&self, voxel: usize) -> &[T] {
        &self.values[voxel * self.channels..(voxel + 1) * self.channels]
    }

    pub fn num_voxels(&self) -> usize {
        self.bins * self.width * self.height
    }

    /// `(C, D, H, W)`.
    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.bins, self.height, self.width]
    }
}

/// Precomputed ERP ray directions, row-major.
pub fn erp_rays<T: Scalar>(grid: &ErpGrid) -> Vec<Vec3<T>> {
    (0..grid.len())
        .map(|i| grid.pixel_ray(i % grid.width, i / grid.width))
        .collect()
}

pub fn build_swept_volume<T: Scalar>(
    features: &FeatureMap<T>,
    cam: &Camera<T>,
    grid: &ErpGrid,
    sampling: &InverseDepthSampling<T>,
) -> SweptFeatureVolume<T> {
    let c = features.channels;
    let depths = crate::rig::inv_depth_bins(sampling);
    let rays = erp_rays::<T>(grid);
    let plane = grid.len();
    let mut values = vec![T::zero(); depths.len() * plane * c];
    let mut valid = vec![false; depths.len() * plane];
    values
        .par_chunks_mut(plane * c)
        .zip(valid.par_chunks_mut(plane))
        .zip(depths.par_iter())
        .for_each(|((vals, oks), &depth)| {
            for (p, ray) in rays.iter().enumerate() {
                let proj = sweep_project(*ray, depth, cam).expect("positive depth and unit ray");
                if !proj.valid {
                    continue;
                }
                let out = &mut vals[p * c..(p + 1) * c];
                if features.sample_bilinear(proj.pixel[0], proj.pixel[1], out) {
                    oks[p] = true;
                } else {
                    out.iter_mut().for_each(|v| *v = T::zero());
                }
            }
        });
    SweptFeatureVolume {
        channels: c,
        bins: depths.len(),
        width: grid.width,
        height: grid.height,
        values,
        valid,
    }
}

/// Descriptors computed on the sweep spheres themselves.
///
/// Intensity is swept first (bilinear, strict validity); each depth slice is
/// then described per 3×3 ERP neighborhood, wrapping across the seam and
/// clamping at the poles, and every channel is standardized over the valid
/// voxels of the whole volume. A voxel is valid iff its whole neighborhood is.
pub fn build_sphere_volume<T: Scalar>(
    image: &Map2<T>,
    cam: &Camera<T>,
    grid: &ErpGrid,
    sampling: &InverseDepthSampling<T>,
) -> SweptFeatureVolume<T> {
    let intensity = FeatureMap {
        channels: 1,
        width: image.width,
        height: image.height,
        data: image.values.clone(),
        valid: image.valid.clone(),
    };
    let swept = build_swept_volume(&intensity, cam, grid, sampling);
    let (w, h) = (grid.width, grid.height);
    let plane = grid.len();
    let c = NUM_CHANNELS;
    let mut values = vec![T::zero(); swept.bins * plane * c];
    let mut valid = vec![false; swept.bins * plane];
    values
        .par_chunks_mut(plane * c)
        .zip(valid.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(d, (vals, oks))| {
            let sl = &swept.values[d * plane..(d + 1) * plane];
            let ok = &swept.valid[d * plane..(d + 1) * plane];
            for row in 0..h {
                for col in 0..w {
                    let at = |dc: isize, dr: isize| {
                        let cc = (col as isize + dc).rem_euclid(w as isize) as usize;
                        let rr = (row as isize + dr).clamp(0, h as isize - 1) as usize;
                        rr * w + cc
                    };
                    if !(-1..=1).all(|dr| (-1..=1).all(|dc| ok[at(dc, dr)])) {
                        continue;
                    }
                    let p = row * w + col;
                    oks[p] = true;
                    vals[p * c..(p + 1) * c].copy_from_slice(&describe_window(|dc, dr| sl[at(dc, dr)]));
                }
            }
        });
    for ch in 0..c {
        standardize_strided(&mut values, c, ch, &valid);
    }
    SweptFeatureVolume {
        channels: c,
        bins: swept.bins,
        width: w,
        height: h,
        values,
        valid,
    }
}
