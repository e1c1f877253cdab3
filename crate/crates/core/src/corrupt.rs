//! Deterministic view corruption with circular noise / blur occlusions.
//!
//! Draw order for one `(sample, camera)` stream:
//!
//! 1. `u`: the image is corrupted iff `u < probability`;
//! 2. occlusion count, uniform in `count_range`;
//! 3. per occlusion: center x, center y, radius fraction, type (`< 0.5` is
//!    noise, otherwise blur). Noise occlusions then draw one perturbation per
//!    covered pixel in row-major order before the next occlusion is drawn.
//!
//! Occlusions are applied in draw order, each to the output of the previous.

use crate::error::{Error, Result};
use crate::image::Map2;
use crate::rng::{tag, Stream};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclusionKind {
    Noise,
    Blur,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    probability: f64,
    count_range: (u64, u64),
    radius_fraction: (f64, f64),
    blur_size: usize,
    blur_sigma: f64,
    noise_amplitude: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            probability: 0.3,
            count_range: (1, 4),
            radius_fraction: (0.01, 0.1),
            blur_size: 15,
            blur_sigma: 5.0,
            noise_amplitude: 0.5,
        }
    }
}

impl CorruptionSpec {
    pub fn with_noise_amplitude(amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude <= 1.0) {
            return Err(Error::InputDomain(format!("noise amplitude must lie in (0, 1], got {amplitude}")));
        }
        Ok(Self {
            noise_amplitude: amplitude,
            ..Self::default()
        })
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn count_range(&self) -> (u64, u64) {
        self.count_range
    }

    pub fn radius_fraction(&self) -> (f64, f64) {
        self.radius_fraction
    }

    pub fn blur_size(&self) -> usize {
        self.blur_size
    }

    pub fn blur_sigma(&self) -> f64 {
        self.blur_sigma
    }

    pub fn noise_amplitude(&self) -> f64 {
        self.noise_amplitude
    }
}

/// One sampled circular occlusion, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occlusion {
    pub center: [f64; 2],
    pub radius: f64,
    pub kind: OcclusionKind,
}

impl Occlusion {
    pub fn contains(&self, col: usize, row: usize) -> bool {
        let dx = col as f64 - self.center[0];
        let dy = row as f64 - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Normalized 1D Gaussian taps; the 2D kernel is their outer product.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur<T: Scalar>(img: &Map2<T>, size: usize, sigma: f64) -> Map2<T> {
    let k: Vec<T> = gaussian_kernel_1d(size, sigma).into_iter().map(T::lit).collect();
    let half = (size / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let clampi = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let mut tmp = vec![T::zero(); img.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = T::zero();
            for (t, &wt) in k.iter().enumerate() {
                acc += wt * img.get(clampi(c + t as isize - half, w), r as usize);
            }
            tmp[(r * w + c) as usize] = acc;
        }
    }
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            let mut acc = T::zero();
            for (t, &wt) in k.iter().enumerate() {
                acc += wt * tmp[clampi(r + t as isize - half, h) * w as usize + c as usize];
            }
            out.values[(r * w + c) as usize] = acc;
        }
    }
    out
}

/// Seed stream for `(sample_idx, cam_idx)`.
pub fn corruption_stream(sample_idx: u64, cam_idx: u64) -> Stream {
    Stream::from_keys(&[tag("corrupt"), sample_idx, cam_idx])
}

/// Applies one occlusion to `img` in place, drawing noise from `rng`.
pub fn apply_occlusion<T: Scalar>(img: &mut Map2<T>, occ: &Occlusion, spec: &CorruptionSpec, rng: &mut Stream) {
    let (w, h) = (img.width, img.height);
    let r0 = (occ.center[1] - occ.radius).floor().max(0.0) as usize;
    let r1 = ((occ.center[1] + occ.radius).ceil().max(0.0) as usize).min(h.saturating_sub(1));
    let c0 = (occ.center[0] - occ.radius).floor().max(0.0) as usize;
    let c1 = ((occ.center[0] + occ.radius).ceil().max(0.0) as usize).min(w.saturating_sub(1));
    match occ.kind {
        OcclusionKind::Noise => {
            let a = spec.noise_amplitude;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if occ.contains(c, r) {
                        let i = img.idx(c, r);
                        let v = img.values[i].as_f64() + rng.uniform_range(-a, a);
                        img.values[i] = T::lit(v.clamp(0.0, 1.0));
                    }
                }
            }
        }
        OcclusionKind::Blur => {
            let blurred = gaussian_blur(img, spec.blur_size, spec.blur_sigma);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if occ.contains(c, r) {
                        let i = img.idx(c, r);
                        img.values[i] = blurred.values[i];
                    }
                }
            }
        }
    }
}

/// Corrupts `img` according to the protocol, returning the image and the
/// occlusions that were applied (empty when the trigger draw fails).
pub fn corrupt_with_log<T: Scalar>(
    img: &Map2<T>,
    sample_idx: u64,
    cam_idx: u64,
    spec: &CorruptionSpec,
) -> Result<(Map2<T>, Vec<Occlusion>)> {
    if let Some(v) = img
        .values
        .iter()
        .find(|v| !(**v >= T::zero() && **v <= T::one()))
    {
        return Err(Error::InputDomain(format!("image value {v} outside [0, 1]")));
    }
    let mut rng = corruption_stream(sample_idx, cam_idx);
    let mut out = img.clone();
    let mut log = Vec::new();
    if rng.uniform() >= spec.probability {
        return Ok((out, log));
    }
    let count = rng.int_inclusive(spec.count_range.0, spec.count_range.1);
    let min_dim = img.width.min(img.height) as f64;
    for _ in 0..count {
        let center = [rng.uniform() * img.width as f64, rng.uniform() * img.height as f64];
        let radius = rng.uniform_range(spec.radius_fraction.0, spec.radius_fraction.1) * min_dim;
        let kind = if rng.uniform() < 0.5 {
            OcclusionKind::Noise
        } else {
            OcclusionKind::Blur
        };
        let occ = Occlusion { center, radius, kind };
        apply_occlusion(&mut out, &occ, spec, &mut rng);
        log.push(occ);
    }
    Ok((out, log))
}

pub fn corrupt<T: Scalar>(img: &Map2<T>, sample_idx: u64, cam_idx: u64, spec: &CorruptionSpec) -> Result<Map2<T>> {
    corrupt_with_log(img, sample_idx, cam_idx, spec).map(|(out, _)| out)
}
