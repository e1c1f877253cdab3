//! Depth from a consistency volume: winner-take-all, parabolic sub-bin
//! refinement, a deterministic windowed refinement loop, convex 2×
//! upsampling and the exponentially weighted sequence loss.
//!
//! Depth maps hold continuous inverse-depth indices in `[0, D − 1]`.

use crate::error::{Error, Result};
use crate::image::Map2;
use crate::vct::ConsistencyVolume;
use crate::Scalar;
use rayon::prelude::*;

pub type InverseDepthMap<T> = Map2<T>;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RefineConfig<T> {
    pub iterations: usize,
    pub radius: usize,
    /// Max-pooled bin pyramid depth; 1 searches the fine bins only.
    pub levels: usize,
    pub gamma: T,
    pub smoothing: bool,
}

impl<T: Scalar> Default for RefineConfig<T> {
    fn default() -> Self {
        Self {
            iterations: 8,
            radius: 4,
            levels: 4,
            gamma: T::lit(0.9),
            smoothing: true,
        }
    }
}

impl<T: Scalar> RefineConfig<T> {
    pub fn validate(&self, bins: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("refinement needs at least one iteration".into()));
        }
        if self.radius == 0 || self.radius >= bins {
            return Err(Error::Config(format!("radius must lie in [1, {}), got {}", bins, self.radius)));
        }
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::Config(format!("levels must lie in [1, 16], got {}", self.levels)));
        }
        if !(self.gamma > T::zero() && self.gamma < T::one()) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Index of the maximal valid bin along `[lo, hi]`, ties to the lower index.
fn argmax_in<T: Scalar>(vol: &ConsistencyVolume<T>, col: usize, row: usize, lo: usize, hi: usize) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for d in lo..=hi {
        if let Some(v) = vol.get(d, col, row) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((d, v));
            }
        }
    }
    best.map(|(d, _)| d)
}

pub fn wta_depth<T: Scalar>(vol: &ConsistencyVolume<T>) -> InverseDepthMap<T> {
    let (w, h) = (vol.width, vol.height);
    let (values, valid): (Vec<T>, Vec<bool>) = (0..w * h)
        .into_par_iter()
        .map(|i| match argmax_in(vol, i % w, i / w, 0, vol.bins - 1) {
            Some(d) => (T::from_usize_lossy(d), true),
            None => (T::zero(), false),
        })
        .unzip();
    Map2 {
        width: w,
        height: h,
        values,
        valid,
    }
}

/// Vertex offset of the parabola through `(−1, vm)`, `(0, v0)`, `(1, vp)`,
/// clamped to `[−1, 1]`; zero when the three points are not strictly concave.
pub fn parabola_offset<T: Scalar>(vm: T, v0: T, vp: T) -> T {
    let denom = vm - v0 - v0 + vp;
    if !(denom < T::zero()) {
        return T::zero();
    }
    (T::lit(0.5) * (vm - vp) / denom).max(-T::one()).min(T::one())
}

fn refine_at<T: Scalar>(vol: &ConsistencyVolume<T>, col: usize, row: usize, m: usize) -> T {
    let base = T::from_usize_lossy(m);
    if m == 0 || m + 1 >= vol.bins {
        return base;
    }
    match (vol.get(m - 1, col, row), vol.get(m, col, row), vol.get(m + 1, col, row)) {
        (Some(a), Some(b), Some(c)) => base + parabola_offset(a, b, c),
        _ => base,
    }
}

pub fn subbin_refine<T: Scalar>(vol: &ConsistencyVolume<T>, wta: &InverseDepthMap<T>) -> InverseDepthMap<T> {
    let w = vol.width;
    let values = (0..wta.len())
        .into_par_iter()
        .map(|i| {
            if !wta.valid[i] {
                return wta.values[i];
            }
            let m = wta.values[i].round().to_usize().unwrap_or(0).min(vol.bins - 1);
            refine_at(vol, i % w, i / w, m)
        })
        .collect();
    Map2 {
        values,
        ..wta.clone()
    }
}

/// One pass of 3×3 validity-weighted averaging; columns wrap, rows clamp.
pub fn smooth3x3<T: Scalar>(map: &InverseDepthMap<T>) -> InverseDepthMap<T> {
    let (w, h) = (map.width, map.height);
    let values = (0..w * h)
        .into_par_iter()
        .map(|i| {
            if !map.valid[i] {
                return map.values[i];
            }
            let (c, r) = (i % w, i / w);
            let (mut s, mut n) = (T::zero(), 0usize);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for dc in [w - 1, 0, 1] {
                    let j = rr * w + (c + dc) % w;
                    if map.valid[j] {
                        s += map.values[j];
                        n += 1;
                    }
                }
            }
            s / T::from_usize_lossy(n)
        })
        .collect();
    Map2 {
        values,
        ..map.clone()
    }
}

/// Window of `2r + 1` bins centered on `center`, shifted to stay in range.
fn window(center: usize, r: usize, bins: usize) -> (usize, usize) {
    let span = (2 * r).min(bins - 1);
    let lo = center.saturating_sub(r).min(bins - 1 - span);
    (lo, lo + span)
}

/// Consistency pooled by pairwise max along the bin axis; level 0 is the
/// volume itself. A pooled bin is valid iff any of its children is.
struct BinPyramid<T> {
    plane: usize,
    levels: Vec<(usize, Vec<Option<T>>)>,
}

impl<T: Scalar> BinPyramid<T> {
    fn new(vol: &ConsistencyVolume<T>, levels: usize) -> Self {
        let plane = vol.plane_len();
        let base: Vec<Option<T>> = vol
            .values
            .iter()
            .zip(&vol.valid)
            .map(|(&v, &ok)| ok.then_some(v))
            .collect();
        let mut out = vec![(vol.bins, base)];
        for _ in 1..levels {
            let (pd, prev) = out.last().expect("base level");
            let nd = pd.div_ceil(2);
            let pooled = (0..nd * plane)
                .map(|i| {
                    let (b, p) = (i / plane, i % plane);
                    (2 * b..(2 * b + 2).min(*pd))
                        .filter_map(|k| prev[k * plane + p])
                        .reduce(|a, v| if v > a { v } else { a })
                })
                .collect();
            out.push((nd, pooled));
        }
        Self { plane, levels: out }
    }

    /// Coarse-to-fine window search from level `top` down to the fine bins,
    /// each window of radius `r` centered on the previous level's pick.
    fn descend(&self, pixel: usize, start: T, top: usize, r: usize) -> Option<usize> {
        let half = T::lit(0.5);
        let mut center = start;
        let mut pick = None;
        for l in (0..=top).rev() {
            let (bins, values) = &self.levels[l];
            let scale = T::from_usize_lossy(1 << l);
            let c = ((center + half) / scale - half).round().max(T::zero());
            let c = c.to_usize().unwrap_or(0).min(bins - 1);
            let (lo, hi) = window(c, r, *bins);
            let mut best: Option<(usize, T)> = None;
            for b in lo..=hi {
                if let Some(v) = values[b * self.plane + pixel] {
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((b, v));
                    }
                }
            }
            if let Some((b, _)) = best {
                center = (T::from_usize_lossy(b) + half) * scale - half;
                if l == 0 {
                    pick = Some(b);
                }
            }
        }
        pick
    }
}

/// Starts from a zero map and repeatedly moves each pixel to the refined
/// argmax of a bin window around its estimate, followed by optional spatial
/// smoothing. Returns every intermediate map.
///
/// Iteration `i` starts its search at pyramid level `levels − 1 − i` (at
/// least 0) and descends to the fine bins, so early iterations look far and
/// later ones stay local. With `levels = 1` every step is a plain window of
/// `2r + 1` fine bins.
pub fn iterative_refine<T: Scalar>(vol: &ConsistencyVolume<T>, cfg: &RefineConfig<T>) -> Result<Vec<InverseDepthMap<T>>> {
    cfg.validate(vol.bins)?;
    let (w, h) = (vol.width, vol.height);
    let pyramid = BinPyramid::new(vol, cfg.levels);
    let any_valid: Vec<bool> = (0..w * h)
        .map(|i| (0..vol.bins).any(|d| vol.valid[d * w * h + i]))
        .collect();
    let dmax = T::from_usize_lossy(vol.bins - 1);
    let mut current = Map2 {
        width: w,
        height: h,
        values: vec![T::zero(); w * h],
        valid: any_valid,
    };
    let mut out = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let top = cfg.levels.saturating_sub(1 + it);
        let values = (0..w * h)
            .into_par_iter()
            .map(|i| {
                if !current.valid[i] {
                    return T::zero();
                }
                match pyramid.descend(i, current.values[i], top, cfg.radius) {
                    Some(m) => refine_at(vol, i % w, i / w, m),
                    None => current.values[i],
                }
            })
            .collect();
        let mut next = Map2 {
            values,
            ..current.clone()
        };
        if cfg.smoothing {
            next = smooth3x3(&next);
        }
        next.values.iter_mut().for_each(|v| *v = v.max(T::zero()).min(dmax));
        out.push(next.clone());
        current = next;
    }
    Ok(out)
}

/// Convex weights for 2× upsampling: for every coarse pixel and each of its
/// four fine sub-pixels (row-major within the 2×2 block), nine weights over
/// the coarse 3×3 neighborhood (row-major, offsets −1..=1).
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleMask<T> {
    pub width: usize,
    pub height: usize,
    weights: Vec<T>,
}

impl<T: Scalar> UpsampleMask<T> {
    pub fn from_weights(width: usize, height: usize, weights: Vec<T>) -> Result<Self> {
        if weights.len() != width * height * 36 {
            return Err(Error::Config(format!(
                "mask for {width}×{height} needs {} weights, got {}",
                width * height * 36,
                weights.len()
            )));
        }
        let mask = Self { width, height, weights };
        mask.check()?;
        Ok(mask)
    }

    fn from_kernel(width: usize, height: usize, kernel: [T; 9]) -> Self {
        Self {
            width,
            height,
            weights: kernel.repeat(width * height * 4),
        }
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        Self::from_kernel(width, height, [T::lit(1.0 / 9.0); 9])
    }

    /// One-hot at the center: plain nearest-neighbor replication.
    pub fn nearest(width: usize, height: usize) -> Self {
        let mut k = [T::zero(); 9];
        k[4] = T::one();
        Self::from_kernel(width, height, k)
    }

    pub fn weights(&self, col: usize, row: usize, sub: usize) -> &[T] {
        let o = ((row * self.width + col) * 4 + sub) * 9;
        &self.weights[o..o + 9]
    }

    fn check(&self) -> Result<()> {
        for (n, w) in self.weights.chunks(9).enumerate() {
            let sum = w.iter().fold(T::zero(), |a, &b| a + b);
            if w.iter().any(|&x| !(x >= T::zero())) || (sum - T::one()).abs() > T::lit(1e-9) {
                return Err(Error::InputDomain(format!(
                    "upsample weights at pixel {} sub-pixel {} are not convex (sum {sum})",
                    n / 4,
                    n % 4
                )));
            }
        }
        Ok(())
    }
}

/// Each fine pixel is the convex combination of its coarse 3×3 neighborhood.
/// Invalid coarse neighbors are dropped and the remaining weights
/// renormalized; a fine pixel inherits the validity of its coarse parent.
pub fn convex_upsample<T: Scalar>(coarse: &InverseDepthMap<T>, mask: &UpsampleMask<T>) -> Result<InverseDepthMap<T>> {
    if mask.width != coarse.width || mask.height != coarse.height {
        return Err(Error::Config(format!(
            "mask is {}×{}, map is {}×{}",
            mask.width, mask.height, coarse.width, coarse.height
        )));
    }
    mask.check()?;
    let (w, h) = (coarse.width, coarse.height);
    let (fw, fh) = (2 * w, 2 * h);
    let (values, valid): (Vec<T>, Vec<bool>) = (0..fw * fh)
        .into_par_iter()
        .map(|i| {
            let (fc, fr) = (i % fw, i / fw);
            let (c, r) = (fc / 2, fr / 2);
            let parent = coarse.idx(c, r);
            if !coarse.valid[parent] {
                return (coarse.values[parent], false);
            }
            let wts = mask.weights(c, r, (fr % 2) * 2 + fc % 2);
            let (mut s, mut z) = (T::zero(), T::zero());
            for (t, &wt) in wts.iter().enumerate() {
                let rr = (r + t / 3).saturating_sub(1).min(h - 1);
                let cc = (c + w + t % 3 - 1) % w;
                let j = coarse.idx(cc, rr);
                if coarse.valid[j] {
                    s += wt * coarse.values[j];
                    z += wt;
                }
            }
            let v = if z > T::zero() { s / z } else { coarse.values[parent] };
            (v, true)
        })
        .unzip();
    Ok(Map2 {
        width: fw,
        height: fh,
        values,
        valid,
    })
}

/// `Σ_i γ^{M−i} · mean_Ω |gt − pred_i|` over the pixels where `mask` holds.
pub fn sequence_loss<T: Scalar>(preds: &[InverseDepthMap<T>], gt: &InverseDepthMap<T>, gamma: T, mask: &[bool]) -> Result<T> {
    if preds.is_empty() {
        return Err(Error::Config("no predictions".into()));
    }
    if mask.len() != gt.len() || preds.iter().any(|p| !p.same_shape(gt)) {
        return Err(Error::Config("prediction, ground truth and mask shapes differ".into()));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::InputDomain("empty valid set".into()));
    }
    let m = preds.len();
    let n = T::from_usize_lossy(count);
    let mut loss = T::zero();
    for (i, p) in preds.iter().enumerate() {
        let sum = mask
            .iter()
            .zip(p.values.iter().zip(&gt.values))
            .filter(|(&ok, _)| ok)
            .fold(T::zero(), |acc, (_, (&a, &b))| acc + (b - a).abs());
        loss += gamma.powi((m - 1 - i) as i32) * (sum / n);
    }
    Ok(loss)
}
