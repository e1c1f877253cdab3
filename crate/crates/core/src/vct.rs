//! View-pair correlation transformer.
//!
//! At every voxel the vector `c` of pair correlations is fused into one
//! consistency score:
//!
//! ```text
//! S = c cᵀ / √V_p
//! A = row_softmax((S + G) / τ)
//! fused = mean_i (A c)_i
//! ```
//!
//! In inference mode `G = 0` and each row of `S` is hard-masked to its `k`
//! largest entries before the softmax. In training mode `G` holds i.i.d.
//! standard Gumbel noise and no hard mask is applied, which keeps the fusion
//! differentiable in `c`.
//!
//! Pairs flagged invalid in the correlation tensor are removed before any of
//! the above: they get neither a row nor a column, and `k` is capped at the
//! number of valid pairs. `V_p` in the `1/√V_p` scale stays the full pair
//! count.

use crate::correlation::CorrelationTensor;
use crate::error::{Error, Result};
use crate::image::Map2;
use crate::rng::{derive_seed, tag, Stream};
use crate::Scalar;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VctConfig<T> {
    pub temperature: T,
    pub k: usize,
    pub mode: Mode,
    pub gumbel_seed: u64,
}

impl<T: Scalar> Default for VctConfig<T> {
    fn default() -> Self {
        Self {
            temperature: T::one(),
            k: 3,
            mode: Mode::Infer,
            gumbel_seed: 0,
        }
    }
}

impl<T: Scalar> VctConfig<T> {
    pub fn infer(k: usize, temperature: T) -> Self {
        Self {
            temperature,
            k,
            mode: Mode::Infer,
            gumbel_seed: 0,
        }
    }

    pub fn validate(&self, num_pairs: usize) -> Result<()> {
        if !(self.temperature > T::zero()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.k == 0 || self.k > num_pairs {
            return Err(Error::Config(format!("k must lie in [1, {num_pairs}], got {}", self.k)));
        }
        Ok(())
    }
}

/// How pair correlations are reduced to a single consistency score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fusion<T> {
    Vct(VctConfig<T>),
    /// Unweighted mean over valid pairs.
    PlainMean,
}

/// Fused consistency `D × H × W`, stored bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyVolume<T> {
    pub bins: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> ConsistencyVolume<T> {
    #[inline]
    pub fn index(&self, d: usize, col: usize, row: usize) -> usize {
        (d * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, d: usize, col: usize, row: usize) -> Option<T> {
        let i = self.index(d, col, row);
        self.valid[i].then(|| self.values[i])
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    /// Volume filled from a per-voxel closure `f(d, col, row)`.
    pub fn from_fn(bins: usize, width: usize, height: usize, f: impl Fn(usize, usize, usize) -> Option<T>) -> Self {
        let mut values = Vec::with_capacity(bins * width * height);
        let mut valid = Vec::with_capacity(bins * width * height);
        for d in 0..bins {
            for r in 0..height {
                for c in 0..width {
                    let v = f(d, c, r);
                    values.push(v.unwrap_or(T::zero()));
                    valid.push(v.is_some());
                }
            }
        }
        Self {
            bins,
            width,
            height,
            values,
            valid,
        }
    }

    /// One depth slice as a 2D map.
    pub fn slice(&self, d: usize) -> Map2<T> {
        let n = self.plane_len();
        Map2 {
            width: self.width,
            height: self.height,
            values: self.values[d * n..(d + 1) * n].to_vec(),
            valid: self.valid[d * n..(d + 1) * n].to_vec(),
        }
    }
}

/// `c cᵀ / √V_p` as a row-major `V_p × V_p` matrix.
pub fn self_similarity<T: Scalar>(c: &[T]) -> Vec<T> {
    self_similarity_scaled(c, c.len())
}

fn self_similarity_scaled<T: Scalar>(c: &[T], num_pairs: usize) -> Vec<T> {
    let s = T::from_usize_lossy(num_pairs).sqrt().recip();
    c.iter()
        .flat_map(|&a| c.iter().map(move |&b| a * b * s))
        .collect()
}

/// Standard Gumbel matrix from the seed's SplitMix64 stream, row-major.
pub fn gumbel_noise<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Vec<T> {
    let mut rng = Stream::new(seed);
    (0..rows * cols).map(|_| T::lit(rng.gumbel())).collect()
}

/// Keeps the `k` largest entries of each row and sets the rest to `−∞`.
/// Ties go to the lower column index.
pub fn topk_mask<T: Scalar>(s: &[T], n: usize, k: usize) -> Vec<T> {
    let mut out = s.to_vec();
    if k >= n {
        return out;
    }
    let mut order: Vec<usize> = (0..n).collect();
    for (row, orow) in s.chunks(n).zip(out.chunks_mut(n)) {
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        for &j in &order[k..] {
            orow[j] = T::neg_infinity();
        }
    }
    out
}

/// Row softmax of `(S + G) / τ`; `−∞` entries of `S` get exactly zero weight.
pub fn attention<T: Scalar>(s: &[T], g: Option<&[T]>, n: usize, tau: T) -> Vec<T> {
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        let row = &s[i * n..(i + 1) * n];
        let logits: Vec<T> = (0..n)
            .map(|j| {
                let gij = g.map_or(T::zero(), |g| g[i * n + j]);
                (row[j] + gij) / tau
            })
            .collect();
        let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let out = &mut a[i * n..(i + 1) * n];
        let mut z = T::zero();
        for (o, &l) in out.iter_mut().zip(&logits) {
            *o = if l == T::neg_infinity() { T::zero() } else { (l - m).exp() };
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }
    a
}

/// Mean of `A c`.
pub fn fuse<T: Scalar>(c: &[T], a: &[T]) -> T {
    let n = c.len();
    let total = (0..n).fold(T::zero(), |acc, i| {
        acc + (0..n).fold(T::zero(), |r, j| r + a[i * n + j] * c[j])
    });
    total / T::from_usize_lossy(n)
}

/// Fused score of one fully valid correlation vector.
pub fn fuse_vector<T: Scalar>(c: &[T], cfg: &VctConfig<T>, g: Option<&[T]>) -> T {
    let n = c.len();
    let s = self_similarity(c);
    match cfg.mode {
        Mode::Infer => fuse(c, &attention(&topk_mask(&s, n, cfg.k.min(n)), None, n, cfg.temperature)),
        Mode::Train => fuse(c, &attention(&s, g, n, cfg.temperature)),
    }
}

/// Per-voxel Gumbel seed.
pub fn voxel_gumbel_seed(seed: u64, voxel: usize) -> u64 {
    derive_seed(&[tag("gumbel"), seed, voxel as u64])
}

/// Fuses one voxel of a correlation tensor; `None` when no pair is valid.
pub fn fuse_voxel<T: Scalar>(c: &[T], valid: &[bool], fusion: &Fusion<T>, voxel: usize) -> Option<T> {
    let idx: Vec<usize> = (0..c.len()).filter(|&p| valid[p]).collect();
    if idx.is_empty() {
        return None;
    }
    let cv: Vec<T> = idx.iter().map(|&p| c[p]).collect();
    let n = cv.len();
    match fusion {
        Fusion::PlainMean => Some(cv.iter().fold(T::zero(), |a, &x| a + x) / T::from_usize_lossy(n)),
        Fusion::Vct(cfg) => {
            let s = self_similarity_scaled(&cv, c.len());
            let a = match cfg.mode {
                Mode::Infer => attention(&topk_mask(&s, n, cfg.k.min(n)), None, n, cfg.temperature),
                Mode::Train => {
                    let full = gumbel_noise::<T>(c.len(), c.len(), voxel_gumbel_seed(cfg.gumbel_seed, voxel));
                    let g: Vec<T> = idx
                        .iter()
                        .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
                        .map(|(i, j)| full[i * c.len() + j])
                        .collect();
                    attention(&s, Some(&g), n, cfg.temperature)
                }
            };
            Some(fuse(&cv, &a))
        }
    }
}

/// Columns kept by the hard Top-k mask in each valid row, keyed by pair index.
/// Invalid rows are `None`.
pub fn hard_selection<T: Scalar>(c: &[T], valid: &[bool], k: usize) -> Vec<Option<Vec<usize>>> {
    let idx: Vec<usize> = (0..c.len()).filter(|&p| valid[p]).collect();
    let cv: Vec<T> = idx.iter().map(|&p| c[p]).collect();
    let n = cv.len();
    let masked = topk_mask(&self_similarity_scaled(&cv, c.len()), n, k.min(n));
    let mut out = vec![None; c.len()];
    for (r, &p) in idx.iter().enumerate() {
        let kept = (0..n)
            .filter(|&j| masked[r * n + j] != T::neg_infinity())
            .map(|j| idx[j])
            .collect();
        out[p] = Some(kept);
    }
    out
}

pub fn vct_forward<T: Scalar>(tensor: &CorrelationTensor<T>, fusion: &Fusion<T>) -> Result<ConsistencyVolume<T>> {
    if let Fusion::Vct(cfg) = fusion {
        cfg.validate(tensor.num_pairs())?;
    }
    let (values, valid): (Vec<T>, Vec<bool>) = (0..tensor.num_voxels())
        .into_par_iter()
        .map(|voxel| {
            let (c, ok) = tensor.voxel(voxel);
            match fuse_voxel(c, ok, fusion, voxel) {
                Some(v) => (v, true),
                None => (T::zero(), false),
            }
        })
        .unzip();
    Ok(ConsistencyVolume {
        bins: tensor.bins,
        width: tensor.width,
        height: tensor.height,
        values,
        valid,
    })
}

/// Gradient of the training-mode fused score with respect to `c`, for fixed
/// Gumbel noise `g` (row-major `V_p × V_p`).
///
/// With `c̃_i = Σ_j A_ij c_j` and `v_i = Σ_j A_ij (c_j − c̃_i) c_j`:
///
/// ```text
/// ∂fused/∂c_m = (1/V_p) [ Σ_i A_im + ( v_m + Σ_i c_i A_im (c_m − c̃_i) ) / (τ √V_p) ]
/// ```
pub fn grad_fused_wrt_c<T: Scalar>(c: &[T], g: &[T], tau: T) -> Vec<T> {
    let n = c.len();
    let a = attention(&self_similarity(c), Some(g), n, tau);
    let ct: Vec<T> = (0..n)
        .map(|i| (0..n).fold(T::zero(), |acc, j| acc + a[i * n + j] * c[j]))
        .collect();
    let var: Vec<T> = (0..n)
        .map(|i| (0..n).fold(T::zero(), |acc, j| acc + a[i * n + j] * (c[j] - ct[i]) * c[j]))
        .collect();
    let nn = T::from_usize_lossy(n);
    let scale = (tau * nn.sqrt()).recip();
    (0..n)
        .map(|m| {
            let col: T = (0..n).fold(T::zero(), |acc, i| acc + a[i * n + m]);
            let cross: T = (0..n).fold(T::zero(), |acc, i| acc + c[i] * a[i * n + m] * (c[m] - ct[i]));
            (col + (var[m] + cross) * scale) / nn
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const RS6: f64 = 0.408_248_290_463_863; // 1/√6

    #[test]
    fn self_similarity_examples() {
        let s = self_similarity(&[1.0; 6]);
        assert!(s.iter().all(|&v| (v - RS6).abs() < 1e-12));
        let mut e1 = [0.0; 6];
        e1[0] = 1.0;
        let s = self_similarity(&e1);
        assert_abs_diff_eq!(s[0], RS6, epsilon = 1e-12);
        assert!(s[1..].iter().all(|&v| v == 0.0));
        e1[0] = 2.0;
        assert_abs_diff_eq!(self_similarity(&e1)[0], 4.0 * RS6, epsilon = 1e-12);
    }

    #[test]
    fn gumbel_is_deterministic_per_seed() {
        let a: Vec<f64> = gumbel_noise(6, 6, 99);
        let b: Vec<f64> = gumbel_noise(6, 6, 99);
        assert_eq!(a, b);
        assert_ne!(a, gumbel_noise::<f64>(6, 6, 100));
    }

    #[test]
    fn topk_examples() {
        let row = [5.0, 4.0, 3.0, 2.0, 1.0, 0.0];
        let s: Vec<f64> = row.iter().chain(row.iter()).copied().collect::<Vec<_>>().repeat(3);
        let m = topk_mask(&s, 6, 3);
        for r in 0..6 {
            for j in 0..6 {
                assert_eq!(m[r * 6 + j] == f64::NEG_INFINITY, j >= 3);
            }
        }
        assert_eq!(topk_mask(&s, 6, 6), s);
        let flat = vec![1.0f64; 36];
        let m = topk_mask(&flat, 6, 2);
        for r in 0..6 {
            let kept: Vec<usize> = (0..6).filter(|&j| m[r * 6 + j].is_finite()).collect();
            assert_eq!(kept, vec![0, 1]);
        }
    }

    #[test]
    fn attention_constant_is_uniform() {
        let a = attention(&[0.3f64; 36], None, 6, 1.0);
        assert!(a.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn attention_low_temperature_is_one_hot() {
        let c = [0.5, -0.2, 0.9, 0.1, 0.3, -0.7];
        let s = self_similarity(&c);
        let a = attention(&s, None, 6, 1e-6);
        for i in 0..6 {
            let row = &s[i * 6..(i + 1) * 6];
            let amax = (0..6).max_by(|&x, &y| row[x].partial_cmp(&row[y]).unwrap()).unwrap();
            for j in 0..6 {
                let expect = if j == amax { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(a[i * 6 + j], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn k1_rows_are_exactly_one_hot() {
        let c = [0.05, 0.02, -0.03, 0.04, 0.01, 0.0];
        let s = self_similarity(&c);
        for tau in [1e-3, 1.0, 1e3] {
            let a = attention(&topk_mask(&s, 6, 1), None, 6, tau);
            for i in 0..6 {
                let row = &a[i * 6..(i + 1) * 6];
                assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 5);
            }
        }
    }

    #[test]
    fn fuse_examples() {
        let c = [0.1, 0.2, 0.3, -0.1, 0.0, 0.5];
        let uniform = vec![1.0 / 6.0; 36];
        assert_abs_diff_eq!(fuse(&c, &uniform), c.iter().sum::<f64>() / 6.0, epsilon = 1e-15);
        let mut onehot = vec![0.0; 36];
        for i in 0..6 {
            onehot[i * 6 + 2] = 1.0;
        }
        assert_abs_diff_eq!(fuse(&c, &onehot), 0.3, epsilon = 1e-15);
    }

    /// Straight-line evaluation of the fused score for one vector, written
    /// independently of the helpers above.
    fn oracle_fused(c: &[f64], tau: f64, k: usize) -> f64 {
        let n = c.len();
        let mut total = 0.0;
        for i in 0..n {
            let s: Vec<f64> = (0..n).map(|j| c[i] * c[j] / (n as f64).sqrt()).collect();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
            let kept = &idx[..k];
            let m = kept.iter().map(|&j| s[j]).fold(f64::MIN, f64::max);
            let z: f64 = kept.iter().map(|&j| ((s[j] - m) / tau).exp()).sum();
            total += kept.iter().map(|&j| ((s[j] - m) / tau).exp() / z * c[j]).sum::<f64>();
        }
        total / n as f64
    }

    #[test]
    fn fuse_matches_direct_evaluation() {
        let c = [0.10, 0.09, 0.11, -0.05, 0.10, 0.08];
        let cfg = VctConfig::infer(3, 1.0);
        let got = fuse_vector(&c, &cfg, None);
        let expect = oracle_fused(&c, 1.0, 3);
        assert_abs_diff_eq!(got, expect, epsilon = 1e-15);
        // frozen from the oracle above
        assert_abs_diff_eq!(got, 0.092_764_662_275_365, epsilon = 1e-14);
    }

    #[test]
    fn forward_with_equal_correlations_returns_that_value() {
        for k in 1..=6 {
            let v = fuse_voxel(&[0.07; 6], &[true; 6], &Fusion::Vct(VctConfig::infer(k, 1.0)), 0).unwrap();
            assert_abs_diff_eq!(v, 0.07, epsilon = 1e-15);
        }
    }

    #[test]
    fn invalid_pairs_are_excluded() {
        let c = [0.1, 0.9, 0.2, -0.5, 0.0, 0.0];
        let valid = [true, false, true, true, false, false];
        let cfg = Fusion::Vct(VctConfig::infer(3, 1.0));
        let got = fuse_voxel(&c, &valid, &cfg, 0).unwrap();
        // three valid pairs, k = 3 keeps all of them
        let cv = [0.1, 0.2, -0.5];
        let s: Vec<f64> = self_similarity_scaled(&cv, 6);
        let expect = fuse(&cv, &attention(&s, None, 3, 1.0));
        assert_abs_diff_eq!(got, expect, epsilon = 1e-15);
        assert!(fuse_voxel(&c, &[false; 6], &cfg, 0).is_none());
        let mean = fuse_voxel(&c, &valid, &Fusion::PlainMean, 0).unwrap();
        assert_abs_diff_eq!(mean, (0.1 + 0.2 - 0.5) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn k_equal_vp_keeps_every_pair() {
        let c = [0.12, -0.03, 0.05, 0.11, 0.02, -0.08];
        let full = fuse_vector(&c, &VctConfig::infer(6, 1.0), None);
        let unmasked = fuse(&c, &attention(&self_similarity(&c), None, 6, 1.0));
        assert_eq!(full, unmasked);
        let sel = hard_selection(&c, &[true; 6], 6);
        assert!(sel.iter().all(|s| s.as_ref().unwrap().len() == 6));
    }

    #[test]
    fn gradient_at_origin_is_uniform() {
        let g = vec![0.0; 36];
        let grad = grad_fused_wrt_c(&[0.0f64; 6], &g, 0.7);
        assert!(grad.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn frozen_attention_gradient_is_column_mean() {
        // with A frozen, fuse(c, A) is linear: ∂/∂c = Aᵀ1 / V_p
        let c = [0.3, -0.1, 0.2, 0.05];
        let a = attention(&self_similarity(&c), None, 4, 1.0);
        let h = 1e-6;
        for m in 0..4 {
            let mut p = c;
            p[m] += h;
            let mut q = c;
            q[m] -= h;
            let fd = (fuse(&p, &a) - fuse(&q, &a)) / (2.0 * h);
            let col: f64 = (0..4).map(|i| a[i * 4 + m]).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(fd, col, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Stream::new(5);
        for _ in 0..50 {
            let c: Vec<f64> = (0..6).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let g: Vec<f64> = gumbel_noise(6, 6, rng.next_u64());
            let tau = rng.uniform_range(0.2, 2.0);
            let cfg = VctConfig {
                temperature: tau,
                k: 6,
                mode: Mode::Train,
                gumbel_seed: 0,
            };
            let grad = grad_fused_wrt_c(&c, &g, tau);
            let h = 1e-5;
            for m in 0..6 {
                let mut p = c.clone();
                p[m] += h;
                let mut q = c.clone();
                q[m] -= h;
                let fd = (fuse_vector(&p, &cfg, Some(&g)) - fuse_vector(&q, &cfg, Some(&g))) / (2.0 * h);
                let rel = (fd - grad[m]).abs() / grad[m].abs().max(1e-8);
                assert!(rel < 1e-4, "rel error {rel}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(VctConfig::infer(0, 1.0).validate(6).is_err());
        assert!(VctConfig::infer(7, 1.0).validate(6).is_err());
        assert!(VctConfig::infer(3, 0.0).validate(6).is_err());
        assert!(VctConfig::infer(3, 1.0).validate(6).is_ok());
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_fused_is_bounded(
            c in prop::collection::vec(-0.125f64..0.125, 6),
            mask in prop::collection::vec(any::<bool>(), 6),
            k in 1usize..=6,
            tau in 1e-3f64..10.0,
        ) {
            let s = self_similarity(&c);
            let a = attention(&topk_mask(&s, 6, k), None, 6, tau);
            for i in 0..6 {
                let row = &a[i * 6..(i + 1) * 6];
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().filter(|&&v| v != 0.0).count() <= k);
            }
            let fusion = Fusion::Vct(VctConfig::infer(k, tau));
            if let Some(f) = fuse_voxel(&c, &mask, &fusion, 0) {
                let vals: Vec<f64> = (0..6).filter(|&p| mask[p]).map(|p| c[p]).collect();
                let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
                let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
                prop_assert!(f >= lo - 1e-12 && f <= hi + 1e-12);
            } else {
                prop_assert!(mask.iter().all(|&m| !m));
            }
        }
    }
}
