//! Normalized pairwise correlation across all unordered view pairs.

use crate::error::{Error, Result};
use crate::sweep::SweptFeatureVolume;
use crate::Scalar;
use rayon::prelude::*;

/// Feature norms below this are treated as degenerate.
pub const NORM_EPS: f64 = 1e-8;

/// Unordered view pairs `(i, j)`, `i < j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    views: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairIndex {
    pub fn new(views: usize) -> Self {
        let pairs = (0..views)
            .flat_map(|i| (i + 1..views).map(move |j| (i, j)))
            .collect();
        Self { views, pairs }
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn position(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.pairs.iter().position(|&p| p == key)
    }

    /// Whether pair `p` involves view `v`.
    pub fn involves(&self, p: usize, v: usize) -> bool {
        let (i, j) = self.pairs[p];
        i == v || j == v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCorrelation<T> {
    pub value: T,
    pub valid: bool,
}

/// `(1/C)·⟨a, b⟩ / (‖a‖‖b‖)`; zero and invalid when either norm is degenerate.
pub fn pairwise_correlation<T: Scalar>(a: &[T], b: &[T]) -> Result<PairCorrelation<T>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Config(format!("feature lengths {} and {} differ", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InputDomain("non-finite feature value".into()));
    }
    let na = norm(a);
    let nb = norm(b);
    Ok(correlate_with_norms(a, b, na, nb))
}

#[inline]
fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

#[inline]
fn correlate_with_norms<T: Scalar>(a: &[T], b: &[T], na: T, nb: T) -> PairCorrelation<T> {
    let eps = T::lit(NORM_EPS);
    if na < eps || nb < eps {
        return PairCorrelation {
            value: T::zero(),
            valid: false,
        };
    }
    let dot = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    let c = T::from_usize_lossy(a.len());
    PairCorrelation {
        value: dot / (na * nb) / c,
        valid: true,
    }
}

/// Correlations for every pair at every voxel, stored voxel-major
/// (`D × H × W × V_p`, pairs innermost).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTensor<T> {
    pub pairs: PairIndex,
    pub channels: usize,
    pub bins: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> CorrelationTensor<T> {
    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_voxels(&self) -> usize {
        self.bins * self.width * self.height
    }

    #[inline]
    pub fn voxel_index(&self, d: usize, col: usize, row: usize) -> usize {
        (d * self.height + row) * self.width + col
    }

    /// Correlation vector and pair mask of one voxel.
    #[inline]
    pub fn voxel(&self, voxel: usize) -> (&[T], &[bool]) {
        let vp = self.pairs.len();
        (
            &self.values[voxel * vp..(voxel + 1) * vp],
            &self.valid[voxel * vp..(voxel + 1) * vp],
        )
    }

    /// `(V_p, D, H, W)`.
    pub fn shape(&self) -> [usize; 4] {
        [self.pairs.len(), self.bins, self.height, self.width]
    }
}

pub fn build_correlation_tensor<T: Scalar>(volumes: &[SweptFeatureVolume<T>]) -> Result<CorrelationTensor<T>> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::Config("no feature volumes".into()))?;
    if volumes.len() < 2 {
        return Err(Error::Config("correlation needs at least two views".into()));
    }
    if let Some(v) = volumes.iter().find(|v| v.shape() != first.shape()) {
        return Err(Error::Config(format!(
            "volume shape {:?} differs from {:?}",
            v.shape(),
            first.shape()
        )));
    }
    let pairs = PairIndex::new(volumes.len());
    let vp = pairs.len();
    let nvox = first.num_voxels();
    let mut values = vec![T::zero(); nvox * vp];
    let mut valid = vec![false; nvox * vp];
    const CHUNK: usize = 1024;
    values
        .par_chunks_mut(CHUNK * vp)
        .zip(valid.par_chunks_mut(CHUNK * vp))
        .enumerate()
        .for_each(|(chunk, (vals, oks))| {
            let mut norms = vec![T::zero(); volumes.len()];
            for (k, (vrow, orow)) in vals.chunks_mut(vp).zip(oks.chunks_mut(vp)).enumerate() {
                let voxel = chunk * CHUNK + k;
                for (n, vol) in norms.iter_mut().zip(volumes) {
                    *n = if vol.valid[voxel] { norm(vol.feature(voxel)) } else { T::zero() };
                }
                for (p, &(i, j)) in pairs.pairs().iter().enumerate() {
                    if !(volumes[i].valid[voxel] && volumes[j].valid[voxel]) {
                        continue;
                    }
                    let pc = correlate_with_norms(volumes[i].feature(voxel), volumes[j].feature(voxel), norms[i], norms[j]);
                    vrow[p] = pc.value;
                    orow[p] = pc.valid;
                }
            }
        });
    Ok(CorrelationTensor {
        pairs,
        channels: first.channels,
        bins: first.bins,
        width: first.width,
        height: first.height,
        values,
        valid,
    })
}
