//! Per-sample pipeline: features, sweep, pair correlation, fusion, depth.

use crate::correlation::{build_correlation_tensor, CorrelationTensor};
use crate::depth::{convex_upsample, iterative_refine, subbin_refine, wta_depth, InverseDepthMap, RefineConfig, UpsampleMask};
use crate::error::{Error, Result};
use crate::image::Map2;
use crate::rig::{ErpGrid, FisheyeIntrinsics, InverseDepthSampling, Rig};
use crate::scene::{render_fisheye, Scene, Texture};
use crate::sweep::{build_sphere_volume, build_swept_volume, extract_features};
use crate::vct::{vct_forward, ConsistencyVolume, Fusion, VctConfig};
use crate::Scalar;

/// Where descriptors are computed before correlation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Descriptor {
    /// Swept intensity described per 3×3 neighborhood on each sweep sphere.
    #[default]
    Sphere,
    /// Fisheye-image descriptors, bilinearly swept.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig<T> {
    pub descriptor: Descriptor,
    pub fusion: Fusion<T>,
    pub refine: RefineConfig<T>,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        Self {
            descriptor: Descriptor::default(),
            fusion: Fusion::Vct(VctConfig::default()),
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepthEstimate<T> {
    pub consistency: ConsistencyVolume<T>,
    pub wta: InverseDepthMap<T>,
    pub subbin: InverseDepthMap<T>,
    /// Every refinement iterate at the ERP resolution.
    pub refined: Vec<InverseDepthMap<T>>,
    /// Final iterate upsampled 2×.
    pub upsampled: InverseDepthMap<T>,
}

/// Pixels inside the lens FoV.
pub fn fov_mask<T: Scalar>(intr: &FisheyeIntrinsics<T>) -> Vec<bool> {
    let w = intr.width();
    (0..w * intr.height())
        .map(|i| {
            intr.unproject(T::from_usize_lossy(i % w), T::from_usize_lossy(i / w))
                .is_some()
        })
        .collect()
}

/// Replaces the validity of an image loaded from disk with the lens mask.
pub fn with_fov_mask<T: Scalar>(mut img: Map2<T>, intr: &FisheyeIntrinsics<T>) -> Result<Map2<T>> {
    if img.width != intr.width() || img.height != intr.height() {
        return Err(Error::Config(format!(
            "image is {}×{}, camera expects {}×{}",
            img.width,
            img.height,
            intr.width(),
            intr.height()
        )));
    }
    img.valid = fov_mask(intr);
    Ok(img)
}

pub fn render_views<T: Scalar>(scene: &Scene, rig: &Rig<T>) -> Vec<Map2<T>> {
    rig.cameras.iter().map(|cam| render_fisheye(scene, cam)).collect()
}

/// ERP pixels whose first hit is a noise-textured surface at a depth inside
/// the sweep range.
pub fn textured_mask<T: Scalar>(scene: &Scene, grid: &ErpGrid, sampling: &InverseDepthSampling<T>) -> Vec<bool> {
    (0..grid.len())
        .map(|i| {
            let hit = scene.trace(crate::math::Vec3::zero(), grid.pixel_ray::<T>(i % grid.width, i / grid.width));
            let tex = match hit.primitive {
                Some(p) => &scene.primitives[p].texture,
                None => &scene.background,
            };
            matches!(tex, Texture::ValueNoise { .. })
                && hit.distance >= sampling.d_min
                && hit.distance <= sampling.d_max
        })
        .collect()
}

/// Pair-correlation tensor of one set of views.
pub fn correlate_views<T: Scalar>(
    images: &[Map2<T>],
    rig: &Rig<T>,
    grid: &ErpGrid,
    sampling: &InverseDepthSampling<T>,
    descriptor: Descriptor,
) -> Result<CorrelationTensor<T>> {
    if images.len() != rig.len() {
        return Err(Error::Config(format!("{} images for {} cameras", images.len(), rig.len())));
    }
    let volumes: Vec<_> = images
        .iter()
        .zip(&rig.cameras)
        .map(|(img, cam)| match descriptor {
            Descriptor::Sphere => build_sphere_volume(img, cam, grid, sampling),
            Descriptor::Image => build_swept_volume(&extract_features(img), cam, grid, sampling),
        })
        .collect();
    build_correlation_tensor(&volumes)
}

/// Depth from an already fused consistency volume.
pub fn estimate_from_consistency<T: Scalar>(consistency: ConsistencyVolume<T>, refine: &RefineConfig<T>) -> Result<DepthEstimate<T>> {
    let wta = wta_depth(&consistency);
    let subbin = subbin_refine(&consistency, &wta);
    let refined = iterative_refine(&consistency, refine)?;
    let last = refined.last().expect("at least one iteration");
    let upsampled = convex_upsample(last, &UpsampleMask::uniform(last.width, last.height))?;
    Ok(DepthEstimate {
        consistency,
        wta,
        subbin,
        refined,
        upsampled,
    })
}

pub fn estimate_depth<T: Scalar>(
    images: &[Map2<T>],
    rig: &Rig<T>,
    grid: &ErpGrid,
    sampling: &InverseDepthSampling<T>,
    cfg: &PipelineConfig<T>,
) -> Result<DepthEstimate<T>> {
    let tensor = correlate_views(images, rig, grid, sampling, cfg.descriptor)?;
    estimate_from_consistency(vct_forward(&tensor, &cfg.fusion)?, &cfg.refine)
}
