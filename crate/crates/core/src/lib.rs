//! Omnidirectional multi-view stereo over a rig of fisheye cameras.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common case.

// Domain checks are written `!(x > 0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod corrupt;
pub mod depth;
pub mod dump;
pub mod error;
pub mod experiment;
pub mod image;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod rig;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod sweep;
pub mod vct;

pub use error::{Error, Result};
pub use scalar::Scalar;

macro_rules! scalar_aliases {
    ($t:ty, $($alias:ident = $path:ident :: $ty:ident),+ $(,)?) => {
        $(pub type $alias = $path::$ty<$t>;)+
    };
}

scalar_aliases!(
    f64,
    Rig64 = rig::Rig,
    Camera64 = rig::Camera,
    Intrinsics64 = rig::FisheyeIntrinsics,
    Sampling64 = rig::InverseDepthSampling,
    Image64 = image::Map2,
    FeatureMap64 = sweep::FeatureMap,
    FeatureVolume64 = sweep::SweptFeatureVolume,
    Correlation64 = correlation::CorrelationTensor,
    Consistency64 = vct::ConsistencyVolume,
    Vct64 = vct::VctConfig,
    Refine64 = depth::RefineConfig,
    Metrics64 = metrics::Metrics,
    Pipeline64 = pipeline::PipelineConfig,
);

scalar_aliases!(
    f32,
    Rig32 = rig::Rig,
    Camera32 = rig::Camera,
    Intrinsics32 = rig::FisheyeIntrinsics,
    Sampling32 = rig::InverseDepthSampling,
    Image32 = image::Map2,
    FeatureMap32 = sweep::FeatureMap,
    FeatureVolume32 = sweep::SweptFeatureVolume,
    Correlation32 = correlation::CorrelationTensor,
    Consistency32 = vct::ConsistencyVolume,
    Vct32 = vct::VctConfig,
    Refine32 = depth::RefineConfig,
    Metrics32 = metrics::Metrics,
    Pipeline32 = pipeline::PipelineConfig,
);
