//! Fisheye camera rig, equirectangular ray geometry and spherical sweeping.
//!
//! Conventions used throughout the crate:
//!
//! * Rig frame: `+x` right, `+y` up, `+z` forward.
//! * ERP pixel `(x, y)` has longitude `φ = 2π·(x+0.5)/W − π` and latitude
//!   `θ = π·(y+0.5)/H − π/2`; row 0 is the southern-most row. The ray is
//!   `(cosθ·sinφ, sinθ, cosθ·cosφ)`.
//! * Camera frame shares the rig handedness. A pose `(R, t)` maps a rig point
//!   `p` into the camera as `Rᵀ(p − t)`, so the columns of `R` are the camera
//!   axes expressed in the rig frame.
//! * Fisheye images use the equidistant model `r = f·θ` with pixel centers at
//!   integer coordinates; image `v` grows with camera `+y`.

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::Scalar;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct FisheyeIntrinsics<T> {
    /// Pixels per radian of incidence angle.
    pub focal: T,
    pub principal_point: [T; 2],
    /// `(width, height)` in pixels.
    pub image_size: [usize; 2],
    /// Maximum incidence angle (half-FoV) in radians.
    pub fov_max: T,
}

impl<T: Scalar> FisheyeIntrinsics<T> {
    pub fn new(focal: T, principal_point: [T; 2], image_size: [usize; 2], fov_max: T) -> Result<Self> {
        if !(focal > T::zero()) || !focal.is_finite() {
            return Err(Error::InputDomain(format!("focal must be positive, got {focal}")));
        }
        if !(fov_max > T::zero() && fov_max <= T::PI()) {
            return Err(Error::InputDomain(format!("fov_max must lie in (0, π], got {fov_max}")));
        }
        if image_size[0] < 2 || image_size[1] < 2 {
            return Err(Error::InputDomain(format!("image size too small: {image_size:?}")));
        }
        let [cx, cy] = principal_point;
        let inside = cx >= T::zero()
            && cy >= T::zero()
            && cx <= T::from_usize_lossy(image_size[0] - 1)
            && cy <= T::from_usize_lossy(image_size[1] - 1);
        if !inside {
            return Err(Error::InputDomain(format!(
                "principal point ({cx}, {cy}) outside image {image_size:?}"
            )));
        }
        Ok(Self {
            focal,
            principal_point,
            image_size,
            fov_max,
        })
    }

    /// Centered principal point and the largest focal whose FoV circle fits the
    /// shorter image side.
    pub fn fitted(image_size: [usize; 2], fov_max: T) -> Result<Self> {
        let w = T::from_usize_lossy(image_size[0].max(1) - 1);
        let h = T::from_usize_lossy(image_size[1].max(1) - 1);
        let half = T::lit(0.5);
        let focal = (w.min(h) * half) / fov_max;
        Self::new(focal, [w * half, h * half], image_size, fov_max)
    }

    pub fn width(&self) -> usize {
        self.image_size[0]
    }

    pub fn height(&self) -> usize {
        self.image_size[1]
    }

    /// Whether a continuous pixel lies in `[0, W−1] × [0, H−1]`.
    pub fn contains(&self, u: T, v: T) -> bool {
        u >= T::zero()
            && v >= T::zero()
            && u <= T::from_usize_lossy(self.image_size[0] - 1)
            && v <= T::from_usize_lossy(self.image_size[1] - 1)
    }

    /// Inverse of the equidistant projection; `None` beyond the FoV cutoff.
    pub fn unproject(&self, u: T, v: T) -> Option<Vec3<T>> {
        let du = u - self.principal_point[0];
        let dv = v - self.principal_point[1];
        let r = (du * du + dv * dv).sqrt();
        let theta = r / self.focal;
        if theta > self.fov_max {
            return None;
        }
        if r == T::zero() {
            return Some(Vec3::new(T::zero(), T::zero(), T::one()));
        }
        let (s, c) = theta.sin_cos();
        Some(Vec3::new(s * du / r, s * dv / r, c))
    }
}

/// Result of projecting into a fisheye image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    pub pixel: [T; 2],
    pub valid: bool,
}

/// Equidistant fisheye projection of a camera-frame point.
pub fn fisheye_project<T: Scalar>(point: Vec3<T>, intr: &FisheyeIntrinsics<T>) -> Result<Projection<T>> {
    if !point.is_finite() {
        return Err(Error::InputDomain("non-finite point".into()));
    }
    if point == Vec3::zero() {
        return Err(Error::InputDomain("cannot project the zero vector".into()));
    }
    let rho = (point.x * point.x + point.y * point.y).sqrt();
    let theta = rho.atan2(point.z);
    let (dx, dy) = if rho > T::zero() {
        (point.x / rho, point.y / rho)
    } else {
        (T::one(), T::zero())
    };
    let r = intr.focal * theta;
    let pixel = [intr.principal_point[0] + r * dx, intr.principal_point[1] + r * dy];
    let valid = theta <= intr.fov_max && intr.contains(pixel[0], pixel[1]);
    Ok(Projection { pixel, valid })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose<T> {
    /// Camera-to-rig rotation; columns are the camera axes in the rig frame.
    pub rotation: Mat3<T>,
    /// Camera center in the rig frame, meters.
    pub translation: Vec3<T>,
}

impl<T: Scalar> CameraPose<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        // 1e-9 in f64, about 1e-4 in f32
        let tol = (T::epsilon() * T::lit(1e3)).max(T::lit(1e-9));
        let rtr = rotation.transpose().mul_mat(&rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { T::one() } else { T::zero() };
                if (rtr.m[i][j] - expect).abs() > tol {
                    return Err(Error::InputDomain("rotation is not orthonormal".into()));
                }
            }
        }
        if (rotation.det() - T::one()).abs() > tol {
            return Err(Error::InputDomain("rotation determinant is not +1".into()));
        }
        if !translation.is_finite() {
            return Err(Error::InputDomain("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn rig_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.tr_mul_vec(p - self.translation)
    }

    pub fn camera_to_rig(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Camera-frame direction expressed in the rig frame.
    pub fn direction_to_rig(&self, d: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T> {
    pub intrinsics: FisheyeIntrinsics<T>,
    pub pose: CameraPose<T>,
}

/// Projects the sphere point `depth · ray` (rig frame) into `cam`.
pub fn sweep_project<T: Scalar>(ray: Vec3<T>, depth: T, cam: &Camera<T>) -> Result<Projection<T>> {
    if !(depth > T::zero()) {
        return Err(Error::InputDomain(format!("depth must be positive, got {depth}")));
    }
    // Projection is scale-free, so transform `ray − t/d` instead of `d·ray − t`;
    // with zero baseline the result is then bit-identical for every depth.
    let p = cam
        .pose
        .rotation
        .tr_mul_vec(ray - cam.pose.translation * depth.recip());
    fisheye_project(p, &cam.intrinsics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rig<T> {
    pub cameras: Vec<Camera<T>>,
}

impl<T: Scalar> Rig<T> {
    pub fn new(cameras: Vec<Camera<T>>) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::Config(format!("a rig needs at least 2 cameras, got {}", cameras.len())));
        }
        Ok(Self { cameras })
    }

    /// Four outward-facing fisheyes at the corners of a horizontal square.
    ///
    /// Camera `i` sits at azimuth `45° + 90°·i` (measured from `+z` toward
    /// `+x`), at distance `side/√2` from the rig origin, looking away from it.
    pub fn square(side: T, image_size: [usize; 2], fov_max: T) -> Result<Self> {
        let intr = FisheyeIntrinsics::fitted(image_size, fov_max)?;
        let radius = side / T::lit(2.0).sqrt();
        let cameras = (0..4)
            .map(|i| {
                let azimuth = T::FRAC_PI_4() + T::FRAC_PI_2() * T::from_usize_lossy(i);
                let rotation = Mat3::rot_y(azimuth);
                let translation = rotation.column(2) * radius;
                Ok(Camera {
                    intrinsics: intr.clone(),
                    pose: CameraPose::new(rotation, translation)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cameras)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RayConvention {
    /// Pixel-center longitude/latitude, latitude growing with the row index.
    #[default]
    LonLatCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErpGrid {
    pub width: usize,
    pub height: usize,
    pub convention: RayConvention,
}

impl ErpGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InputDomain(format!("empty ERP grid {width}x{height}")));
        }
        Ok(Self {
            width,
            height,
            convention: RayConvention::LonLatCenter,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid with twice the resolution in each direction.
    pub fn doubled(&self) -> Self {
        Self {
            width: self.width * 2,
            height: self.height * 2,
            convention: self.convention,
        }
    }

    /// Ray through the center of integer pixel `(col, row)`.
    pub fn pixel_ray<T: Scalar>(&self, col: usize, row: usize) -> Vec3<T> {
        lonlat_ray(self.longitude(T::from_usize_lossy(col)), self.latitude(T::from_usize_lossy(row)))
    }

    fn longitude<T: Scalar>(&self, x: T) -> T {
        T::TAU() * (x + T::lit(0.5)) / T::from_usize_lossy(self.width) - T::PI()
    }

    fn latitude<T: Scalar>(&self, y: T) -> T {
        T::PI() * (y + T::lit(0.5)) / T::from_usize_lossy(self.height) - T::FRAC_PI_2()
    }
}

fn lonlat_ray<T: Scalar>(lon: T, lat: T) -> Vec3<T> {
    let (sp, cp) = lon.sin_cos();
    let (st, ct) = lat.sin_cos();
    Vec3::new(ct * sp, st, ct * cp)
}

/// Unit ray direction of continuous ERP coordinate `(x, y)`.
pub fn erp_ray<T: Scalar>(x: T, y: T, grid: &ErpGrid) -> Result<Vec3<T>> {
    let w = T::from_usize_lossy(grid.width);
    let h = T::from_usize_lossy(grid.height);
    if !(x >= T::zero() && x < w && y >= T::zero() && y < h) {
        return Err(Error::InputDomain(format!(
            "ERP coordinate ({x}, {y}) outside {}x{}",
            grid.width, grid.height
        )));
    }
    Ok(lonlat_ray(grid.longitude(x), grid.latitude(y)))
}

/// Depth hypotheses uniform in inverse depth; index 0 is the nearest sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDepthSampling<T> {
    pub num_bins: usize,
    pub d_min: T,
    pub d_max: T,
}

impl<T: Scalar> InverseDepthSampling<T> {
    pub fn new(num_bins: usize, d_min: T, d_max: T) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::InputDomain(format!("need at least 2 bins, got {num_bins}")));
        }
        if !(d_min > T::zero() && d_min < d_max) {
            return Err(Error::InputDomain(format!("need 0 < d_min < d_max, got {d_min}, {d_max}")));
        }
        Ok(Self {
            num_bins,
            d_min,
            d_max,
        })
    }

    fn rho_step(&self) -> T {
        (self.d_min.recip() - self.d_max.recip()) / T::from_usize_lossy(self.num_bins - 1)
    }

    /// Inverse depth of a (possibly fractional) bin index.
    pub fn inverse_depth_at(&self, index: T) -> T {
        self.d_min.recip() - index * self.rho_step()
    }

    pub fn inverse_depths(&self) -> Vec<T> {
        (0..self.num_bins)
            .map(|k| self.inverse_depth_at(T::from_usize_lossy(k)))
            .collect()
    }

    /// Continuous bin index of a metric depth, clamped to `[0, D−1]`.
    pub fn index_of_depth(&self, depth: T) -> T {
        let idx = (self.d_min.recip() - depth.recip()) / self.rho_step();
        let hi = T::from_usize_lossy(self.num_bins - 1);
        idx.max(T::zero()).min(hi)
    }

    pub fn depth_of_index(&self, index: T) -> T {
        self.inverse_depth_at(index).recip()
    }
}

/// Metric depth of every bin, nearest first.
pub fn inv_depth_bins<T: Scalar>(sampling: &InverseDepthSampling<T>) -> Vec<T> {
    let last = sampling.num_bins - 1;
    (0..sampling.num_bins)
        .map(|k| {
            // Pin the endpoints so they reproduce d_min/d_max exactly.
            if k == 0 {
                sampling.d_min
            } else if k == last {
                sampling.d_max
            } else {
                sampling.depth_of_index(T::from_usize_lossy(k))
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Calibration file

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub image_size: [usize; 2],
    pub fov_max_deg: f64,
    /// Row-major camera-to-rig rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// On-disk rig description: cameras plus the ERP grid and depth schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub cameras: Vec<CameraRecord>,
    pub erp_width: usize,
    pub erp_height: usize,
    pub num_bins: usize,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for Calibration {
    /// Four-camera square rig, 0.4 m side, 220° lenses, 128×64 ERP, 32 bins.
    fn default() -> Self {
        let rig = Rig::<f64>::square(0.4, [DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE], 110f64.to_radians())
            .expect("default rig is valid");
        Self::from_parts(&rig, &ErpGrid::new(128, 64).unwrap(), &InverseDepthSampling::new(32, 0.5, 20.0).unwrap())
    }
}

/// Default fisheye image side length in pixels.
pub const DEFAULT_IMAGE_SIZE: usize = 384;

impl Calibration {
    pub fn from_parts<T: Scalar>(rig: &Rig<T>, grid: &ErpGrid, sampling: &InverseDepthSampling<T>) -> Self {
        let cameras = rig
            .cameras
            .iter()
            .map(|c| CameraRecord {
                focal: c.intrinsics.focal.as_f64(),
                principal_point: c.intrinsics.principal_point.map(|v| v.as_f64()),
                image_size: c.intrinsics.image_size,
                fov_max_deg: c.intrinsics.fov_max.as_f64().to_degrees(),
                rotation: c.pose.rotation.to_row_major().map(|v| v.as_f64()),
                translation: c.pose.translation.to_array().map(|v| v.as_f64()),
            })
            .collect();
        Self {
            cameras,
            erp_width: grid.width,
            erp_height: grid.height,
            num_bins: sampling.num_bins,
            d_min: sampling.d_min.as_f64(),
            d_max: sampling.d_max.as_f64(),
        }
    }

    pub fn rig<T: Scalar>(&self) -> Result<Rig<T>> {
        let cameras = self
            .cameras
            .iter()
            .map(|c| {
                let intrinsics = FisheyeIntrinsics::new(
                    T::lit(c.focal),
                    c.principal_point.map(T::lit),
                    c.image_size,
                    T::lit(c.fov_max_deg.to_radians()),
                )?;
                let pose = CameraPose::new(
                    Mat3::from_row_major(c.rotation.map(T::lit)),
                    Vec3::from_array(c.translation.map(T::lit)),
                )?;
                Ok(Camera { intrinsics, pose })
            })
            .collect::<Result<Vec<_>>>()?;
        Rig::new(cameras)
    }

    pub fn grid(&self) -> Result<ErpGrid> {
        ErpGrid::new(self.erp_width, self.erp_height)
    }

    pub fn sampling<T: Scalar>(&self) -> Result<InverseDepthSampling<T>> {
        InverseDepthSampling::new(self.num_bins, T::lit(self.d_min), T::lit(self.d_max))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cal: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        // Surface invariant violations at load time.
        cal.rig::<f64>()?;
        cal.grid()?;
        cal.sampling::<f64>()?;
        Ok(cal)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("calibration serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn grid() -> ErpGrid {
        ErpGrid::new(128, 64).unwrap()
    }

    fn x_for_lon(lon: f64, w: usize) -> f64 {
        (lon + PI) * w as f64 / (2.0 * PI) - 0.5
    }

    fn y_for_lat(lat: f64, h: usize) -> f64 {
        (lat + FRAC_PI_2) * h as f64 / PI - 0.5
    }

    #[test]
    fn erp_ray_forward_and_right() {
        let g = grid();
        let f = erp_ray(x_for_lon(0.0, 128), y_for_lat(0.0, 64), &g).unwrap();
        assert_abs_diff_eq!(f.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.z, 1.0, epsilon = 1e-12);
        let r = erp_ray(x_for_lon(FRAC_PI_2, 128), y_for_lat(0.0, 64), &g).unwrap();
        assert_abs_diff_eq!(r.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn erp_ray_pole_limit() {
        let g = grid();
        let top = erp_ray(10.0, 64.0 - 0.5 - 1e-9, &g).unwrap();
        assert!(top.y > 1.0 - 1e-6);
    }

    #[test]
    fn erp_ray_rejects_out_of_range() {
        let g = grid();
        assert!(matches!(erp_ray(128.0, 0.0, &g), Err(Error::InputDomain(_))));
        assert!(matches!(erp_ray(0.0, -0.1, &g), Err(Error::InputDomain(_))));
    }

    #[test]
    fn bins_endpoints() {
        let s = InverseDepthSampling::new(2, 1.0, 10.0).unwrap();
        assert_eq!(inv_depth_bins(&s), vec![1.0, 10.0]);
    }

    #[test]
    fn bins_near_infinite_far_plane() {
        let s = InverseDepthSampling::new(3, 1.0, 1e9).unwrap();
        let d = inv_depth_bins(&s);
        assert_eq!(d[0], 1.0);
        assert_abs_diff_eq!(d[1], 2.0, epsilon = 1e-8);
        assert_eq!(d[2], 1e9);
    }

    #[test]
    fn bins_match_uniform_inverse_formula() {
        // rho_k = 2 - 0.45 k for d in [0.5, 5], D = 5
        let s = InverseDepthSampling::new(5, 0.5, 5.0).unwrap();
        let d = inv_depth_bins(&s);
        for (k, dk) in d.iter().enumerate() {
            let rho = 2.0 - 0.45 * k as f64;
            assert_abs_diff_eq!(*dk, 1.0 / rho, epsilon = 1e-12);
        }
    }

    #[test]
    fn index_of_depth_inverts_schedule() {
        let s = InverseDepthSampling::new(32, 0.5, 20.0).unwrap();
        for k in 0..32 {
            let d = s.depth_of_index(k as f64);
            assert_abs_diff_eq!(s.index_of_depth(d), k as f64, epsilon = 1e-9);
        }
        assert_eq!(s.index_of_depth(1e6), 31.0);
        assert_eq!(s.index_of_depth(0.1), 0.0);
    }

    fn intr() -> FisheyeIntrinsics<f64> {
        FisheyeIntrinsics::new(200.0, [320.0, 240.0], [640, 480], 110f64.to_radians()).unwrap()
    }

    #[test]
    fn project_optical_axis() {
        let p = fisheye_project(Vec3::new(0.0, 0.0, 1.0), &intr()).unwrap();
        assert_eq!(p.pixel, [320.0, 240.0]);
        assert!(p.valid);
    }

    #[test]
    fn project_closed_form() {
        let p = fisheye_project(Vec3::new(1.0, 0.0, 1.0), &intr()).unwrap();
        assert_abs_diff_eq!(p.pixel[0], 320.0 + 200.0 * FRAC_PI_4, epsilon = 1e-9);
        assert_abs_diff_eq!(p.pixel[0], 477.08, epsilon = 5e-3);
        assert_abs_diff_eq!(p.pixel[1], 240.0, epsilon = 1e-12);
        assert!(p.valid);
    }

    #[test]
    fn project_fov_gate() {
        let narrow = FisheyeIntrinsics::new(200.0, [320.0, 240.0], [640, 480], 0.3).unwrap();
        let p = fisheye_project(Vec3::new(1.0, 0.0, 1.0), &narrow).unwrap();
        assert!(!p.valid);
        // Behind the camera with a sub-hemispherical lens.
        let p = fisheye_project(Vec3::new(0.0, 0.1, -1.0), &intr()).unwrap();
        assert!(!p.valid);
    }

    #[test]
    fn project_zero_vector_is_rejected() {
        assert!(matches!(
            fisheye_project(Vec3::zero(), &intr()),
            Err(Error::InputDomain(_))
        ));
    }

    #[test]
    fn unproject_inverts_project() {
        let i = intr();
        for &(x, y, z) in &[(0.3, -0.2, 1.0), (1.0, 0.5, -0.2), (-0.4, 0.9, 0.1)] {
            let v = Vec3::new(x, y, z).normalized();
            let p = fisheye_project(v, &i).unwrap();
            let back = i.unproject(p.pixel[0], p.pixel[1]).unwrap();
            assert!((back - v).norm() < 1e-12);
        }
    }

    #[test]
    fn sweep_identity_pose_hits_principal_point() {
        let cam = Camera {
            intrinsics: intr(),
            pose: CameraPose::identity(),
        };
        for d in [0.5, 3.0, 1e4] {
            let p = sweep_project(Vec3::new(0.0, 0.0, 1.0), d, &cam).unwrap();
            assert_eq!(p.pixel, [320.0, 240.0]);
        }
    }

    #[test]
    fn sweep_translated_camera_matches_manual_transform() {
        let cam = Camera {
            intrinsics: intr(),
            pose: CameraPose::new(Mat3::identity(), Vec3::new(0.1, 0.0, 0.0)).unwrap(),
        };
        let p = sweep_project(Vec3::new(0.0, 0.0, 1.0), 1.0, &cam).unwrap();
        // camera-frame point (-0.1, 0, 1)
        let theta = (0.1f64).atan2(1.0);
        assert_abs_diff_eq!(p.pixel[0], 320.0 - 200.0 * theta, epsilon = 1e-9);
        assert_abs_diff_eq!(p.pixel[1], 240.0, epsilon = 1e-12);
    }

    #[test]
    fn sweep_far_depth_approaches_rotation_only() {
        let rig = Rig::<f64>::square(0.4, [384, 384], 110f64.to_radians()).unwrap();
        let g = grid();
        for cam in &rig.cameras {
            for &(c, r) in &[(10, 30), (64, 40), (100, 20)] {
                let ray = g.pixel_ray::<f64>(c, r);
                let far = sweep_project(ray, 1e9, cam).unwrap();
                let inf = fisheye_project(cam.pose.rotation.tr_mul_vec(ray), &cam.intrinsics).unwrap();
                assert!((far.pixel[0] - inf.pixel[0]).abs() < 1e-3);
                assert!((far.pixel[1] - inf.pixel[1]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn sweep_rejects_nonpositive_depth() {
        let cam = Camera {
            intrinsics: intr(),
            pose: CameraPose::identity(),
        };
        assert!(sweep_project(Vec3::new(0.0, 0.0, 1.0), 0.0, &cam).is_err());
    }

    #[test]
    fn pose_validation() {
        let bad = Mat3::from_row_major([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]);
        assert!(CameraPose::new(bad, Vec3::zero()).is_err());
        let skew = Mat3::from_row_major([1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(CameraPose::new(skew, Vec3::zero()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(FisheyeIntrinsics::new(0.0, [1.0, 1.0], [4, 4], 1.0).is_err());
        assert!(FisheyeIntrinsics::new(1.0, [1.0, 1.0], [4, 4], 3.2).is_err());
        assert!(FisheyeIntrinsics::new(1.0, [5.0, 1.0], [4, 4], 1.0).is_err());
        assert!(FisheyeIntrinsics::new(1.0, [1.0, 1.0], [4, 4], PI).is_ok());
    }

    #[test]
    fn square_rig_faces_outward() {
        let rig = Rig::<f64>::square(0.4, [64, 64], 110f64.to_radians()).unwrap();
        assert_eq!(rig.len(), 4);
        for cam in &rig.cameras {
            let fwd = cam.pose.rotation.column(2);
            let t = cam.pose.translation;
            assert_abs_diff_eq!(t.norm(), 0.4 / 2f64.sqrt(), epsilon = 1e-12);
            assert_abs_diff_eq!(fwd.dot(t.normalized()), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(t.y, 0.0, epsilon = 1e-15);
        }
        // adjacent cameras are one square side apart
        let d = (rig.cameras[0].pose.translation - rig.cameras[1].pose.translation).norm();
        assert_abs_diff_eq!(d, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn calibration_json_round_trip() {
        let cal = Calibration::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        cal.save(&path).unwrap();
        let back = Calibration::load(&path).unwrap();
        assert_eq!(cal, back);
        assert_eq!(back.rig::<f64>().unwrap(), cal.rig::<f64>().unwrap());
    }

    #[test]
    fn calibration_rejects_bad_rotation() {
        let mut cal = Calibration::default();
        cal.cameras[0].rotation[0] = 2.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        cal.save(&path).unwrap();
        assert!(Calibration::load(&path).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let g = grid();
        let r = g.pixel_ray::<f32>(5, 7);
        assert!((r.norm() - 1.0).abs() < 1e-6);
        let s = InverseDepthSampling::<f32>::new(4, 1.0, 4.0).unwrap();
        assert_eq!(inv_depth_bins(&s).len(), 4);
    }
}
