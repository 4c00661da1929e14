//! Camera model, projection, rotation parameterizations and transform metrics.
//!
//! Conventions used throughout the crate:
//!
//! * lengths in meters, pixels for image coordinates, radians internally;
//! * `CameraModel` stores the world→camera extrinsics `X_cam = R_c·X_world + t_c`;
//! * a [`RigidTransform`] maps MoCap coordinates into the world frame,
//!   `X_world = R_m·W + t_m`;
//! * Euler angles compose as `R = R_z(γ)·R_y(β)·R_x(α)` acting on column vectors.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `RᵀR = I` and `det R = 1` for rotations built by this crate.
pub const ROTATION_TOL: f64 = 1e-9;

/// Below this absolute depth the pixel coordinate is undefined.
pub const MIN_DEPTH: f64 = 1e-12;

const GIMBAL_EPS: f64 = 1e-9;
const UNDISTORT_ITERS: usize = 10;
const UNDISTORT_TOL: f64 = 1e-10;

/// Brown–Conrady lens distortion, applied to normalized camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistortionCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl DistortionCoeffs {
    /// Builds coefficients from the OpenCV ordering `(k1, k2, p1, p2, k3)`.
    pub fn from_opencv(c: [f64; 5]) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera(
                "distortion coefficients must be finite".into(),
            ));
        }
        Ok(Self {
            k1: c[0],
            k2: c[1],
            p1: c[2],
            p2: c[3],
            k3: c[4],
        })
    }

    /// Coefficients in OpenCV ordering `(k1, k2, p1, p2, k3)`.
    pub fn to_opencv(&self) -> [f64; 5] {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
    }

    pub fn is_zero(&self) -> bool {
        self.to_opencv().iter().all(|&c| c == 0.0)
    }
}

/// Rotation plus translation. Maps `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    /// Row-major.
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        Self {
            rotation: matrix_to_row_major(&t.rotation),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        RigidTransform::new(
            matrix_from_row_major(&r.rotation),
            Vector3::from(r.translation),
        )
    }
}

impl RigidTransform {
    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOL)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Skips validation; callers guarantee the rotation came from a rotation-valued
    /// construction (products of rotations, Euler angles, polar projection).
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self::from_parts_unchecked(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self::from_parts_unchecked(rt, -(rt * self.translation))
    }

    /// 12 numbers: rotation row-major followed by translation.
    pub fn to_flat(&self) -> [f64; 12] {
        let r = matrix_to_row_major(&self.rotation);
        let mut out = [0.0; 12];
        out[..9].copy_from_slice(&r);
        out[9] = self.translation.x;
        out[10] = self.translation.y;
        out[11] = self.translation.z;
        out
    }
}

/// Euler-angle parameterization of a MoCap→world transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerPose {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub translation: [f64; 3],
}

impl EulerPose {
    pub fn from_transform(t: &RigidTransform) -> Self {
        let (alpha, beta, gamma) = rotation_to_euler(t.rotation());
        Self {
            alpha,
            beta,
            gamma,
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::from_parts_unchecked(
            euler_to_rotation(self.alpha, self.beta, self.gamma),
            Vector3::from(self.translation),
        )
    }

    /// Parameter vector `(α, β, γ, tx, ty, tz)`.
    pub fn to_params(&self) -> [f64; 6] {
        let t = self.translation;
        [self.alpha, self.beta, self.gamma, t[0], t[1], t[2]]
    }

    pub fn from_params(p: &[f64; 6]) -> Self {
        Self {
            alpha: p[0],
            beta: p[1],
            gamma: p[2],
            translation: [p[3], p[4], p[5]],
        }
    }
}

/// Projected pixel and signed depth of a point in one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// One calibrated camera: intrinsics, world→camera extrinsics, optional distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    rot_wc: Matrix3<f64>,
    trans_wc: Vector3<f64>,
    distortion: Option<DistortionCoeffs>,
    image_size: Option<(u32, u32)>,
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rot_wc: Matrix3<f64>,
        trans_wc: Vector3<f64>,
        distortion: Option<DistortionCoeffs>,
        image_size: Option<(u32, u32)>,
    ) -> Result<Self> {
        let k = &intrinsics;
        if !k.iter().all(|v| v.is_finite()) || !trans_wc.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite camera parameter".into()));
        }
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidCamera(
                "intrinsics last row must be exactly [0, 0, 1]".into(),
            ));
        }
        if k[(1, 0)] != 0.0 {
            return Err(Error::InvalidCamera("intrinsics K[1][0] must be 0".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        check_rotation(&rot_wc, ROTATION_TOL).map_err(|e| Error::InvalidCamera(e.to_string()))?;
        if let Some(d) = &distortion {
            DistortionCoeffs::from_opencv(d.to_opencv())?;
        }
        Ok(Self {
            intrinsics,
            rot_wc,
            trans_wc,
            distortion,
            image_size,
        })
    }

    /// Pinhole camera with zero skew and no distortion.
    pub fn pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rot_wc: Matrix3<f64>,
        trans_wc: Vector3<f64>,
    ) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::new(k, rot_wc, trans_wc, None, None)
    }

    pub fn with_distortion(mut self, d: Option<DistortionCoeffs>) -> Self {
        self.distortion = d.filter(|d| !d.is_zero());
        self
    }

    pub fn with_image_size(mut self, size: Option<(u32, u32)>) -> Self {
        self.image_size = size;
        self
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rot_wc(&self) -> &Matrix3<f64> {
        &self.rot_wc
    }

    pub fn trans_wc(&self) -> &Vector3<f64> {
        &self.trans_wc
    }

    pub fn distortion(&self) -> Option<&DistortionCoeffs> {
        self.distortion.as_ref()
    }

    pub fn image_size(&self) -> Option<(u32, u32)> {
        self.image_size
    }

    /// World→camera extrinsics as a transform.
    pub fn extrinsics(&self) -> RigidTransform {
        RigidTransform::from_parts_unchecked(self.rot_wc, self.trans_wc)
    }

    /// Normalized (distorted) coordinates to pixels.
    pub fn normalized_to_pixel(&self, xy: &Vector2<f64>) -> Vector2<f64> {
        let k = &self.intrinsics;
        Vector2::new(
            k[(0, 0)] * xy.x + k[(0, 1)] * xy.y + k[(0, 2)],
            k[(1, 1)] * xy.y + k[(1, 2)],
        )
    }

    /// Pixels to normalized (still distorted) coordinates.
    pub fn pixel_to_normalized(&self, px: &Vector2<f64>) -> Vector2<f64> {
        let k = &self.intrinsics;
        let y = (px.y - k[(1, 2)]) / k[(1, 1)];
        let x = (px.x - k[(0, 2)] - k[(0, 1)] * y) / k[(0, 0)];
        Vector2::new(x, y)
    }

    /// Unit bearing in the camera frame for an observed pixel, undistorting first.
    pub fn bearing(&self, px: &Vector2<f64>) -> Vector3<f64> {
        let mut xy = self.pixel_to_normalized(px);
        if let Some(d) = &self.distortion {
            xy = undistort_normalized(d, &xy);
        }
        Vector3::new(xy.x, xy.y, 1.0).normalize()
    }

    /// Projects a camera-frame point. Returns the pixel, or `None` when `|z| < MIN_DEPTH`.
    pub fn project_camera_point(&self, x_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if x_cam.z.abs() < MIN_DEPTH {
            return None;
        }
        let mut xy = Vector2::new(x_cam.x / x_cam.z, x_cam.y / x_cam.z);
        if let Some(d) = &self.distortion {
            xy = distort_normalized(d, &xy);
        }
        Some(self.normalized_to_pixel(&xy))
    }

    /// Pixel and `∂u/∂X_cam` (2×3) for a camera-frame point with `|z| ≥ MIN_DEPTH`.
    pub fn project_with_jacobian(
        &self,
        x_cam: &Vector3<f64>,
    ) -> Option<(Vector2<f64>, Matrix2x3<f64>)> {
        let z = x_cam.z;
        if z.abs() < MIN_DEPTH {
            return None;
        }
        let inv_z = 1.0 / z;
        let xy = Vector2::new(x_cam.x * inv_z, x_cam.y * inv_z);
        let d_xy = Matrix2x3::new(
            inv_z,
            0.0,
            -xy.x * inv_z,
            0.0,
            inv_z,
            -xy.y * inv_z,
        );
        let (xy_d, d_dist) = match &self.distortion {
            Some(d) => (distort_normalized(d, &xy), distortion_jacobian(d, &xy)),
            None => (xy, Matrix2::identity()),
        };
        let k = &self.intrinsics;
        let k2 = Matrix2::new(k[(0, 0)], k[(0, 1)], 0.0, k[(1, 1)]);
        Some((self.normalized_to_pixel(&xy_d), k2 * d_dist * d_xy))
    }
}

/// `R_z(γ)·R_y(β)·R_x(α)`.
pub fn euler_to_rotation(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    rot_z(gamma) * rot_y(beta) * rot_x(alpha)
}

/// Inverse of [`euler_to_rotation`], with `β ∈ [−π/2, π/2]`.
///
/// At gimbal lock (`|cos β| < 1e-9`) only `γ − α` (or `γ + α`) is observable;
/// `α` is pinned to 0 and `γ` carries the whole in-plane rotation.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let cos_beta = r[(0, 0)].hypot(r[(1, 0)]);
    let beta = (-r[(2, 0)]).atan2(cos_beta);
    if cos_beta < GIMBAL_EPS {
        // With α = 0: R[0][1] = −sin γ and R[1][1] = cos γ for both β = ±π/2.
        let gamma = (-r[(0, 1)]).atan2(r[(1, 1)]);
        (0.0, beta, gamma)
    } else {
        let alpha = r[(2, 1)].atan2(r[(2, 2)]);
        let gamma = r[(1, 0)].atan2(r[(0, 0)]);
        (alpha, beta, gamma)
    }
}

/// `∂R/∂α`, `∂R/∂β`, `∂R/∂γ` for the ZYX composition.
pub fn euler_rotation_derivatives(alpha: f64, beta: f64, gamma: f64) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(alpha), rot_y(beta), rot_z(gamma));
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sa, -ca, 0.0, ca, -sa);
    let dry = Matrix3::new(-sb, 0.0, cb, 0.0, 0.0, 0.0, -cb, 0.0, -sb);
    let drz = Matrix3::new(-sg, -cg, 0.0, cg, -sg, 0.0, 0.0, 0.0, 0.0);
    [rz * ry * drx, rz * dry * rx, drz * ry * rx]
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Projects a MoCap-frame point through `extrinsic` (MoCap→world) and `cam`.
///
/// Negative depths are returned as-is; only a point on the principal plane errors.
pub fn project(
    cam: &CameraModel,
    extrinsic: &RigidTransform,
    point_mocap: &Vector3<f64>,
) -> Result<Projection> {
    let x_world = extrinsic.apply(point_mocap);
    let x_cam = cam.rot_wc * x_world + cam.trans_wc;
    let depth = x_cam.z;
    match cam.project_camera_point(&x_cam) {
        Some(pixel) => Ok(Projection { pixel, depth }),
        None => Err(Error::NonFinite { depth }),
    }
}

/// Forward Brown–Conrady model on normalized coordinates.
pub fn distort_normalized(d: &DistortionCoeffs, xy: &Vector2<f64>) -> Vector2<f64> {
    let (x, y) = (xy.x, xy.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    Vector2::new(
        x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
        y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y,
    )
}

/// `∂ distort / ∂(x, y)`.
pub fn distortion_jacobian(d: &DistortionCoeffs, xy: &Vector2<f64>) -> Matrix2<f64> {
    let (x, y) = (xy.x, xy.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    let d_radial = d.k1 + r2 * (2.0 * d.k2 + 3.0 * d.k3 * r2);
    Matrix2::new(
        radial + 2.0 * x * x * d_radial + 2.0 * d.p1 * y + 6.0 * d.p2 * x,
        2.0 * x * y * d_radial + 2.0 * d.p1 * x + 2.0 * d.p2 * y,
        2.0 * x * y * d_radial + 2.0 * d.p1 * x + 2.0 * d.p2 * y,
        radial + 2.0 * y * y * d_radial + 6.0 * d.p1 * y + 2.0 * d.p2 * x,
    )
}

/// Inverts [`distort_normalized`] by fixed-point iteration (at most 10 rounds,
/// stopping once the update falls below 1e-10).
pub fn undistort_normalized(d: &DistortionCoeffs, xy_d: &Vector2<f64>) -> Vector2<f64> {
    let mut x = xy_d.x;
    let mut y = xy_d.y;
    for _ in 0..UNDISTORT_ITERS {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
        let dx = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
        let dy = d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
        let nx = (xy_d.x - dx) / radial;
        let ny = (xy_d.y - dy) / radial;
        let step = (nx - x).abs().max((ny - y).abs());
        x = nx;
        y = ny;
        if step < UNDISTORT_TOL {
            break;
        }
    }
    Vector2::new(x, y)
}

/// Geodesic angle between two rotations, in degrees, in `[0, 180]`.
pub fn rotation_geodesic_deg(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    // atan2 of (sin, cos) keeps full precision near 0 where acos of the trace does not.
    let d = ra * rb.transpose();
    let s = 0.5 * Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm();
    let c = 0.5 * (d.trace() - 1.0);
    s.atan2(c).to_degrees()
}

/// Nearest rotation in Frobenius norm (polar decomposition via SVD).
/// Fails when the input is reflection-dominated (`det ≤ 0`) or non-finite.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    if m.determinant() <= 0.0 {
        return Err(Error::InvalidRotation(format!(
            "determinant {} is not positive",
            m.determinant()
        )));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Ok(r)
}

/// Largest deviation of `m` from a proper rotation: `max(|RᵀR − I|_max, |det − 1|)`.
pub fn rotation_deviation(m: &Matrix3<f64>) -> f64 {
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    ortho.max((m.determinant() - 1.0).abs())
}

pub(crate) fn check_rotation(m: &Matrix3<f64>, tol: f64) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    let dev = rotation_deviation(m);
    if dev > tol {
        return Err(Error::InvalidRotation(format!(
            "deviation {dev:e} from SO(3) exceeds {tol:e}"
        )));
    }
    Ok(())
}

pub fn matrix_from_row_major(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}

pub fn matrix_to_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}
