//! Rotations, pinhole cameras and small spline utilities.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};

/// Minimum admissible camera-frame depth for projection.
pub const DEPTH_EPSILON: f64 = 1e-6;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of a rotation vector.
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*phi).into_inner()
}

/// Rotation vector of a rotation matrix (angle in `[0, pi]`).
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if sin < 1e-12 && cos > 0.0 {
        return w;
    }
    if cos < -0.99 {
        // near pi the antisymmetric part vanishes; read the axis off the symmetric part
        let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
        let k = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap();
        let mut axis: Vector3<f64> = b.column(k).into();
        axis.normalize_mut();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / sin)
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Returns `exp(phi) v` together with its Jacobian with respect to `phi`.
pub fn rotate_with_jacobian(phi: &Vector3<f64>, v: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let r = exp_so3(phi);
    let jac = -(r * skew(v)) * right_jacobian(phi);
    (r * v, jac)
}

/// Rotation about the world vertical axis.
pub fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    exp_so3(&Vector3::new(0.0, 0.0, yaw))
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

/// Spherical interpolation between two rotation vectors.
pub fn slerp_rotvec(a: &Vector3<f64>, b: &Vector3<f64>, w: f64) -> Vector3<f64> {
    let ra = exp_so3(a);
    let rb = exp_so3(b);
    let delta = log_so3(&(ra.transpose() * rb));
    log_so3(&(ra * exp_so3(&(delta * w))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { focal: 1000.0, cx: 500.0, cy: 500.0, width: 1000.0, height: 1000.0 }
    }
}

impl Intrinsics {
    pub fn in_image(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width && px.y <= self.height
    }

    /// Pixel of a camera-frame point, with the 2x3 Jacobian of the pixel
    /// with respect to that point.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Result<(Vector2<f64>, [[f64; 3]; 2])> {
        if pc.z <= DEPTH_EPSILON {
            return Err(CoinError::Geometry(format!("point behind camera (depth {})", pc.z)));
        }
        let iz = 1.0 / pc.z;
        let px = Vector2::new(self.focal * pc.x * iz + self.cx, self.focal * pc.y * iz + self.cy);
        let jac = [[self.focal * iz, 0.0, -self.focal * pc.x * iz * iz], [0.0, self.focal * iz, -self.focal * pc.y * iz * iz]];
        Ok((px, jac))
    }
}

/// World-to-camera rigid transform `p_cam = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Pose of a camera at `center` looking at `target` with world `+z` up.
    pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Self {
        let fwd = (target - center).normalize();
        let up = Vector3::z();
        let mut right = fwd.cross(&up);
        if right.norm() < 1e-9 {
            right = Vector3::x();
        }
        let right = right.normalize();
        // camera axes: x right, y down, z forward
        let down = fwd.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        Self { rotation: r, translation: -(r * center) }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTrajectory {
    pub frames: Vec<CameraPose>,
    pub intrinsics: Intrinsics,
}

impl CameraTrajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn centers(&self) -> Vec<Vector3<f64>> {
        self.frames.iter().map(CameraPose::center).collect()
    }

    pub fn max_orthonormality_error(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| {
                let e = (f.rotation.transpose() * f.rotation - Matrix3::identity()).abs().max();
                e.max((f.rotation.determinant() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Pinhole projection of a world point; returns the pixel and camera depth.
pub fn project(cam: &CameraPose, intr: &Intrinsics, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
    let pc = cam.transform(point);
    let (px, _) = intr.project_camera_point(&pc)?;
    Ok((px, pc.z))
}

/// World point at the given pixel and camera depth.
pub fn unproject(cam: &CameraPose, intr: &Intrinsics, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
    let pc = Vector3::new((pixel.x - intr.cx) / intr.focal * depth, (pixel.y - intr.cy) / intr.focal * depth, depth);
    cam.rotation.transpose() * (pc - cam.translation)
}

/// Natural cubic spline through uniformly spaced knots (vector valued).
#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<Vector3<f64>>,
    second: Vec<Vector3<f64>>,
    spacing: f64,
}

impl CubicSpline {
    pub fn new(knots: Vec<Vector3<f64>>, spacing: f64) -> Result<Self> {
        let n = knots.len();
        if n < 2 || spacing <= 0.0 {
            return Err(CoinError::Config("spline needs >= 2 knots and positive spacing".into()));
        }
        let mut second = vec![Vector3::zeros(); n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives
            let m = n - 2;
            let h = spacing;
            let mut c = vec![0.0; m];
            let mut d = vec![Vector3::zeros(); m];
            for i in 0..m {
                let rhs = (knots[i + 2] - knots[i + 1] * 2.0 + knots[i]) * (6.0 / (h * h));
                let diag = 4.0;
                if i == 0 {
                    c[i] = 1.0 / diag;
                    d[i] = rhs / diag;
                } else {
                    let denom = diag - c[i - 1];
                    c[i] = 1.0 / denom;
                    d[i] = (rhs - d[i - 1]) / denom;
                }
            }
            for i in (0..m).rev() {
                let next = if i + 1 < m { second[i + 2] } else { Vector3::zeros() };
                second[i + 1] = d[i] - next * c[i];
            }
        }
        Ok(Self { knots, second, spacing })
    }

    pub fn eval(&self, x: f64) -> Vector3<f64> {
        let n = self.knots.len();
        let h = self.spacing;
        let u = (x / h).clamp(0.0, (n - 1) as f64);
        let k = (u.floor() as usize).min(n - 2);
        let a = (k as f64 + 1.0) - u;
        let b = u - k as f64;
        self.knots[k] * a + self.knots[k + 1] * b + (self.second[k] * (a * a * a - a) + self.second[k + 1] * (b * b * b - b)) * (h * h / 6.0)
    }
}
