//! Planar rigid-body transforms and the level pinhole camera.
//!
//! Robot frame: x forward, y left, theta counterclockwise. The camera sits at
//! a fixed height above the robot origin, looks along the heading and has
//! zero roll and pitch, so a camera pose is fully described by a [`Pose2`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Points closer than this along the optical axis are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Planar pose in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// `self ∘ other`: `other` expressed in `self`'s frame, mapped to the world.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Transforms a world point into this pose's robot frame.
    pub fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = px - self.x;
        let dy = py - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Free-function form of [`Pose2::compose`].
pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

/// Robot-centric waypoint command: longitudinal, lateral and yaw increments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct WaypointAction {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl WaypointAction {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self {
            dx,
            dy,
            dtheta: normalize_angle(dtheta),
        }
    }

    pub fn as_pose(&self) -> Pose2 {
        Pose2 {
            x: self.dx,
            y: self.dy,
            theta: self.dtheta,
        }
    }

    /// Multiplies the translation part, leaving rotation untouched.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            dx: self.dx * scale,
            dy: self.dy * scale,
            dtheta: self.dtheta,
        }
    }

    pub fn translation(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Pose of `to` expressed in `from`'s robot-centric frame.
pub fn relative_in_frame(from: &Pose2, to: &Pose2) -> WaypointAction {
    let (dx, dy) = from.to_local(to.x, to.y);
    WaypointAction::new(dx, dy, to.theta - from.theta)
}

/// 3D point landmark, world frame with z up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark3 {
    pub id: u32,
    pub position: [f64; 3],
}

/// A landmark seen at a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation2 {
    pub landmark_id: u32,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside the {width}x{height} image")]
    PrincipalPoint {
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    },
    #[error("max_range must be positive, got {0}")]
    Range(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub mount_height: f64,
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fx: 200.0,
            fy: 200.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
            mount_height: 1.0,
            max_range: 8.0,
        }
    }
}

/// Camera-frame coordinates of a world point: depth along the heading,
/// lateral offset to the left, height above the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPoint {
    pub forward: f64,
    pub left: f64,
    pub up: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Focal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        let inside = self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if !inside {
            return Err(CameraError::PrincipalPoint {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        if self.max_range.is_nan() || self.max_range <= 0.0 {
            return Err(CameraError::Range(self.max_range));
        }
        Ok(())
    }

    pub fn to_camera(&self, pose: &Pose2, p: &[f64; 3]) -> CameraPoint {
        let (forward, left) = pose.to_local(p[0], p[1]);
        CameraPoint {
            forward,
            left,
            up: p[2] - self.mount_height,
        }
    }

    /// Pinhole projection without visibility checks. `None` behind the camera.
    pub fn project_point(&self, pose: &Pose2, p: &[f64; 3]) -> Option<(f64, f64)> {
        let c = self.to_camera(pose, p);
        if c.forward <= MIN_DEPTH {
            return None;
        }
        Some((
            self.cx - self.fx * c.left / c.forward,
            self.cy - self.fy * c.up / c.forward,
        ))
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    /// Distance from the camera centre to `p`.
    pub fn range(&self, pose: &Pose2, p: &[f64; 3]) -> f64 {
        let c = self.to_camera(pose, p);
        (c.forward * c.forward + c.left * c.left + c.up * c.up).sqrt()
    }

    /// Projects a landmark; `None` if it is behind the camera, out of the
    /// image, or beyond `max_range`.
    pub fn project(&self, pose: &Pose2, lm: &Landmark3) -> Option<Observation2> {
        if self.range(pose, &lm.position) > self.max_range {
            return None;
        }
        let (u, v) = self.project_point(pose, &lm.position)?;
        self.in_image(u, v).then_some(Observation2 {
            landmark_id: lm.id,
            u,
            v,
        })
    }

    /// Pixel residual `observed - projected` and its Jacobian with respect to
    /// `(x, y, theta)` of `pose`. `None` when the point is behind the camera.
    pub fn residual_jacobian(
        &self,
        pose: &Pose2,
        p: &[f64; 3],
        observed: (f64, f64),
    ) -> Option<([f64; 2], [[f64; 3]; 2])> {
        let c = self.to_camera(pose, p);
        let f = c.forward;
        if f <= MIN_DEPTH {
            return None;
        }
        let l = c.left;
        let z = c.up;
        let (s, co) = pose.theta.sin_cos();
        // derivatives of (forward, left) w.r.t. (x, y, theta)
        let df = [-co, -s, l];
        let dl = [s, -co, -f];
        let u = self.cx - self.fx * l / f;
        let v = self.cy - self.fy * z / f;
        let f2 = f * f;
        let mut jac = [[0.0; 3]; 2];
        for k in 0..3 {
            let du = -self.fx * (dl[k] * f - l * df[k]) / f2;
            let dv = self.fy * z * df[k] / f2;
            // residual = observed - projected
            jac[0][k] = -du;
            jac[1][k] = -dv;
        }
        Some(([observed.0 - u, observed.1 - v], jac))
    }
}

/// Free-function form of [`CameraModel::project`].
pub fn project(cam: &CameraModel, pose: &Pose2, lm: &Landmark3) -> Option<Observation2> {
    cam.project(pose, lm)
}
