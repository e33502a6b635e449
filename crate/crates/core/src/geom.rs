//! Plane geometry in the tangent-point parameterization.
//!
//! A plane that does not pass through the origin is identified by the point
//! where it touches the origin-centred sphere: for a tangent point `t` with
//! radius `r = |t|`, the plane is `t . x = r^2`. The legacy `(normal, d)` form
//! is kept for metrics.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Smallest tangent radius (mm) that still identifies a plane.
pub const R_MIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index {axis} out of range"),
        }
    }

    pub fn with(self, axis: usize, value: f64) -> Vec3 {
        let mut a = self.to_array();
        a[axis] = value;
        Vec3::from_array(a)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Plane parameters `(t_x, t_y, t_z)` in millimetres. Always at least
/// [`R_MIN`] away from the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentPoint(Vec3);

impl TangentPoint {
    pub fn new(tx: f64, ty: f64, tz: f64) -> Result<Self> {
        Self::from_vec(Vec3::new(tx, ty, tz))
    }

    pub fn from_vec(v: Vec3) -> Result<Self> {
        let radius = v.norm();
        // NaN compares false, so it is rejected as well
        if !(radius >= R_MIN) || !radius.is_finite() {
            return Err(Error::DegeneratePoint { radius });
        }
        Ok(TangentPoint(v))
    }

    pub fn as_vec(&self) -> Vec3 {
        self.0
    }

    pub fn tx(&self) -> f64 {
        self.0.x
    }

    pub fn ty(&self) -> f64 {
        self.0.y
    }

    pub fn tz(&self) -> f64 {
        self.0.z
    }

    /// Sphere radius `r_t`.
    pub fn radius(&self) -> f64 {
        self.0.norm()
    }

    /// Left-hand side of the plane equation `t . x` minus `r_t^2`.
    pub fn plane_residual(&self, x: Vec3) -> f64 {
        self.0.dot(x) - self.0.norm_squared()
    }

    pub fn to_plane(&self) -> Plane {
        tangent_to_plane(self)
    }
}

/// Plane in normal/distance form: `normal . x = d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub d: f64,
}

impl Plane {
    /// Builds a plane from any non-zero normal; the normal is rescaled to
    /// unit length.
    pub fn new(normal: Vec3, d: f64) -> Self {
        Plane {
            normal: normal.normalized(),
            d,
        }
    }

    pub fn to_tangent(&self) -> Result<TangentPoint> {
        plane_to_tangent(self)
    }

    /// Signed distance of `x` from the plane along its normal.
    pub fn signed_distance(&self, x: Vec3) -> f64 {
        self.normal.dot(x) - self.d
    }
}

pub fn tangent_to_plane(p: &TangentPoint) -> Plane {
    let d = p.radius();
    Plane {
        normal: p.as_vec() * (1.0 / d),
        d,
    }
}

pub fn plane_to_tangent(pl: &Plane) -> Result<TangentPoint> {
    if !(pl.d >= R_MIN) {
        return Err(Error::DegeneratePoint { radius: pl.d });
    }
    TangentPoint::from_vec(pl.normal * pl.d)
}

/// Orthonormal sampling frame anchored at the tangent point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub normal: Vec3,
    /// mm per pixel
    pub pixel_pitch: f64,
    /// pixels per side
    pub extent: usize,
}

impl PlaneFrame {
    /// Reference axis is world z, or world x when the normal is within
    /// ~25 degrees of z; `u = normalize(e x n)`, `v = n x u`.
    pub fn new(p: &TangentPoint, pixel_pitch: f64, extent: usize) -> Self {
        let normal = tangent_to_plane(p).normal;
        let reference = if normal.z.abs() > 0.9 { Vec3::X } else { Vec3::Z };
        let u = reference.cross(normal).normalized();
        let v = normal.cross(u);
        PlaneFrame {
            origin: p.as_vec(),
            u,
            v,
            normal,
            pixel_pitch,
            extent,
        }
    }

    /// World position of pixel `(i, j)`; `i` runs along `u`, `j` along `v`.
    pub fn pixel_position(&self, i: usize, j: usize) -> Vec3 {
        let half = (self.extent / 2) as f64;
        let a = (i as f64 - half) * self.pixel_pitch;
        let b = (j as f64 - half) * self.pixel_pitch;
        self.origin + self.u * a + self.v * b
    }
}

pub fn build_frame(p: &TangentPoint, pixel_pitch: f64, extent: usize) -> PlaneFrame {
    PlaneFrame::new(p, pixel_pitch, extent)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneMetrics {
    /// Angle between normals, degrees in `[0, 180]`.
    pub ang_deg: f64,
    /// `|d_pred - d_gt|`, mm.
    pub dis_mm: f64,
}

/// Signed normals: a flipped plane counts as 180 degrees off.
pub fn plane_metrics(pred: &Plane, gt: &Plane) -> PlaneMetrics {
    let cos = pred.normal.dot(gt.normal).clamp(-1.0, 1.0);
    PlaneMetrics {
        ang_deg: cos.acos().to_degrees(),
        dis_mm: (pred.d - gt.d).abs(),
    }
}
