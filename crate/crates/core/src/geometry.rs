//! 4-DoF pose algebra: position plus yaw, the delta operator that produces
//! regression labels, and its inverse used by the controller.
//!
//! Linear coordinates are snapped to a dyadic lattice of `2^-40` m. Every
//! lattice value below 4 km in magnitude fits in 53 bits, so differences and
//! sums of poses are exact in `f64`: `apply(p, delta(g, p))` reproduces `g`
//! bit-for-bit in x, y and z.

use std::f64::consts::{PI, TAU};
use std::fmt;

use crate::error::Error;

/// Spacing of the lattice that linear pose coordinates live on.
pub const LINEAR_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// Largest linear coordinate magnitude for which lattice arithmetic stays exact.
pub const LINEAR_LIMIT: f64 = 4096.0;

/// Rounds to the nearest lattice value.
pub fn snap(v: f64) -> f64 {
    (v / LINEAR_QUANTUM).round() * LINEAR_QUANTUM
}

fn check_linear(name: &'static str, v: f64) -> Result<f64, Error> {
    if !v.is_finite() || v.abs() >= LINEAR_LIMIT {
        return Err(Error::InvalidPose(format!("{name} = {v} is not a finite coordinate below {LINEAR_LIMIT} m")));
    }
    Ok(snap(v))
}

/// Wraps an angle into `(-pi, pi]`. `pi` itself maps to `pi`.
pub fn wrap_angle(a: f64) -> Result<f64, Error> {
    if !a.is_finite() {
        return Err(Error::InvalidPose(format!("angle {a} is not finite")));
    }
    Ok(wrap(a))
}

pub(crate) fn wrap(a: f64) -> f64 {
    debug_assert!(a.is_finite());
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Gripper (and rigidly held plug) pose: plug-bottom position and yaw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose4 {
    x: f64,
    y: f64,
    z: f64,
    psi: f64,
}

impl Pose4 {
    pub const ORIGIN: Pose4 = Pose4 { x: 0.0, y: 0.0, z: 0.0, psi: 0.0 };

    pub fn new(x: f64, y: f64, z: f64, psi: f64) -> Result<Self, Error> {
        Ok(Pose4 {
            x: check_linear("x", x)?,
            y: check_linear("y", y)?,
            z: check_linear("z", z)?,
            psi: wrap_angle(psi)?,
        })
    }

    /// Constructor for values produced by internal arithmetic on valid poses.
    pub(crate) fn raw(x: f64, y: f64, z: f64, psi: f64) -> Self {
        Pose4::new(x, y, z, psi).expect("pose arithmetic produced an invalid pose")
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn with_z(&self, z: f64) -> Self {
        Pose4::raw(self.x, self.y, z, self.psi)
    }

    pub fn with_xy(&self, x: f64, y: f64) -> Self {
        Pose4::raw(x, y, self.z, self.psi)
    }

    pub fn with_psi(&self, psi: f64) -> Self {
        Pose4::raw(self.x, self.y, self.z, psi)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.psi]
    }
}

impl fmt::Display for Pose4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4}, {:.2}deg)", self.x, self.y, self.z, self.psi.to_degrees())
    }
}

/// Relative pose from the current gripper pose to a goal, in the base frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaPose {
    dx: f64,
    dy: f64,
    dz: f64,
    dpsi: f64,
}

impl DeltaPose {
    pub const ZERO: DeltaPose = DeltaPose { dx: 0.0, dy: 0.0, dz: 0.0, dpsi: 0.0 };

    pub fn new(dx: f64, dy: f64, dz: f64, dpsi: f64) -> Result<Self, Error> {
        Ok(DeltaPose {
            dx: check_linear("dx", dx)?,
            dy: check_linear("dy", dy)?,
            dz: check_linear("dz", dz)?,
            dpsi: wrap_angle(dpsi)?,
        })
    }

    pub(crate) fn raw(dx: f64, dy: f64, dz: f64, dpsi: f64) -> Self {
        DeltaPose::new(dx, dy, dz, dpsi).expect("delta arithmetic produced an invalid delta")
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn dz(&self) -> f64 {
        self.dz
    }
    pub fn dpsi(&self) -> f64 {
        self.dpsi
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dz, self.dpsi]
    }
}

impl fmt::Display for DeltaPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:+.4}, {:+.4}, {:+.4}, {:+.2}deg)", self.dx, self.dy, self.dz, self.dpsi.to_degrees())
    }
}

/// Label operator: component-wise base-frame difference `goal - current`,
/// yaw wrapped.
pub fn delta(goal: &Pose4, current: &Pose4) -> DeltaPose {
    DeltaPose {
        dx: goal.x - current.x,
        dy: goal.y - current.y,
        dz: goal.z - current.z,
        dpsi: wrap(goal.psi - current.psi),
    }
}

/// Inverse of [`delta`]: the goal implied by a relative pose.
pub fn apply(current: &Pose4, d: &DeltaPose) -> Pose4 {
    Pose4 { x: current.x + d.dx, y: current.y + d.dy, z: current.z + d.dz, psi: wrap(current.psi + d.dpsi) }
}

/// Horizontal length of a relative pose.
pub fn planar_distance(d: &DeltaPose) -> f64 {
    d.dx.hypot(d.dy)
}

/// Absolute yaw difference folded into `[0, pi]`.
pub fn yaw_distance(a: f64, b: f64) -> f64 {
    wrap(a - b).abs()
}

/// 2-D rotation of `(x, y)` by `angle`.
pub(crate) fn rotate(x: f64, y: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x - s * y, s * x + c * y)
}
