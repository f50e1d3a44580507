//! Gripper-locked orthographic height rasters standing in for the two wrist
//! cameras, plus the gripper height.
//!
//! Cell `(i, j)` samples the height field at the cell center, expressed in the
//! gripper frame: column `j` runs along gripper x, row `i` along gripper y.
//! Because the sample points are fixed in that frame, moving the scene and
//! gripper together leaves the rasters unchanged.

use crate::error::{Error, Result};
use crate::geometry::{rotate, snap, Pose4};
use crate::world::SceneState;

pub const DEFAULT_RASTER: usize = 32;
pub const DEFAULT_FOV: f64 = 0.16;

/// Offset of the second view along gripper x.
pub const SECOND_VIEW_OFFSET: f64 = 0.03;

/// Heights are divided by this before entering the feature vector.
pub const HEIGHT_SCALE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterSpec {
    pub size: usize,
    pub fov: f64,
}

impl Default for RasterSpec {
    fn default() -> Self {
        RasterSpec { size: DEFAULT_RASTER, fov: DEFAULT_FOV }
    }
}

impl RasterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !(self.fov > 0.0 && self.fov.is_finite()) {
            return Err(Error::Config(format!("raster size {} / fov {} must be positive", self.size, self.fov)));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        2 * self.size * self.size + 1
    }

    /// Gripper-frame offset of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let cell = self.fov / self.size as f64;
        let half = 0.5 * self.fov;
        (-half + (col as f64 + 0.5) * cell, -half + (row as f64 + 0.5) * cell)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub spec: RasterSpec,
    /// Row-major `size * size` heights.
    pub raster_a: Vec<f64>,
    pub raster_b: Vec<f64>,
    pub gripper_height: f64,
}

impl Observation {
    pub fn features(&self) -> Vec<f64> {
        features(self)
    }
}

fn rasterize(scene: &SceneState, gripper: &Pose4, spec: &RasterSpec, offset_x: f64) -> Vec<f64> {
    let n = spec.size;
    let (s, c) = gripper.psi().sin_cos();
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let (u, v) = spec.cell_center(row, col);
            let u = u + offset_x;
            let wx = gripper.x() + (c * u - s * v);
            let wy = gripper.y() + (s * u + c * v);
            out.push(scene.height_at(wx, wy));
        }
    }
    out
}

pub fn render(scene: &SceneState, gripper: &Pose4, spec: &RasterSpec) -> Observation {
    Observation {
        spec: *spec,
        raster_a: rasterize(scene, gripper, spec, 0.0),
        raster_b: rasterize(scene, gripper, spec, SECOND_VIEW_OFFSET),
        gripper_height: gripper.z(),
    }
}

/// `raster_a`, then `raster_b`, then the gripper height, all divided by
/// [`HEIGHT_SCALE`].
pub fn features(obs: &Observation) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.spec.feature_len());
    v.extend(obs.raster_a.iter().map(|h| h / HEIGHT_SCALE));
    v.extend(obs.raster_b.iter().map(|h| h / HEIGHT_SCALE));
    v.push(obs.gripper_height / HEIGHT_SCALE);
    v
}

/// Inverse of [`features`]. Scene heights and gripper heights are lattice
/// values, which the division cannot blur, so snapping recovers them exactly.
pub fn unflatten(v: &[f64], spec: &RasterSpec) -> Result<Observation> {
    if v.len() != spec.feature_len() {
        return Err(Error::FeatureMismatch { expected: spec.feature_len(), actual: v.len() });
    }
    let n2 = spec.size * spec.size;
    Ok(Observation {
        spec: *spec,
        raster_a: v[..n2].iter().map(|x| snap(x * HEIGHT_SCALE)).collect(),
        raster_b: v[n2..2 * n2].iter().map(|x| snap(x * HEIGHT_SCALE)).collect(),
        gripper_height: snap(v[2 * n2] * HEIGHT_SCALE),
    })
}

/// World coordinates of a `raster_a` cell center for a gripper pose.
pub fn cell_world(gripper: &Pose4, spec: &RasterSpec, row: usize, col: usize) -> (f64, f64) {
    let (u, v) = spec.cell_center(row, col);
    let (rx, ry) = rotate(u, v, gripper.psi());
    (gripper.x() + rx, gripper.y() + ry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{CrossSection, Distractor, PlanarPose, SocketSpec};

    fn socket(pose: PlanarPose) -> SceneState {
        let spec = SocketSpec {
            hole: CrossSection::Rectangle { width: 0.02, height: 0.012 },
            clearance: 0.0005,
            psi_tol: 0.05,
            block_half_extent: 0.03,
            block_top: 0.03,
            hole_depth: 0.015,
            insertion_depth: 0.006,
        };
        SceneState::new(spec, pose, CrossSection::Rectangle { width: 0.02, height: 0.012 }, vec![]).unwrap()
    }

    #[test]
    fn empty_table_is_flat() {
        let s = socket(PlanarPose { x: 5.0, y: 5.0, psi: 0.0 });
        let obs = render(&s, &Pose4::new(0.0, 0.0, 0.1, 0.3).unwrap(), &RasterSpec::default());
        assert!(obs.raster_a.iter().chain(&obs.raster_b).all(|&h| h == 0.0));
    }

    #[test]
    fn hole_under_gripper_reads_zero_inside_block() {
        let s = socket(PlanarPose { x: 0.2, y: 0.1, psi: 0.4 });
        let spec = RasterSpec::default();
        let g = s.goal.with_z(0.08);
        let obs = render(&s, &g, &spec);
        // Analytic membership per cell, computed in the socket frame, which
        // coincides with the gripper frame here.
        let half_w = 0.01 + 0.0005;
        let half_h = 0.006 + 0.0005;
        for row in 0..spec.size {
            for col in 0..spec.size {
                let (u, v) = spec.cell_center(row, col);
                let expected = if u.abs() <= half_w && v.abs() <= half_h {
                    0.0
                } else if u.abs() <= 0.03 && v.abs() <= 0.03 {
                    s.block_top()
                } else {
                    0.0
                };
                // Cells exactly on a boundary are avoided by the grid spacing.
                assert_eq!(obs.raster_a[row * spec.size + col], expected, "cell {row},{col}");
            }
        }
        let mid = spec.size / 2;
        assert_eq!(obs.raster_a[mid * spec.size + mid], 0.0);
    }

    #[test]
    fn rigid_yaw_about_gripper_is_exact() {
        let spec = RasterSpec::default();
        let gx = 0.25;
        let gy = -0.05;
        let base = socket(PlanarPose { x: 0.27, y: -0.04, psi: 0.2 });
        let g = Pose4::new(gx, gy, 0.07, 0.1).unwrap();
        let a = render(&base, &g, &spec);
        for theta in [0.5f64, -1.2, 2.9] {
            let (dx, dy) = rotate(base.socket_pose.x - gx, base.socket_pose.y - gy, theta);
            let moved = socket(PlanarPose { x: gx + dx, y: gy + dy, psi: base.socket_pose.psi + theta });
            let b = render(&moved, &g.with_psi(g.psi() + theta), &spec);
            assert_eq!(a.raster_a, b.raster_a);
            assert_eq!(a.raster_b, b.raster_b);
        }
    }

    #[test]
    fn translation_equivariance() {
        let spec = RasterSpec::default();
        let mut s = socket(PlanarPose { x: 0.1, y: 0.1, psi: 0.3 });
        s.distractors.push(Distractor { cx: 0.17, cy: 0.1, half_x: 0.01, half_y: 0.02, top: 0.04 });
        let g = Pose4::new(0.12, 0.09, 0.06, -0.2).unwrap();
        let a = render(&s, &g, &spec);
        let (tx, ty) = (0.25, -0.125);
        let mut t = socket(PlanarPose { x: 0.1 + tx, y: 0.1 + ty, psi: 0.3 });
        t.distractors.push(Distractor { cx: 0.17 + tx, cy: 0.1 + ty, half_x: 0.01, half_y: 0.02, top: 0.04 });
        let b = render(&t, &g.with_xy(g.x() + tx, g.y() + ty), &spec);
        assert_eq!(a, b);
        assert!(a.raster_b.contains(&0.04));
    }

    #[test]
    fn feature_layout_round_trips() {
        let spec = RasterSpec { size: 4, fov: 0.1 };
        let zero = Observation { spec, raster_a: vec![0.0; 16], raster_b: vec![0.0; 16], gripper_height: 0.0 };
        assert!(features(&zero).iter().all(|&x| x == 0.0));
        let s = socket(PlanarPose { x: 0.0, y: 0.0, psi: 0.0 });
        let obs = render(&s, &Pose4::new(0.02, 0.0, 0.05, 0.0).unwrap(), &spec);
        let f = features(&obs);
        assert_eq!(f.len(), 33);
        assert_eq!(f, features(&obs.clone()));
        assert_eq!(f[32], obs.gripper_height / HEIGHT_SCALE);
        let back = unflatten(&f, &spec).unwrap();
        assert_eq!(back, obs);
    }
}
