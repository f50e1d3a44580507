//! Kinematic insertion scene.
//!
//! The table carries a square socket block with a single hole and a set of
//! axis-aligned distractor blocks. Contact is quasi-static: a commanded motion
//! is split into short substeps and each substep is clamped against the block
//! top (outside the hole) or the hole walls (inside it). There are no forces.
//!
//! All heights are plug-bottom heights above the table.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{rotate, snap, wrap, Pose4};

/// Slack added to containment tests so that poses clamped exactly onto a
/// boundary still count as inside after lattice snapping.
pub const GEOM_EPS: f64 = 1e-10;

/// Substep limits for [`resolve_motion`].
pub const SUBSTEP_TRANSLATION: f64 = 1e-3;
pub const SUBSTEP_ROTATION: f64 = std::f64::consts::PI / 180.0;

/// Resolution of the entry scan inside a surface-sliding substep.
const ENTRY_SCAN: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CrossSection {
    Circle {
        radius: f64,
    },
    /// `width` along the local x axis, `height` along local y.
    Rectangle {
        width: f64,
        height: f64,
    },
}

impl CrossSection {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CrossSection::Circle { radius } => radius > 0.0 && radius.is_finite(),
            CrossSection::Rectangle { width, height } => {
                width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("cross-section {self:?} must have positive dimensions")))
        }
    }

    /// Radius of the smallest circle around the origin containing the shape.
    pub fn circumradius(&self) -> f64 {
        match *self {
            CrossSection::Circle { radius } => radius,
            CrossSection::Rectangle { width, height } => 0.5 * width.hypot(height),
        }
    }

    pub fn is_circle(&self) -> bool {
        matches!(self, CrossSection::Circle { .. })
    }

    /// Half extents of the shape rotated by `theta`, measured along the
    /// unrotated axes.
    fn rotated_half_extents(&self, theta: f64) -> (f64, f64) {
        match *self {
            CrossSection::Circle { radius } => (radius, radius),
            CrossSection::Rectangle { width, height } => {
                let (s, c) = theta.sin_cos();
                let (a, b) = (0.5 * width, 0.5 * height);
                (a * c.abs() + b * s.abs(), a * s.abs() + b * c.abs())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SocketSpec {
    pub hole: CrossSection,
    /// Per-side lateral slack between the hole and a plug of the same nominal size.
    pub clearance: f64,
    /// Angular clearance for rectangular holes.
    pub psi_tol: f64,
    pub block_half_extent: f64,
    pub block_top: f64,
    pub hole_depth: f64,
    /// Depth below the block top that counts as inserted.
    pub insertion_depth: f64,
}

impl SocketSpec {
    pub fn validate(&self) -> Result<()> {
        self.hole.validate()?;
        let positive = [
            ("clearance", self.clearance),
            ("psi_tol", self.psi_tol),
            ("block_half_extent", self.block_half_extent),
            ("block_top", self.block_top),
            ("hole_depth", self.hole_depth),
            ("insertion_depth", self.insertion_depth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("socket {name} must be positive, got {v}")));
            }
        }
        if self.insertion_depth > self.hole_depth {
            return Err(Error::Config(format!(
                "insertion depth {} exceeds hole depth {}",
                self.insertion_depth, self.hole_depth
            )));
        }
        if self.hole_depth > self.block_top {
            return Err(Error::Config("hole is deeper than the block is tall".into()));
        }
        let (hx, hy) = self.hole.rotated_half_extents(0.0);
        if hx + self.clearance >= self.block_half_extent || hy + self.clearance >= self.block_half_extent {
            return Err(Error::Config("hole does not fit inside the block footprint".into()));
        }
        Ok(())
    }
}

/// Socket placement on the table plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

/// Axis-aligned box resting on the table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distractor {
    pub cx: f64,
    pub cy: f64,
    pub half_x: f64,
    pub half_y: f64,
    pub top: f64,
}

impl Distractor {
    fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).abs() <= self.half_x && (y - self.cy).abs() <= self.half_y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneState {
    pub socket: SocketSpec,
    pub socket_pose: PlanarPose,
    pub plug: CrossSection,
    pub distractors: Vec<Distractor>,
    pub goal: Pose4,
}

/// Axes that a contact clamped during a motion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClampedAxes {
    pub x: bool,
    pub y: bool,
    pub z: bool,
    pub psi: bool,
}

impl ClampedAxes {
    pub fn any(&self) -> bool {
        self.x || self.y || self.z || self.psi
    }

    fn merge(&mut self, other: ClampedAxes) {
        self.x |= other.x;
        self.y |= other.y;
        self.z |= other.z;
        self.psi |= other.psi;
    }

    /// Compact text form, e.g. `xz` or `-` when empty.
    pub fn code(&self) -> String {
        let mut s = String::new();
        for (flag, c) in [(self.x, 'x'), (self.y, 'y'), (self.z, 'z'), (self.psi, 'r')] {
            if flag {
                s.push(c);
            }
        }
        if s.is_empty() {
            s.push('-');
        }
        s
    }

    pub fn from_code(code: &str) -> Option<ClampedAxes> {
        let mut out = ClampedAxes::default();
        if code == "-" {
            return Some(out);
        }
        for c in code.chars() {
            match c {
                'x' => out.x = true,
                'y' => out.y = true,
                'z' => out.z = true,
                'r' => out.psi = true,
                _ => return None,
            }
        }
        Some(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ContactEvents {
    /// Held up by the block top or the hole bottom.
    pub surface_contact: bool,
    /// Lateral or yaw motion blocked by the hole walls.
    pub wall_contact: bool,
    pub clamped: ClampedAxes,
}

impl ContactEvents {
    pub fn any(&self) -> bool {
        self.surface_contact || self.wall_contact
    }

    pub fn merge(&mut self, other: &ContactEvents) {
        self.surface_contact |= other.surface_contact;
        self.wall_contact |= other.wall_contact;
        self.clamped.merge(other.clamped);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistractorConfig {
    pub count: usize,
    /// Range of half side lengths.
    pub half_size: (f64, f64),
    /// Range of top heights.
    pub top: (f64, f64),
    /// Range of center distances from the socket.
    pub radius: (f64, f64),
}

impl Default for DistractorConfig {
    fn default() -> Self {
        DistractorConfig { count: 0, half_size: (0.01, 0.02), top: (0.01, 0.05), radius: (0.06, 0.12) }
    }
}

/// Scene generation parameters, SI units.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub name: String,
    pub socket: SocketSpec,
    pub plug: CrossSection,
    pub nominal: PlanarPose,
    /// Half-range of the uniform socket position jitter along each axis.
    pub jitter_xy: f64,
    /// Half-range of the uniform socket yaw jitter.
    pub jitter_psi: f64,
    /// Table region `(xmin, xmax, ymin, ymax)` that must contain the block.
    pub workspace: (f64, f64, f64, f64),
    pub distractors: DistractorConfig,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.socket.validate()?;
        self.plug.validate()?;
        let probe = SceneState::new(self.socket.clone(), self.nominal, self.plug, Vec::new())?;
        if !footprint_inside(&self.plug, &probe.goal, &probe) {
            return Err(Error::Config(format!("scene '{}': plug does not fit the hole", self.name)));
        }
        if !(self.jitter_xy >= 0.0 && self.jitter_psi >= 0.0) {
            return Err(Error::Config("jitter ranges must be non-negative".into()));
        }
        let reach = self.socket.block_half_extent * std::f64::consts::SQRT_2 + self.jitter_xy;
        let (x0, x1, y0, y1) = self.workspace;
        if self.nominal.x - reach < x0
            || self.nominal.x + reach > x1
            || self.nominal.y - reach < y0
            || self.nominal.y + reach > y1
        {
            return Err(Error::Config(format!(
                "scene '{}': workspace cannot hold the socket block over the jitter range",
                self.name
            )));
        }
        let d = &self.distractors;
        if d.count > 0 {
            let ordered = |(a, b): (f64, f64)| a > 0.0 && a <= b && b.is_finite();
            if !(ordered(d.half_size) && ordered(d.top) && ordered(d.radius)) {
                return Err(Error::Config("distractor ranges must be positive and ordered".into()));
            }
            let clear =
                self.socket.block_half_extent * std::f64::consts::SQRT_2 + d.half_size.1 * std::f64::consts::SQRT_2;
            if d.radius.1 <= clear {
                return Err(Error::Config("distractor ring overlaps the socket block".into()));
            }
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    half * (2.0 * rng.random::<f64>() - 1.0)
}

/// Samples a socket placement and distractors.
pub fn make_scene<R: Rng + ?Sized>(config: &SceneConfig, rng: &mut R) -> Result<SceneState> {
    config.validate()?;
    let pose = PlanarPose {
        x: snap(config.nominal.x + symmetric(rng, config.jitter_xy)),
        y: snap(config.nominal.y + symmetric(rng, config.jitter_xy)),
        psi: wrap(config.nominal.psi + symmetric(rng, config.jitter_psi)),
    };
    let mut scene = SceneState::new(config.socket.clone(), pose, config.plug, Vec::new())?;
    scene.distractors = sample_distractors(&scene, &config.distractors, rng)?;
    Ok(scene)
}

fn sample_distractors<R: Rng + ?Sized>(
    scene: &SceneState,
    cfg: &DistractorConfig,
    rng: &mut R,
) -> Result<Vec<Distractor>> {
    let mut out = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let mut placed = None;
        for _ in 0..100 {
            let r = uniform(rng, cfg.radius.0, cfg.radius.1);
            let a = uniform(rng, -std::f64::consts::PI, std::f64::consts::PI);
            let d = Distractor {
                cx: scene.socket_pose.x + r * a.cos(),
                cy: scene.socket_pose.y + r * a.sin(),
                half_x: uniform(rng, cfg.half_size.0, cfg.half_size.1),
                half_y: uniform(rng, cfg.half_size.0, cfg.half_size.1),
                top: snap(uniform(rng, cfg.top.0, cfg.top.1)),
            };
            if !scene.distractor_overlaps_block(&d) {
                placed = Some(d);
                break;
            }
        }
        out.push(placed.ok_or_else(|| Error::Config("could not place distractor clear of the socket".into()))?);
    }
    Ok(out)
}

impl SceneState {
    /// Builds a scene and derives the goal pose from the socket placement.
    pub fn new(
        socket: SocketSpec,
        socket_pose: PlanarPose,
        plug: CrossSection,
        distractors: Vec<Distractor>,
    ) -> Result<Self> {
        // Heights live on the pose lattice so that clamped poses compare
        // exactly against the block top and hole bottom.
        let mut socket = socket;
        socket.block_top = snap(socket.block_top);
        socket.hole_depth = snap(socket.hole_depth);
        socket.insertion_depth = snap(socket.insertion_depth);
        let distractors = distractors.into_iter().map(|d| Distractor { top: snap(d.top), ..d }).collect();
        let goal =
            Pose4::new(socket_pose.x, socket_pose.y, socket.block_top - socket.insertion_depth, socket_pose.psi)?;
        let socket_pose = PlanarPose { x: goal.x(), y: goal.y(), psi: goal.psi() };
        Ok(SceneState { socket, socket_pose, plug, distractors, goal })
    }

    pub fn block_top(&self) -> f64 {
        self.socket.block_top
    }

    pub fn hole_bottom(&self) -> f64 {
        self.socket.block_top - self.socket.hole_depth
    }

    /// Highest point of the scene.
    pub fn max_height(&self) -> f64 {
        self.distractors.iter().map(|d| d.top).fold(self.socket.block_top, f64::max)
    }

    /// World point expressed in the socket frame.
    pub fn to_socket_frame(&self, x: f64, y: f64) -> (f64, f64) {
        rotate(x - self.socket_pose.x, y - self.socket_pose.y, -self.socket_pose.psi)
    }

    /// Whether a socket-frame point lies in the hole opening (clearance included).
    pub fn in_hole_local(&self, lx: f64, ly: f64) -> bool {
        let c = self.socket.clearance;
        match self.socket.hole {
            CrossSection::Circle { radius } => lx.hypot(ly) <= radius + c,
            CrossSection::Rectangle { width, height } => lx.abs() <= 0.5 * width + c && ly.abs() <= 0.5 * height + c,
        }
    }

    /// Height of the scene surface at a world point.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let (lx, ly) = self.to_socket_frame(x, y);
        let half = self.socket.block_half_extent;
        let mut h = 0.0f64;
        if lx.abs() <= half && ly.abs() <= half && !self.in_hole_local(lx, ly) {
            h = self.socket.block_top;
        }
        for d in &self.distractors {
            if d.contains(x, y) {
                h = h.max(d.top);
            }
        }
        h
    }

    fn distractor_overlaps_block(&self, d: &Distractor) -> bool {
        // Separating-axis test between the rotated block square and the box.
        let half = self.socket.block_half_extent;
        let (s, c) = self.socket_pose.psi.sin_cos();
        let (dx, dy) = (d.cx - self.socket_pose.x, d.cy - self.socket_pose.y);
        let block_ext_x = half * (c.abs() + s.abs());
        let block_ext_y = block_ext_x;
        if dx.abs() > d.half_x + block_ext_x || dy.abs() > d.half_y + block_ext_y {
            return false;
        }
        let (lx, ly) = rotate(dx, dy, -self.socket_pose.psi);
        let box_ext_u = d.half_x * c.abs() + d.half_y * s.abs();
        let box_ext_v = d.half_x * s.abs() + d.half_y * c.abs();
        !(lx.abs() > half + box_ext_u || ly.abs() > half + box_ext_v)
    }

    /// Plug yaw relative to the socket.
    fn relative_yaw(&self, psi: f64) -> f64 {
        wrap(psi - self.socket_pose.psi)
    }

    fn slack_region(&self, theta: f64) -> SlackRegion {
        let c = self.socket.clearance;
        match (self.socket.hole, self.plug) {
            (CrossSection::Rectangle { width, height }, plug) => {
                let (ex, ey) = plug.rotated_half_extents(theta);
                SlackRegion::Box { sx: 0.5 * width + c - ex, sy: 0.5 * height + c - ey }
            }
            (CrossSection::Circle { radius }, CrossSection::Circle { radius: r }) => {
                SlackRegion::Disk { r: radius + c - r }
            }
            (CrossSection::Circle { radius }, CrossSection::Rectangle { width, height }) => {
                SlackRegion::Corners { big: radius + c, a: 0.5 * width, b: 0.5 * height, theta }
            }
        }
    }

    fn yaw_admissible(&self, theta: f64) -> bool {
        match self.socket.hole {
            CrossSection::Rectangle { .. } => theta.abs() <= self.socket.psi_tol + GEOM_EPS,
            CrossSection::Circle { .. } => true,
        }
    }

    /// A pose is admissible when it is above the block top, or inside the hole
    /// footprint and not below the hole bottom.
    pub fn is_admissible(&self, p: &Pose4) -> bool {
        if p.z() >= self.socket.block_top {
            return true;
        }
        p.z() >= self.hole_bottom() - GEOM_EPS && footprint_inside(&self.plug, p, self)
    }
}

#[derive(Clone, Copy, Debug)]
enum SlackRegion {
    /// Allowed socket-frame offsets `|x| <= sx, |y| <= sy`.
    Box {
        sx: f64,
        sy: f64,
    },
    Disk {
        r: f64,
    },
    /// Rectangle plug (half sides `a`, `b`, yaw `theta`) whose corners must
    /// stay within radius `big`.
    Corners {
        big: f64,
        a: f64,
        b: f64,
        theta: f64,
    },
}

impl SlackRegion {
    fn contains(&self, ox: f64, oy: f64) -> bool {
        match *self {
            SlackRegion::Box { sx, sy } => ox.abs() <= sx + GEOM_EPS && oy.abs() <= sy + GEOM_EPS,
            SlackRegion::Disk { r } => ox.hypot(oy) <= r + GEOM_EPS,
            SlackRegion::Corners { big, a, b, theta } => [(a, b), (a, -b), (-a, b), (-a, -b)].iter().all(|&(u, v)| {
                let (cx, cy) = rotate(u, v, theta);
                (ox + cx).hypot(oy + cy) <= big + GEOM_EPS
            }),
        }
    }

    fn is_empty(&self) -> bool {
        match *self {
            SlackRegion::Box { sx, sy } => sx < -GEOM_EPS || sy < -GEOM_EPS,
            SlackRegion::Disk { r } => r < -GEOM_EPS,
            SlackRegion::Corners { .. } => !self.contains(0.0, 0.0),
        }
    }

    /// Nearest admissible offset to `(ox, oy)`; `anchor` must be admissible
    /// and is used where no closed-form projection exists.
    fn clamp(&self, ox: f64, oy: f64, anchor: (f64, f64)) -> (f64, f64, bool, bool) {
        match *self {
            SlackRegion::Box { sx, sy } => {
                let (sx, sy) = (sx.max(0.0), sy.max(0.0));
                let cx = ox.clamp(-sx, sx);
                let cy = oy.clamp(-sy, sy);
                (cx, cy, cx != ox, cy != oy)
            }
            SlackRegion::Disk { r } => {
                let r = r.max(0.0);
                let n = ox.hypot(oy);
                if n <= r {
                    (ox, oy, false, false)
                } else {
                    let s = r / n;
                    (ox * s, oy * s, true, true)
                }
            }
            SlackRegion::Corners { .. } => {
                if self.contains(ox, oy) {
                    return (ox, oy, false, false);
                }
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let px = anchor.0 + mid * (ox - anchor.0);
                    let py = anchor.1 + mid * (oy - anchor.1);
                    if self.contains(px, py) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let px = anchor.0 + lo * (ox - anchor.0);
                let py = anchor.1 + lo * (oy - anchor.1);
                (px, py, true, true)
            }
        }
    }
}

/// Whether the plug cross-section at `plug_pose` fits inside the hole
/// (inflated by clearance). Rectangular holes also require the yaw error to be
/// within the angular clearance; circular holes ignore yaw.
pub fn footprint_inside(plug: &CrossSection, plug_pose: &Pose4, scene: &SceneState) -> bool {
    let theta = scene.relative_yaw(plug_pose.psi());
    if !scene.yaw_admissible(theta) {
        return false;
    }
    let (ox, oy) = scene.to_socket_frame(plug_pose.x(), plug_pose.y());
    if plug == &scene.plug {
        return scene.slack_region(theta).contains(ox, oy);
    }
    let probe = SceneState { plug: *plug, ..scene.clone() };
    probe.slack_region(theta).contains(ox, oy)
}

/// The registered goal pose of a scene.
pub fn goal_pose(scene: &SceneState) -> Pose4 {
    scene.goal
}

/// Inserted: footprint inside the hole and at least the target depth below the block top.
pub fn is_success(scene: &SceneState, p: &Pose4) -> bool {
    p.z() <= scene.goal.z() && footprint_inside(&scene.plug, p, scene)
}

fn lerp_pose(a: &Pose4, b: &Pose4, dyaw: f64, t: f64) -> (f64, f64, f64, f64) {
    (a.x() + t * (b.x() - a.x()), a.y() + t * (b.y() - a.y()), a.z() + t * (b.z() - a.z()), a.psi() + t * dyaw)
}

/// Executes a straight 4-DoF motion with contact clamping. Returns the
/// achieved pose and the union of contact events along the way.
pub fn resolve_motion(scene: &SceneState, from: &Pose4, to: &Pose4) -> Result<(Pose4, ContactEvents)> {
    resolve_motion_with(scene, from, to, |_, _| {})
}

/// Like [`resolve_motion`], also reporting the achieved pose and events after
/// every substep.
pub fn resolve_motion_with<F>(
    scene: &SceneState,
    from: &Pose4,
    to: &Pose4,
    mut on_substep: F,
) -> Result<(Pose4, ContactEvents)>
where
    F: FnMut(&Pose4, &ContactEvents),
{
    if !scene.is_admissible(from) {
        return Err(Error::Penetration(from.to_string()));
    }
    let dyaw = wrap(to.psi() - from.psi());
    let span = ((to.x() - from.x()).powi(2) + (to.y() - from.y()).powi(2) + (to.z() - from.z()).powi(2)).sqrt();
    let n = ((span / SUBSTEP_TRANSLATION).ceil() as usize).max((dyaw.abs() / SUBSTEP_ROTATION).ceil() as usize).max(1);

    let mut cur = *from;
    let mut total = ContactEvents::default();
    for i in 1..=n {
        let target = if i == n {
            *to
        } else {
            let (x, y, z, psi) = lerp_pose(from, to, dyaw, i as f64 / n as f64);
            Pose4::raw(x, y, z, psi)
        };
        let mut ev = ContactEvents::default();
        cur = substep(scene, &cur, &target, &mut ev);
        debug_assert!(scene.is_admissible(&cur), "substep produced penetrating pose {cur}");
        total.merge(&ev);
        on_substep(&cur, &ev);
    }
    Ok((cur, total))
}

fn substep(scene: &SceneState, cur: &Pose4, target: &Pose4, ev: &mut ContactEvents) -> Pose4 {
    let top = scene.block_top();
    if target.z() >= top {
        if cur.z() < top {
            // Leaving the hole. The walls still guide the part below the top,
            // which only shows up in the events; above it the motion is free.
            let t = (top - cur.z()) / (target.z() - cur.z());
            let (x, y, _, psi) = lerp_pose(cur, target, wrap(target.psi() - cur.psi()), t);
            inside_step(scene, cur, &Pose4::raw(x, y, top, psi), ev);
        }
        return *target;
    }
    if cur.z() < top {
        return inside_step(scene, cur, target, ev);
    }
    // The substep crosses or presses on the block top. Slide at the top until
    // the footprint first fits the opening, then continue inside the hole.
    let dyaw = wrap(target.psi() - cur.psi());
    let t_surface = if cur.z() > top { (cur.z() - top) / (cur.z() - target.z()) } else { 0.0 };
    let at = |t: f64| {
        let (x, y, _, psi) = lerp_pose(cur, target, dyaw, t);
        Pose4::raw(x, y, top, psi)
    };
    if let Some(t_entry) = first_entry(scene, &at, t_surface) {
        let entry = at(t_entry);
        return inside_step(scene, &entry, target, ev);
    }
    ev.surface_contact = true;
    ev.clamped.z = true;
    at(1.0)
}

/// Smallest `t` in `[t0, 1]` at which the sliding footprint fits the hole.
fn first_entry(scene: &SceneState, at: &dyn Fn(f64) -> Pose4, t0: f64) -> Option<f64> {
    let inside = |t: f64| footprint_inside(&scene.plug, &at(t), scene);
    let a = at(t0);
    let b = at(1.0);
    // Cheap rejection: the opening cannot be reached along this segment.
    let reach = scene.socket.hole.circumradius() + scene.socket.clearance + SUBSTEP_TRANSLATION;
    let (ax, ay) = scene.to_socket_frame(a.x(), a.y());
    let (bx, by) = scene.to_socket_frame(b.x(), b.y());
    if segment_point_distance((ax, ay), (bx, by)) > reach {
        return None;
    }
    if inside(t0) {
        return Some(t0);
    }
    let len = (bx - ax).hypot(by - ay);
    let rot = wrap(b.psi() - a.psi()).abs();
    let m = ((len / ENTRY_SCAN).ceil() as usize).max((rot / (ENTRY_SCAN * 10.0)).ceil() as usize).max(1);
    let mut prev = t0;
    for k in 1..=m {
        let t = t0 + (1.0 - t0) * k as f64 / m as f64;
        if inside(t) {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        prev = t;
    }
    None
}

fn segment_point_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l2 = dx * dx + dy * dy;
    let t = if l2 == 0.0 { 0.0 } else { (-(a.0 * dx + a.1 * dy) / l2).clamp(0.0, 1.0) };
    (a.0 + t * dx).hypot(a.1 + t * dy)
}

/// One substep with the plug bottom below the block top.
fn inside_step(scene: &SceneState, cur: &Pose4, target: &Pose4, ev: &mut ContactEvents) -> Pose4 {
    let bottom = scene.hole_bottom();
    let mut z = target.z();
    if z < bottom {
        z = bottom;
        ev.surface_contact = true;
        ev.clamped.z = true;
    }
    let cur_theta = scene.relative_yaw(cur.psi());
    let mut theta = scene.relative_yaw(target.psi());
    let mut psi = target.psi();
    if !scene.yaw_admissible(theta) {
        theta = theta.clamp(-scene.socket.psi_tol, scene.socket.psi_tol);
        psi = scene.socket_pose.psi + theta;
        ev.clamped.psi = true;
        ev.wall_contact = true;
    }
    let (cx, cy) = scene.to_socket_frame(cur.x(), cur.y());
    let mut region = scene.slack_region(theta);
    if region.is_empty() || !region.contains(cx, cy) && matches!(region, SlackRegion::Corners { .. }) {
        theta = cur_theta;
        psi = cur.psi();
        region = scene.slack_region(theta);
        ev.clamped.psi = true;
        ev.wall_contact = true;
    }
    let (tx, ty) = scene.to_socket_frame(target.x(), target.y());
    let (ox, oy, kx, ky) = region.clamp(tx, ty, (cx, cy));
    if kx || ky {
        ev.wall_contact = true;
        // Report clamps in world axes when the socket is axis-aligned, in
        // socket axes otherwise.
        ev.clamped.x |= kx;
        ev.clamped.y |= ky;
    }
    let (wx, wy) = if kx || ky {
        let (rx, ry) = rotate(ox, oy, scene.socket_pose.psi);
        (scene.socket_pose.x + rx, scene.socket_pose.y + ry)
    } else {
        (target.x(), target.y())
    };
    let p = Pose4::raw(wx, wy, z, psi);
    if z >= scene.block_top() || footprint_inside(&scene.plug, &p, scene) {
        return p;
    }
    // Rounding after the rotation back to world axes can leave the pose a hair
    // outside the slack region; nudge it toward the anchor, else hold position.
    for s in [1.0 - 1e-9, 1.0 - 1e-6] {
        let (rx, ry) = rotate(cx + s * (ox - cx), cy + s * (oy - cy), scene.socket_pose.psi);
        let q = Pose4::raw(scene.socket_pose.x + rx, scene.socket_pose.y + ry, z, psi);
        if footprint_inside(&scene.plug, &q, scene) {
            return q;
        }
    }
    ev.wall_contact = true;
    ev.clamped.x = true;
    ev.clamped.y = true;
    Pose4::raw(cur.x(), cur.y(), z, cur.psi())
}

/// Outcome of a mid-episode socket perturbation.
#[derive(Clone, Debug, PartialEq)]
pub enum Perturbation {
    Applied {
        scene: SceneState,
        shift: (f64, f64, f64),
    },
    /// The plug was below the block top; the scene is unchanged.
    Skipped,
}

/// Moves the socket by a uniform random shift and rotation and re-jitters the
/// distractors. Only allowed while the plug is at or above the block top.
pub fn perturb_socket<R: Rng + ?Sized>(
    scene: &SceneState,
    rng: &mut R,
    max_shift: f64,
    max_rot: f64,
    current_plug: &Pose4,
) -> Perturbation {
    // Draw first so the stream advances identically whether or not we skip.
    let dx = snap(symmetric(rng, max_shift));
    let dy = snap(symmetric(rng, max_shift));
    let dpsi = symmetric(rng, max_rot);
    let jitter: Vec<(f64, f64)> =
        scene.distractors.iter().map(|_| (symmetric(rng, max_shift), symmetric(rng, max_shift))).collect();
    if current_plug.z() < scene.block_top() {
        return Perturbation::Skipped;
    }
    let pose = PlanarPose {
        x: scene.socket_pose.x + dx,
        y: scene.socket_pose.y + dy,
        psi: wrap(scene.socket_pose.psi + dpsi),
    };
    let mut next = SceneState::new(scene.socket.clone(), pose, scene.plug, Vec::new())
        .expect("shifted socket stays within the coordinate range");
    next.distractors = apply_jitter(&next, &scene.distractors, &jitter);
    Perturbation::Applied { scene: next, shift: (dx, dy, dpsi) }
}

/// Moves each distractor by a uniform offset within `max_shift`, keeping the
/// socket block clear.
pub fn jitter_distractors<R: Rng + ?Sized>(scene: &SceneState, rng: &mut R, max_shift: f64) -> Vec<Distractor> {
    let jitter: Vec<(f64, f64)> =
        scene.distractors.iter().map(|_| (symmetric(rng, max_shift), symmetric(rng, max_shift))).collect();
    apply_jitter(scene, &scene.distractors, &jitter)
}

fn apply_jitter(scene: &SceneState, old: &[Distractor], jitter: &[(f64, f64)]) -> Vec<Distractor> {
    let pose = scene.socket_pose;
    old.iter()
        .zip(jitter)
        .map(|(d, &(jx, jy))| {
            let moved = Distractor { cx: d.cx + jx, cy: d.cy + jy, ..*d };
            if !scene.distractor_overlaps_block(&moved) {
                moved
            } else if !scene.distractor_overlaps_block(d) {
                *d
            } else {
                // Push it radially out of the block footprint.
                let (vx, vy) = (d.cx - pose.x, d.cy - pose.y);
                let n = vx.hypot(vy).max(1e-9);
                let r = scene.socket.block_half_extent * std::f64::consts::SQRT_2 + d.half_x.hypot(d.half_y) + 1e-3;
                Distractor { cx: pose.x + vx / n * r, cy: pose.y + vy / n * r, ..*d }
            }
        })
        .collect()
}
