//! Labeled data generation.
//!
//! Two samplers feed the dataset. Free-space sampling drives the gripper
//! between random poses in a wide box above the socket and captures along the
//! way. Close-contact sampling is a clamped random walk within a centimeter
//! of the goal that spends most of its time pressed on the block top or
//! inside the hole. Every record is labeled with `delta(goal, current)`.

mod format;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{delta, yaw_distance, DeltaPose, Pose4};
use crate::observation::{render, Observation, RasterSpec};
use crate::world::{jitter_distractors, resolve_motion_with, ContactEvents, SceneState, SUBSTEP_TRANSLATION};

pub use format::{parse_dataset, read_dataset, write_dataset, write_dataset_to, DATASET_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    FreeSpace,
    CloseContact,
}

impl Provenance {
    pub fn code(&self) -> char {
        match self {
            Provenance::FreeSpace => 'F',
            Provenance::CloseContact => 'C',
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub episode_id: u64,
    pub step: u64,
    pub observation: Observation,
    pub current: Pose4,
    pub goal: Pose4,
    pub label: DeltaPose,
    pub provenance: Provenance,
    /// The substep that produced this pose touched the block.
    pub contact: bool,
}

impl DatasetRecord {
    fn capture(
        scene: &SceneState,
        raster: &RasterSpec,
        episode_id: u64,
        step: u64,
        pose: &Pose4,
        provenance: Provenance,
        ev: &ContactEvents,
    ) -> Self {
        DatasetRecord {
            episode_id,
            step,
            observation: render(scene, pose, raster),
            current: *pose,
            goal: scene.goal,
            label: delta(&scene.goal, pose),
            provenance,
            contact: ev.any(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectionConfig {
    pub raster: RasterSpec,
    /// Half extent of the free-space box in x and y around the goal.
    pub free_xy: f64,
    pub free_psi: f64,
    /// Free-space heights relative to the goal.
    pub free_z: (f64, f64),
    /// Record every n-th substep of free-space motion.
    pub capture_every: usize,
    /// Re-jitter distractors after this many free-space records.
    pub rejitter_every: usize,
    pub rejitter_shift: f64,
    pub contact_xy: f64,
    pub contact_psi: f64,
    /// Height of the close-contact band above the block top.
    pub contact_z_above: f64,
    pub wiggle_step: f64,
    pub wiggle_psi: f64,
    /// Chance per walk step of a deliberate insertion attempt.
    pub insert_prob: f64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            raster: RasterSpec::default(),
            free_xy: 0.08,
            free_psi: 40f64.to_radians(),
            free_z: (0.01, 0.12),
            capture_every: capture_interval(0.05, 12.5),
            rejitter_every: 25,
            rejitter_shift: 0.02,
            contact_xy: 0.01,
            contact_psi: 15f64.to_radians(),
            contact_z_above: 0.01,
            wiggle_step: 0.002,
            wiggle_psi: 2f64.to_radians(),
            insert_prob: 0.15,
        }
    }
}

/// Substeps between captures for a nominal motion speed (m/s) and capture
/// rate (Hz), given the 1 mm substep.
pub fn capture_interval(speed: f64, rate_hz: f64) -> usize {
    ((speed / SUBSTEP_TRANSLATION / rate_hz).round() as usize).max(1)
}

impl CollectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.raster.validate()?;
        let pos = [
            self.free_xy,
            self.free_psi,
            self.contact_xy,
            self.contact_psi,
            self.contact_z_above,
            self.wiggle_step,
            self.wiggle_psi,
        ];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("collection boxes and steps must be positive".into()));
        }
        if !(self.free_z.0 > 0.0 && self.free_z.0 < self.free_z.1) {
            return Err(Error::Config("free-space z range must be positive and ordered".into()));
        }
        if self.capture_every == 0 || self.rejitter_every == 0 {
            return Err(Error::Config("capture and re-jitter intervals must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.insert_prob) {
            return Err(Error::Config("insert_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    half * (2.0 * rng.random::<f64>() - 1.0)
}

fn free_target<R: Rng + ?Sized>(scene: &SceneState, cfg: &CollectionConfig, rng: &mut R) -> Pose4 {
    let g = scene.goal;
    let z = g.z() + cfg.free_z.0 + (cfg.free_z.1 - cfg.free_z.0) * rng.random::<f64>();
    Pose4::new(
        g.x() + symmetric(rng, cfg.free_xy),
        g.y() + symmetric(rng, cfg.free_xy),
        z.max(scene.block_top()),
        g.psi() + symmetric(rng, cfg.free_psi),
    )
    .expect("sample stays in range")
}

/// Automated free-space capture: `count` records along motions between
/// random poses in the free-space box.
pub fn collect_free_space<R: Rng + ?Sized>(
    scene: &SceneState,
    cfg: &CollectionConfig,
    count: usize,
    episode_id: u64,
    rng: &mut R,
) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    // Distractors only change what is rendered, so motions are resolved
    // against the original scene while `view` is re-jittered in place.
    let mut view = scene.clone();
    let mut out = Vec::with_capacity(count);
    let mut pose = free_target(scene, cfg, rng);
    let mut substep = 0usize;
    while out.len() < count {
        let target = free_target(scene, cfg, rng);
        let (end, _) = resolve_motion_with(scene, &pose, &target, |p, ev| {
            substep += 1;
            if substep.is_multiple_of(cfg.capture_every) && out.len() < count {
                let step = out.len() as u64;
                out.push(DatasetRecord::capture(&view, &cfg.raster, episode_id, step, p, Provenance::FreeSpace, ev));
                if out.len() % cfg.rejitter_every == 0 {
                    view.distractors = jitter_distractors(&view, rng, cfg.rejitter_shift);
                }
            }
        })?;
        pose = end;
    }
    Ok(out)
}

fn clip_contact(scene: &SceneState, cfg: &CollectionConfig, x: f64, y: f64, z: f64, psi: f64) -> Pose4 {
    let g = scene.goal;
    let dpsi = crate::geometry::wrap(psi - g.psi()).clamp(-cfg.contact_psi, cfg.contact_psi);
    Pose4::new(
        x.clamp(g.x() - cfg.contact_xy, g.x() + cfg.contact_xy),
        y.clamp(g.y() - cfg.contact_xy, g.y() + cfg.contact_xy),
        z.clamp(g.z(), scene.block_top() + cfg.contact_z_above),
        g.psi() + dpsi,
    )
    .expect("clipped pose stays in range")
}

/// Emulated kinesthetic wiggling near the goal: `count` records, one per
/// substep of a clamped random walk.
pub fn collect_close_contact<R: Rng + ?Sized>(
    scene: &SceneState,
    cfg: &CollectionConfig,
    count: usize,
    episode_id: u64,
    rng: &mut R,
) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    let g = scene.goal;
    let top = scene.block_top();
    let mut pose = clip_contact(
        scene,
        cfg,
        g.x() + symmetric(rng, cfg.contact_xy),
        g.y() + symmetric(rng, cfg.contact_xy),
        top + cfg.contact_z_above * rng.random::<f64>(),
        g.psi() + symmetric(rng, cfg.contact_psi),
    );
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let target = if rng.random::<f64>() < cfg.insert_prob {
            clip_contact(
                scene,
                cfg,
                g.x() + symmetric(rng, 0.001),
                g.y() + symmetric(rng, 0.001),
                g.z(),
                g.psi() + symmetric(rng, cfg.wiggle_psi),
            )
        } else {
            // Downward-biased so the walk keeps pressing on the block.
            let dz = cfg.wiggle_step * (1.5 * rng.random::<f64>() - 1.0);
            clip_contact(
                scene,
                cfg,
                pose.x() + symmetric(rng, cfg.wiggle_step),
                pose.y() + symmetric(rng, cfg.wiggle_step),
                pose.z() + dz,
                pose.psi() + symmetric(rng, cfg.wiggle_psi),
            )
        };
        let (end, _) = resolve_motion_with(scene, &pose, &target, |p, ev| {
            if out.len() < count {
                let step = out.len() as u64;
                out.push(DatasetRecord::capture(scene, &cfg.raster, episode_id, step, p, Provenance::CloseContact, ev));
            }
        })?;
        pose = end;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram { lo, hi, counts: vec![0; bins], below: 0, above: 0 }
    }

    fn add(&mut self, v: f64) {
        if v < self.lo {
            self.below += 1;
        } else if v > self.hi {
            self.above += 1;
        } else {
            let n = self.counts.len();
            let i = (((v - self.lo) / (self.hi - self.lo)) * n as f64) as usize;
            self.counts[i.min(n - 1)] += 1;
        }
    }

    pub fn outside(&self) -> usize {
        self.below + self.above
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub total: usize,
    pub free_space: usize,
    pub close_contact: usize,
    pub contact: usize,
    pub dx: Histogram,
    pub dy: Histogram,
    pub dz: Histogram,
    pub dpsi: Histogram,
}

impl DatasetStats {
    pub fn free_fraction(&self) -> f64 {
        frac(self.free_space, self.total)
    }

    pub fn close_contact_fraction(&self) -> f64 {
        frac(self.close_contact, self.total)
    }

    pub fn contact_fraction(&self) -> f64 {
        frac(self.contact, self.total)
    }
}

fn frac(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Provenance split and label histograms. The planar histograms span the
/// free-space box, so any mass outside it shows up in `below`/`above`.
pub fn dataset_stats(records: &[DatasetRecord]) -> DatasetStats {
    let mut s = DatasetStats {
        total: records.len(),
        free_space: 0,
        close_contact: 0,
        contact: 0,
        dx: Histogram::new(-0.08, 0.08, 16),
        dy: Histogram::new(-0.08, 0.08, 16),
        dz: Histogram::new(-0.14, 0.02, 16),
        dpsi: Histogram::new(-40f64.to_radians(), 40f64.to_radians(), 16),
    };
    for r in records {
        match r.provenance {
            Provenance::FreeSpace => s.free_space += 1,
            Provenance::CloseContact => s.close_contact += 1,
        }
        s.contact += r.contact as usize;
        s.dx.add(r.label.dx());
        s.dy.add(r.label.dy());
        s.dz.add(r.label.dz());
        s.dpsi.add(r.label.dpsi());
    }
    s
}

/// Checks the per-record invariants: exact labels and the box of the
/// record's provenance.
pub fn check_record(r: &DatasetRecord, cfg: &CollectionConfig) -> std::result::Result<(), String> {
    let back = crate::geometry::apply(&r.current, &r.label);
    if back.x() != r.goal.x() || back.y() != r.goal.y() || back.z() != r.goal.z() {
        return Err(format!("label does not reproduce the goal: {} vs {}", back, r.goal));
    }
    if yaw_distance(back.psi(), r.goal.psi()) > 1e-12 {
        return Err("label yaw does not reproduce the goal".into());
    }
    let (box_xy, box_psi) = match r.provenance {
        Provenance::FreeSpace => (cfg.free_xy, cfg.free_psi),
        Provenance::CloseContact => (cfg.contact_xy, cfg.contact_psi),
    };
    let tol = 1e-12;
    if (r.current.x() - r.goal.x()).abs() > box_xy + tol || (r.current.y() - r.goal.y()).abs() > box_xy + tol {
        return Err(format!("pose {} outside the {:?} box", r.current, r.provenance));
    }
    if yaw_distance(r.current.psi(), r.goal.psi()) > box_psi + 1e-9 {
        return Err(format!("yaw of {} outside the {:?} box", r.current, r.provenance));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::world::tests::{rect_scene, round_scene};

    fn small() -> CollectionConfig {
        CollectionConfig { raster: RasterSpec { size: 8, fov: 0.16 }, ..Default::default() }
    }

    #[test]
    fn capture_cadence() {
        assert_eq!(capture_interval(0.05, 12.5), 4);
        assert_eq!(CollectionConfig::default().capture_every, 4);
    }

    #[test]
    fn free_space_records_are_valid() {
        let scene = rect_scene();
        let cfg = small();
        let recs = collect_free_space(&scene, &cfg, 500, 3, &mut seed::rng(1)).unwrap();
        assert_eq!(recs.len(), 500);
        for r in &recs {
            check_record(r, &cfg).unwrap();
            assert_eq!(r.provenance, Provenance::FreeSpace);
            assert!(r.current.z() >= scene.block_top());
        }
        let again = collect_free_space(&scene, &cfg, 500, 3, &mut seed::rng(1)).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn close_contact_records_touch_and_stay_in_box() {
        for scene in [rect_scene(), round_scene(0.0005)] {
            let cfg = small();
            let recs = collect_close_contact(&scene, &cfg, 2000, 0, &mut seed::rng(2)).unwrap();
            assert_eq!(recs.len(), 2000);
            for r in &recs {
                check_record(r, &cfg).unwrap();
                assert!(scene.is_admissible(&r.current));
            }
            let stats = dataset_stats(&recs);
            assert!(stats.contact_fraction() > 0.3, "{}", stats.contact_fraction());
            assert!(recs.iter().any(|r| r.current.z() < scene.block_top()), "walk never entered the hole");
        }
    }

    #[test]
    fn stats_report_the_split() {
        let scene = rect_scene();
        let cfg = small();
        let mut recs = collect_free_space(&scene, &cfg, 400, 0, &mut seed::rng(3)).unwrap();
        let s = dataset_stats(&recs);
        assert_eq!(s.close_contact_fraction(), 0.0);
        assert_eq!(s.dx.outside() + s.dy.outside(), 0);
        recs.extend(collect_close_contact(&scene, &cfg, 100, 1, &mut seed::rng(4)).unwrap());
        let s = dataset_stats(&recs);
        assert_eq!((s.free_space, s.close_contact), (400, 100));
        assert_eq!(s.free_fraction(), 0.8);
        assert_eq!(s.close_contact_fraction(), 0.2);
    }
}
