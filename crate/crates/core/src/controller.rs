//! Three-phase coarse-to-fine insertion controller, the direct-motion
//! baseline and the closed-loop episode runner.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{apply, delta, planar_distance, DeltaPose, Pose4};
use crate::observation::{render, RasterSpec};
use crate::predictor::{PredictionContext, Predictor};
use crate::world::{is_success, perturb_socket, resolve_motion, ContactEvents, Perturbation, SceneState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerParams {
    /// Safety height above the goal while aligning.
    pub h: f64,
    /// Descent per step in the vertical and contact phases.
    pub d_z: f64,
    pub xy_thresh: f64,
    pub psi_thresh: f64,
    pub dz_thresh: f64,
    pub phase2_margin: f64,
    /// Half-width of the uniform lateral search noise.
    pub noise_bound: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            h: 0.06,
            d_z: 0.005,
            xy_thresh: 0.02,
            psi_thresh: 20f64.to_radians(),
            dz_thresh: 0.01,
            phase2_margin: 0.01,
            noise_bound: 0.003,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        let all =
            [self.h, self.d_z, self.xy_thresh, self.psi_thresh, self.dz_thresh, self.phase2_margin, self.noise_bound];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("controller parameters must be positive".into()));
        }
        if self.noise_bound >= self.xy_thresh {
            return Err(Error::Config("noise bound must be below the planar threshold".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    CoarseAlignment,
    FineVertical,
    CloseContact,
}

impl Phase {
    pub fn code(&self) -> &'static str {
        match self {
            Phase::CoarseAlignment => "coarse",
            Phase::FineVertical => "vertical",
            Phase::CloseContact => "contact",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s {
            "coarse" => Some(Phase::CoarseAlignment),
            "vertical" => Some(Phase::FineVertical),
            "contact" => Some(Phase::CloseContact),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

pub fn select_phase(dp: &DeltaPose, p: &Pose4, g: &Pose4, params: &ControllerParams) -> Phase {
    if planar_distance(dp) > params.xy_thresh || dp.dpsi().abs() > params.psi_thresh || dp.dz() > params.dz_thresh {
        Phase::CoarseAlignment
    } else if g.z() + params.phase2_margin < p.z() {
        Phase::FineVertical
    } else {
        Phase::CloseContact
    }
}

pub fn next_waypoint<R: Rng + ?Sized>(
    p: &Pose4,
    dp: &DeltaPose,
    phase: Phase,
    rng: &mut R,
    params: &ControllerParams,
) -> Pose4 {
    let g = apply(p, dp);
    match phase {
        Phase::CoarseAlignment => Pose4::raw(g.x(), g.y(), g.z() + params.h, g.psi()),
        Phase::FineVertical => Pose4::raw(g.x(), g.y(), p.z() - params.d_z, g.psi()),
        Phase::CloseContact => {
            let n1 = rng.random_range(-params.noise_bound..=params.noise_bound);
            let n2 = rng.random_range(-params.noise_bound..=params.noise_bound);
            Pose4::raw(g.x() + n1, g.y() + n2, p.z() - params.d_z, g.psi())
        }
    }
}

/// Baseline: go straight to the predicted goal.
pub fn next_waypoint_direct(p: &Pose4, dp: &DeltaPose) -> Pose4 {
    apply(p, dp)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Executor {
    CoarseToFine,
    Direct,
}

impl Executor {
    pub fn name(&self) -> &'static str {
        match self {
            Executor::CoarseToFine => "coarse-to-fine",
            Executor::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Option<Executor> {
        match s {
            "coarse-to-fine" => Some(Executor::CoarseToFine),
            "direct" => Some(Executor::Direct),
            _ => None,
        }
    }
}

/// Socket perturbations fired at fixed control steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSchedule {
    pub steps: Vec<usize>,
    pub max_shift: f64,
    pub max_rot: f64,
}

impl PerturbationSchedule {
    pub fn none() -> Self {
        PerturbationSchedule { steps: Vec::new(), max_shift: 0.0, max_rot: 0.0 }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub params: ControllerParams,
    pub executor: Executor,
    pub max_steps: usize,
    pub raster: RasterSpec,
    pub schedule: PerturbationSchedule,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            params: ControllerParams::default(),
            executor: Executor::CoarseToFine,
            max_steps: 400,
            raster: RasterSpec::default(),
            schedule: PerturbationSchedule::none(),
        }
    }
}

/// Random inputs of one episode.
pub struct EpisodeRngs<'a, R: Rng + ?Sized> {
    /// Keys observation-held predictor noise.
    pub predictor_seed: u64,
    pub predictor: &'a mut R,
    pub controller: &'a mut R,
    pub perturbation: &'a mut R,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PerturbEvent {
    Applied(SceneState),
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Fired before this step's observation.
    pub perturbation: Option<PerturbEvent>,
    pub pose: Pose4,
    pub predicted: DeltaPose,
    /// `None` under the direct executor.
    pub phase: Option<Phase>,
    pub waypoint: Pose4,
    pub achieved: Pose4,
    pub events: ContactEvents,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub scene: SceneState,
    pub start: Pose4,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    /// Smallest proximity to the goal over the start pose and every achieved pose.
    pub min_proximity: f64,
    pub perturbations_applied: usize,
    pub perturbations_skipped: usize,
}

impl EpisodeTrace {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn surface_contacts(&self) -> usize {
        self.steps.iter().filter(|s| s.events.surface_contact).count()
    }

    pub fn wall_contacts(&self) -> usize {
        self.steps.iter().filter(|s| s.events.wall_contact).count()
    }

    pub fn any_contact(&self) -> bool {
        self.steps.iter().any(|s| s.events.any())
    }

    pub fn final_pose(&self) -> Pose4 {
        self.steps.last().map_or(self.start, |s| s.achieved)
    }
}

/// Distance to the goal: the larger of the planar distance and the height
/// above the goal. Being deeper than the goal counts as zero vertical error,
/// so every inserted pose is also within any proximity threshold.
pub fn proximity(goal: &Pose4, p: &Pose4) -> f64 {
    let d = delta(goal, p);
    planar_distance(&d).max((p.z() - goal.z()).max(0.0))
}

/// Runs one closed-loop episode from `start`.
pub fn run_episode<R: Rng + ?Sized>(
    scene: &SceneState,
    start: &Pose4,
    predictor: &Predictor,
    cfg: &EpisodeConfig,
    rngs: EpisodeRngs<'_, R>,
) -> Result<EpisodeTrace> {
    cfg.params.validate()?;
    if !scene.is_admissible(start) {
        return Err(Error::Penetration(start.to_string()));
    }
    let mut scene = scene.clone();
    let mut trace = EpisodeTrace {
        scene: scene.clone(),
        start: *start,
        steps: Vec::new(),
        outcome: Outcome::Timeout,
        min_proximity: proximity(&scene.goal, start),
        perturbations_applied: 0,
        perturbations_skipped: 0,
    };
    if is_success(&scene, start) {
        trace.outcome = Outcome::Success;
        return Ok(trace);
    }
    let mut pose = *start;
    for step in 0..cfg.max_steps {
        let perturbation = if cfg.schedule.steps.contains(&step) {
            match perturb_socket(&scene, rngs.perturbation, cfg.schedule.max_shift, cfg.schedule.max_rot, &pose) {
                Perturbation::Applied { scene: next, .. } => {
                    scene = next;
                    trace.perturbations_applied += 1;
                    Some(PerturbEvent::Applied(scene.clone()))
                }
                Perturbation::Skipped => {
                    trace.perturbations_skipped += 1;
                    Some(PerturbEvent::Skipped)
                }
            }
        } else {
            None
        };
        let obs = render(&scene, &pose, &cfg.raster);
        let ctx =
            PredictionContext { observation: &obs, gripper_psi: pose.psi(), true_delta: delta(&scene.goal, &pose) };
        let dp = predictor.predict(&ctx, rngs.predictor_seed, rngs.predictor)?;
        let (phase, waypoint) = match cfg.executor {
            Executor::CoarseToFine => {
                let g = apply(&pose, &dp);
                let phase = select_phase(&dp, &pose, &g, &cfg.params);
                (Some(phase), next_waypoint(&pose, &dp, phase, rngs.controller, &cfg.params))
            }
            Executor::Direct => (None, next_waypoint_direct(&pose, &dp)),
        };
        let (achieved, events) = resolve_motion(&scene, &pose, &waypoint)?;
        trace.steps.push(StepRecord { step, perturbation, pose, predicted: dp, phase, waypoint, achieved, events });
        pose = achieved;
        trace.min_proximity = trace.min_proximity.min(proximity(&scene.goal, &pose));
        if is_success(&scene, &pose) {
            trace.outcome = Outcome::Success;
            break;
        }
    }
    Ok(trace)
}
