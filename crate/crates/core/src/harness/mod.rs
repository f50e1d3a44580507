//! Experiment orchestration: scene suites, evaluation campaigns, dataset
//! collection, adaptation, the data-amount ablation, reports and traces.
//!
//! Seeds: cell `(scene s, episode e)` of a campaign with master seed `m` uses
//! [`EpisodeSeeds::new(m, s, e)`](crate::seed::EpisodeSeeds). The socket
//! placement, start pose, controller noise, predictor noise and perturbations
//! each draw from their own stream of that cell, so runs that differ only in
//! the predictor or the executor see identical scenes and start poses.

mod campaign;
mod config;
mod report;
mod trace;

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;

use crate::controller::{run_episode, EpisodeConfig, EpisodeRngs, EpisodeTrace, Executor, PerturbationSchedule};
use crate::error::{Error, Result};
use crate::geometry::{wrap, Pose4};
use crate::observation::RasterSpec;
use crate::predictor::{load_model, NoiseMode, NoiseSpec, OracleSpec, PredictionModel, Predictor};
use crate::seed::{EpisodeSeeds, Stream};
use crate::world::{make_scene, CrossSection, DistractorConfig, PlanarPose, SceneConfig, SceneState, SocketSpec};

pub use campaign::{
    ablation_data_amount, adapt, collect_dataset, subsample, AblationRow, CollectPlan, TrainSpec, DEFAULT_ADAPT_SAMPLES,
};
pub use config::{parse_config, read_config, ConfigFile};
pub use report::{parse_report_csv, parse_report_json, Aggregate, EpisodeResult, EvalReport, ReportFormat};
pub use trace::{parse_trace, read_trace, replay, write_trace, write_trace_to, ReplayReport, TraceFile, TRACE_VERSION};

/// Proximity thresholds reported per episode.
pub const NEAR_1CM: f64 = 0.01;
pub const NEAR_5MM: f64 = 0.005;

fn socket(hole: CrossSection, clearance: f64) -> SocketSpec {
    SocketSpec {
        hole,
        clearance,
        psi_tol: 3f64.to_radians(),
        block_half_extent: 0.02,
        block_top: 0.03,
        hole_depth: 0.015,
        insertion_depth: 0.006,
    }
}

/// Scene with a plug of the same nominal cross-section as the hole.
pub fn scene_preset(name: &str, shape: CrossSection, clearance: f64) -> SceneConfig {
    SceneConfig {
        name: name.to_string(),
        socket: socket(shape, clearance),
        plug: shape,
        nominal: PlanarPose { x: 0.45, y: 0.0, psi: 0.0 },
        jitter_xy: 0.05,
        jitter_psi: 30f64.to_radians(),
        workspace: (0.3, 0.6, -0.15, 0.15),
        distractors: DistractorConfig { count: 3, ..DistractorConfig::default() },
    }
}

/// Five training categories: USB-A, power plug, round, micro-USB and a
/// square charger, all with 0.5 mm clearance.
pub fn default_suite() -> Vec<SceneConfig> {
    let rect = |w: f64, h: f64| CrossSection::Rectangle { width: w, height: h };
    vec![
        scene_preset("usb", rect(0.012, 0.0045), 0.0005),
        scene_preset("power", rect(0.008, 0.004), 0.0005),
        scene_preset("round", CrossSection::Circle { radius: 0.005 }, 0.0005),
        scene_preset("micro", rect(0.007, 0.002), 0.0005),
        scene_preset("charger", rect(0.006, 0.006), 0.0005),
    ]
}

/// Held-out tight-clearance scene used for adaptation.
pub fn tight_scene() -> SceneConfig {
    scene_preset("type-c", CrossSection::Rectangle { width: 0.0084, height: 0.0026 }, 0.0003)
}

/// Five geometries absent from the training suite, for zero-shot evaluation.
pub fn novel_suite() -> Vec<SceneConfig> {
    let rect = |w: f64, h: f64| CrossSection::Rectangle { width: w, height: h };
    vec![
        scene_preset("hdmi", rect(0.014, 0.0045), 0.0005),
        scene_preset("ethernet", rect(0.0117, 0.008), 0.0005),
        scene_preset("barrel", CrossSection::Circle { radius: 0.0035 }, 0.0005),
        scene_preset("dc", rect(0.010, 0.003), 0.0005),
        scene_preset("slot", rect(0.016, 0.002), 0.0005),
    ]
}

pub fn suite_by_name(name: &str) -> Option<Vec<SceneConfig>> {
    match name {
        "default" => Some(default_suite()),
        "clean" => Some(without_distractors(default_suite())),
        "novel" => Some(novel_suite()),
        "tight" => Some(vec![tight_scene()]),
        _ => default_suite().into_iter().find(|s| s.name == name).map(|s| vec![s]),
    }
}

pub fn without_distractors(mut suite: Vec<SceneConfig>) -> Vec<SceneConfig> {
    for s in &mut suite {
        s.distractors.count = 0;
    }
    suite
}

/// What predicts the delta pose during an evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictorSpec {
    Oracle(OracleSpec),
    Model(PathBuf),
}

impl PredictorSpec {
    pub fn exact() -> Self {
        PredictorSpec::Oracle(OracleSpec { noise: NoiseSpec::ZERO, mode: NoiseMode::HELD })
    }

    pub fn resolve(&self) -> Result<Predictor> {
        match self {
            PredictorSpec::Oracle(s) => {
                s.validate()?;
                Ok(Predictor::Oracle(*s))
            }
            PredictorSpec::Model(path) => Ok(Predictor::Model(Arc::new(load_model(path)?))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub suite: Vec<SceneConfig>,
    pub episodes_per_scene: usize,
    /// Planar start offset range from the goal.
    pub offset_xy: (f64, f64),
    /// Absolute yaw offset range; the sign is random.
    pub offset_psi: (f64, f64),
    /// Start height above the goal.
    pub start_height: f64,
    pub predictor: PredictorSpec,
    pub episode: EpisodeConfig,
    pub master_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            suite: default_suite(),
            episodes_per_scene: 40,
            offset_xy: (0.03, 0.06),
            offset_psi: (15f64.to_radians(), 40f64.to_radians()),
            start_height: 0.05,
            predictor: PredictorSpec::exact(),
            episode: EpisodeConfig::default(),
            master_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.suite.is_empty() {
            return Err(Error::Config("scene suite is empty".into()));
        }
        if self.episodes_per_scene == 0 {
            return Err(Error::Config("episodes per scene must be at least 1".into()));
        }
        let range_ok = |(a, b): (f64, f64)| a >= 0.0 && a <= b && b.is_finite();
        if !range_ok(self.offset_xy) || !range_ok(self.offset_psi) {
            return Err(Error::Config("offset ranges must be non-empty and non-negative".into()));
        }
        if !(self.start_height >= 0.0 && self.start_height.is_finite()) {
            return Err(Error::Config("start height must be non-negative".into()));
        }
        if self.episode.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        self.episode.params.validate()?;
        self.episode.raster.validate()?;
        for s in &self.suite {
            s.validate()?;
        }
        Ok(())
    }

    pub fn episodes(&self) -> usize {
        self.suite.len() * self.episodes_per_scene
    }
}

/// Draws a start pose: radius uniform in `offset_xy`, direction uniform on
/// the circle, yaw offset uniform in `offset_psi` with a random sign.
/// Non-admissible draws are retried up to 100 times.
pub fn sample_start<R: Rng + ?Sized>(scene: &SceneState, cfg: &EvalConfig, rng: &mut R) -> Result<Pose4> {
    let g = scene.goal;
    for _ in 0..100 {
        let r = cfg.offset_xy.0 + (cfg.offset_xy.1 - cfg.offset_xy.0) * rng.random::<f64>();
        let a = std::f64::consts::TAU * rng.random::<f64>();
        let dpsi = cfg.offset_psi.0 + (cfg.offset_psi.1 - cfg.offset_psi.0) * rng.random::<f64>();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let p = Pose4::new(
            g.x() + r * a.cos(),
            g.y() + r * a.sin(),
            g.z() + cfg.start_height,
            wrap(g.psi() + sign * dpsi),
        )?;
        if scene.is_admissible(&p) {
            return Ok(p);
        }
    }
    Err(Error::Config("could not sample an admissible start pose".into()))
}

/// Scene and start pose of one campaign cell.
pub fn episode_setup(cfg: &EvalConfig, scene_index: usize, episode: usize) -> Result<(SceneState, Pose4)> {
    let seeds = EpisodeSeeds::new(cfg.master_seed, scene_index, episode);
    let scene = make_scene(&cfg.suite[scene_index], &mut seeds.rng(Stream::Scene))?;
    let start = sample_start(&scene, cfg, &mut seeds.rng(Stream::Start))?;
    Ok((scene, start))
}

/// Runs one campaign cell and returns its full trace.
pub fn run_cell(cfg: &EvalConfig, predictor: &Predictor, scene_index: usize, episode: usize) -> Result<EpisodeTrace> {
    let seeds = EpisodeSeeds::new(cfg.master_seed, scene_index, episode);
    let (scene, start) = episode_setup(cfg, scene_index, episode)?;
    let (mut p, mut c, mut q) =
        (seeds.rng(Stream::Predictor), seeds.rng(Stream::Controller), seeds.rng(Stream::Perturbation));
    let rngs = EpisodeRngs {
        predictor_seed: seeds.seed(Stream::Predictor),
        predictor: &mut p,
        controller: &mut c,
        perturbation: &mut q,
    };
    run_episode(&scene, &start, predictor, &cfg.episode, rngs)
}

/// Runs every episode of the campaign with an already built predictor.
pub fn run_eval_with(cfg: &EvalConfig, predictor: &Predictor) -> Result<EvalReport> {
    cfg.validate()?;
    let mut episodes = Vec::with_capacity(cfg.episodes());
    for (si, scene) in cfg.suite.iter().enumerate() {
        for e in 0..cfg.episodes_per_scene {
            let trace = run_cell(cfg, predictor, si, e)?;
            episodes.push(EpisodeResult::from_trace(&scene.name, si, e, &trace));
        }
    }
    Ok(EvalReport::new(predictor.label(), cfg.episode.executor, cfg.master_seed, episodes))
}

pub fn run_eval(cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    run_eval_with(cfg, &cfg.predictor.resolve()?)
}

pub fn run_perturbation_eval_with(cfg: &EvalConfig, predictor: &Predictor) -> Result<EvalReport> {
    if cfg.episode.schedule.is_empty() {
        return Err(Error::Config("perturbation schedule is empty".into()));
    }
    run_eval_with(cfg, predictor)
}

pub fn run_perturbation_eval(cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    run_perturbation_eval_with(cfg, &cfg.predictor.resolve()?)
}

/// One 2 cm, 10 degree socket shift at step 10.
pub fn default_schedule() -> PerturbationSchedule {
    PerturbationSchedule { steps: vec![10], max_shift: 0.02, max_rot: 10f64.to_radians() }
}

/// Optional far-start preset: 10 cm planar offsets. Reported, not asserted.
pub fn extreme_offset(cfg: &EvalConfig) -> EvalConfig {
    EvalConfig { offset_xy: (0.1, 0.1), ..cfg.clone() }
}

pub(crate) fn learned_predictor(model: PredictionModel) -> Predictor {
    Predictor::Model(Arc::new(model))
}

pub fn executor_config(executor: Executor, base: &EvalConfig) -> EvalConfig {
    EvalConfig { episode: EpisodeConfig { executor, ..base.episode.clone() }, ..base.clone() }
}

pub fn raster_config(raster: RasterSpec, base: &EvalConfig) -> EvalConfig {
    EvalConfig { episode: EpisodeConfig { raster, ..base.episode.clone() }, ..base.clone() }
}
