//! TOML experiment configuration. Lengths are in centimeters and angles in
//! degrees; everything is converted to meters and radians on load.
//!
//! ```toml
//! seed = 7
//! suite = "default"            # default | clean | novel | tight | <scene name>
//!
//! [eval]
//! episodes_per_scene = 40
//! offset_xy_cm = [3, 6]
//! offset_yaw_deg = [15, 40]
//! start_height_cm = 5
//! max_steps = 400
//! executor = "coarse-to-fine"   # or "direct"
//! raster_size = 32
//! raster_fov_cm = 16
//!
//! [predictor]
//! kind = "oracle"               # or "model" with path = "..."
//! profile = "full"              # exact | full | coarse-only; the sigma keys override it
//! sigma_xy_near_cm = 0.15
//! mode = "held"                 # or "fresh"
//! episode_share = 0.75          # held mode: share of the error variance fixed per episode
//!
//! [controller]                  # h_cm, step_cm, xy_thresh_cm, yaw_thresh_deg,
//!                               # dz_thresh_cm, phase2_margin_cm, noise_bound_cm
//! [perturbation]
//! steps = [10]
//! max_shift_cm = 2
//! max_rot_deg = 10
//!
//! [collect]
//! records = 20000
//! free_fraction = 0.8
//! placements = 20
//!
//! [train]
//! kind = "knn"                  # or "ridge"
//! k = 5
//! weighting = "inverse-distance"
//! lambda = 0.001
//!
//! [[scene]]                     # replaces the named suite when present
//! name = "peg"
//! hole = { shape = "rect", width_cm = 0.8, height_cm = 0.4 }
//! clearance_cm = 0.05
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::controller::{ControllerParams, Executor, PerturbationSchedule};
use crate::error::{Error, Result};
use crate::observation::RasterSpec;
use crate::predictor::{NoiseMode, NoiseSpec, OracleSpec, Weighting, DEFAULT_EPISODE_SHARE};
use crate::world::{CrossSection, DistractorConfig, PlanarPose, SceneConfig, SocketSpec};

use super::campaign::{CollectPlan, TrainSpec};
use super::{scene_preset, suite_by_name, EvalConfig, PredictorSpec};

const CM: f64 = 0.01;

fn deg(v: f64) -> f64 {
    v.to_radians()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    seed: Option<u64>,
    suite: Option<String>,
    eval: Option<RawEval>,
    predictor: Option<RawPredictor>,
    controller: Option<RawController>,
    perturbation: Option<RawPerturbation>,
    collect: Option<RawCollect>,
    train: Option<RawTrain>,
    scene: Option<Vec<RawScene>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    episodes_per_scene: Option<usize>,
    offset_xy_cm: Option<[f64; 2]>,
    offset_yaw_deg: Option<[f64; 2]>,
    start_height_cm: Option<f64>,
    max_steps: Option<usize>,
    executor: Option<String>,
    raster_size: Option<usize>,
    raster_fov_cm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPredictor {
    kind: Option<String>,
    path: Option<PathBuf>,
    profile: Option<String>,
    mode: Option<String>,
    sigma_xy_near_cm: Option<f64>,
    sigma_xy_far_cm: Option<f64>,
    sigma_z_cm: Option<f64>,
    sigma_yaw_deg: Option<f64>,
    near_radius_cm: Option<f64>,
    episode_share: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    h_cm: Option<f64>,
    step_cm: Option<f64>,
    xy_thresh_cm: Option<f64>,
    yaw_thresh_deg: Option<f64>,
    dz_thresh_cm: Option<f64>,
    phase2_margin_cm: Option<f64>,
    noise_bound_cm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    steps: Option<Vec<usize>>,
    max_shift_cm: Option<f64>,
    max_rot_deg: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCollect {
    records: Option<usize>,
    free_fraction: Option<f64>,
    placements: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    kind: Option<String>,
    k: Option<usize>,
    weighting: Option<String>,
    lambda: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShape {
    shape: String,
    radius_cm: Option<f64>,
    width_cm: Option<f64>,
    height_cm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    name: String,
    hole: RawShape,
    plug: Option<RawShape>,
    clearance_cm: Option<f64>,
    psi_tol_deg: Option<f64>,
    block_half_extent_cm: Option<f64>,
    block_top_cm: Option<f64>,
    hole_depth_cm: Option<f64>,
    insertion_depth_cm: Option<f64>,
    /// x cm, y cm, yaw degrees.
    nominal: Option<[f64; 3]>,
    jitter_xy_cm: Option<f64>,
    jitter_yaw_deg: Option<f64>,
    workspace_cm: Option<[f64; 4]>,
    distractors: Option<usize>,
}

/// Everything an invocation can configure, in SI units.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub eval: EvalConfig,
    pub collect: CollectPlan,
    pub train: TrainSpec,
}

fn shape(s: &RawShape) -> Result<CrossSection> {
    let need = |v: Option<f64>, k: &str| {
        v.map(|v| v * CM).ok_or_else(|| Error::Config(format!("{} shape needs {k}", s.shape)))
    };
    let c = match s.shape.as_str() {
        "circle" => CrossSection::Circle { radius: need(s.radius_cm, "radius_cm")? },
        "rect" => {
            CrossSection::Rectangle { width: need(s.width_cm, "width_cm")?, height: need(s.height_cm, "height_cm")? }
        }
        other => return Err(Error::Config(format!("unknown shape '{other}'"))),
    };
    c.validate()?;
    Ok(c)
}

fn scene(r: &RawScene) -> Result<SceneConfig> {
    let hole = shape(&r.hole)?;
    let base = scene_preset(&r.name, hole, r.clearance_cm.map_or(0.0005, |v| v * CM));
    let socket = SocketSpec {
        psi_tol: r.psi_tol_deg.map_or(base.socket.psi_tol, deg),
        block_half_extent: r.block_half_extent_cm.map_or(base.socket.block_half_extent, |v| v * CM),
        block_top: r.block_top_cm.map_or(base.socket.block_top, |v| v * CM),
        hole_depth: r.hole_depth_cm.map_or(base.socket.hole_depth, |v| v * CM),
        insertion_depth: r.insertion_depth_cm.map_or(base.socket.insertion_depth, |v| v * CM),
        ..base.socket.clone()
    };
    let cfg = SceneConfig {
        plug: match &r.plug {
            Some(p) => shape(p)?,
            None => hole,
        },
        socket,
        nominal: r.nominal.map_or(base.nominal, |[x, y, psi]| PlanarPose { x: x * CM, y: y * CM, psi: deg(psi) }),
        jitter_xy: r.jitter_xy_cm.map_or(base.jitter_xy, |v| v * CM),
        jitter_psi: r.jitter_yaw_deg.map_or(base.jitter_psi, deg),
        workspace: r.workspace_cm.map_or(base.workspace, |[a, b, c, d]| (a * CM, b * CM, c * CM, d * CM)),
        distractors: DistractorConfig { count: r.distractors.unwrap_or(base.distractors.count), ..base.distractors },
        name: r.name.clone(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn noise_profile(name: &str) -> Result<NoiseSpec> {
    match name {
        "exact" => Ok(NoiseSpec::ZERO),
        "full" => Ok(NoiseSpec::full()),
        "coarse-only" => Ok(NoiseSpec::coarse_only()),
        other => Err(Error::Config(format!("unknown noise profile '{other}'"))),
    }
}

fn predictor(r: &RawPredictor, base: &Path) -> Result<PredictorSpec> {
    match r.kind.as_deref().unwrap_or("oracle") {
        "oracle" => {
            let p = noise_profile(r.profile.as_deref().unwrap_or("exact"))?;
            let noise = NoiseSpec {
                sigma_xy_near: r.sigma_xy_near_cm.map_or(p.sigma_xy_near, |v| v * CM),
                sigma_xy_far: r.sigma_xy_far_cm.map_or(p.sigma_xy_far, |v| v * CM),
                sigma_z: r.sigma_z_cm.map_or(p.sigma_z, |v| v * CM),
                sigma_psi: r.sigma_yaw_deg.map_or(p.sigma_psi, deg),
                near_radius: r.near_radius_cm.map_or(p.near_radius, |v| v * CM),
            };
            let mode = match r.mode.as_deref().unwrap_or("held") {
                "held" => NoiseMode::Held { episode_share: r.episode_share.unwrap_or(DEFAULT_EPISODE_SHARE) },
                "fresh" => NoiseMode::Fresh,
                other => return Err(Error::Config(format!("unknown noise mode '{other}'"))),
            };
            let spec = OracleSpec { noise, mode };
            spec.validate()?;
            Ok(PredictorSpec::Oracle(spec))
        }
        "model" => {
            let path = r.path.as_ref().ok_or_else(|| Error::Config("model predictor needs a path".into()))?;
            Ok(PredictorSpec::Model(base.join(path)))
        }
        other => Err(Error::Config(format!("unknown predictor kind '{other}'"))),
    }
}

/// Parses a config. Relative model paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ConfigFile> {
    let raw: RawFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = ConfigFile::default();
    let seed = raw.seed.unwrap_or(0);
    let ev = &mut out.eval;
    ev.master_seed = seed;
    out.collect.master_seed = seed;
    ev.suite = match (&raw.scene, &raw.suite) {
        (Some(scenes), _) => scenes.iter().map(scene).collect::<Result<_>>()?,
        (None, Some(name)) => suite_by_name(name).ok_or_else(|| Error::Config(format!("unknown suite '{name}'")))?,
        (None, None) => ev.suite.clone(),
    };
    if let Some(e) = &raw.eval {
        if let Some(v) = e.episodes_per_scene {
            ev.episodes_per_scene = v;
        }
        if let Some([a, b]) = e.offset_xy_cm {
            ev.offset_xy = (a * CM, b * CM);
        }
        if let Some([a, b]) = e.offset_yaw_deg {
            ev.offset_psi = (deg(a), deg(b));
        }
        if let Some(v) = e.start_height_cm {
            ev.start_height = v * CM;
        }
        if let Some(v) = e.max_steps {
            ev.episode.max_steps = v;
        }
        if let Some(x) = &e.executor {
            ev.episode.executor = Executor::parse(x).ok_or_else(|| Error::Config(format!("unknown executor '{x}'")))?;
        }
        let size = e.raster_size.unwrap_or(ev.episode.raster.size);
        let fov = e.raster_fov_cm.map_or(ev.episode.raster.fov, |v| v * CM);
        ev.episode.raster = RasterSpec { size, fov };
        out.collect.collection.raster = ev.episode.raster;
    }
    if let Some(p) = &raw.predictor {
        ev.predictor = predictor(p, base_dir)?;
    }
    if let Some(c) = &raw.controller {
        let d = ControllerParams::default();
        ev.episode.params = ControllerParams {
            h: c.h_cm.map_or(d.h, |v| v * CM),
            d_z: c.step_cm.map_or(d.d_z, |v| v * CM),
            xy_thresh: c.xy_thresh_cm.map_or(d.xy_thresh, |v| v * CM),
            psi_thresh: c.yaw_thresh_deg.map_or(d.psi_thresh, deg),
            dz_thresh: c.dz_thresh_cm.map_or(d.dz_thresh, |v| v * CM),
            phase2_margin: c.phase2_margin_cm.map_or(d.phase2_margin, |v| v * CM),
            noise_bound: c.noise_bound_cm.map_or(d.noise_bound, |v| v * CM),
        };
    }
    if let Some(p) = &raw.perturbation {
        let d = super::default_schedule();
        ev.episode.schedule = PerturbationSchedule {
            steps: p.steps.clone().unwrap_or(d.steps),
            max_shift: p.max_shift_cm.map_or(d.max_shift, |v| v * CM),
            max_rot: p.max_rot_deg.map_or(d.max_rot, deg),
        };
    }
    if let Some(c) = &raw.collect {
        if let Some(v) = c.records {
            out.collect.records = v;
        }
        if let Some(v) = c.free_fraction {
            out.collect.free_fraction = v;
        }
        if let Some(v) = c.placements {
            out.collect.placements = v;
        }
    }
    if let Some(t) = &raw.train {
        out.train = match t.kind.as_deref().unwrap_or("knn") {
            "knn" => {
                let w = t.weighting.as_deref().unwrap_or("inverse-distance");
                TrainSpec::Knn {
                    k: t.k.unwrap_or(5),
                    weighting: Weighting::parse(w).ok_or_else(|| Error::Config(format!("unknown weighting '{w}'")))?,
                }
            }
            "ridge" => TrainSpec::Ridge { lambda: t.lambda.unwrap_or(1e-3) },
            other => return Err(Error::Config(format!("unknown model kind '{other}'"))),
        };
    }
    out.eval.validate()?;
    out.collect.validate()?;
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}
