//! Delta-pose predictors: a ground-truth oracle with a distance-dependent
//! noise profile, and regressors fit on collected datasets.

mod io;
mod knn;
mod ridge;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::collector::DatasetRecord;
use crate::error::{Error, Result};
use crate::geometry::{planar_distance, rotate, DeltaPose};
use crate::observation::Observation;
use crate::seed;

pub use io::{load_model, read_model, save_model, write_model, MODEL_VERSION};
pub use knn::{fit_knn, KnnModel, Weighting};
pub use ridge::{fit_ridge, RidgeModel};

/// Gaussian error added by the oracle. The planar sigma interpolates linearly
/// from `sigma_xy_near` at the goal to `sigma_xy_far` at `near_radius` and
/// beyond.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma_xy_near: f64,
    pub sigma_xy_far: f64,
    pub sigma_z: f64,
    pub sigma_psi: f64,
    pub near_radius: f64,
}

impl NoiseSpec {
    pub const ZERO: NoiseSpec =
        NoiseSpec { sigma_xy_near: 0.0, sigma_xy_far: 0.0, sigma_z: 0.0, sigma_psi: 0.0, near_radius: 0.05 };

    /// Stand-in for the policy trained on the full data mix.
    pub fn full() -> Self {
        NoiseSpec {
            sigma_xy_near: 0.0015,
            sigma_xy_far: 0.005,
            sigma_z: 0.002,
            sigma_psi: 2f64.to_radians(),
            near_radius: 0.05,
        }
    }

    /// Stand-in for the policy trained without close-contact data: fine near
    /// the goal is no better than coarse.
    pub fn coarse_only() -> Self {
        NoiseSpec { sigma_xy_near: 0.004, sigma_xy_far: 0.008, ..Self::full() }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_xy_near, self.sigma_xy_far, self.sigma_z, self.sigma_psi];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || !(self.near_radius > 0.0) {
            return Err(Error::Config(format!("invalid noise spec {self:?}")));
        }
        Ok(())
    }

    pub fn sigma_xy(&self, planar: f64) -> f64 {
        let t = (planar / self.near_radius).min(1.0);
        self.sigma_xy_near + (self.sigma_xy_far - self.sigma_xy_near) * t
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_xy_near == 0.0 && self.sigma_xy_far == 0.0 && self.sigma_z == 0.0 && self.sigma_psi == 0.0
    }
}

pub struct PredictionContext<'a> {
    pub observation: &'a Observation,
    /// Yaw of the gripper, known from the arm's own state.
    pub gripper_psi: f64,
    /// Ground truth; only oracle predictors read it.
    pub true_delta: DeltaPose,
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    std::array::from_fn(|_| rng.sample(StandardNormal))
}

/// Adds `sigma * z` to each component of the true delta.
fn scaled_error(ctx: &PredictionContext<'_>, noise: &NoiseSpec, z: [f64; 4]) -> DeltaPose {
    let d = ctx.true_delta;
    let sxy = noise.sigma_xy(planar_distance(&d));
    DeltaPose::raw(
        d.dx() + sxy * z[0],
        d.dy() + sxy * z[1],
        d.dz() + noise.sigma_z * z[2],
        d.dpsi() + noise.sigma_psi * z[3],
    )
}

pub fn predict_oracle<R: Rng + ?Sized>(ctx: &PredictionContext<'_>, noise: &NoiseSpec, rng: &mut R) -> DeltaPose {
    scaled_error(ctx, noise, standard_normals(rng))
}

/// How the oracle draws its error during an episode. Either way each call's
/// error is Gaussian with the configured sigmas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseMode {
    /// Like the error of a learned regressor: a share of the variance is a
    /// bias held for the whole episode, the rest is a fixed function of the
    /// observation, so the same view always gets the same answer.
    Held { episode_share: f64 },
    /// Independent draw on every call.
    Fresh,
}

impl NoiseMode {
    pub const HELD: NoiseMode = NoiseMode::Held { episode_share: DEFAULT_EPISODE_SHARE };
}

pub const DEFAULT_EPISODE_SHARE: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSpec {
    pub noise: NoiseSpec,
    pub mode: NoiseMode,
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        match self.mode {
            NoiseMode::Held { episode_share } if !(0.0..=1.0).contains(&episode_share) => {
                Err(Error::Config(format!("episode share {episode_share} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Prediction model fit on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictionModel {
    Knn(KnnModel),
    Ridge(RidgeModel),
}

impl PredictionModel {
    pub fn feature_len(&self) -> usize {
        match self {
            PredictionModel::Knn(m) => m.feature_len(),
            PredictionModel::Ridge(m) => m.feature_len(),
        }
    }

    pub fn predict_features(&self, f: &[f64]) -> Result<DeltaPose> {
        match self {
            PredictionModel::Knn(m) => m.predict(f),
            PredictionModel::Ridge(m) => m.predict(f),
        }
    }
}

/// Rotates the planar part of a base-frame delta into the frame of a gripper
/// with yaw `psi`.
pub fn to_gripper_frame(d: &DeltaPose, psi: f64) -> DeltaPose {
    let (x, y) = rotate(d.dx(), d.dy(), -psi);
    DeltaPose::raw(x, y, d.dz(), d.dpsi())
}

pub fn to_base_frame(d: &DeltaPose, psi: f64) -> DeltaPose {
    let (x, y) = rotate(d.dx(), d.dy(), psi);
    DeltaPose::raw(x, y, d.dz(), d.dpsi())
}

/// Regression target of a record. The rasters are locked to the gripper yaw,
/// so only the gripper-frame offset is a function of the observation.
pub fn model_target(r: &DatasetRecord) -> DeltaPose {
    to_gripper_frame(&r.label, r.current.psi())
}

/// Base-frame delta predicted by a fitted model for a gripper with yaw
/// `gripper_psi`.
pub fn predict_model(model: &PredictionModel, obs: &Observation, gripper_psi: f64) -> Result<DeltaPose> {
    Ok(to_base_frame(&model.predict_features(&obs.features())?, gripper_psi))
}

/// Anything the episode runner can ask for a delta pose.
#[derive(Clone, Debug)]
pub enum Predictor {
    Oracle(OracleSpec),
    Model(Arc<PredictionModel>),
}

impl Predictor {
    pub fn oracle(noise: NoiseSpec) -> Self {
        Predictor::Oracle(OracleSpec { noise, mode: NoiseMode::HELD })
    }

    pub fn exact() -> Self {
        Predictor::oracle(NoiseSpec::ZERO)
    }

    /// `seed` is the episode's predictor seed; `rng` its running stream.
    pub fn predict<R: Rng + ?Sized>(&self, ctx: &PredictionContext<'_>, seed: u64, rng: &mut R) -> Result<DeltaPose> {
        match self {
            Predictor::Oracle(spec) if spec.noise.is_zero() => Ok(ctx.true_delta),
            Predictor::Oracle(OracleSpec { noise, mode: NoiseMode::Fresh }) => Ok(predict_oracle(ctx, noise, rng)),
            Predictor::Oracle(OracleSpec { noise, mode: NoiseMode::Held { episode_share } }) => {
                let held = standard_normals(&mut seed::rng(seed));
                let o = ctx.observation;
                let mut h = seed::digest_f64(seed, &o.raster_a);
                h = seed::digest_f64(h, &o.raster_b);
                h = seed::digest_f64(h, &[o.gripper_height]);
                let view = standard_normals(&mut seed::rng(h));
                let (a, b) = (episode_share.sqrt(), (1.0 - episode_share).sqrt());
                Ok(scaled_error(ctx, noise, std::array::from_fn(|i| a * held[i] + b * view[i])))
            }
            Predictor::Model(m) => predict_model(m, ctx.observation, ctx.gripper_psi),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Predictor::Oracle(s) if s.noise.is_zero() => "oracle".into(),
            Predictor::Oracle(s) => format!(
                "oracle(xy {:.1}-{:.1}mm, z {:.1}mm, psi {:.1}deg)",
                s.noise.sigma_xy_near * 1e3,
                s.noise.sigma_xy_far * 1e3,
                s.noise.sigma_z * 1e3,
                s.noise.sigma_psi.to_degrees()
            ),
            Predictor::Model(m) => match m.as_ref() {
                PredictionModel::Knn(k) => format!("knn(k={}, n={})", k.k(), k.len()),
                PredictionModel::Ridge(r) => format!("ridge(lambda={})", r.lambda()),
            },
        }
    }
}

/// Weighted circular mean of angles; zero when the weights cancel.
pub(crate) fn circular_mean(angles: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (s, c) = angles.fold((0.0, 0.0), |(s, c), (a, w)| (s + w * a.sin(), c + w * a.cos()));
    if s == 0.0 && c == 0.0 {
        0.0
    } else {
        s.atan2(c)
    }
}
