//! Dataset campaigns, model fitting, adaptation and the data-amount ablation.

use rand::seq::index;
use rand::Rng;

use crate::collector::{collect_close_contact, collect_free_space, CollectionConfig, DatasetRecord};
use crate::error::{Error, Result};
use crate::predictor::{fit_knn, fit_ridge, model_target, PredictionModel, Weighting};
use crate::seed::{self, EpisodeSeeds, Stream};
use crate::world::{make_scene, SceneConfig, SceneState};

use super::{learned_predictor, run_eval_with, EvalConfig, EvalReport};

/// Records collected for adaptation: about four minutes of capture at 12.5 Hz.
pub const DEFAULT_ADAPT_SAMPLES: usize = 3000;

/// How many records to collect over a suite.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectPlan {
    pub records: usize,
    /// Share of free-space records; the rest are close-contact.
    pub free_fraction: f64,
    /// Socket placements sampled per scene config.
    pub placements: usize,
    pub collection: CollectionConfig,
    pub master_seed: u64,
}

impl Default for CollectPlan {
    fn default() -> Self {
        CollectPlan {
            records: 20_000,
            free_fraction: 0.8,
            placements: 20,
            collection: CollectionConfig::default(),
            master_seed: 0,
        }
    }
}

impl CollectPlan {
    pub fn validate(&self) -> Result<()> {
        if self.records == 0 || self.placements == 0 {
            return Err(Error::Config("record and placement counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.free_fraction) {
            return Err(Error::Config(format!("free fraction {} outside [0, 1]", self.free_fraction)));
        }
        self.collection.validate()
    }
}

/// Share `c` of `total` split over `cells` as evenly as integers allow.
fn share(total: usize, cells: usize, c: usize) -> usize {
    (c + 1) * total / cells - c * total / cells
}

/// Collects a mixed dataset over every scene config and socket placement.
/// Placement `j` of scene `s` is campaign cell `(s, j)`; its episode id is
/// `s * placements + j`.
pub fn collect_dataset(suite: &[SceneConfig], plan: &CollectPlan) -> Result<Vec<DatasetRecord>> {
    plan.validate()?;
    if suite.is_empty() {
        return Err(Error::Config("scene suite is empty".into()));
    }
    let cells = suite.len() * plan.placements;
    let n_free = (plan.records as f64 * plan.free_fraction).round() as usize;
    let n_contact = plan.records - n_free;
    let mut out = Vec::with_capacity(plan.records);
    for (s, cfg) in suite.iter().enumerate() {
        for j in 0..plan.placements {
            let c = s * plan.placements + j;
            let seeds = EpisodeSeeds::new(plan.master_seed, s, j);
            let scene = make_scene(cfg, &mut seeds.rng(Stream::Scene))?;
            let mut rng = seeds.rng(Stream::Collection);
            let id = c as u64;
            out.extend(collect_free_space(&scene, &plan.collection, share(n_free, cells, c), id, &mut rng)?);
            out.extend(collect_close_contact(&scene, &plan.collection, share(n_contact, cells, c), id, &mut rng)?);
        }
    }
    Ok(out)
}

/// Learned predictor family and hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainSpec {
    Knn { k: usize, weighting: Weighting },
    Ridge { lambda: f64 },
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec::Knn { k: 5, weighting: Weighting::InverseDistance }
    }
}

impl TrainSpec {
    pub fn fit(&self, records: &[DatasetRecord]) -> Result<PredictionModel> {
        match *self {
            TrainSpec::Knn { k, weighting } => {
                if records.len() < k {
                    return Err(Error::Fit(format!("{} records is fewer than k = {k}", records.len())));
                }
                fit_knn(records, k, weighting)
            }
            TrainSpec::Ridge { lambda } => fit_ridge(records, lambda),
        }
    }
}

/// Registers the goal of `scene`, collects `n_samples` free-space records
/// on it and merges them into the base model: appended for k-NN, refit on
/// the union for ridge (which therefore needs `base_records`).
pub fn adapt<R: Rng + ?Sized>(
    scene: &SceneState,
    base_model: &PredictionModel,
    base_records: Option<&[DatasetRecord]>,
    n_samples: usize,
    cfg: &CollectionConfig,
    rng: &mut R,
) -> Result<(PredictionModel, Vec<DatasetRecord>)> {
    if n_samples < 1 {
        return Err(Error::Config("adaptation needs at least one sample".into()));
    }
    if cfg.raster.feature_len() != base_model.feature_len() {
        return Err(Error::FeatureMismatch { expected: base_model.feature_len(), actual: cfg.raster.feature_len() });
    }
    let episode = base_records.and_then(|r| r.iter().map(|r| r.episode_id + 1).max()).unwrap_or(0);
    let fresh = collect_free_space(scene, cfg, n_samples, episode, rng)?;
    let model = match base_model {
        PredictionModel::Knn(m) => {
            let mut m = m.clone();
            let features: Vec<Vec<f64>> = fresh.iter().map(|r| r.observation.features()).collect();
            m.extend(&features, fresh.iter().map(model_target).collect())?;
            PredictionModel::Knn(m)
        }
        PredictionModel::Ridge(m) => {
            let base =
                base_records.ok_or_else(|| Error::Fit("ridge adaptation needs the base training records".into()))?;
            let union: Vec<DatasetRecord> = base.iter().chain(&fresh).cloned().collect();
            fit_ridge(&union, m.lambda())?
        }
    };
    Ok((model, fresh))
}

/// Uniform subsample without replacement, kept in the original order.
/// A fraction of 1 returns every record.
pub fn subsample(records: &[DatasetRecord], fraction: f64, seed: u64) -> Result<Vec<DatasetRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = (records.len() as f64 * fraction).round() as usize;
    let mut idx = index::sample(&mut seed::rng(seed), records.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| records[i].clone()).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub fraction: f64,
    pub records: usize,
    pub report: EvalReport,
}

/// Refits the predictor on seeded subsamples of `records` and evaluates
/// each under the same campaign seeds.
pub fn ablation_data_amount(
    cfg: &EvalConfig,
    records: &[DatasetRecord],
    train: &TrainSpec,
    fractions: &[f64],
    subsample_seed: u64,
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if fractions.is_empty() {
        return Err(Error::Config("no fractions given".into()));
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for (i, &f) in fractions.iter().enumerate() {
        let subset = subsample(records, f, seed::split(subsample_seed, i as u64))?;
        let model = train.fit(&subset)?;
        let report = run_eval_with(cfg, &learned_predictor(model))?;
        rows.push(AblationRow { fraction: f, records: subset.len(), report });
    }
    Ok(rows)
}
