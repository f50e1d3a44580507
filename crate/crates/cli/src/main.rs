//! `pegsim` command line. Every verb reads an optional TOML config (see
//! `pegsim::harness::parse_config`) and applies flag overrides on top.
//! Flags use centimeters and degrees like the config file.
//!
//! Exit status: 0 on success, 1 for usage, configuration or input errors,
//! 2 when an assertion fails or a replayed trace diverges.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pegsim::collector::{dataset_stats, read_dataset, write_dataset, CollectionConfig};
use pegsim::controller::{EpisodeConfig, Executor, PerturbationSchedule};
use pegsim::harness::{
    ablation_data_amount, adapt, collect_dataset, default_schedule, read_config, read_trace, replay, run_cell,
    run_eval, run_perturbation_eval, suite_by_name, write_trace, ConfigFile, EvalConfig, EvalReport, PredictorSpec,
    ReportFormat, DEFAULT_ADAPT_SAMPLES,
};
use pegsim::predictor::{load_model, save_model, NoiseMode, NoiseSpec, OracleSpec, PredictionModel};
use pegsim::seed;
use pegsim::world::{make_scene, SceneConfig};

const CM: f64 = 0.01;

#[derive(Parser)]
#[command(name = "pegsim", version, about = "Peg-in-hole insertion benchmark")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scene suite: default, clean, novel, tight or a single scene name.
    #[arg(long, global = true)]
    suite: Option<String>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Learned model file; replaces the configured predictor.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Oracle noise profile: exact, full or coarse-only.
    #[arg(long, conflicts_with = "model")]
    noise: Option<String>,
    /// coarse-to-fine or direct.
    #[arg(long)]
    executor: Option<String>,
    /// Report file; the format follows the extension (.json or .csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one trace file per episode into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Exit with status 2 if the success rate falls below this fraction.
    #[arg(long)]
    min_success: Option<f64>,
}

#[derive(Subcommand)]
enum Verb {
    /// Collect a mixed free-space and close-contact dataset.
    Collect {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        records: Option<usize>,
        /// Share of free-space records.
        #[arg(long)]
        free_fraction: Option<f64>,
    },
    /// Fit the configured learned predictor on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a predictor over the scene suite.
    Eval(EvalArgs),
    /// Evaluate with scheduled socket shifts.
    PerturbEval {
        #[command(flatten)]
        eval: EvalArgs,
        /// Largest planar shift; replaces the configured schedule value.
        #[arg(long)]
        shift_cm: Option<f64>,
        /// Control steps at which the socket moves.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
    },
    /// Adapt a base model to one new scene with free-space data.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        /// Base training data; required for ridge models.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Scene to register; defaults to the first scene of the suite.
        #[arg(long)]
        scene: Option<String>,
        #[arg(long, default_value_t = DEFAULT_ADAPT_SAMPLES)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the new records here.
        #[arg(long)]
        records_out: Option<PathBuf>,
    },
    /// Refit on subsamples of a dataset and evaluate each.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.5, 0.12])]
        fractions: Vec<f64>,
        /// Table file (.csv or .json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a trace as a step table and check that it reproduces.
    Replay {
        trace: PathBuf,
        /// Check against this scene's geometry instead of the recorded one.
        #[arg(long)]
        world: Option<String>,
    },
}

/// Failures that exit with status 2.
#[derive(Debug)]
struct Assertion(String);

impl std::fmt::Display for Assertion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Assertion {}

fn load_config(c: &Common) -> Result<ConfigFile> {
    let mut cfg = match &c.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    if let Some(s) = c.seed {
        cfg.eval.master_seed = s;
        cfg.collect.master_seed = s;
    }
    if let Some(name) = &c.suite {
        cfg.eval.suite = suite_by_name(name).ok_or_else(|| anyhow!("unknown suite '{name}'"))?;
    }
    if let Some(n) = c.episodes {
        cfg.eval.episodes_per_scene = n;
    }
    cfg.eval.validate()?;
    Ok(cfg)
}

fn apply_eval_args(cfg: &mut EvalConfig, a: &EvalArgs) -> Result<()> {
    if let Some(m) = &a.model {
        cfg.predictor = PredictorSpec::Model(m.clone());
    }
    if let Some(n) = &a.noise {
        let noise = match n.as_str() {
            "exact" => NoiseSpec::ZERO,
            "full" => NoiseSpec::full(),
            "coarse-only" => NoiseSpec::coarse_only(),
            other => bail!("unknown noise profile '{other}'"),
        };
        cfg.predictor = PredictorSpec::Oracle(OracleSpec { noise, mode: NoiseMode::HELD });
    }
    if let Some(x) = &a.executor {
        cfg.episode.executor = Executor::parse(x).ok_or_else(|| anyhow!("unknown executor '{x}'"))?;
    }
    if let Some(m) = a.min_success {
        if !(0.0..=1.0).contains(&m) {
            bail!("--min-success must be a fraction in [0, 1]");
        }
    }
    if let Some(out) = &a.out {
        format_of(out)?;
    }
    Ok(())
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn format_of(path: &Path) -> Result<ReportFormat> {
    ReportFormat::from_path(path).ok_or_else(|| anyhow!("{}: report files must end in .json or .csv", path.display()))
}

fn finish_eval(cfg: &EvalConfig, a: &EvalArgs, report: &EvalReport) -> Result<()> {
    print!("{}", report.summary());
    if let Some(out) = &a.out {
        report.emit(format_of(out)?, out)?;
    }
    if let Some(dir) = &a.trace_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let predictor = cfg.predictor.resolve()?;
        for (si, scene) in cfg.suite.iter().enumerate() {
            for e in 0..cfg.episodes_per_scene {
                let t = run_cell(cfg, &predictor, si, e)?;
                write_trace(&t, &scene.name, &cfg.episode, &dir.join(format!("{}-{e:03}.trace", scene.name)))?;
            }
        }
    }
    if let Some(m) = a.min_success {
        if report.aggregate.success_rate < m {
            return Err(Assertion(format!("success rate {:.3} is below {m}", report.aggregate.success_rate)).into());
        }
    }
    Ok(())
}

fn scene_named(cfg: &ConfigFile, name: Option<&str>) -> Result<SceneConfig> {
    match name {
        None => Ok(cfg.eval.suite[0].clone()),
        Some(n) => cfg
            .eval
            .suite
            .iter()
            .find(|s| s.name == n)
            .cloned()
            .or_else(|| suite_by_name(n).and_then(|s| s.into_iter().find(|s| s.name == n)))
            .ok_or_else(|| anyhow!("unknown scene '{n}'")),
    }
}

fn ablation_table(rows: &[pegsim::harness::AblationRow], json: bool) -> String {
    let mut s = String::new();
    if json {
        s.push_str("[\n");
        for (i, r) in rows.iter().enumerate() {
            let a = &r.report.aggregate;
            writeln!(
                s,
                "  {{\"fraction\": {}, \"records\": {}, \"episodes\": {}, \"success_rate\": {:.6}, \"within_1cm_rate\": {:.6}, \"within_5mm_rate\": {:.6}}}{}",
                r.fraction,
                r.records,
                a.episodes,
                a.success_rate,
                a.within_1cm_rate,
                a.within_5mm_rate,
                if i + 1 < rows.len() { "," } else { "" }
            )
            .unwrap();
        }
        s.push_str("]\n");
    } else {
        s.push_str("fraction,records,episodes,success_rate,within_1cm_rate,within_5mm_rate\n");
        for r in rows {
            let a = &r.report.aggregate;
            writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.fraction, r.records, a.episodes, a.success_rate, a.within_1cm_rate, a.within_5mm_rate
            )
            .unwrap();
        }
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.verb {
        Verb::Collect { out, records, free_fraction } => {
            if let Some(n) = records {
                cfg.collect.records = n;
            }
            if let Some(f) = free_fraction {
                cfg.collect.free_fraction = f;
            }
            let data = collect_dataset(&cfg.eval.suite, &cfg.collect)?;
            write_dataset(&data, &cfg.collect.collection.raster, &out)?;
            let st = dataset_stats(&data);
            println!(
                "{} records ({} free-space, {} close-contact, {} touching the block) -> {}",
                st.total,
                st.free_space,
                st.close_contact,
                st.contact,
                out.display()
            );
        }
        Verb::Train { data, out } => {
            let (_, records) = read_dataset(&data)?;
            let model = cfg.train.fit(&records)?;
            save_model(&model, records.len(), &out)?;
            println!("fitted {:?} on {} records -> {}", cfg.train, records.len(), out.display());
        }
        Verb::Eval(a) => {
            apply_eval_args(&mut cfg.eval, &a)?;
            let report = run_eval(&cfg.eval)?;
            finish_eval(&cfg.eval, &a, &report)?;
        }
        Verb::PerturbEval { eval: a, shift_cm, steps } => {
            apply_eval_args(&mut cfg.eval, &a)?;
            let mut schedule: PerturbationSchedule = cfg.eval.episode.schedule.clone();
            if schedule.is_empty() {
                schedule = default_schedule();
            }
            if let Some(s) = shift_cm {
                schedule.max_shift = s * CM;
            }
            if let Some(s) = steps {
                schedule.steps = s;
            }
            cfg.eval.episode = EpisodeConfig { schedule, ..cfg.eval.episode.clone() };
            let report = run_perturbation_eval(&cfg.eval)?;
            finish_eval(&cfg.eval, &a, &report)?;
            println!(
                "perturbations applied {}, skipped {}",
                report.aggregate.perturbations_applied, report.aggregate.perturbations_skipped
            );
        }
        Verb::Adapt { model, data, scene, samples, out, records_out } => {
            let base = load_model(&model)?;
            let base_records = data.as_deref().map(read_dataset).transpose()?.map(|(_, r)| r);
            let scene_cfg = scene_named(&cfg, scene.as_deref())?;
            let registered = make_scene(&scene_cfg, &mut seed::rng(seed::derive(cfg.eval.master_seed, &[0xada])))?;
            let collection = CollectionConfig { raster: cfg.eval.episode.raster, ..cfg.collect.collection.clone() };
            let mut rng = seed::rng(seed::derive(cfg.eval.master_seed, &[0xada, 1]));
            let (adapted, fresh) = adapt(&registered, &base, base_records.as_deref(), samples, &collection, &mut rng)?;
            let total = match &adapted {
                PredictionModel::Knn(m) => m.len(),
                PredictionModel::Ridge(_) => base_records.as_ref().map_or(0, Vec::len) + fresh.len(),
            };
            save_model(&adapted, total, &out)?;
            if let Some(p) = records_out {
                write_dataset(&fresh, &collection.raster, &p)?;
            }
            println!("adapted to '{}' with {} new records -> {}", scene_cfg.name, fresh.len(), out.display());
        }
        Verb::Ablate { data, fractions, out } => {
            let json = out.as_deref().map(format_of).transpose()?.map(|f| f == ReportFormat::Json);
            let (raster, records) = read_dataset(&data)?;
            cfg.eval.episode.raster = raster;
            let rows = ablation_data_amount(&cfg.eval, &records, &cfg.train, &fractions, cfg.eval.master_seed)?;
            print!("{}", ablation_table(&rows, false));
            if let (Some(p), Some(json)) = (out, json) {
                write_out(&p, &ablation_table(&rows, json))?;
            }
        }
        Verb::Replay { trace, world } => {
            let file = read_trace(&trace)?;
            let world = world.map(|w| scene_named(&cfg, Some(&w))).transpose()?;
            let r = replay(&file, world.as_ref())?;
            print!("{}", r.render());
            if !r.is_consistent() {
                return Err(Assertion(format!("{} divergences", r.divergences.len())).into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Assertion>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
