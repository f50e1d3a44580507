//! Acceptance benchmarks. Every test prints one PASS/FAIL line straight to
//! stdout (bypassing the test harness capture) and then asserts.
//!
//! The tests hold a shared lock so wall-clock budgets are measured without
//! sibling benchmarks competing for the same cores.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::Rng;

use pegsim::collector::{read_dataset, write_dataset, write_dataset_to, CollectionConfig, DatasetRecord, Provenance};
use pegsim::controller::{next_waypoint, select_phase, ControllerParams, EpisodeConfig, Executor, Phase};
use pegsim::geometry::{DeltaPose, Pose4};
use pegsim::harness::*;
use pegsim::observation::RasterSpec;
use pegsim::predictor::{load_model, save_model, write_model, NoiseSpec, PredictionModel, Predictor};
use pegsim::seed;
use pegsim::world::{make_scene, resolve_motion_with, CrossSection, SceneState};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("[criterion {n:>2}] {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn pct(r: f64) -> String {
    format!("{:.1}%", 100.0 * r)
}

/// Adds or subtracts full turns until the angle lies in (-pi, pi].
fn brute_wrap(mut a: f64) -> f64 {
    while a > PI {
        a -= TAU;
    }
    while a <= -PI {
        a += TAU;
    }
    a
}

fn learned(model: PredictionModel) -> Predictor {
    Predictor::Model(Arc::new(model))
}

// ---------------------------------------------------------------- 1

#[test]
fn labels_reproduce_goals() {
    let _g = serial();
    let t0 = Instant::now();
    let raster = RasterSpec { size: 4, ..RasterSpec::default() };
    let plan = CollectPlan {
        records: 100_000,
        collection: CollectionConfig { raster, ..CollectionConfig::default() },
        ..CollectPlan::default()
    };
    let records = collect_dataset(&default_suite(), &plan).unwrap();
    let (mut linear_bad, mut yaw_worst, mut free, mut contact) = (0usize, 0f64, 0usize, 0usize);
    for r in &records {
        let (c, d, g) = (r.current, r.label, r.goal);
        if c.x() + d.dx() != g.x() || c.y() + d.dy() != g.y() || c.z() + d.dz() != g.z() {
            linear_bad += 1;
        }
        yaw_worst = yaw_worst.max(brute_wrap(c.psi() + d.dpsi() - g.psi()).abs());
        match r.provenance {
            Provenance::FreeSpace => free += 1,
            Provenance::CloseContact => contact += 1,
        }
    }
    let elapsed = t0.elapsed();
    let pass = records.len() == 100_000
        && linear_bad == 0
        && yaw_worst <= 1e-12
        && free > 0
        && contact > 0
        && elapsed < Duration::from_secs(30);
    verdict(
        1,
        "labels reproduce goals",
        pass,
        &format!(
            "{} records ({free} free, {contact} contact), {linear_bad} linear mismatches, worst yaw {yaw_worst:e}, {:.1}s",
            records.len(),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

struct Case {
    dp: [f64; 4],
    p: [f64; 4],
    want: Option<Phase>,
}

/// Phase rule written out from the algorithm text with its pinned constants.
fn phase_oracle(dp: &DeltaPose, p: &Pose4) -> Phase {
    let planar = (dp.dx() * dp.dx() + dp.dy() * dp.dy()).sqrt();
    let gz = p.z() + dp.dz();
    if planar > 0.02 || dp.dpsi().abs() > 20f64.to_radians() || dp.dz() > 0.01 {
        Phase::CoarseAlignment
    } else if gz + 0.01 < p.z() {
        Phase::FineVertical
    } else {
        Phase::CloseContact
    }
}

fn waypoint_oracle(dp: &DeltaPose, p: &Pose4, phase: Phase, n: (f64, f64)) -> Pose4 {
    let (gx, gy, gz) = (p.x() + dp.dx(), p.y() + dp.dy(), p.z() + dp.dz());
    let gpsi = brute_wrap(p.psi() + dp.dpsi());
    match phase {
        Phase::CoarseAlignment => Pose4::new(gx, gy, gz + 0.06, gpsi),
        Phase::FineVertical => Pose4::new(gx, gy, p.z() - 0.005, gpsi),
        Phase::CloseContact => Pose4::new(gx + n.0, gy + n.1, p.z() - 0.005, gpsi),
    }
    .unwrap()
}

fn controller_cases() -> Vec<Case> {
    let d = |v: f64| v.to_radians();
    let base = [0.45, 0.02, 0.06, 0.1];
    let mut cases = vec![
        Case { dp: [0.03, 0.0, -0.05, 0.0], p: base, want: Some(Phase::CoarseAlignment) },
        Case { dp: [0.005, 0.005, -0.03, d(5.0)], p: base, want: Some(Phase::FineVertical) },
        Case { dp: [0.001, 0.001, -0.004, d(1.0)], p: base, want: Some(Phase::CloseContact) },
        Case { dp: [0.012, 0.016, -0.03, 0.0], p: base, want: Some(Phase::FineVertical) },
        Case { dp: [0.0, 0.0, -0.03, d(20.0)], p: base, want: Some(Phase::FineVertical) },
        Case { dp: [0.0, 0.0, -0.03, d(20.5)], p: base, want: Some(Phase::CoarseAlignment) },
        Case { dp: [0.0, 0.0, -0.03, d(-21.0)], p: base, want: Some(Phase::CoarseAlignment) },
        Case { dp: [0.0, 0.0, 0.0101, 0.0], p: base, want: Some(Phase::CoarseAlignment) },
        Case { dp: [0.0, 0.0, -0.0101, 0.0], p: base, want: Some(Phase::FineVertical) },
        Case { dp: [0.0, 0.0, -0.0099, 0.0], p: base, want: Some(Phase::CloseContact) },
        Case { dp: [0.0, 0.0, -0.2, 0.0], p: base, want: Some(Phase::FineVertical) },
        Case { dp: [0.02, 0.001, -0.03, 0.0], p: base, want: Some(Phase::CoarseAlignment) },
        Case { dp: [0.0, -0.025, -0.001, d(2.0)], p: base, want: Some(Phase::CoarseAlignment) },
        Case { dp: [0.0, 0.0, 0.0, 0.0], p: base, want: Some(Phase::CloseContact) },
        Case { dp: [-0.003, 0.002, -0.006, d(-3.0)], p: [-0.2, 0.3, 0.035, 3.1], want: Some(Phase::CloseContact) },
        Case { dp: [0.004, 0.0, -0.02, d(10.0)], p: [0.1, 0.2, 0.05, 3.1], want: Some(Phase::FineVertical) },
        Case { dp: [0.0, 0.0, -0.02, d(-15.0)], p: [0.0, 0.0, 0.05, -3.1], want: Some(Phase::FineVertical) },
    ];
    // The planar boundary: a lattice-exact 2 cm offset must not trigger alignment.
    let two_cm = (0.02 * (1u64 << 40) as f64).floor() / (1u64 << 40) as f64;
    cases.push(Case { dp: [two_cm, 0.0, -0.03, 0.0], p: base, want: Some(Phase::FineVertical) });
    cases.push(Case { dp: [0.0, -two_cm, -0.003, 0.0], p: base, want: Some(Phase::CloseContact) });
    let one_cm = (0.01 * (1u64 << 40) as f64).floor() / (1u64 << 40) as f64;
    cases.push(Case { dp: [0.0, 0.0, one_cm, 0.0], p: base, want: Some(Phase::CloseContact) });
    cases.push(Case { dp: [0.0, 0.0, -one_cm, 0.0], p: base, want: Some(Phase::CloseContact) });
    let mut rng = seed::rng(2024);
    while cases.len() < 200 {
        let r = |rng: &mut seed::SimRng, a: f64| rng.random_range(-a..=a);
        let dp = [r(&mut rng, 0.03), r(&mut rng, 0.03), r(&mut rng, 0.06), r(&mut rng, d(35.0))];
        let p = [0.45 + r(&mut rng, 0.1), r(&mut rng, 0.1), 0.03 + rng.random_range(0.0..0.1), r(&mut rng, PI)];
        cases.push(Case { dp, p, want: None });
    }
    cases
}

#[test]
fn controller_matches_written_algorithm() {
    let _g = serial();
    let t0 = Instant::now();
    let params = ControllerParams::default();
    let pinned = params.h == 0.06
        && params.d_z == 0.005
        && params.xy_thresh == 0.02
        && params.psi_thresh == 20f64.to_radians()
        && params.dz_thresh == 0.01
        && params.noise_bound == 0.003;
    let cases = controller_cases();
    let (mut phase_bad, mut waypoint_bad, mut noise_bad) = (0, 0, 0);
    let mut seen = [0usize; 3];
    for (i, c) in cases.iter().enumerate() {
        let dp = DeltaPose::new(c.dp[0], c.dp[1], c.dp[2], c.dp[3]).unwrap();
        let p = Pose4::new(c.p[0], c.p[1], c.p[2], c.p[3]).unwrap();
        let g = Pose4::new(p.x() + dp.dx(), p.y() + dp.dy(), p.z() + dp.dz(), p.psi() + dp.dpsi()).unwrap();
        let phase = select_phase(&dp, &p, &g, &params);
        let expected = phase_oracle(&dp, &p);
        if phase != expected || c.want.is_some_and(|w| w != phase) {
            phase_bad += 1;
        }
        seen[phase as usize] += 1;
        let mut rng = seed::rng(i as u64);
        let mut twin = rng.clone();
        let n: (f64, f64) = if phase == Phase::CloseContact {
            (twin.random_range(-0.003..=0.003), twin.random_range(-0.003..=0.003))
        } else {
            (0.0, 0.0)
        };
        if n.0.abs() > 0.003 || n.1.abs() > 0.003 {
            noise_bad += 1;
        }
        let w = next_waypoint(&p, &dp, phase, &mut rng, &params);
        if w != waypoint_oracle(&dp, &p, phase, n) {
            waypoint_bad += 1;
        }
    }
    // Injected offsets over many draws stay inside the bound.
    let p = Pose4::new(0.45, 0.0, 0.032, 0.0).unwrap();
    let dp = DeltaPose::new(0.0, 0.0, -0.002, 0.0).unwrap();
    let mut rng = seed::rng(7);
    let (mut worst, mut mean) = (0f64, 0f64);
    for _ in 0..10_000 {
        let w = next_waypoint(&p, &dp, Phase::CloseContact, &mut rng, &params);
        for n in [w.x() - p.x(), w.y() - p.y()] {
            worst = worst.max(n.abs());
            mean += n.abs() / 20_000.0;
        }
    }
    let elapsed = t0.elapsed();
    let pass = pinned
        && cases.len() >= 50
        && phase_bad == 0
        && waypoint_bad == 0
        && noise_bad == 0
        && worst <= 0.003 + 1e-12
        && (mean - 0.0015).abs() <= 0.0015 * 0.05
        && seen.iter().all(|&s| s > 0)
        && elapsed < Duration::from_secs(1);
    verdict(
        2,
        "controller matches the written algorithm",
        pass,
        &format!(
            "{} cases (coarse/vertical/contact {:?}), {phase_bad} phase and {waypoint_bad} waypoint mismatches, \
             noise max {:.4} mm mean {:.4} mm, {:.3}s",
            cases.len(),
            seen,
            worst * 1e3,
            mean * 1e3,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3 to 7

fn oracle_eval(noise: NoiseSpec, executor: Executor) -> EvalReport {
    let cfg = executor_config(executor, &EvalConfig::default());
    run_eval_with(&cfg, &Predictor::oracle(noise)).unwrap()
}

#[test]
fn exact_oracle_always_inserts() {
    let _g = serial();
    let t0 = Instant::now();
    let cfg = EvalConfig::default();
    let pinned = cfg.offset_xy == (0.03, 0.06)
        && cfg.offset_psi == (15f64.to_radians(), 40f64.to_radians())
        && cfg.suite.len() == 5
        && cfg.suite.iter().all(|s| s.socket.clearance == 0.0005);
    let r = run_eval(&cfg).unwrap();
    let elapsed = t0.elapsed();
    let a = &r.aggregate;
    let pass = pinned && a.episodes == 200 && a.successes == 200 && elapsed < Duration::from_secs(120);
    verdict(
        3,
        "exact oracle upper bound",
        pass,
        &format!("{}/{} inserted, {:.1}s", a.successes, a.episodes, secs(elapsed)),
    );
    assert!(pass);
}

#[test]
fn noisy_oracle_success_floor() {
    let _g = serial();
    let t0 = Instant::now();
    let n = NoiseSpec::full();
    let pinned =
        n.sigma_xy_near == 0.0015 && n.sigma_xy_far == 0.005 && n.sigma_z == 0.002 && n.sigma_psi == 2f64.to_radians();
    let r = oracle_eval(n, Executor::CoarseToFine);
    let elapsed = t0.elapsed();
    let a = &r.aggregate;
    let pass = pinned && a.episodes == 200 && a.success_rate >= 0.90 && elapsed < Duration::from_secs(120);
    verdict(
        4,
        "noisy oracle success floor",
        pass,
        &format!("success {} over {} episodes (floor 90%), {:.1}s", pct(a.success_rate), a.episodes, secs(elapsed)),
    );
    assert!(pass);
}

#[test]
fn coarse_only_reaches_but_fails_to_insert() {
    let _g = serial();
    let t0 = Instant::now();
    let n = NoiseSpec::coarse_only();
    let r = oracle_eval(n, Executor::CoarseToFine);
    let elapsed = t0.elapsed();
    let full = oracle_eval(NoiseSpec::full(), Executor::CoarseToFine);
    let (a, f) = (&r.aggregate, &full.aggregate);
    let pass = n.sigma_xy_near == 0.004
        && a.episodes == 200
        && a.within_1cm_rate >= 0.95
        && a.success_rate <= f.success_rate - 0.25
        && elapsed < Duration::from_secs(120);
    verdict(
        5,
        "coarse-only reaches without inserting",
        pass,
        &format!(
            "within 1 cm {} (floor 95%), success {} vs {} full-noise (needs >= 25 points lower), {:.1}s",
            pct(a.within_1cm_rate),
            pct(a.success_rate),
            pct(f.success_rate),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn direct_motion_gets_stuck() {
    let _g = serial();
    let t0 = Instant::now();
    let direct = oracle_eval(NoiseSpec::full(), Executor::Direct);
    let c2f = oracle_eval(NoiseSpec::full(), Executor::CoarseToFine);
    let elapsed = t0.elapsed();
    let (d, c) = (&direct.aggregate, &c2f.aggregate);
    let stuck = if d.failures() == 0 { 1.0 } else { d.failures_with_contact as f64 / d.failures() as f64 };
    let pass = d.episodes == 200
        && d.success_rate <= c.success_rate - 0.30
        && stuck >= 0.5
        && elapsed < Duration::from_secs(120);
    verdict(
        6,
        "direct motion baseline",
        pass,
        &format!(
            "direct {} vs coarse-to-fine {} (needs >= 30 points lower), {} of {} failures with contact, {:.1}s",
            pct(d.success_rate),
            pct(c.success_rate),
            d.failures_with_contact,
            d.failures(),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn recovers_from_socket_shift() {
    let _g = serial();
    let t0 = Instant::now();
    let base = EvalConfig { episodes_per_scene: 20, ..EvalConfig::default() };
    let cfg = EvalConfig { episode: EpisodeConfig { schedule: default_schedule(), ..base.episode.clone() }, ..base };
    let pinned = cfg.episode.schedule.steps.len() == 1 && cfg.episode.schedule.max_shift == 0.02;
    let r = run_perturbation_eval(&cfg).unwrap();
    let elapsed = t0.elapsed();
    let a = &r.aggregate;
    let pass = pinned
        && a.episodes == 100
        && a.perturbations_applied + a.perturbations_skipped == 100
        && a.success_rate >= 0.95
        && elapsed < Duration::from_secs(60);
    verdict(
        7,
        "recovery from a socket shift",
        pass,
        &format!(
            "success {} over {} episodes (floor 95%), {} shifts applied, {} skipped, {:.1}s",
            pct(a.success_rate),
            a.episodes,
            a.perturbations_applied,
            a.perturbations_skipped,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8 to 10

#[test]
fn contact_data_matters_for_insertion() {
    let _g = serial();
    let t0 = Instant::now();
    let train = TrainSpec::default();
    let (mut mixed, mut free) = (Vec::new(), Vec::new());
    let mut free_share = Vec::new();
    for scene in without_distractors(default_suite()) {
        let records = collect_dataset(std::slice::from_ref(&scene), &CollectPlan::default()).unwrap();
        let free_only: Vec<DatasetRecord> =
            records.iter().filter(|r| r.provenance == Provenance::FreeSpace).cloned().collect();
        free_share.push(free_only.len() as f64 / records.len() as f64);
        let cfg = EvalConfig { suite: vec![scene], episodes_per_scene: 20, ..EvalConfig::default() };
        let m = train.fit(&records).unwrap();
        mixed.extend(run_eval_with(&cfg, &learned(m)).unwrap().episodes);
        let f = train.fit(&free_only).unwrap();
        free.extend(run_eval_with(&cfg, &learned(f)).unwrap().episodes);
    }
    let elapsed = t0.elapsed();
    let rate = |eps: &[EpisodeResult], f: fn(&EpisodeResult) -> bool| {
        eps.iter().filter(|e| f(e)).count() as f64 / eps.len() as f64
    };
    let (ms, m1) = (rate(&mixed, |e| e.success), rate(&mixed, |e| e.within_1cm));
    let (fs, f1) = (rate(&free, |e| e.success), rate(&free, |e| e.within_1cm));
    let pass = mixed.len() == 100
        && free_share.iter().all(|s| (s - 0.8).abs() < 1e-9)
        && ms >= 0.80
        && fs <= ms - 0.25
        && f1 >= 0.9 * m1
        && elapsed < Duration::from_secs(600);
    verdict(
        8,
        "contact data matters for insertion",
        pass,
        &format!(
            "mixed success {} (floor 80%), free-only {} (needs >= 25 points lower), within 1 cm {} vs {} \
             (needs >= 90% retained), {:.1}s",
            pct(ms),
            pct(fs),
            pct(f1),
            pct(m1),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn more_data_generalizes_better() {
    let _g = serial();
    let t0 = Instant::now();
    let records = collect_dataset(&default_suite(), &CollectPlan::default()).unwrap();
    let cfg = EvalConfig { suite: novel_suite(), episodes_per_scene: 20, ..EvalConfig::default() };
    let rows = ablation_data_amount(&cfg, &records, &TrainSpec::default(), &[1.0, 0.5, 0.12], 1).unwrap();
    let elapsed = t0.elapsed();
    let s: Vec<f64> = rows.iter().map(|r| r.report.aggregate.success_rate).collect();
    let pass = rows.iter().all(|r| r.report.aggregate.episodes == 100)
        && s[0] >= s[1]
        && s[1] >= s[2]
        && s[2] <= s[0] - 0.20
        && elapsed < Duration::from_secs(900);
    verdict(
        9,
        "data amount ablation",
        pass,
        &format!(
            "novel-object success at 100/50/12% data: {} / {} / {} ({} / {} / {} records; 12% needs >= 20 points \
             below 100%), {:.1}s",
            pct(s[0]),
            pct(s[1]),
            pct(s[2]),
            rows[0].records,
            rows[1].records,
            rows[2].records,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn adaptation_does_not_hurt() {
    let _g = serial();
    let t0 = Instant::now();
    let suite = without_distractors(default_suite());
    let records = collect_dataset(&suite, &CollectPlan::default()).unwrap();
    let base = TrainSpec::default().fit(&records).unwrap();
    let tight = without_distractors(vec![tight_scene()]).remove(0);
    let registered = make_scene(&tight, &mut seed::rng(77)).unwrap();
    let (adapted, fresh) = adapt(
        &registered,
        &base,
        Some(&records),
        DEFAULT_ADAPT_SAMPLES,
        &CollectionConfig::default(),
        &mut seed::rng(78),
    )
    .unwrap();
    let cfg = EvalConfig { suite: vec![tight], episodes_per_scene: 50, ..EvalConfig::default() };
    let b = run_eval_with(&cfg, &learned(base)).unwrap().aggregate;
    let a = run_eval_with(&cfg, &learned(adapted)).unwrap().aggregate;
    let elapsed = t0.elapsed();
    let improved =
        if b.success_rate < 0.90 { a.success_rate > b.success_rate } else { a.success_rate >= b.success_rate };
    let pass =
        cfg.suite[0].socket.clearance == 0.0003 && b.episodes == 50 && improved && elapsed < Duration::from_secs(300);
    verdict(
        10,
        "adaptation to a tight scene",
        pass,
        &format!(
            "base {} -> adapted {} with {} new records, {:.1}s",
            pct(b.success_rate),
            pct(a.success_rate),
            fresh.len(),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 11

const ARTIFACTS: [&str; 8] = [
    "data.txt",
    "knn.model",
    "ridge.model",
    "report.json",
    "report.csv",
    "learned.trace",
    "shift.trace",
    "direct.trace",
];

fn campaign(dir: &Path) {
    let suite: Vec<_> = default_suite().into_iter().take(2).collect();
    let raster = RasterSpec { size: 12, ..RasterSpec::default() };
    let plan = CollectPlan {
        records: 600,
        placements: 3,
        collection: CollectionConfig { raster, ..CollectionConfig::default() },
        master_seed: 11,
        ..CollectPlan::default()
    };
    let records = collect_dataset(&suite, &plan).unwrap();
    write_dataset(&records, &raster, &dir.join("data.txt")).unwrap();
    let knn = TrainSpec::default().fit(&records).unwrap();
    save_model(&knn, records.len(), &dir.join("knn.model")).unwrap();
    let ridge = TrainSpec::Ridge { lambda: 1e-3 }.fit(&records).unwrap();
    save_model(&ridge, records.len(), &dir.join("ridge.model")).unwrap();

    let episode = EpisodeConfig { raster, ..EpisodeConfig::default() };
    let cfg = EvalConfig {
        suite,
        episodes_per_scene: 3,
        predictor: PredictorSpec::Model(dir.join("knn.model")),
        episode,
        master_seed: 5,
        ..EvalConfig::default()
    };
    let report = run_eval(&cfg).unwrap();
    report.emit(ReportFormat::Json, &dir.join("report.json")).unwrap();
    report.emit(ReportFormat::Csv, &dir.join("report.csv")).unwrap();

    let model = cfg.predictor.resolve().unwrap();
    let t = run_cell(&cfg, &model, 1, 2).unwrap();
    write_trace(&t, &cfg.suite[1].name, &cfg.episode, &dir.join("learned.trace")).unwrap();

    let shifted =
        EvalConfig { episode: EpisodeConfig { schedule: default_schedule(), ..cfg.episode.clone() }, ..cfg.clone() };
    let noisy = Predictor::oracle(NoiseSpec::full());
    let t = run_cell(&shifted, &noisy, 0, 1).unwrap();
    write_trace(&t, &cfg.suite[0].name, &shifted.episode, &dir.join("shift.trace")).unwrap();

    let direct = executor_config(Executor::Direct, &cfg);
    let t = run_cell(&direct, &noisy, 0, 0).unwrap();
    write_trace(&t, &cfg.suite[0].name, &direct.episode, &dir.join("direct.trace")).unwrap();
}

fn model_records(bytes: &[u8]) -> usize {
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(256)]).into_owned();
    text.lines().find_map(|l| l.strip_prefix("records ")).unwrap().parse().unwrap()
}

/// Re-serializes an artifact from its parsed form.
fn rewrite(name: &str, path: &Path) -> Vec<u8> {
    let text = || fs::read_to_string(path).unwrap();
    let p = path.display().to_string();
    match name {
        "data.txt" => {
            let (raster, records) = read_dataset(path).unwrap();
            write_dataset_to(&records, &raster).unwrap().into_bytes()
        }
        "knn.model" | "ridge.model" => {
            let model = load_model(path).unwrap();
            let mut out = Vec::new();
            write_model(&model, model_records(&fs::read(path).unwrap()), &mut out).unwrap();
            out
        }
        "report.json" => parse_report_json(&text(), &p).unwrap().to_json().into_bytes(),
        "report.csv" => parse_report_csv(&text(), &p).unwrap().to_csv().into_bytes(),
        _ => {
            let f = read_trace(path).unwrap();
            let cfg = EpisodeConfig {
                params: f.params,
                executor: f.executor,
                max_steps: f.max_steps,
                ..EpisodeConfig::default()
            };
            write_trace_to(&f.trace, &f.scene_name, &cfg).into_bytes()
        }
    }
}

#[test]
fn reruns_and_round_trips_are_byte_identical() {
    let _g = serial();
    let t0 = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    campaign(a.path());
    campaign(b.path());
    let mut differ = Vec::new();
    let mut unstable = Vec::new();
    for name in ARTIFACTS {
        let bytes = fs::read(a.path().join(name)).unwrap();
        if bytes != fs::read(b.path().join(name)).unwrap() {
            differ.push(name);
        }
        if rewrite(name, &a.path().join(name)) != bytes {
            unstable.push(name);
        }
    }
    let replays_ok = ["learned.trace", "shift.trace", "direct.trace"]
        .iter()
        .all(|n| replay(&read_trace(&a.path().join(n)).unwrap(), None).unwrap().is_consistent());
    let elapsed = t0.elapsed();
    let pass = differ.is_empty() && unstable.is_empty() && replays_ok && elapsed < Duration::from_secs(60);
    verdict(
        11,
        "determinism and formats",
        pass,
        &format!(
            "{} artifacts, rerun differences {differ:?}, round-trip differences {unstable:?}, replays consistent {replays_ok}, {:.1}s",
            ARTIFACTS.len(),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 12

/// Plug outline points in the plug frame: corners and edges densely sampled.
fn outline(shape: &CrossSection) -> Vec<(f64, f64)> {
    match *shape {
        CrossSection::Circle { radius } => {
            (0..256).map(|i| (i as f64 * TAU / 256.0).sin_cos()).map(|(s, c)| (radius * c, radius * s)).collect()
        }
        CrossSection::Rectangle { width, height } => {
            let (a, b) = (0.5 * width, 0.5 * height);
            let mut pts = Vec::new();
            for i in 0..=32 {
                let t = -1.0 + 2.0 * i as f64 / 32.0;
                pts.extend([(t * a, b), (t * a, -b), (a, t * b), (-a, t * b)]);
            }
            pts
        }
    }
}

/// Independent containment and motion model built from the scene description.
struct ContactOracle {
    sx: f64,
    sy: f64,
    spsi: f64,
    hole: CrossSection,
    clearance: f64,
    psi_tol: f64,
    top: f64,
    bottom: f64,
    outline: Vec<(f64, f64)>,
    /// Points whose containment decides the fit: the corners of a
    /// rectangular plug, the sampled rim of a round one.
    support: Vec<(f64, f64)>,
}

impl ContactOracle {
    fn new(scene: &SceneState) -> Self {
        let k = &scene.socket;
        ContactOracle {
            sx: scene.socket_pose.x,
            sy: scene.socket_pose.y,
            spsi: scene.socket_pose.psi,
            hole: k.hole,
            clearance: k.clearance,
            psi_tol: k.psi_tol,
            top: k.block_top,
            bottom: k.block_top - k.hole_depth,
            outline: outline(&scene.plug),
            support: match scene.plug {
                CrossSection::Rectangle { width, height } => {
                    let (a, b) = (0.5 * width, 0.5 * height);
                    vec![(a, b), (a, -b), (-a, b), (-a, -b)]
                }
                CrossSection::Circle { .. } => outline(&scene.plug),
            },
        }
    }

    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.spsi.sin_cos();
        let (dx, dy) = (x - self.sx, y - self.sy);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.spsi.sin_cos();
        (self.sx + c * lx - s * ly, self.sy + s * lx + c * ly)
    }

    fn in_opening(&self, lx: f64, ly: f64) -> bool {
        let tol = 1e-9;
        match self.hole {
            CrossSection::Circle { radius } => (lx * lx + ly * ly).sqrt() <= radius + self.clearance + tol,
            CrossSection::Rectangle { width, height } => {
                lx.abs() <= 0.5 * width + self.clearance + tol && ly.abs() <= 0.5 * height + self.clearance + tol
            }
        }
    }

    fn yaw_ok(&self, psi: f64) -> bool {
        self.hole_is_circle() || brute_wrap(psi - self.spsi).abs() <= self.psi_tol + 1e-9
    }

    fn hole_is_circle(&self) -> bool {
        matches!(self.hole, CrossSection::Circle { .. })
    }

    fn contains(&self, pts: &[(f64, f64)], x: f64, y: f64, psi: f64) -> bool {
        if !self.yaw_ok(psi) {
            return false;
        }
        let (s, c) = psi.sin_cos();
        pts.iter().all(|&(u, v)| {
            let (lx, ly) = self.local(x + c * u - s * v, y + s * u + c * v);
            self.in_opening(lx, ly)
        })
    }

    /// Every outline point of the plug at this pose lies in the opening.
    fn covers(&self, x: f64, y: f64, psi: f64) -> bool {
        self.contains(&self.outline, x, y, psi)
    }

    /// Fit test used by the motion model.
    fn fits(&self, x: f64, y: f64, psi: f64) -> bool {
        self.contains(&self.support, x, y, psi)
    }

    fn penetrates(&self, p: &Pose4) -> bool {
        p.z() < self.top && (p.z() < self.bottom - 1e-9 || !self.covers(p.x(), p.y(), p.psi()))
    }

    /// One 0.1 mm step: free above the top, sliding on the top until the
    /// footprint first fits (checked every micrometre), then clamped inside.
    fn step(&self, cur: [f64; 4], tgt: [f64; 4]) -> [f64; 4] {
        if tgt[2] >= self.top {
            return tgt;
        }
        if cur[2] < self.top {
            return self.inside(cur, tgt);
        }
        let s = if cur[2] > self.top { (cur[2] - self.top) / (cur[2] - tgt[2]) } else { 0.0 };
        let dyaw = brute_wrap(tgt[3] - cur[3]);
        for k in 0..=100 {
            let t = s + (1.0 - s) * k as f64 / 100.0;
            let p = [cur[0] + t * (tgt[0] - cur[0]), cur[1] + t * (tgt[1] - cur[1]), self.top, cur[3] + t * dyaw];
            if self.fits(p[0], p[1], p[3]) {
                return self.inside(p, tgt);
            }
        }
        [tgt[0], tgt[1], self.top, tgt[3]]
    }

    /// Farthest point from `a` toward `b` accepted by `fits`, which holds at
    /// `a` and fails past some threshold. The result is backed off the
    /// threshold by a picometre so rounding cannot put it on the wrong side.
    fn reach(&self, a: (f64, f64), b: (f64, f64), fits: impl Fn(f64, f64) -> bool) -> (f64, f64) {
        if fits(b.0, b.1) {
            return b;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if fits(a.0 + mid * (b.0 - a.0), a.1 + mid * (b.1 - a.1)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let t = (lo - 1e-12 / len).max(0.0);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    }

    /// Step with the plug already below the top: depth stops at the hole
    /// bottom, yaw at the angular clearance, and the lateral position at the
    /// walls (per socket axis in a rectangular hole, radially in a round one).
    fn inside(&self, cur: [f64; 4], tgt: [f64; 4]) -> [f64; 4] {
        let z = tgt[2].max(self.bottom);
        let mut psi = tgt[3];
        if !self.hole_is_circle() {
            psi = self.spsi + brute_wrap(psi - self.spsi).clamp(-self.psi_tol, self.psi_tol);
        }
        if self.fits(tgt[0], tgt[1], psi) {
            return [tgt[0], tgt[1], z, psi];
        }
        let fits_local = |lx: f64, ly: f64| {
            let (x, y) = self.world(lx, ly);
            self.fits(x, y, psi)
        };
        let (tx, ty) = self.local(tgt[0], tgt[1]);
        let (ox, oy) = if self.hole_is_circle() {
            self.reach((0.0, 0.0), (tx, ty), fits_local)
        } else {
            let (mut cx, mut cy) = self.local(cur[0], cur[1]);
            if !fits_local(cx, cy) {
                // The rotation pressed a corner into a wall; each wall pushes
                // the plug back along its own normal.
                if !fits_local(cx, 0.0) {
                    cx = self.reach((0.0, 0.0), (cx, 0.0), fits_local).0;
                }
                cy = self.reach((cx, 0.0), (cx, cy), fits_local).1;
            }
            let (ox, _) = self.reach((cx, cy), (tx, cy), fits_local);
            self.reach((ox, cy), (ox, ty), fits_local)
        };
        let (x, y) = self.world(ox, oy);
        [x, y, z, psi]
    }

    fn motion(&self, from: &Pose4, to: &Pose4) -> [f64; 4] {
        let (a, b) = (from.to_array(), to.to_array());
        let dyaw = brute_wrap(b[3] - a[3]);
        let span = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
        let n = ((span / 1e-4).ceil() as usize).max((dyaw.abs() / 0.1f64.to_radians()).ceil() as usize).max(1);
        let mut cur = a;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            let tgt = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2]), a[3] + t * dyaw];
            cur = self.step(cur, tgt);
        }
        cur
    }
}

fn contact_scenes() -> Vec<SceneState> {
    let mut configs = default_suite();
    configs.extend(novel_suite());
    configs.push(tight_scene());
    let mut rng = seed::rng(31);
    configs
        .iter()
        .flat_map(|c| {
            let c = without_distractors(vec![c.clone()]).remove(0);
            (0..4).map(|_| make_scene(&c, &mut rng).unwrap()).collect::<Vec<_>>()
        })
        .collect()
}

/// Start and end of one random motion. Starts are drawn above the block or,
/// for in-hole motions, resampled until the oracle accepts them.
fn random_motion(scene: &SceneState, o: &ContactOracle, kind: usize, rng: &mut seed::SimRng) -> (Pose4, Pose4) {
    let u = |rng: &mut seed::SimRng, a: f64| rng.random_range(-a..=a);
    let at = |lx: f64, ly: f64, z: f64, dpsi: f64| {
        let (x, y) = o.world(lx, ly);
        Pose4::new(x, y, z, scene.socket_pose.psi + dpsi).unwrap()
    };
    let deg = |v: f64| v.to_radians();
    match kind {
        // From above into or onto the block near the hole.
        0..=3 => {
            let from = at(u(rng, 0.004), u(rng, 0.004), o.top + rng.random_range(0.0..0.01), u(rng, deg(6.0)));
            let to = at(u(rng, 0.004), u(rng, 0.004), o.top - rng.random_range(-0.003..0.02), u(rng, deg(6.0)));
            (from, to)
        }
        // From inside the hole to anywhere nearby.
        4..=6 => loop {
            let from = at(u(rng, 0.001), u(rng, 0.001), rng.random_range(o.bottom..o.top), u(rng, deg(3.0)));
            if o.penetrates(&from) {
                continue;
            }
            let to =
                at(u(rng, 0.006), u(rng, 0.006), rng.random_range(o.bottom - 0.005..o.top + 0.005), u(rng, deg(10.0)));
            break (from, to);
        },
        // Long motions over the whole block area.
        _ => {
            let from = at(u(rng, 0.03), u(rng, 0.03), o.top + rng.random_range(0.0..0.03), u(rng, PI));
            let to = at(u(rng, 0.03), u(rng, 0.03), o.top + rng.random_range(-0.02..0.03), u(rng, PI));
            (from, to)
        }
    }
}

#[test]
fn contact_model_is_sound() {
    let _g = serial();
    let t0 = Instant::now();
    let scenes = contact_scenes();
    let oracles: Vec<ContactOracle> = scenes.iter().map(ContactOracle::new).collect();
    let mut rng = seed::rng(12);
    let (mut penetrations, mut substeps, mut worst, mut worst_yaw, mut clamped) = (0usize, 0usize, 0f64, 0f64, 0usize);
    let calls = 10_000;
    for i in 0..calls {
        let k = rng.random_range(0..scenes.len());
        let (scene, o) = (&scenes[k], &oracles[k]);
        let (from, to) = random_motion(scene, o, i % 10, &mut rng);
        let (end, ev) = resolve_motion_with(scene, &from, &to, |p, _| {
            substeps += 1;
            penetrations += o.penetrates(p) as usize;
        })
        .unwrap();
        clamped += ev.any() as usize;
        let r = o.motion(&from, &to);
        let planar = (end.x() - r[0]).hypot(end.y() - r[1]);
        worst = worst.max(planar).max((end.z() - r[2]).abs());
        worst_yaw = worst_yaw.max(brute_wrap(end.psi() - r[3]).abs());
    }
    let elapsed = t0.elapsed();
    let pass = penetrations == 0 && worst <= 2e-4 && elapsed < Duration::from_secs(120);
    verdict(
        12,
        "contact model soundness",
        pass,
        &format!(
            "{calls} motions ({clamped} with contact), {substeps} substeps, {penetrations} penetrations, \
             worst deviation from the 0.1 mm oracle {:.3} um (limit 200 um), yaw {:.2e} deg, {:.1}s",
            worst * 1e6,
            worst_yaw.to_degrees(),
            secs(elapsed)
        ),
    );
    assert!(pass);
}
