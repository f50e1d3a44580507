//! Evaluation reports and their JSON and CSV forms.
//!
//! Both forms carry the same numbers: every float is written with six
//! decimals and stored pre-rounded, so parsing either file gives back the
//! report exactly.
//!
//! JSON: an object with `predictor`, `executor`, `master_seed`, `aggregate`
//! (an aggregate object), `scenes` (aggregate objects in suite order) and
//! `episodes` (episode objects ordered by scene index, then episode).
//!
//! CSV: three `# key: value` comment lines for the metadata, then a header
//! row and one row per episode, per scene and for the whole campaign,
//! distinguished by the `scope` column (`episode`, `scene`, `all`). For
//! aggregate rows `steps` holds the mean steps to success and `episode` and
//! `min_proximity` are empty.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::controller::{EpisodeTrace, Executor};
use crate::error::{Error, Result};

use super::{NEAR_1CM, NEAR_5MM};

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub scene: String,
    pub scene_index: usize,
    pub episode: usize,
    pub success: bool,
    /// Control steps executed.
    pub steps: usize,
    pub min_proximity: f64,
    pub within_1cm: bool,
    pub within_5mm: bool,
    /// Steps that recorded the event.
    pub surface_contacts: usize,
    pub wall_contacts: usize,
    pub perturbations_applied: usize,
    pub perturbations_skipped: usize,
}

impl EpisodeResult {
    pub fn from_trace(scene: &str, scene_index: usize, episode: usize, t: &EpisodeTrace) -> Self {
        EpisodeResult {
            scene: scene.to_string(),
            scene_index,
            episode,
            success: t.success(),
            steps: t.steps.len(),
            min_proximity: round6(t.min_proximity),
            within_1cm: t.min_proximity < NEAR_1CM,
            within_5mm: t.min_proximity < NEAR_5MM,
            surface_contacts: t.surface_contacts(),
            wall_contacts: t.wall_contacts(),
            perturbations_applied: t.perturbations_applied,
            perturbations_skipped: t.perturbations_skipped,
        }
    }

    pub fn any_contact(&self) -> bool {
        self.surface_contacts > 0 || self.wall_contacts > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    /// Scene name, or `all`.
    pub scope: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub within_1cm: usize,
    pub within_1cm_rate: f64,
    pub within_5mm: usize,
    pub within_5mm_rate: f64,
    pub mean_steps_to_success: Option<f64>,
    pub surface_contacts: usize,
    pub wall_contacts: usize,
    /// Failed episodes that recorded any contact event.
    pub failures_with_contact: usize,
    pub perturbations_applied: usize,
    pub perturbations_skipped: usize,
}

impl Aggregate {
    fn of<'a>(scope: &str, eps: impl Iterator<Item = &'a EpisodeResult>) -> Self {
        let mut a = Aggregate {
            scope: scope.to_string(),
            episodes: 0,
            successes: 0,
            success_rate: 0.0,
            within_1cm: 0,
            within_1cm_rate: 0.0,
            within_5mm: 0,
            within_5mm_rate: 0.0,
            mean_steps_to_success: None,
            surface_contacts: 0,
            wall_contacts: 0,
            failures_with_contact: 0,
            perturbations_applied: 0,
            perturbations_skipped: 0,
        };
        let mut steps = 0usize;
        for e in eps {
            a.episodes += 1;
            if e.success {
                a.successes += 1;
                steps += e.steps;
            } else if e.any_contact() {
                a.failures_with_contact += 1;
            }
            a.within_1cm += e.within_1cm as usize;
            a.within_5mm += e.within_5mm as usize;
            a.surface_contacts += e.surface_contacts;
            a.wall_contacts += e.wall_contacts;
            a.perturbations_applied += e.perturbations_applied;
            a.perturbations_skipped += e.perturbations_skipped;
        }
        let n = a.episodes.max(1) as f64;
        a.success_rate = round6(a.successes as f64 / n);
        a.within_1cm_rate = round6(a.within_1cm as f64 / n);
        a.within_5mm_rate = round6(a.within_5mm as f64 / n);
        if a.successes > 0 {
            a.mean_steps_to_success = Some(round6(steps as f64 / a.successes as f64));
        }
        a
    }

    pub fn failures(&self) -> usize {
        self.episodes - self.successes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub predictor: String,
    pub executor: Executor,
    pub master_seed: u64,
    pub aggregate: Aggregate,
    pub scenes: Vec<Aggregate>,
    pub episodes: Vec<EpisodeResult>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Picks the format from a file extension.
    pub fn from_path(path: &Path) -> Option<ReportFormat> {
        match path.extension()?.to_str()? {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }
}

impl EvalReport {
    /// Aggregates episodes; the result does not depend on their order.
    pub fn new(predictor: String, executor: Executor, master_seed: u64, mut episodes: Vec<EpisodeResult>) -> Self {
        episodes.sort_by_key(|e| (e.scene_index, e.episode));
        let mut scenes: Vec<Aggregate> = Vec::new();
        let mut i = 0;
        while i < episodes.len() {
            let j = episodes[i..]
                .iter()
                .position(|e| e.scene_index != episodes[i].scene_index)
                .map_or(episodes.len(), |p| i + p);
            scenes.push(Aggregate::of(&episodes[i].scene, episodes[i..j].iter()));
            i = j;
        }
        let aggregate = Aggregate::of("all", episodes.iter());
        EvalReport { predictor, executor, master_seed, aggregate, scenes, episodes }
    }

    pub fn success_rate(&self) -> f64 {
        self.aggregate.success_rate
    }

    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n");
        writeln!(s, "  \"predictor\": {},", Value::from(self.predictor.as_str())).unwrap();
        writeln!(s, "  \"executor\": \"{}\",", self.executor.name()).unwrap();
        writeln!(s, "  \"master_seed\": {},", self.master_seed).unwrap();
        writeln!(s, "  \"aggregate\": {},", aggregate_json(&self.aggregate)).unwrap();
        s.push_str("  \"scenes\": [");
        for (i, a) in self.scenes.iter().enumerate() {
            s.push_str(if i == 0 { "\n    " } else { ",\n    " });
            s.push_str(&aggregate_json(a));
        }
        s.push_str("\n  ],\n  \"episodes\": [");
        for (i, e) in self.episodes.iter().enumerate() {
            s.push_str(if i == 0 { "\n    " } else { ",\n    " });
            write!(
                s,
                "{{\"scene\": {}, \"scene_index\": {}, \"episode\": {}, \"success\": {}, \"steps\": {}, \"min_proximity\": {:.6}, \
                 \"within_1cm\": {}, \"within_5mm\": {}, \"surface_contacts\": {}, \"wall_contacts\": {}, \
                 \"perturbations_applied\": {}, \"perturbations_skipped\": {}}}",
                Value::from(e.scene.as_str()),
                e.scene_index,
                e.episode,
                e.success,
                e.steps,
                e.min_proximity,
                e.within_1cm,
                e.within_5mm,
                e.surface_contacts,
                e.wall_contacts,
                e.perturbations_applied,
                e.perturbations_skipped
            )
            .unwrap();
        }
        s.push_str("\n  ]\n}\n");
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(CSV_HEADER).unwrap();
        for e in &self.episodes {
            let b = |v: bool| if v { "1" } else { "0" };
            w.write_record([
                "episode".to_string(),
                e.scene.clone(),
                e.episode.to_string(),
                e.scene_index.to_string(),
                "1".into(),
                b(e.success).into(),
                format!("{:.6}", e.success as u8 as f64),
                b(e.within_1cm).into(),
                format!("{:.6}", e.within_1cm as u8 as f64),
                b(e.within_5mm).into(),
                format!("{:.6}", e.within_5mm as u8 as f64),
                e.steps.to_string(),
                format!("{:.6}", e.min_proximity),
                e.surface_contacts.to_string(),
                e.wall_contacts.to_string(),
                b(!e.success && e.any_contact()).into(),
                e.perturbations_applied.to_string(),
                e.perturbations_skipped.to_string(),
            ])
            .unwrap();
        }
        let rows = self.scenes.iter().enumerate().map(|(i, a)| ("scene", i.to_string(), a));
        for (scope, index, a) in rows.chain(std::iter::once(("all", String::new(), &self.aggregate))) {
            w.write_record([
                scope.to_string(),
                a.scope.clone(),
                String::new(),
                index,
                a.episodes.to_string(),
                a.successes.to_string(),
                format!("{:.6}", a.success_rate),
                a.within_1cm.to_string(),
                format!("{:.6}", a.within_1cm_rate),
                a.within_5mm.to_string(),
                format!("{:.6}", a.within_5mm_rate),
                a.mean_steps_to_success.map_or(String::new(), |v| format!("{v:.6}")),
                String::new(),
                a.surface_contacts.to_string(),
                a.wall_contacts.to_string(),
                a.failures_with_contact.to_string(),
                a.perturbations_applied.to_string(),
                a.perturbations_skipped.to_string(),
            ])
            .unwrap();
        }
        let body = String::from_utf8(w.into_inner().unwrap()).unwrap();
        format!(
            "# predictor: {}\n# executor: {}\n# master_seed: {}\n{body}",
            self.predictor,
            self.executor.name(),
            self.master_seed
        )
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }

    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<()> {
        fs::write(path, self.render(format)).map_err(|e| Error::io(path, e))
    }

    /// Human-readable summary table.
    pub fn summary(&self) -> String {
        let mut s =
            format!("predictor {}  executor {}  seed {}\n", self.predictor, self.executor.name(), self.master_seed);
        writeln!(
            s,
            "{:<10} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "scene", "n", "success", "<1cm", "<5mm", "steps", "surface", "wall"
        )
        .unwrap();
        for a in self.scenes.iter().chain(std::iter::once(&self.aggregate)) {
            writeln!(
                s,
                "{:<10} {:>5} {:>8.3} {:>8.3} {:>8.3} {:>8} {:>8} {:>8}",
                a.scope,
                a.episodes,
                a.success_rate,
                a.within_1cm_rate,
                a.within_5mm_rate,
                a.mean_steps_to_success.map_or("-".to_string(), |v| format!("{v:.1}")),
                a.surface_contacts,
                a.wall_contacts
            )
            .unwrap();
        }
        s
    }
}

const CSV_HEADER: [&str; 18] = [
    "scope",
    "scene",
    "episode",
    "scene_index",
    "episodes",
    "successes",
    "success_rate",
    "within_1cm",
    "within_1cm_rate",
    "within_5mm",
    "within_5mm_rate",
    "steps",
    "min_proximity",
    "surface_contacts",
    "wall_contacts",
    "failures_with_contact",
    "perturbations_applied",
    "perturbations_skipped",
];

fn aggregate_json(a: &Aggregate) -> String {
    format!(
        "{{\"scope\": {}, \"episodes\": {}, \"successes\": {}, \"success_rate\": {:.6}, \"within_1cm\": {}, \
         \"within_1cm_rate\": {:.6}, \"within_5mm\": {}, \"within_5mm_rate\": {:.6}, \"mean_steps_to_success\": {}, \
         \"surface_contacts\": {}, \"wall_contacts\": {}, \"failures_with_contact\": {}, \
         \"perturbations_applied\": {}, \"perturbations_skipped\": {}}}",
        Value::from(a.scope.as_str()),
        a.episodes,
        a.successes,
        a.success_rate,
        a.within_1cm,
        a.within_1cm_rate,
        a.within_5mm,
        a.within_5mm_rate,
        a.mean_steps_to_success.map_or("null".to_string(), |v| format!("{v:.6}")),
        a.surface_contacts,
        a.wall_contacts,
        a.failures_with_contact,
        a.perturbations_applied,
        a.perturbations_skipped
    )
}

fn bad(path: &str, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line: 0, msg: msg.into() }
}

struct Obj<'a> {
    v: &'a Value,
    path: &'a str,
}

impl<'a> Obj<'a> {
    fn get(&self, k: &str) -> Result<&'a Value> {
        self.v.get(k).ok_or_else(|| bad(self.path, format!("missing field '{k}'")))
    }

    fn uint(&self, k: &str) -> Result<usize> {
        self.get(k)?.as_u64().map(|v| v as usize).ok_or_else(|| bad(self.path, format!("'{k}' is not an integer")))
    }

    fn float(&self, k: &str) -> Result<f64> {
        self.get(k)?.as_f64().ok_or_else(|| bad(self.path, format!("'{k}' is not a number")))
    }

    fn boolean(&self, k: &str) -> Result<bool> {
        self.get(k)?.as_bool().ok_or_else(|| bad(self.path, format!("'{k}' is not a boolean")))
    }

    fn string(&self, k: &str) -> Result<String> {
        self.get(k)?.as_str().map(String::from).ok_or_else(|| bad(self.path, format!("'{k}' is not a string")))
    }
}

fn aggregate_from_json(v: &Value, path: &str) -> Result<Aggregate> {
    let o = Obj { v, path };
    let mean = o.get("mean_steps_to_success")?;
    Ok(Aggregate {
        scope: o.string("scope")?,
        episodes: o.uint("episodes")?,
        successes: o.uint("successes")?,
        success_rate: o.float("success_rate")?,
        within_1cm: o.uint("within_1cm")?,
        within_1cm_rate: o.float("within_1cm_rate")?,
        within_5mm: o.uint("within_5mm")?,
        within_5mm_rate: o.float("within_5mm_rate")?,
        mean_steps_to_success: if mean.is_null() { None } else { Some(o.float("mean_steps_to_success")?) },
        surface_contacts: o.uint("surface_contacts")?,
        wall_contacts: o.uint("wall_contacts")?,
        failures_with_contact: o.uint("failures_with_contact")?,
        perturbations_applied: o.uint("perturbations_applied")?,
        perturbations_skipped: o.uint("perturbations_skipped")?,
    })
}

fn parse_executor(s: &str, path: &str) -> Result<Executor> {
    Executor::parse(s).ok_or_else(|| bad(path, format!("unknown executor '{s}'")))
}

pub fn parse_report_json(text: &str, path: &str) -> Result<EvalReport> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let o = Obj { v: &v, path };
    let list = |k: &str| -> Result<&Vec<Value>> {
        o.get(k)?.as_array().ok_or_else(|| bad(path, format!("'{k}' is not an array")))
    };
    let episodes = list("episodes")?
        .iter()
        .map(|v| {
            let e = Obj { v, path };
            Ok(EpisodeResult {
                scene: e.string("scene")?,
                scene_index: e.uint("scene_index")?,
                episode: e.uint("episode")?,
                success: e.boolean("success")?,
                steps: e.uint("steps")?,
                min_proximity: e.float("min_proximity")?,
                within_1cm: e.boolean("within_1cm")?,
                within_5mm: e.boolean("within_5mm")?,
                surface_contacts: e.uint("surface_contacts")?,
                wall_contacts: e.uint("wall_contacts")?,
                perturbations_applied: e.uint("perturbations_applied")?,
                perturbations_skipped: e.uint("perturbations_skipped")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        predictor: o.string("predictor")?,
        executor: parse_executor(&o.string("executor")?, path)?,
        master_seed: o.get("master_seed")?.as_u64().ok_or_else(|| bad(path, "'master_seed' is not an integer"))?,
        aggregate: aggregate_from_json(o.get("aggregate")?, path)?,
        scenes: list("scenes")?.iter().map(|v| aggregate_from_json(v, path)).collect::<Result<_>>()?,
        episodes,
    })
}

pub fn parse_report_csv(text: &str, path: &str) -> Result<EvalReport> {
    let mut meta = [None, None, None];
    let mut body_start = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let Some(rest) = line.strip_prefix("# ") else { break };
        let (k, v) = rest.trim_end_matches('\n').split_once(": ").ok_or_else(|| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg: "malformed metadata line".into(),
        })?;
        let slot = match k {
            "predictor" => 0,
            "executor" => 1,
            "master_seed" => 2,
            _ => return Err(Error::Parse { path: path.into(), line: i + 1, msg: format!("unknown metadata '{k}'") }),
        };
        meta[slot] = Some(v.to_string());
        body_start += line.len();
    }
    let [Some(predictor), Some(executor), Some(seed)] = meta else {
        return Err(bad(path, "missing metadata lines"));
    };
    let comment_lines = text[..body_start].matches('\n').count();
    let mut rdr = csv::ReaderBuilder::new().from_reader(&text.as_bytes()[body_start..]);
    let header = rdr.headers().map_err(|e| bad(path, e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse { path: path.into(), line: comment_lines + 1, msg: "unexpected header".into() });
    }
    let mut episodes = Vec::new();
    let mut scenes = Vec::new();
    let mut aggregate = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = comment_lines + i + 2;
        let err = |msg: String| Error::Parse { path: path.into(), line, msg };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let f = |k: usize| rec.get(k).unwrap_or("");
        let uint = |k: usize| f(k).parse::<usize>().map_err(|_| err(format!("invalid {} '{}'", CSV_HEADER[k], f(k))));
        let float = |k: usize| f(k).parse::<f64>().map_err(|_| err(format!("invalid {} '{}'", CSV_HEADER[k], f(k))));
        let flag = |k: usize| match f(k) {
            "0" => Ok(false),
            "1" => Ok(true),
            v => Err(err(format!("invalid {} '{v}'", CSV_HEADER[k]))),
        };
        match f(0) {
            "episode" => episodes.push(EpisodeResult {
                scene: f(1).to_string(),
                episode: uint(2)?,
                scene_index: uint(3)?,
                success: flag(5)?,
                within_1cm: flag(7)?,
                within_5mm: flag(9)?,
                steps: uint(11)?,
                min_proximity: float(12)?,
                surface_contacts: uint(13)?,
                wall_contacts: uint(14)?,
                perturbations_applied: uint(16)?,
                perturbations_skipped: uint(17)?,
            }),
            scope @ ("scene" | "all") => {
                let a = Aggregate {
                    scope: f(1).to_string(),
                    episodes: uint(4)?,
                    successes: uint(5)?,
                    success_rate: float(6)?,
                    within_1cm: uint(7)?,
                    within_1cm_rate: float(8)?,
                    within_5mm: uint(9)?,
                    within_5mm_rate: float(10)?,
                    mean_steps_to_success: if f(11).is_empty() { None } else { Some(float(11)?) },
                    surface_contacts: uint(13)?,
                    wall_contacts: uint(14)?,
                    failures_with_contact: uint(15)?,
                    perturbations_applied: uint(16)?,
                    perturbations_skipped: uint(17)?,
                };
                if scope == "scene" {
                    scenes.push(a);
                } else {
                    aggregate = Some(a);
                }
            }
            other => return Err(err(format!("unknown scope '{other}'"))),
        }
    }
    Ok(EvalReport {
        predictor,
        executor: parse_executor(&executor, path)?,
        master_seed: seed.parse().map_err(|_| bad(path, format!("invalid master_seed '{seed}'")))?,
        aggregate: aggregate.ok_or_else(|| bad(path, "missing aggregate row"))?,
        scenes,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(scene_index: usize, episode: usize, success: bool, prox: f64, surface: usize) -> EpisodeResult {
        EpisodeResult {
            scene: format!("s{scene_index}"),
            scene_index,
            episode,
            success,
            steps: 10 + episode,
            min_proximity: prox,
            within_1cm: prox < 0.01,
            within_5mm: prox < 0.005,
            surface_contacts: surface,
            wall_contacts: 0,
            perturbations_applied: 0,
            perturbations_skipped: 0,
        }
    }

    fn sample() -> EvalReport {
        let eps = vec![
            ep(1, 0, true, 0.0004, 2),
            ep(0, 1, false, 0.006, 5),
            ep(0, 0, true, 0.0, 1),
            ep(1, 1, false, 0.02, 0),
        ];
        EvalReport::new("oracle, \"quoted\"".into(), Executor::CoarseToFine, 42, eps)
    }

    #[test]
    fn aggregates_are_order_independent() {
        let a = sample();
        let mut eps = a.episodes.clone();
        eps.reverse();
        assert_eq!(EvalReport::new(a.predictor.clone(), a.executor, 42, eps), a);
        assert_eq!(a.scenes.len(), 2);
        assert_eq!(a.aggregate.successes, 2);
        assert_eq!(a.aggregate.within_1cm, 3);
        assert_eq!(a.aggregate.within_5mm, 2);
        assert_eq!(a.aggregate.failures_with_contact, 1);
        assert_eq!(a.aggregate.mean_steps_to_success, Some(10.0));
        assert!(a.aggregate.within_5mm_rate <= a.aggregate.within_1cm_rate);
    }

    #[test]
    fn json_and_csv_round_trip() {
        let r = sample();
        let j = r.to_json();
        let back = parse_report_json(&j, "r.json").unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), j);
        let c = r.to_csv();
        let back = parse_report_csv(&c, "r.csv").unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_csv(), c);
    }

    #[test]
    fn no_successes_has_no_mean_steps() {
        let r = EvalReport::new("x".into(), Executor::Direct, 1, vec![ep(0, 0, false, 0.03, 0)]);
        assert_eq!(r.aggregate.mean_steps_to_success, None);
        assert!(r.to_json().contains("\"mean_steps_to_success\": null"));
        assert_eq!(parse_report_csv(&r.to_csv(), "r").unwrap(), r);
    }

    #[test]
    fn malformed_reports_are_rejected() {
        let c = sample().to_csv();
        let broken = c.replacen("episode,s0,0", "episode,s0,x", 1);
        assert!(matches!(parse_report_csv(&broken, "r").unwrap_err(), Error::Parse { line: 5, .. }));
        assert!(parse_report_json("{", "r").is_err());
        assert!(parse_report_csv(&c.replacen("# executor: coarse-to-fine\n", "", 1), "r").is_err());
    }
}
