//! Episode trace files and replay.
//!
//! ```text
//! #pegsim-trace version=1 scene=<name> executor=<coarse-to-fine|direct> max_steps=<n>
//! params <h> <d_z> <xy_thresh> <psi_thresh> <dz_thresh> <phase2_margin> <noise_bound>
//! socket <hole> <clearance> <psi_tol> <block_half_extent> <block_top> <hole_depth> <insertion_depth> <x> <y> <psi> <plug> <distractors n>
//! distractor <cx> <cy> <half_x> <half_y> <top>          (n lines)
//! start <x> <y> <z> <psi>
//! perturb skipped | perturb applied                     (before a step; applied is followed by a socket block)
//! step <i> <phase|direct> <pose 4> <predicted 4> <waypoint 4> <achieved 4> <S|-><W|-> <clamped axes>
//! outcome <success|timeout> <min_proximity>
//! ```
//!
//! Shapes are written `circle:<r>` or `rect:<w>:<h>`. Floats use the same
//! shortest round-trip form as dataset files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::controller::{
    next_waypoint_direct, proximity, select_phase, ControllerParams, EpisodeConfig, EpisodeTrace, Executor, Outcome,
    PerturbEvent, Phase, StepRecord,
};
use crate::error::{Error, Result};
use crate::geometry::{apply, snap, DeltaPose, Pose4, LINEAR_QUANTUM};
use crate::world::{
    is_success, resolve_motion, ClampedAxes, ContactEvents, CrossSection, Distractor, PlanarPose, SceneConfig,
    SceneState, SocketSpec,
};

pub const TRACE_VERSION: u32 = 1;
const MAGIC: &str = "#pegsim-trace";

/// A parsed trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub scene_name: String,
    pub executor: Executor,
    pub max_steps: usize,
    pub params: ControllerParams,
    pub trace: EpisodeTrace,
}

fn shape(s: &CrossSection) -> String {
    match *s {
        CrossSection::Circle { radius } => format!("circle:{radius:?}"),
        CrossSection::Rectangle { width, height } => format!("rect:{width:?}:{height:?}"),
    }
}

fn push_scene(out: &mut String, s: &SceneState) {
    let k = &s.socket;
    write!(out, "socket {}", shape(&k.hole)).unwrap();
    for v in [k.clearance, k.psi_tol, k.block_half_extent, k.block_top, k.hole_depth, k.insertion_depth] {
        write!(out, " {v:?}").unwrap();
    }
    let p = &s.socket_pose;
    writeln!(out, " {:?} {:?} {:?} {} distractors {}", p.x, p.y, p.psi, shape(&s.plug), s.distractors.len()).unwrap();
    for d in &s.distractors {
        writeln!(out, "distractor {:?} {:?} {:?} {:?} {:?}", d.cx, d.cy, d.half_x, d.half_y, d.top).unwrap();
    }
}

fn push_floats(out: &mut String, v: [f64; 4]) {
    for x in v {
        write!(out, " {x:?}").unwrap();
    }
}

pub fn write_trace_to(trace: &EpisodeTrace, scene_name: &str, cfg: &EpisodeConfig) -> String {
    let mut out = format!(
        "{MAGIC} version={TRACE_VERSION} scene={scene_name} executor={} max_steps={}\n",
        cfg.executor.name(),
        cfg.max_steps
    );
    let c = &cfg.params;
    out.push_str("params");
    for v in [c.h, c.d_z, c.xy_thresh, c.psi_thresh, c.dz_thresh, c.phase2_margin, c.noise_bound] {
        write!(out, " {v:?}").unwrap();
    }
    out.push('\n');
    push_scene(&mut out, &trace.scene);
    out.push_str("start");
    push_floats(&mut out, trace.start.to_array());
    out.push('\n');
    for s in &trace.steps {
        match &s.perturbation {
            Some(PerturbEvent::Skipped) => out.push_str("perturb skipped\n"),
            Some(PerturbEvent::Applied(scene)) => {
                out.push_str("perturb applied\n");
                push_scene(&mut out, scene);
            }
            None => {}
        }
        write!(out, "step {} {}", s.step, s.phase.map_or("direct", |p| p.code())).unwrap();
        for p in [s.pose.to_array(), s.predicted.to_array(), s.waypoint.to_array(), s.achieved.to_array()] {
            push_floats(&mut out, p);
        }
        let e = &s.events;
        writeln!(
            out,
            " {}{} {}",
            if e.surface_contact { 'S' } else { '-' },
            if e.wall_contact { 'W' } else { '-' },
            e.clamped.code()
        )
        .unwrap();
    }
    let outcome = if trace.success() { "success" } else { "timeout" };
    writeln!(out, "outcome {outcome} {:?}", trace.min_proximity).unwrap();
    out
}

pub fn write_trace(trace: &EpisodeTrace, scene_name: &str, cfg: &EpisodeConfig, path: &Path) -> Result<()> {
    fs::write(path, write_trace_to(trace, scene_name, cfg)).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, &path.display().to_string())
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a str,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_string(), line: self.line, msg: msg.into() }
    }

    fn next(&mut self) -> Option<Vec<&'a str>> {
        let (i, l) = self.iter.next()?;
        self.line = i + 1;
        Some(l.split_ascii_whitespace().collect())
    }

    fn expect(&mut self, what: &str) -> Result<Vec<&'a str>> {
        match self.next() {
            Some(t) if t.first() == Some(&what) => Ok(t),
            Some(t) => Err(self.err(format!("expected '{what}' line, found '{}'", t.join(" ")))),
            None => {
                self.line += 1;
                Err(self.err(format!("truncated trace: missing '{what}' line")))
            }
        }
    }

    fn float(&self, t: &str) -> Result<f64> {
        t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| self.err(format!("invalid number '{t}'")))
    }

    fn floats<const N: usize>(&self, t: &[&str]) -> Result<[f64; N]> {
        if t.len() < N {
            return Err(self.err("truncated line"));
        }
        let mut out = [0.0; N];
        for (o, s) in out.iter_mut().zip(t) {
            *o = self.float(s)?;
        }
        Ok(out)
    }

    fn pose(&self, t: &[&str]) -> Result<Pose4> {
        let [x, y, z, psi] = self.floats::<4>(t)?;
        Pose4::new(x, y, z, psi).map_err(|e| self.err(e.to_string()))
    }

    fn shape(&self, t: &str) -> Result<CrossSection> {
        let parts: Vec<&str> = t.split(':').collect();
        let s = match parts.as_slice() {
            ["circle", r] => CrossSection::Circle { radius: self.float(r)? },
            ["rect", w, h] => CrossSection::Rectangle { width: self.float(w)?, height: self.float(h)? },
            _ => return Err(self.err(format!("invalid shape '{t}'"))),
        };
        s.validate().map_err(|e| self.err(e.to_string()))?;
        Ok(s)
    }

    fn scene(&mut self, head: Vec<&str>) -> Result<SceneState> {
        if head.len() != 14 || head[12] != "distractors" {
            return Err(self.err("malformed socket line"));
        }
        let hole = self.shape(head[1])?;
        let [clearance, psi_tol, block_half_extent, block_top, hole_depth, insertion_depth, x, y, psi] =
            self.floats::<9>(&head[2..11])?;
        let plug = self.shape(head[11])?;
        let n: usize = head[13].parse().map_err(|_| self.err("invalid distractor count"))?;
        let spec = SocketSpec { hole, clearance, psi_tol, block_half_extent, block_top, hole_depth, insertion_depth };
        let mut distractors = Vec::with_capacity(n);
        for _ in 0..n {
            let t = self.expect("distractor")?;
            if t.len() != 6 {
                return Err(self.err("malformed distractor line"));
            }
            let [cx, cy, half_x, half_y, top] = self.floats::<5>(&t[1..])?;
            distractors.push(Distractor { cx, cy, half_x, half_y, top });
        }
        SceneState::new(spec, PlanarPose { x, y, psi }, plug, distractors).map_err(|e| self.err(e.to_string()))
    }
}

pub fn parse_trace(text: &str, path: &str) -> Result<TraceFile> {
    let mut l = Lines { iter: text.lines().enumerate(), path, line: 0 };
    let header = l.next().ok_or_else(|| Error::Parse { path: path.into(), line: 1, msg: "empty trace".into() })?;
    if header.first() != Some(&MAGIC) {
        return Err(l.err("missing trace header"));
    }
    let (mut scene_name, mut executor, mut max_steps, mut version) = (None, None, None, None);
    for f in &header[1..] {
        match f.split_once('=') {
            Some(("version", v)) => version = Some(v),
            Some(("scene", v)) => scene_name = Some(v.to_string()),
            Some(("executor", v)) => executor = Executor::parse(v),
            Some(("max_steps", v)) => max_steps = v.parse::<usize>().ok(),
            _ => return Err(l.err(format!("unknown header field '{f}'"))),
        }
    }
    match version {
        Some(v) if v == TRACE_VERSION.to_string() => {}
        Some(v) => return Err(Error::Version { what: "trace", found: v.to_string(), expected: TRACE_VERSION }),
        None => return Err(l.err("header lacks version")),
    }
    let (Some(scene_name), Some(executor), Some(max_steps)) = (scene_name, executor, max_steps) else {
        return Err(l.err("header needs scene, executor and max_steps"));
    };
    let p = l.expect("params")?;
    if p.len() != 8 {
        return Err(l.err("malformed params line"));
    }
    let [h, d_z, xy_thresh, psi_thresh, dz_thresh, phase2_margin, noise_bound] = l.floats::<7>(&p[1..])?;
    let params = ControllerParams { h, d_z, xy_thresh, psi_thresh, dz_thresh, phase2_margin, noise_bound };
    let head = l.expect("socket")?;
    let scene = l.scene(head)?;
    let s = l.expect("start")?;
    if s.len() != 5 {
        return Err(l.err("malformed start line"));
    }
    let start = l.pose(&s[1..])?;

    let mut steps = Vec::new();
    let mut pending = None;
    let (mut applied, mut skipped) = (0, 0);
    let outcome;
    let min_proximity;
    loop {
        let Some(t) = l.next() else {
            l.line += 1;
            return Err(l.err("truncated trace: missing outcome line"));
        };
        match t.first().copied() {
            Some("perturb") => match t.get(1).copied() {
                Some("skipped") => {
                    skipped += 1;
                    pending = Some(PerturbEvent::Skipped);
                }
                Some("applied") => {
                    let head = l.expect("socket")?;
                    applied += 1;
                    pending = Some(PerturbEvent::Applied(l.scene(head)?));
                }
                _ => return Err(l.err("malformed perturb line")),
            },
            Some("step") => {
                if t.len() != 21 {
                    return Err(l.err(format!("step line has {} fields, expected 21", t.len())));
                }
                let step: usize = t[1].parse().map_err(|_| l.err("invalid step index"))?;
                let phase = match t[2] {
                    "direct" => None,
                    p => Some(Phase::parse(p).ok_or_else(|| l.err(format!("unknown phase '{p}'")))?),
                };
                let pose = l.pose(&t[3..7])?;
                let [dx, dy, dz, dpsi] = l.floats::<4>(&t[7..11])?;
                let predicted = DeltaPose::new(dx, dy, dz, dpsi).map_err(|e| l.err(e.to_string()))?;
                let waypoint = l.pose(&t[11..15])?;
                let achieved = l.pose(&t[15..19])?;
                let flags = t[19].as_bytes();
                if flags.len() != 2 || !matches!(flags[0], b'S' | b'-') || !matches!(flags[1], b'W' | b'-') {
                    return Err(l.err(format!("invalid contact flags '{}'", t[19])));
                }
                let clamped =
                    ClampedAxes::from_code(t[20]).ok_or_else(|| l.err(format!("invalid clamped axes '{}'", t[20])))?;
                let events =
                    ContactEvents { surface_contact: flags[0] == b'S', wall_contact: flags[1] == b'W', clamped };
                steps.push(StepRecord {
                    step,
                    perturbation: pending.take(),
                    pose,
                    predicted,
                    phase,
                    waypoint,
                    achieved,
                    events,
                });
            }
            Some("outcome") => {
                if t.len() != 3 {
                    return Err(l.err("malformed outcome line"));
                }
                outcome = match t[1] {
                    "success" => Outcome::Success,
                    "timeout" => Outcome::Timeout,
                    o => return Err(l.err(format!("unknown outcome '{o}'"))),
                };
                min_proximity = l.float(t[2])?;
                break;
            }
            _ => return Err(l.err(format!("unexpected line '{}'", t.join(" ")))),
        }
    }
    if pending.is_some() {
        return Err(l.err("perturbation without a following step"));
    }
    if let Some(t) = l.next() {
        if !t.is_empty() {
            return Err(l.err("content after outcome line"));
        }
    }
    let trace = EpisodeTrace {
        scene,
        start,
        steps,
        outcome,
        min_proximity,
        perturbations_applied: applied,
        perturbations_skipped: skipped,
    };
    Ok(TraceFile { scene_name, executor, max_steps, params, trace })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    /// One rendered row per step.
    pub rows: Vec<String>,
    pub divergences: Vec<String>,
}

impl ReplayReport {
    pub fn is_consistent(&self) -> bool {
        self.divergences.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:>4} {:<8} {:>34} {:>34} {:>34} {:>5}\n",
            "step", "phase", "predicted dx dy dz dpsi", "commanded x y z psi", "achieved x y z psi", "contact"
        );
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        for d in &self.divergences {
            writeln!(s, "DIVERGENCE {d}").unwrap();
        }
        s
    }
}

fn fmt4(v: [f64; 4]) -> String {
    format!("{:>8.4} {:>8.4} {:>8.4} {:>7.2}", v[0], v[1], v[2], v[3].to_degrees())
}

/// Re-resolves every recorded motion and checks the trace against itself.
/// With `world`, the socket and plug geometry of every scene is replaced by
/// that configuration before checking, so a trace recorded under a different
/// world shows up as divergent.
pub fn replay(file: &TraceFile, world: Option<&SceneConfig>) -> Result<ReplayReport> {
    let rebuild = |s: &SceneState| -> Result<SceneState> {
        match world {
            Some(w) => SceneState::new(w.socket.clone(), s.socket_pose, w.plug, s.distractors.clone()),
            None => Ok(s.clone()),
        }
    };
    let t = &file.trace;
    let mut scene = rebuild(&t.scene)?;
    let mut rows = Vec::with_capacity(t.steps.len());
    let mut div = Vec::new();
    let mut pose = t.start;
    let mut min_prox = proximity(&scene.goal, &pose);
    if t.steps.len() > file.max_steps {
        div.push(format!("{} steps exceed the budget of {}", t.steps.len(), file.max_steps));
    }
    for (i, s) in t.steps.iter().enumerate() {
        if let Some(PerturbEvent::Applied(next)) = &s.perturbation {
            scene = rebuild(next)?;
        }
        if s.step != i {
            div.push(format!("step {i}: recorded index {}", s.step));
        }
        if s.pose != pose {
            div.push(format!("step {i}: starts at {} but the previous step ended at {pose}", s.pose));
        }
        let g = apply(&s.pose, &s.predicted);
        match (file.executor, s.phase) {
            (Executor::Direct, None) => {
                if s.waypoint != next_waypoint_direct(&s.pose, &s.predicted) {
                    div.push(format!("step {i}: direct waypoint is not the predicted goal"));
                }
            }
            (Executor::CoarseToFine, Some(phase)) => {
                let expected = select_phase(&s.predicted, &s.pose, &g, &file.params);
                if expected != phase {
                    div.push(format!("step {i}: phase {phase} recorded, {expected} selected"));
                }
                if !waypoint_matches(&s.pose, &g, &s.waypoint, phase, &file.params) {
                    div.push(format!("step {i}: waypoint does not follow the {phase} rule"));
                }
            }
            _ => div.push(format!("step {i}: phase does not match the executor")),
        }
        if !scene.is_admissible(&s.pose) {
            div.push(format!("step {i}: pose {} penetrates the block", s.pose));
            break;
        }
        let (achieved, events) = resolve_motion(&scene, &s.pose, &s.waypoint)?;
        if achieved != s.achieved {
            div.push(format!("step {i}: achieved {} recorded, {achieved} resolved", s.achieved));
        }
        if events != s.events {
            div.push(format!("step {i}: contact events differ"));
        }
        let e = &s.events;
        rows.push(format!(
            "{:>4} {:<8} {:>34} {:>34} {:>34} {:>2}{} {}",
            i,
            s.phase.map_or("direct", |p| p.code()),
            fmt4(s.predicted.to_array()),
            fmt4(s.waypoint.to_array()),
            fmt4(s.achieved.to_array()),
            if e.surface_contact { "S" } else { "-" },
            if e.wall_contact { "W" } else { "-" },
            e.clamped.code()
        ));
        pose = s.achieved;
        min_prox = min_prox.min(proximity(&scene.goal, &pose));
        let done = is_success(&scene, &pose);
        if done && i + 1 != t.steps.len() {
            div.push(format!("step {i}: inserted but the episode continued"));
        }
    }
    let success = if t.steps.is_empty() { is_success(&scene, &t.start) } else { is_success(&scene, &pose) };
    if success != t.success() {
        div.push(format!("outcome recorded as {:?}, replay gives success={success}", t.outcome));
    }
    if min_prox != t.min_proximity {
        div.push(format!("min proximity recorded as {}, replay gives {min_prox}", t.min_proximity));
    }
    Ok(ReplayReport { rows, divergences: div })
}

fn waypoint_matches(p: &Pose4, g: &Pose4, w: &Pose4, phase: Phase, params: &ControllerParams) -> bool {
    let z = match phase {
        Phase::CoarseAlignment => g.z() + params.h,
        _ => p.z() - params.d_z,
    };
    let xy_ok = match phase {
        Phase::CloseContact => {
            let slack = params.noise_bound + 2.0 * LINEAR_QUANTUM;
            (w.x() - g.x()).abs() <= slack && (w.y() - g.y()).abs() <= slack
        }
        _ => w.x() == g.x() && w.y() == g.y(),
    };
    xy_ok && w.z() == snap(z) && w.psi() == g.psi()
}
