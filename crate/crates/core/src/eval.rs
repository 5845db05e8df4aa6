//! Batch evaluation: goal finding per instruction, closed-loop episodes from
//! random starts, the per-category success table, and report/plot output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::goalfinder::{find_goal, GoalDecision, GoalFinderConfig, Instruction, ParseStatus, VlmClient, VlmError};
use crate::localization::{evaluate_ate, AteSummary, LocalizationMap, LocalizerConfig};
use crate::policy::{EpisodeConfig, EpisodeRecord, Navigator};
use crate::sim::{InstructionTag, NoiseModel, SimError, World};
use crate::topograph::TopoGraph;
use crate::tour::Tour;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no episodes to summarize")]
    Empty,
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Vlm(#[from] VlmError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn spl_of(terms: impl Iterator<Item = (bool, f64, f64)>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (success, l, p) in terms {
        n += 1;
        if !success {
            continue;
        }
        sum += if l <= 0.0 { 1.0 } else { l / p.max(l) };
    }
    (n > 0).then(|| sum / n as f64)
}

/// Success weighted by path length. A start already at the goal scores its
/// success indicator.
pub fn spl(episodes: &[EpisodeRecord]) -> Result<f64, EvalError> {
    spl_of(episodes.iter().map(|e| (e.success, e.shortest_length, e.executed_length))).ok_or(EvalError::Empty)
}

/// One evaluation instruction with its reporting category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteInstruction {
    pub text: String,
    #[serde(default)]
    pub category: Option<String>,
}

/// Every tagged instruction in the world; tags with an image are
/// "multimodal", the rest "reasoning_free".
pub fn instructions_from_world(world: &World) -> Vec<SuiteInstruction> {
    world
        .instruction_tags
        .iter()
        .map(|t| SuiteInstruction {
            text: t.instruction.clone(),
            category: Some(default_category(t).to_string()),
        })
        .collect()
}

fn default_category(tag: &InstructionTag) -> &'static str {
    if tag.image_pose.is_some() {
        "multimodal"
    } else {
        "reasoning_free"
    }
}

/// Reads one JSON object per line: `{"text": ..., "category": ...}`.
pub fn load_instructions(path: &Path) -> Result<Vec<SuiteInstruction>, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Format {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}

/// The request as the robot receives it: text plus, for tags with an image
/// pose, a noiseless view from there.
pub fn instruction_for(world: &World, text: &str) -> Result<Instruction, EvalError> {
    let tag = world
        .tag(text)
        .ok_or_else(|| EvalError::Inconsistent(format!("instruction {text:?} has no tag in the world")))?;
    Ok(match tag.image_pose {
        Some(p) => Instruction::with_image(text, world.render(&p, &NoiseModel::default(), 0)?),
        None => Instruction::text(text),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub starts_per_instruction: usize,
    pub seed: u64,
    pub noise: NoiseModel,
    /// A chosen frame counts as correct within this distance of the tagged goal.
    pub goal_radius: f64,
    /// Starts are at least this far from the tagged goal, reduced when the
    /// route offers no start that far away.
    pub min_start_dist: f64,
    /// Largest random offset of a start from its tour vertex.
    pub start_jitter: f64,
    pub workers: usize,
    pub goal_finder: GoalFinderConfig,
    pub episode: EpisodeConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            starts_per_instruction: 4,
            seed: 0,
            noise: NoiseModel::default(),
            goal_radius: 2.0,
            min_start_dist: 20.0,
            start_jitter: 1.0,
            workers: 1,
            goal_finder: GoalFinderConfig::default(),
            episode: EpisodeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalRow {
    pub instruction: String,
    pub category: String,
    pub decision: GoalDecision,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub instruction: String,
    pub category: String,
    pub start_number: usize,
    pub start: Pose2,
    pub goal_correct: bool,
    /// Absent when goal finding produced no frame.
    pub record: Option<EpisodeRecord>,
}

impl EpisodeRow {
    pub fn reached(&self) -> bool {
        self.record.as_ref().is_some_and(|r| r.success)
    }

    pub fn end_to_end(&self) -> bool {
        self.goal_correct && self.reached()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub instructions: usize,
    pub episodes: usize,
    pub goal_finding_sr: f64,
    /// Over episodes that had a goal to drive to, right or wrong.
    pub goal_reaching_sr: f64,
    pub end_to_end_sr: f64,
    pub spl: f64,
    /// Seconds; `None` when no step ran.
    pub mean_step_latency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub categories: Vec<CategoryRow>,
    pub overall: CategoryRow,
    pub goals: Vec<GoalRow>,
    pub episodes: Vec<EpisodeRow>,
}

fn summarize(category: &str, goals: &[&GoalRow], episodes: &[&EpisodeRow]) -> CategoryRow {
    let frac = |hits: usize, n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    let driven: Vec<&EpisodeRecord> = episodes.iter().filter_map(|e| e.record.as_ref()).collect();
    let latencies: Vec<f64> = driven.iter().flat_map(|r| r.per_step_latency.iter().copied()).collect();
    CategoryRow {
        category: category.to_string(),
        instructions: goals.len(),
        episodes: episodes.len(),
        goal_finding_sr: frac(goals.iter().filter(|g| g.correct).count(), goals.len()),
        goal_reaching_sr: frac(driven.iter().filter(|r| r.success).count(), driven.len()),
        end_to_end_sr: frac(episodes.iter().filter(|e| e.end_to_end()).count(), episodes.len()),
        spl: spl_of(episodes.iter().map(|e| match &e.record {
            Some(r) => (e.end_to_end(), r.shortest_length, r.executed_length),
            None => (false, 0.0, 0.0),
        }))
        .unwrap_or(0.0),
        mean_step_latency: (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64),
    }
}

impl Report {
    pub fn from_rows(mut goals: Vec<GoalRow>, mut episodes: Vec<EpisodeRow>) -> Result<Self, EvalError> {
        if episodes.is_empty() {
            return Err(EvalError::Empty);
        }
        goals.sort_by(|a, b| (&a.category, &a.instruction).cmp(&(&b.category, &b.instruction)));
        episodes.sort_by(|a, b| {
            (&a.category, &a.instruction, a.start_number).cmp(&(&b.category, &b.instruction, b.start_number))
        });
        let mut names: Vec<&str> = goals.iter().map(|g| g.category.as_str()).collect();
        names.extend(episodes.iter().map(|e| e.category.as_str()));
        names.sort();
        names.dedup();
        let categories = names
            .iter()
            .map(|c| {
                let g: Vec<&GoalRow> = goals.iter().filter(|r| r.category == *c).collect();
                let e: Vec<&EpisodeRow> = episodes.iter().filter(|r| r.category == *c).collect();
                summarize(c, &g, &e)
            })
            .collect();
        let overall = summarize("all", &goals.iter().collect::<Vec<_>>(), &episodes.iter().collect::<Vec<_>>());
        Ok(Self {
            categories,
            overall,
            goals,
            episodes,
        })
    }
}

/// Random start near a tour vertex, at least `min_dist` from `goal`.
fn sample_start(world: &World, graph: &TopoGraph, goal: &Pose2, min_dist: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Pose2 {
    let far: Vec<Pose2> = graph
        .vertices()
        .iter()
        .map(|v| v.pose)
        .filter(|p| p.distance(goal) >= min_dist + jitter)
        .collect();
    loop {
        let base = far[rng.random_range(0..far.len())];
        let r = jitter * rng.random::<f64>().sqrt();
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let p = Pose2::new(base.x + r * a.cos(), base.y + r * a.sin(), yaw);
        if world.contains(&p) {
            return p;
        }
    }
}

/// `wanted`, reduced when the route has too few vertices that far from `goal`.
pub fn effective_min_start_dist(graph: &TopoGraph, goal: &Pose2, wanted: f64, jitter: f64) -> f64 {
    let farthest = graph
        .vertices()
        .iter()
        .map(|v| v.pose.distance(goal))
        .fold(0.0, f64::max);
    wanted.min(0.8 * (farthest - jitter)).max(0.0)
}

/// Seeded start pose for a single episode, sampled as in [`run_suite`].
pub fn random_start(world: &World, graph: &TopoGraph, goal: &Pose2, min_dist: f64, jitter: f64, seed: u64) -> Pose2 {
    let min_dist = effective_min_start_dist(graph, goal, min_dist, jitter);
    sample_start(world, graph, goal, min_dist, jitter, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn episode_seed(seed: u64, instruction: usize, start: usize) -> u64 {
    let mut z = seed ^ ((instruction as u64) << 32) ^ start as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Job {
    instruction: usize,
    start_number: usize,
    start: Pose2,
    goal: Option<usize>,
}

/// Runs goal finding once per instruction, then `starts_per_instruction`
/// episodes toward whichever frame was chosen. Episodes may run on several
/// threads; the report does not depend on scheduling apart from latencies.
pub fn run_suite(
    world: &World,
    tour: &Tour,
    graph: &TopoGraph,
    map: &LocalizationMap,
    client: &dyn VlmClient,
    instructions: &[SuiteInstruction],
    cfg: &SuiteConfig,
) -> Result<Report, EvalError> {
    cfg.noise.validate()?;
    if graph.is_empty() || tour.is_empty() {
        return Err(EvalError::Inconsistent("tour and graph must be non-empty".into()));
    }
    if let Some(f) = tour.frames().iter().find(|f| graph.id_of(f.index).is_none()) {
        return Err(EvalError::Inconsistent(format!("tour frame {} is not a graph vertex", f.index)));
    }
    let mut goals = Vec::new();
    let mut jobs = Vec::new();
    for (i, si) in instructions.iter().enumerate() {
        let tag = world
            .tag(&si.text)
            .ok_or_else(|| EvalError::Inconsistent(format!("instruction {:?} has no tag in the world", si.text)))?;
        let category = si.category.clone().unwrap_or_else(|| default_category(tag).to_string());
        let instr = instruction_for(world, &si.text)?;
        let decision = find_goal(client, tour, &instr, &cfg.goal_finder)?;
        let goal_pose = decision.goal_index.and_then(|g| tour.frame(g)).and_then(|f| f.pose);
        let correct = decision.parse_status == ParseStatus::Ok
            && goal_pose.is_some_and(|p| p.distance(&tag.goal_pose) <= cfg.goal_radius);
        let min_dist = effective_min_start_dist(graph, &tag.goal_pose, cfg.min_start_dist, cfg.start_jitter);
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, i, usize::MAX));
        for s in 0..cfg.starts_per_instruction {
            jobs.push(Job {
                instruction: i,
                start_number: s,
                start: sample_start(world, graph, &tag.goal_pose, min_dist, cfg.start_jitter, &mut rng),
                goal: decision.goal_index,
            });
        }
        goals.push(GoalRow {
            instruction: si.text.clone(),
            category,
            decision,
            correct,
        });
    }

    let nav = Navigator { world, graph, map };
    let run = |job: &Job| -> Result<EpisodeRow, EvalError> {
        let text = &instructions[job.instruction].text;
        let record = match job.goal {
            Some(g) => Some(nav.run_episode(
                text,
                job.start,
                g,
                &cfg.noise,
                &cfg.episode,
                episode_seed(cfg.seed, job.instruction, job.start_number),
            )?),
            None => None,
        };
        Ok(EpisodeRow {
            instruction: text.clone(),
            category: goals[job.instruction].category.clone(),
            start_number: job.start_number,
            start: job.start,
            goal_correct: goals[job.instruction].correct,
            record,
        })
    };
    let workers = cfg.workers.clamp(1, jobs.len().max(1));
    let rows: Vec<Result<EpisodeRow, EvalError>> = if workers == 1 {
        jobs.iter().map(run).collect()
    } else {
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| s.spawn(|| part.iter().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("episode worker panicked"))
                .collect()
        })
    };
    let episodes = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Report::from_rows(goals, episodes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown report format {other:?} (expected json or csv)")),
        }
    }
}

const CSV_HEADER: [&str; 13] = [
    "category",
    "instruction",
    "start_number",
    "goal_index",
    "goal_correct",
    "success",
    "end_to_end",
    "executed_length",
    "shortest_length",
    "steps",
    "mean_step_latency",
    "fallbacks",
    "failure_reason",
];

/// One row per episode after a header.
pub fn report_csv(report: &Report) -> Result<String, EvalError> {
    if report.episodes.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_format = |e: csv::Error| EvalError::Format {
        path: PathBuf::new(),
        message: e.to_string(),
    };
    w.write_record(CSV_HEADER).map_err(to_format)?;
    for e in &report.episodes {
        let r = e.record.as_ref();
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            e.category.clone(),
            e.instruction.clone(),
            e.start_number.to_string(),
            opt(r.map(|r| r.goal_index.to_string())),
            e.goal_correct.to_string(),
            e.reached().to_string(),
            e.end_to_end().to_string(),
            opt(r.map(|r| r.executed_length.to_string())),
            opt(r.map(|r| r.shortest_length.to_string())),
            opt(r.map(|r| r.steps.to_string())),
            opt(r.and_then(|r| r.mean_latency()).map(|l| l.to_string())),
            opt(r.map(|r| r.fallbacks.to_string())),
            opt(r.and_then(|r| r.failure_reason).map(|f| f.to_string())),
        ])
        .map_err(to_format)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Format {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_report(report: &Report, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    if report.episodes.is_empty() {
        return Err(EvalError::Empty);
    }
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Csv => report_csv(report)?,
    };
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_report(path: &Path) -> Result<Report, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Top-down plot: walls, landmarks, the tour route, the driven path and
/// start/goal markers. World y points up.
pub fn trajectory_svg(record: &EpisodeRecord, world: &World, tour: &Tour) -> String {
    const PX: f64 = 20.0;
    const PAD: f64 = 10.0;
    let b = &world.bounds;
    let sx = |x: f64| PAD + (x - b.min_x) * PX;
    let sy = |y: f64| PAD + (b.max_y - y) * PX;
    let polyline = |poses: &mut dyn Iterator<Item = Pose2>| {
        poses
            .map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let (w, h) = (b.width() * PX + 2.0 * PAD, b.height() * PX + 2.0 * PAD);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#fafafa" stroke="#999"/>"##,
        sx(b.min_x),
        sy(b.max_y),
        b.width() * PX,
        b.height() * PX
    );
    for l in &world.landmarks {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#bbb"/>"##, sx(l.position[0]), sy(l.position[1]));
    }
    for wall in &world.walls {
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333" stroke-width="3"/>"##,
            sx(wall.a[0]),
            sy(wall.a[1]),
            sx(wall.b[0]),
            sy(wall.b[1])
        );
    }
    let route = polyline(&mut tour.frames().iter().filter_map(|f| f.pose));
    let _ = writeln!(s, r##"<polyline points="{route}" fill="none" stroke="#8ab" stroke-width="1"/>"##);
    let path = polyline(&mut record.trajectory.iter().copied());
    let _ = writeln!(s, r##"<polyline points="{path}" fill="none" stroke="#d33" stroke-width="2"/>"##);
    let _ = writeln!(
        s,
        r##"<circle cx="{:.2}" cy="{:.2}" r="6" fill="#2a2"><title>start</title></circle>"##,
        sx(record.start.x),
        sy(record.start.y)
    );
    if let Some(goal) = tour.frame(record.goal_index).and_then(|f| f.pose) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="12" height="12" fill="#22d"><title>goal frame {}</title></rect>"##,
            sx(goal.x) - 6.0,
            sy(goal.y) - 6.0,
            record.goal_index
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_trajectory_svg(record: &EpisodeRecord, world: &World, tour: &Tour, path: &Path) -> Result<(), EvalError> {
    fs::write(path, trajectory_svg(record, world, tour)).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteSweep {
    pub summary: AteSummary,
    pub queries: usize,
    pub fallbacks: usize,
    pub mean_heading_error: f64,
}

/// Query poses near the tour: within `radius` of a random frame and within
/// `yaw_spread` of its heading.
pub fn sample_query_poses(world: &World, tour: &Tour, n: usize, radius: f64, yaw_spread: f64, seed: u64) -> Vec<Pose2> {
    let poses: Vec<Pose2> = tour.frames().iter().filter_map(|f| f.pose).collect();
    if poses.is_empty() {
        return vec![];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let base = poses[rng.random_range(0..poses.len())];
        let r = radius * rng.random::<f64>().sqrt();
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dyaw = if yaw_spread > 0.0 { rng.random_range(-yaw_spread..yaw_spread) } else { 0.0 };
        let p = Pose2::new(base.x + r * a.cos(), base.y + r * a.sin(), base.theta + dyaw);
        if world.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Localizes a rendered view at each pose with no prior and scores the
/// estimates against ground truth.
pub fn localization_sweep(
    world: &World,
    map: &LocalizationMap,
    poses: &[Pose2],
    noise: &NoiseModel,
    cfg: &LocalizerConfig,
    seed: u64,
) -> Result<AteSweep, EvalError> {
    noise.validate()?;
    let mut pairs = Vec::with_capacity(poses.len());
    let mut fallbacks = 0;
    let mut heading = 0.0;
    for (i, truth) in poses.iter().enumerate() {
        let q = world.render(truth, noise, seed.wrapping_add(i as u64))?;
        let loc = map.localize(&q, Pose2::identity(), cfg);
        fallbacks += loc.fallback as usize;
        heading += crate::localization::heading_error(&loc.pose, truth);
        pairs.push((loc.pose, *truth));
    }
    let summary = evaluate_ate(&pairs).map_err(|_| EvalError::Empty)?;
    Ok(AteSweep {
        queries: poses.len(),
        fallbacks,
        mean_heading_error: heading / poses.len() as f64,
        summary,
    })
}

/// Episode outcomes keyed by failure reason.
pub fn failure_histogram(report: &Report) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for e in &report.episodes {
        let key = match &e.record {
            None => "no_goal".to_string(),
            Some(r) => match r.failure_reason {
                Some(f) => f.to_string(),
                None => "success".to_string(),
            },
        };
        *h.entry(key).or_insert(0) += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(success: bool, l: f64, p: f64) -> EpisodeRecord {
        EpisodeRecord {
            instruction: "x".into(),
            goal_index: 1,
            start: Pose2::identity(),
            success,
            executed_length: p,
            shortest_length: l,
            steps: 1,
            per_step_latency: vec![0.001],
            failure_reason: (!success).then_some(crate::policy::FailureReason::MaxSteps),
            trajectory: vec![Pose2::identity()],
            estimates: vec![],
            fallbacks: 0,
        }
    }

    #[test]
    fn spl_examples() {
        assert_abs_diff_eq!(spl(&[rec(true, 10.0, 20.0)]).unwrap(), 0.5);
        assert_abs_diff_eq!(spl(&[rec(true, 3.0, 3.0), rec(true, 7.0, 7.0)]).unwrap(), 1.0);
        let batch = [rec(true, 10.0, 10.0), rec(false, 10.0, 4.0), rec(true, 5.0, 25.0)];
        assert_abs_diff_eq!(spl(&batch).unwrap(), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(spl(&[rec(true, 0.0, 0.0), rec(false, 0.0, 0.0)]).unwrap(), 0.5);
        assert!(matches!(spl(&[]), Err(EvalError::Empty)));
    }

    fn row(i: usize, goal_correct: bool, r: EpisodeRecord) -> EpisodeRow {
        EpisodeRow {
            instruction: "x".into(),
            category: "c".into(),
            start_number: i,
            start: Pose2::identity(),
            goal_correct,
            record: Some(r),
        }
    }

    fn goal_row(correct: bool) -> GoalRow {
        GoalRow {
            instruction: "x".into(),
            category: "c".into(),
            decision: GoalDecision {
                goal_index: Some(1),
                raw_response: "Frame 1".into(),
                parse_status: ParseStatus::Ok,
                attempts: 1,
            },
            correct,
        }
    }

    #[test]
    fn wrong_goal_still_counts_for_reaching() {
        let r = Report::from_rows(
            vec![goal_row(false)],
            vec![row(0, false, rec(true, 5.0, 5.0)), row(1, false, rec(true, 5.0, 6.0))],
        )
        .unwrap();
        assert_eq!(r.overall.goal_finding_sr, 0.0);
        assert_eq!(r.overall.goal_reaching_sr, 1.0);
        assert_eq!(r.overall.end_to_end_sr, 0.0);
        assert_eq!(r.overall.spl, 0.0);
    }

    #[test]
    fn csv_and_json_output() {
        let r = Report::from_rows(
            vec![goal_row(true)],
            vec![row(0, true, rec(true, 5.0, 5.0)), row(1, true, rec(false, 5.0, 9.0)), row(2, true, rec(true, 4.0, 8.0))],
        )
        .unwrap();
        assert_abs_diff_eq!(r.overall.spl, 0.5);
        assert!(r.overall.spl <= r.overall.end_to_end_sr);
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("r.csv");
        emit_report(&r, &csv_path, ReportFormat::Csv).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("category,instruction,start_number"));
        let json_path = dir.path().join("r.json");
        emit_report(&r, &json_path, ReportFormat::Json).unwrap();
        assert_eq!(load_report(&json_path).unwrap(), r);
        assert!(matches!(Report::from_rows(vec![], vec![]), Err(EvalError::Empty)));
        let bad = dir.path().join("missing").join("r.json");
        assert!(matches!(emit_report(&r, &bad, ReportFormat::Json), Err(EvalError::Io { .. })));
    }

    #[test]
    fn csv_quotes_commas() {
        let mut e = row(0, true, rec(true, 1.0, 1.0));
        e.instruction = "Take me to the kitchen, please".into();
        let r = Report::from_rows(vec![goal_row(true)], vec![e]).unwrap();
        let text = report_csv(&r).unwrap();
        assert!(text.contains("\"Take me to the kitchen, please\""));
    }
}
