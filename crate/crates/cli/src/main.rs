mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tournav::eval::{
    emit_report, emit_trajectory_svg, failure_histogram, instruction_for, instructions_from_world, load_instructions,
    localization_sweep, random_start, run_suite, sample_query_poses, EvalError, Report, ReportFormat,
};
use tournav::geometry::Pose2;
use tournav::goalfinder::{
    build_action_prompt, build_goal_prompt, find_action, find_goal, OracleClient, RemoteClient, ScriptedClient,
    VlmClient, VlmError,
};
use tournav::localization::LocalizationMap;
use tournav::policy::{EpisodeConfig, Navigator};
use tournav::sim::{generate_world, SimError, WallLayout, World};
use tournav::topograph::{build_graph, GraphError, TopoGraph};
use tournav::tour::{Tour, TourError};

use config::Config;

#[derive(Debug)]
pub enum CliError {
    /// Bad input or arguments; exit code 1.
    Validation(String),
    /// The model endpoint could not be reached; exit code 2.
    Transport(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Transport(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Transport(m) => write!(f, "transport error: {m}"),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}
validation_from!(SimError, TourError, GraphError, tournav::localization::LocalizationError);

impl From<VlmError> for CliError {
    fn from(e: VlmError) -> Self {
        match e {
            VlmError::Transport(m) => CliError::Transport(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Vlm(v) => v.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Topological navigation from a demonstration tour in a simulated building.
#[derive(Parser)]
#[command(name = "tournav", version)]
struct Cli {
    /// Seed for world generation, start sampling, rendering and RANSAC.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file overriding built-in defaults (see `tournav config`).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Goal-finding model: oracle, scripted:<file.jsonl> or remote:<url>.
    #[arg(long, global = true, default_value = "oracle", value_name = "SPEC")]
    vlm: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as JSON.
    Config,
    /// Generate a landmark world and write it as JSON.
    GenWorld {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: Option<f64>,
        #[arg(long)]
        height: Option<f64>,
        #[arg(long)]
        landmarks: Option<usize>,
        /// open or offices
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        instructions: Option<usize>,
    },
    /// Record a noiseless patrol tour through a world.
    GenTour {
        #[arg(long)]
        world: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Build the topological graph of a tour.
    BuildGraph {
        #[arg(long)]
        tour: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Localize one rendered view; prints the result as JSON.
    Localize {
        #[command(flatten)]
        inputs: Inputs,
        /// True camera pose as x,y,theta.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        at: Pose2,
        /// Last known pose used on fallback, as x,y,theta.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        last: Option<Pose2>,
    },
    /// Ask the model for the goal frame of an instruction; prints the decision as JSON.
    FindGoal {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        instruction: String,
        /// Reduce the tour to this frame rate before prompting.
        #[arg(long)]
        fps: Option<f64>,
        /// Also write the rendered prompt to stderr.
        #[arg(long)]
        dump_prompt: bool,
        /// Ask for a discrete left/forward/right action instead of a frame.
        #[arg(long)]
        direct_action: bool,
    },
    /// Run one episode; prints the episode record as JSON.
    Navigate {
        #[command(flatten)]
        inputs: Inputs,
        /// Instruction to resolve with the model.
        #[arg(long, required_unless_present = "goal")]
        instruction: Option<String>,
        /// Goal frame, bypassing goal finding.
        #[arg(long, conflicts_with = "instruction")]
        goal: Option<usize>,
        /// Start pose x,y,theta; random when omitted.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        start: Option<Pose2>,
        /// Use simulator ground truth instead of visual localization.
        #[arg(long)]
        oracle_localization: bool,
        /// Write a top-down trajectory plot.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run the evaluation suite and write a report.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        /// JSONL of {"text", "category"}; defaults to every tagged instruction.
        #[arg(long)]
        instructions: Option<PathBuf>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// json or csv
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
    /// Localization accuracy sweep against ground truth.
    Ate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        /// Largest position offset of a query from its tour frame.
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        /// Largest heading offset of a query from its tour frame, in radians.
        #[arg(long, default_value_t = 0.3)]
        yaw_spread: f64,
    },
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    tour: PathBuf,
    /// Graph file; built from the tour when omitted.
    #[arg(long)]
    graph: Option<PathBuf>,
}

fn parse_pose(s: &str) -> Result<Pose2, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, t] if parts.iter().all(|v| v.is_finite()) => Ok(Pose2::new(*x, *y, *t)),
        _ => Err(format!("expected x,y,theta, got {s:?}")),
    }
}

struct Loaded {
    world: World,
    tour: Tour,
    graph: TopoGraph,
    map: LocalizationMap,
}

impl Inputs {
    fn load(&self, cfg: &Config) -> Result<Loaded, CliError> {
        let world = World::load(&self.world)?;
        let tour = Tour::load(&self.tour)?;
        let graph = match &self.graph {
            Some(p) => TopoGraph::load(p)?,
            None => build_graph(&tour, cfg.edge_rule)?.with_scale(cfg.graph_scale),
        };
        if graph.len() != tour.len() || tour.frames().iter().any(|f| graph.id_of(f.index).is_none()) {
            return Err(CliError::Validation("graph and tour describe different frames".into()));
        }
        let map = LocalizationMap::new(&tour, world.camera, &world.landmarks)?;
        Ok(Loaded { world, tour, graph, map })
    }
}

fn client(spec: &str, world: &World, tour: &Tour, cfg: &Config) -> Result<Box<dyn VlmClient>, CliError> {
    match spec.split_once(':') {
        None if spec == "oracle" => Ok(Box::new(OracleClient::new(world, tour))),
        Some(("scripted", path)) => Ok(Box::new(ScriptedClient::load(Path::new(path))?)),
        Some(("remote", url)) => Ok(Box::new(RemoteClient::new(
            url,
            cfg.remote.model.clone(),
            Duration::from_secs(cfg.remote.timeout_secs),
            cfg.remote.retries,
        ))),
        _ => Err(CliError::Validation(format!(
            "unknown --vlm {spec:?} (expected oracle, scripted:<file> or remote:<url>)"
        ))),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn summary_table(report: &Report) -> String {
    let mut out = format!(
        "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9} {:>7} {:>10}\n",
        "category", "tasks", "episodes", "find_sr", "reach_sr", "e2e_sr", "spl", "step_ms"
    );
    for row in report.categories.iter().chain(std::iter::once(&report.overall)) {
        out.push_str(&format!(
            "{:<16} {:>6} {:>9} {:>9.3} {:>9.3} {:>9.3} {:>7.3} {:>10}\n",
            row.category,
            row.instructions,
            row.episodes,
            row.goal_finding_sr,
            row.goal_reaching_sr,
            row.end_to_end_sr,
            row.spl,
            row.mean_step_latency.map_or("-".to_string(), |l| format!("{:.2}", l * 1e3)),
        ));
    }
    out
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    match cli.command {
        Command::Config => print_json(&cfg),
        Command::GenWorld {
            out,
            width,
            height,
            landmarks,
            layout,
            instructions,
        } => {
            let mut spec = cfg.world.clone();
            spec.width = width.unwrap_or(spec.width);
            spec.height = height.unwrap_or(spec.height);
            spec.landmark_count = landmarks.unwrap_or(spec.landmark_count);
            spec.instruction_count = instructions.unwrap_or(spec.instruction_count);
            if let Some(l) = layout {
                spec.wall_layout = match l.as_str() {
                    "open" => WallLayout::Open,
                    "offices" => WallLayout::Offices,
                    other => return Err(CliError::Validation(format!("unknown layout {other:?}"))),
                };
            }
            let world = generate_world(&spec)?;
            world.save(&out)?;
            eprintln!(
                "wrote {} ({} landmarks, {} walls, {} instructions)",
                out.display(),
                world.landmarks.len(),
                world.walls.len(),
                world.instruction_tags.len()
            );
        }
        Command::GenTour { world, out, frames, fps } => {
            let world = World::load(&world)?;
            let fps = fps.unwrap_or(cfg.tour.fps);
            if !(fps.is_finite() && fps > 0.0) {
                return Err(CliError::Validation(format!("fps must be positive, got {fps}")));
            }
            let tour = world.generate_tour(&world.patrol_route(frames.unwrap_or(cfg.tour.frames)), fps)?;
            tour.save(&out)?;
            eprintln!("wrote {} ({} frames)", out.display(), tour.len());
        }
        Command::BuildGraph { tour, out, scale } => {
            let tour = Tour::load(&tour)?;
            let graph = build_graph(&tour, cfg.edge_rule)?.with_scale(scale.unwrap_or(cfg.graph_scale));
            graph.save(&out)?;
            eprintln!("wrote {} ({} vertices, {} edges)", out.display(), graph.len(), graph.edge_count());
        }
        Command::Localize { inputs, at, last } => {
            let l = inputs.load(&cfg)?;
            let q = l.world.render(&at, &cfg.noise, cfg.suite.seed)?;
            let result = l.map.localize(&q, last.unwrap_or(at), &cfg.localizer);
            print_json(&serde_json::json!({
                "result": result,
                "observations": q.observations.len(),
                "position_error": result.pose.distance(&at),
            }));
        }
        Command::FindGoal {
            inputs,
            instruction,
            fps,
            dump_prompt,
            direct_action,
        } => {
            let l = inputs.load(&cfg)?;
            let instr = match l.world.tag(&instruction) {
                Some(_) => instruction_for(&l.world, &instruction)?,
                None => tournav::goalfinder::Instruction::text(&instruction),
            };
            let gf = tournav::goalfinder::GoalFinderConfig {
                fps: fps.or(cfg.goal_finder.fps),
                ..cfg.goal_finder
            };
            if dump_prompt {
                let view = match gf.fps {
                    Some(rate) if rate < l.tour.fps() => l.tour.subsample(rate)?,
                    _ => l.tour.clone(),
                };
                let prompt = if direct_action {
                    build_action_prompt(&view, &instr)
                } else {
                    build_goal_prompt(&view, &instr)
                };
                eprint!("{}", prompt.render());
            }
            let client = client(&cli.vlm, &l.world, &l.tour, &cfg)?;
            if direct_action {
                print_json(&find_action(client.as_ref(), &l.tour, &instr, &gf)?);
            } else {
                print_json(&find_goal(client.as_ref(), &l.tour, &instr, &gf)?);
            }
        }
        Command::Navigate {
            inputs,
            instruction,
            goal,
            start,
            oracle_localization,
            svg,
        } => {
            let l = inputs.load(&cfg)?;
            let (text, goal) = match (instruction, goal) {
                (_, Some(g)) => (format!("frame {g}"), g),
                (Some(text), None) => {
                    let instr = instruction_for(&l.world, &text)?;
                    let client = client(&cli.vlm, &l.world, &l.tour, &cfg)?;
                    let decision = find_goal(client.as_ref(), &l.tour, &instr, &cfg.goal_finder)?;
                    let g = decision.goal_index.ok_or_else(|| {
                        CliError::Validation(format!("no goal frame in model response {:?}", decision.raw_response))
                    })?;
                    (text, g)
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            let goal_pose = l
                .tour
                .frame(goal)
                .and_then(|f| f.pose)
                .ok_or_else(|| CliError::Validation(format!("goal frame {goal} is not in the tour")))?;
            let s = &cfg.suite;
            let start = start.unwrap_or_else(|| random_start(&l.world, &l.graph, &goal_pose, s.min_start_dist, s.start_jitter, s.seed));
            let episode = EpisodeConfig {
                oracle_localization: oracle_localization || s.episode.oracle_localization,
                localizer: cfg.localizer,
                ..s.episode
            };
            let nav = Navigator { world: &l.world, graph: &l.graph, map: &l.map };
            let record = nav.run_episode(&text, start, goal, &cfg.noise, &episode, s.seed)?;
            if let Some(path) = svg {
                emit_trajectory_svg(&record, &l.world, &l.tour, &path)?;
            }
            print_json(&record);
        }
        Command::Eval {
            inputs,
            instructions,
            starts,
            workers,
            out,
            format,
        } => {
            let l = inputs.load(&cfg)?;
            let list = match instructions {
                Some(p) => load_instructions(&p)?,
                None => instructions_from_world(&l.world),
            };
            let suite = tournav::eval::SuiteConfig {
                starts_per_instruction: starts.unwrap_or(cfg.suite.starts_per_instruction),
                workers: workers.unwrap_or(cfg.suite.workers),
                noise: cfg.noise,
                goal_finder: cfg.goal_finder,
                episode: EpisodeConfig {
                    localizer: cfg.localizer,
                    ..cfg.suite.episode
                },
                ..cfg.suite.clone()
            };
            let client = client(&cli.vlm, &l.world, &l.tour, &cfg)?;
            let report = run_suite(&l.world, &l.tour, &l.graph, &l.map, client.as_ref(), &list, &suite)?;
            print!("{}", summary_table(&report));
            eprintln!("outcomes: {:?}", failure_histogram(&report));
            if let Some(path) = out {
                emit_report(&report, &path, format)?;
            }
        }
        Command::Ate {
            inputs,
            queries,
            radius,
            yaw_spread,
        } => {
            let l = inputs.load(&cfg)?;
            let poses = sample_query_poses(&l.world, &l.tour, queries, radius, yaw_spread, cfg.suite.seed);
            let sweep = localization_sweep(&l.world, &l.map, &poses, &cfg.noise, &cfg.localizer, cfg.suite.seed)?;
            print_json(&serde_json::json!({
                "queries": sweep.queries,
                "median_ate": sweep.summary.median,
                "mean_ate": sweep.summary.mean,
                "mean_heading_error": sweep.mean_heading_error,
                "fallbacks": sweep.fallbacks,
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
