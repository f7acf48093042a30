//! Command-line front end: config loading, overrides and the five commands.
//!
//! Every command validates its whole configuration before touching the file
//! system, so a rejected config never leaves partial outputs behind.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::belief::DifficultyGrid;
use crate::controller::{run_task, EpisodeResult, ReplaySource, SourcedBallot, TaskConfig, WorkerStore};
use crate::em::{run_em, BallotRecord, EmConfig, EmDataset, EmOutput, EmState};
use crate::error::{Error, Result};
use crate::model::{AnswerId, Ballot, WorkerId};
use crate::sim::{
    generate_planted_dataset, majority_vote_agent, plurality, run_experiment, AgentSpec,
    ExperimentConfig, ExperimentReport, GammaRange, PlantedConfig,
};

/// The fourteen-ballot SAT-question trace bundled with the crate.
pub const SAT_TRACE: &str = include_str!("../data/sat_trace.jsonl");

#[derive(Debug, Parser)]
#[command(name = "lazysusan", version, about = "Decide when to stop asking the crowd.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation experiment and write CSV/JSON reports.
    Simulate(SimulateArgs),
    /// Replay a recorded ballot stream through the controller.
    Decide(DecideArgs),
    /// Run EM on a multi-task ballot dataset.
    Em(EmArgs),
    /// Sample a planted dataset with a hidden-truth sidecar.
    Generate(GenerateArgs),
    /// `decide` on the bundled SAT trace.
    ReplaySat(ReplaySatArgs),
}

/// Task-level overrides shared by the controller commands.
#[derive(Debug, Clone, Default, Args)]
pub struct TaskOverrides {
    /// Lookahead depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Value of a wrong answer, e.g. `--cw -50`.
    #[arg(long, allow_hyphen_values = true)]
    pub cw: Option<f64>,
    /// Bandwagon coefficient of the model.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Difficulty grid: a bucket count (`10`) or comma-separated centers.
    #[arg(long)]
    pub grid: Option<String>,
}

impl TaskOverrides {
    fn apply(&self, task: &mut TaskConfig) -> Result<()> {
        if let Some(d) = self.depth {
            task.lookahead_depth = d;
        }
        if let Some(cw) = self.cw {
            task.wrong_value = cw;
        }
        if let Some(t) = self.theta {
            task.theta = t;
        }
        if let Some(g) = &self.grid {
            task.difficulty_grid = parse_grid(g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reveal true worker gammas to the agent (`--gamma-oracle=false` to track them).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub gamma_oracle: Option<bool>,
    #[command(flatten)]
    pub task: TaskOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct DecideArgs {
    /// JSONL file of `{worker_id, answer}` records in arrival order.
    pub ballots: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for `trace.jsonl` and `belief.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub task: TaskOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct ReplaySatArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub task: TaskOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    /// JSONL file of `{task_id, worker_id, answer}` records.
    pub dataset: PathBuf,
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initial theta.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Difficulty grid searched for each task.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset JSONL path; the truth goes next to it as `*.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// One configuration file for all commands. Sections a command does not use
/// are ignored by it but still validated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub task: TaskConfig,
    pub simulate: SimulateSection,
    pub em: EmSection,
    pub generate: PlantedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub difficulties: Vec<f64>,
    pub repetitions: usize,
    pub gamma_ranges: Vec<GammaRange>,
    pub wrong_values: Vec<f64>,
    pub theta_true: f64,
    pub gamma_oracle: bool,
    pub worker_population: Option<usize>,
    pub agents: Vec<AgentSpec>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        SimulateSection {
            difficulties: e.difficulties,
            repetitions: e.repetitions,
            gamma_ranges: e.gamma_ranges,
            wrong_values: e.wrong_values,
            theta_true: e.theta_true,
            gamma_oracle: e.gamma_oracle,
            worker_population: e.worker_population,
            agents: e.agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub init_gamma: f64,
    pub init_theta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub search: EmConfig,
}

impl Default for EmSection {
    fn default() -> Self {
        EmSection {
            init_gamma: 1.0,
            init_theta: 1.0,
            max_iters: 100,
            tol: 1e-6,
            search: EmConfig::default(),
        }
    }
}

impl EmSection {
    fn validate(&self) -> Result<()> {
        if !(self.init_gamma >= 0.0 && self.init_gamma <= self.search.gamma_max) {
            return Err(Error::config("em.init_gamma", "must lie in [0, search.gamma_max]"));
        }
        if !(self.init_theta > 0.0 && self.init_theta.is_finite()) {
            return Err(Error::config("em.init_theta", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("em.max_iters", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("em.tol", "must be positive"));
        }
        let s = &self.search;
        if !(s.gamma_max > 0.0 && s.gamma_max.is_finite()) {
            return Err(Error::config("em.search.gamma_max", "must be positive"));
        }
        if !(s.theta_min > 0.0 && s.theta_max > s.theta_min && s.theta_max.is_finite()) {
            return Err(Error::config("em.search", "need 0 < theta_min < theta_max"));
        }
        if !(s.search_tol > 0.0 && s.sweep_tol >= 0.0) || s.max_sweeps == 0 {
            return Err(Error::config("em.search", "tolerances must be positive and max_sweeps at least 1"));
        }
        DifficultyGrid::new(s.difficulty_grid.centers().to_vec())?;
        Ok(())
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string().trim_end().to_owned(),
        })
    }

    fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.experiment(self.seed.unwrap_or(0)).validate()?;
        self.em.validate()?;
        self.generate.validate()
    }

    pub fn experiment(&self, seed: u64) -> ExperimentConfig {
        let s = &self.simulate;
        ExperimentConfig {
            seed,
            difficulties: s.difficulties.clone(),
            repetitions: s.repetitions,
            gamma_ranges: s.gamma_ranges.clone(),
            wrong_values: s.wrong_values.clone(),
            theta_true: s.theta_true,
            gamma_oracle: s.gamma_oracle,
            worker_population: s.worker_population,
            agents: s.agents.clone(),
            task: self.task.clone(),
        }
    }

    fn require_seed(&self, cli: Option<u64>) -> Result<u64> {
        cli.or(self.seed).ok_or_else(|| {
            Error::config("seed", "this command is randomized; pass --seed or set a top-level `seed`")
        })
    }
}

/// `"10"` gives ten equal buckets; `"0.1,0.5,0.9"` gives those centers.
pub fn parse_grid(spec: &str) -> Result<DifficultyGrid> {
    let spec = spec.trim();
    if let Ok(n) = spec.parse::<usize>() {
        return DifficultyGrid::uniform(n);
    }
    let centers = spec
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("grid", format!("`{c}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    DifficultyGrid::new(centers)
}

/// Runs one parsed command line, printing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, out).map(drop),
        Command::Decide(a) => cmd_decide(&a, out).map(drop),
        Command::Em(a) => cmd_em(&a, out).map(drop),
        Command::Generate(a) => cmd_generate(&a, out).map(drop),
        Command::ReplaySat(a) => cmd_replay_sat(&a, out).map(drop),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub gamma_hi: f64,
    pub wrong_value: f64,
    pub agent: String,
    pub baseline: String,
    pub mean_difference: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub seed: u64,
    pub rows: Vec<crate::sim::ReportRow>,
    /// Paired net-utility differences for every pair of agents.
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<ExperimentReport> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.task.apply(&mut cfg.task)?;
    if let Some(d) = args.task.depth {
        for a in &mut cfg.simulate.agents {
            if let AgentSpec::Lookahead { depth } = a {
                *depth = d;
            }
        }
    }
    if let Some(cw) = args.task.cw {
        cfg.simulate.wrong_values = vec![cw];
    }
    if let Some(g) = args.gamma_oracle {
        cfg.simulate.gamma_oracle = g;
    }
    let seed = cfg.require_seed(args.seed)?;
    cfg.seed = Some(seed);
    cfg.validate()?;

    let report = run_experiment(&cfg.experiment(seed))?;
    let summary = SimulateSummary {
        seed,
        rows: report.rows.clone(),
        comparisons: comparisons(&report, &cfg),
    };

    let mut csv_bytes = Vec::new();
    report.write_csv(&mut csv_bytes)?;
    let mut episodes = csv::Writer::from_writer(Vec::new());
    for e in &report.episodes {
        episodes.serialize(e)?;
    }
    let episodes = episodes
        .into_inner()
        .map_err(|e| Error::io("episodes.csv", e.into_error()))?;

    create_dir(&args.out)?;
    write_file(&args.out.join("report.csv"), &csv_bytes)?;
    write_file(&args.out.join("episodes.csv"), &episodes)?;
    write_file(&args.out.join("summary.json"), &to_json(&summary)?)?;
    let manifest = Manifest {
        command: "simulate",
        seed,
        config: &cfg,
    };
    write_file(&args.out.join("manifest.json"), &to_json(&manifest)?)?;

    say(out, format_args!("seed {seed}"))?;
    say(
        out,
        format_args!(
            "{:<8} {:>6} {:<14} {:>9} {:>8} {:>10}",
            "gamma", "C_W", "agent", "accuracy", "cost", "net"
        ),
    )?;
    for r in &report.rows {
        say(
            out,
            format_args!(
                "{:<8} {:>6} {:<14} {:>8.1}% {:>8.3} {:>10.3}",
                format!("({},{})", r.gamma_lo, r.gamma_hi),
                r.wrong_value,
                r.agent,
                r.accuracy_pct,
                r.avg_cost,
                r.avg_net_utility
            ),
        )?;
    }
    say(out, format_args!("wrote {}", args.out.display()))?;
    Ok(report)
}

fn comparisons(report: &ExperimentReport, cfg: &RunConfig) -> Vec<Comparison> {
    let labels: Vec<String> = {
        let mut seen = Vec::new();
        for r in &report.rows {
            if !seen.contains(&r.agent) {
                seen.push(r.agent.clone());
            }
        }
        seen
    };
    let mut out = Vec::new();
    for g in &cfg.simulate.gamma_ranges {
        for &wv in &cfg.simulate.wrong_values {
            for (i, a) in labels.iter().enumerate() {
                for b in &labels[i + 1..] {
                    if let Some((m, se)) = report.paired_difference(g.hi, wv, a, b) {
                        out.push(Comparison {
                            gamma_hi: g.hi,
                            wrong_value: wv,
                            agent: a.clone(),
                            baseline: b.clone(),
                            mean_difference: m,
                            standard_error: se,
                        });
                    }
                }
            }
        }
    }
    out
}

/// One line of a `decide` input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecideRecord {
    pub worker_id: WorkerId,
    #[serde(with = "crate::em::answer_token")]
    pub answer: AnswerId,
    /// Known error parameter of this worker, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

pub fn read_ballots<R: BufRead>(reader: R, path: &Path) -> Result<Vec<SourcedBallot>> {
    let mut items = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DecideRecord = serde_json::from_str(&line).map_err(|e| Error::ParseLine {
            path: path.to_owned(),
            line: n + 1,
            message: e.to_string(),
        })?;
        items.push(SourcedBallot {
            ballot: Ballot {
                worker_id: r.worker_id,
                answer: r.answer,
            },
            revealed_gamma: r.gamma,
        });
    }
    if items.is_empty() {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: "no ballots".into(),
        });
    }
    Ok(items)
}

pub fn cmd_decide(args: &DecideArgs, out: &mut dyn Write) -> Result<EpisodeResult> {
    let file = fs::File::open(&args.ballots).map_err(|e| Error::io(&args.ballots, e))?;
    let ballots = read_ballots(BufReader::new(file), &args.ballots)?;
    decide_on(ballots, args.config.as_deref(), &args.task, args.out.as_deref(), out)
}

pub fn cmd_replay_sat(args: &ReplaySatArgs, out: &mut dyn Write) -> Result<EpisodeResult> {
    let ballots = read_ballots(SAT_TRACE.as_bytes(), Path::new("<bundled sat trace>"))?;
    let first7: Vec<AnswerId> = ballots.iter().take(7).map(|b| b.ballot.answer.clone()).collect();
    let mv = majority_vote_agent(7)?;
    let result = decide_on(ballots, args.config.as_deref(), &args.task, args.out.as_deref(), out)?;
    let mv_answer = plurality(&first7).ok_or(Error::EmptyHistory)?;
    say(out, format_args!("majority of first {}: {mv_answer}", mv.votes))?;
    Ok(result)
}

fn decide_on(
    ballots: Vec<SourcedBallot>,
    config: Option<&Path>,
    overrides: &TaskOverrides,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<EpisodeResult> {
    let mut cfg = RunConfig::load_or_default(config)?;
    overrides.apply(&mut cfg.task)?;
    cfg.task.validate()?;
    let task = &cfg.task;

    let mut store = WorkerStore::new(task.gamma_bar);
    let result = run_task(&mut ReplaySource::with_gammas(ballots), task, &mut store)?;

    for s in &result.trace {
        say(
            out,
            format_args!(
                "step {:>3}  {} -> {:<8} gamma {:.3}  q_submit {:>10.4}  q_request {:>10.4}  {}",
                s.step, s.worker_id, s.ballot, s.gamma, s.q_submit, s.q_request, s.action
            ),
        )?;
    }
    let reason = if result.cap_reached {
        "ballot cap reached"
    } else if result.source_exhausted {
        "stream exhausted"
    } else {
        "controller submitted"
    };
    say(
        out,
        format_args!("submitted {} after {} ballots ({reason})", result.submitted, result.ballots_used),
    )?;
    let snapshot = result
        .final_belief
        .as_ref()
        .map(|b| b.snapshot())
        .ok_or(Error::EmptyHistory)?;
    let belief_json = to_json(&snapshot)?;
    out.write_all(&belief_json).map_err(|e| Error::io("<stdout>", e))?;

    if let Some(dir) = out_dir {
        let mut trace = Vec::new();
        for s in &result.trace {
            serde_json::to_writer(&mut trace, s)?;
            trace.push(b'\n');
        }
        create_dir(dir)?;
        write_file(&dir.join("trace.jsonl"), &trace)?;
        write_file(&dir.join("belief.json"), &belief_json)?;
    }
    Ok(result)
}

pub fn cmd_em(args: &EmArgs, out: &mut dyn Write) -> Result<EmOutput> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(t) = args.theta {
        cfg.em.init_theta = t;
    }
    if let Some(g) = &args.grid {
        cfg.em.search.difficulty_grid = parse_grid(g)?;
    }
    cfg.em.validate()?;

    let file = fs::File::open(&args.dataset).map_err(|e| Error::io(&args.dataset, e))?;
    let data = EmDataset::read_jsonl(BufReader::new(file), &args.dataset)?;
    let em = &cfg.em;
    let init = EmState::initial(&data, em.init_gamma, em.init_theta);
    let run = run_em(&data, init, &em.search, em.max_iters, em.tol);
    let output = EmOutput::new(&data, &run);
    write_file(&args.out, &to_json(&output)?)?;

    say(
        out,
        format_args!(
            "{} tasks, {} workers: {} iterations ({}), log-likelihood {:.6}, theta {:.4}",
            data.tasks().len(),
            data.workers().len(),
            run.iterations,
            if run.converged { "converged" } else { "iteration cap" },
            run.state.log_likelihood,
            run.state.theta
        ),
    )?;
    say(out, format_args!("wrote {}", args.out.display()))?;
    Ok(output)
}

/// Hidden truth written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub seed: u64,
    pub theta: f64,
    pub tasks: Vec<TaskTruth>,
    pub workers: Vec<WorkerTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTruth {
    pub task_id: String,
    pub answer: AnswerId,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerTruth {
    pub worker_id: WorkerId,
    pub gamma: f64,
}

/// `data.jsonl` → `data.truth.json`.
pub fn truth_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("truth.json")
}

pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<TruthSidecar> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let seed = cfg.require_seed(args.seed)?;
    cfg.seed = Some(seed);
    cfg.generate.validate()?;

    let (data, truth) = generate_planted_dataset(&cfg.generate, seed)?;
    let mut lines = Vec::new();
    for task in data.tasks() {
        for b in task.history.ballots() {
            let r = BallotRecord {
                task_id: task.task_id.clone(),
                worker_id: b.worker_id.clone(),
                answer: b.answer.clone(),
            };
            serde_json::to_writer(&mut lines, &r)?;
            lines.push(b'\n');
        }
    }
    let sidecar = TruthSidecar {
        seed,
        theta: truth.theta,
        tasks: data
            .tasks()
            .iter()
            .zip(truth.answers.iter().zip(&truth.difficulties))
            .map(|(t, (a, d))| TaskTruth {
                task_id: t.task_id.clone(),
                answer: a.clone(),
                d: *d,
            })
            .collect(),
        workers: truth
            .workers
            .iter()
            .map(|(w, g)| WorkerTruth {
                worker_id: w.clone(),
                gamma: *g,
            })
            .collect(),
    };
    let truth_file = truth_path(&args.out);
    write_file(&args.out, &lines)?;
    write_file(&truth_file, &to_json(&sidecar)?)?;
    say(
        out,
        format_args!(
            "seed {seed}: {} tasks, {} ballots -> {} (truth in {})",
            data.tasks().len(),
            data.tasks().iter().map(|t| t.history.len()).sum::<usize>(),
            args.out.display(),
            truth_file.display()
        ),
    )?;
    Ok(sidecar)
}
