//! Seeded Monte-Carlo harness.
//!
//! Every episode draws its ground truth and worker stream from a generator
//! seeded by `(seed, gamma range, difficulty, repetition)`. That seed does not
//! depend on the agent or the utility setting, so all agents compared in a
//! report face the same workers.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{
    run_task, BallotSource, EpisodeResult, SourcedBallot, TaskConfig, WorkerStore,
};
use crate::em::{EmDataset, EmTask};
use crate::error::{Error, Result};
use crate::model::{
    adversarial_theta_threshold, sample_ballot, AnswerId, Ballot, BallotHistory, FreshAnswers,
    WorkerId,
};

/// Mixes a base seed with coordinates into a stream seed (splitmix64).
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    let mut x = seed;
    for &c in coords {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(c);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

/// Random eight-hex-digit answer tokens.
#[derive(Debug, Clone)]
pub struct RandomAnswers {
    rng: ChaCha8Rng,
}

impl RandomAnswers {
    pub fn new(seed: u64) -> Self {
        RandomAnswers {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl FreshAnswers for RandomAnswers {
    fn next_answer(&mut self) -> AnswerId {
        AnswerId::new(format!("{:08x}", self.rng.gen::<u32>()))
    }
}

/// Worker error parameters drawn uniformly from `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRange {
    pub lo: f64,
    pub hi: f64,
}

impl GammaRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config("gamma_range", format!("need 0 <= lo < hi, got [{lo}, {hi})")));
        }
        Ok(GammaRange { lo, hi })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.lo..self.hi)
    }
}

/// Where a task's workers come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkerPool {
    /// A brand-new worker, with a freshly drawn gamma, for every ballot.
    Fresh(GammaRange),
    /// A fixed population; each task draws distinct members.
    Population(Vec<(WorkerId, f64)>),
}

impl WorkerPool {
    pub fn population<R: Rng + ?Sized>(n: usize, range: GammaRange, rng: &mut R) -> Self {
        WorkerPool::Population(
            (0..n)
                .map(|j| (WorkerId::new(format!("w{j:04}")), range.sample(rng)))
                .collect(),
        )
    }
}

/// Ballots for one simulated task, generated on demand.
#[derive(Debug, Clone)]
pub struct SimulatedTask {
    truth: AnswerId,
    difficulty: f64,
    theta: f64,
    pool: WorkerPool,
    reveal_gamma: bool,
    rng: ChaCha8Rng,
    fresh: RandomAnswers,
    history: BallotHistory,
    used: HashSet<usize>,
}

impl SimulatedTask {
    /// The truth token is drawn from the same generator as wrong answers, so
    /// token order carries no information about correctness.
    pub fn new(seed: u64, difficulty: f64, theta: f64, pool: WorkerPool, reveal_gamma: bool) -> Self {
        let mut fresh = RandomAnswers::new(derive_seed(seed, &[1]));
        let truth = fresh.next_answer();
        SimulatedTask {
            truth,
            difficulty,
            theta,
            pool,
            reveal_gamma,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0])),
            fresh,
            history: BallotHistory::new(),
            used: HashSet::new(),
        }
    }

    pub fn truth(&self) -> &AnswerId {
        &self.truth
    }

    pub fn history(&self) -> &BallotHistory {
        &self.history
    }

    /// Draws the next ballot and its worker's true gamma.
    pub fn draw(&mut self) -> Result<(Ballot, f64)> {
        let (worker, gamma) = match &self.pool {
            WorkerPool::Fresh(range) => {
                let g = range.sample(&mut self.rng);
                (WorkerId::new(format!("sim{}", self.history.len())), g)
            }
            WorkerPool::Population(members) => {
                if self.used.len() >= members.len() {
                    return Err(Error::Domain("worker population exhausted".into()));
                }
                let j = loop {
                    let j = self.rng.gen_range(0..members.len());
                    if self.used.insert(j) {
                        break j;
                    }
                };
                members[j].clone()
            }
        };
        let answer = sample_ballot(
            &self.truth,
            self.difficulty,
            gamma,
            &self.history,
            self.theta,
            &mut self.rng,
            &mut self.fresh,
        )?;
        let ballot = Ballot {
            worker_id: worker,
            answer,
        };
        self.history.push(ballot.clone());
        Ok((ballot, gamma))
    }
}

impl BallotSource for SimulatedTask {
    fn next_ballot(&mut self) -> Option<SourcedBallot> {
        let (ballot, gamma) = self.draw().ok()?;
        Some(SourcedBallot {
            ballot,
            revealed_gamma: self.reveal_gamma.then_some(gamma),
        })
    }
}

/// Plurality answer; ties go to the smallest token.
pub fn plurality(answers: &[AnswerId]) -> Option<AnswerId> {
    let mut counts: BTreeMap<&AnswerId, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a).or_insert(0) += 1;
    }
    let mut best: Option<(&AnswerId, usize)> = None;
    for (a, n) in counts {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((a, n));
        }
    }
    best.map(|(a, _)| a.clone())
}

/// A policy that can be run on a simulated task.
pub trait Agent: Sync {
    fn label(&self) -> String;
    fn run(&self, source: &mut dyn BallotSource, store: &mut WorkerStore) -> Result<EpisodeResult>;
}

/// The lookahead controller.
#[derive(Debug, Clone)]
pub struct LookaheadAgent {
    pub cfg: TaskConfig,
}

impl Agent for LookaheadAgent {
    fn label(&self) -> String {
        format!("lazysusan({})", self.cfg.lookahead_depth)
    }

    fn run(&self, source: &mut dyn BallotSource, store: &mut WorkerStore) -> Result<EpisodeResult> {
        run_task(source, &self.cfg, store)
    }
}

/// Buys exactly `votes` ballots and submits the plurality answer.
#[derive(Debug, Clone, Copy)]
pub struct MajorityVoteAgent {
    pub votes: usize,
    pub ballot_cost: f64,
}

impl MajorityVoteAgent {
    pub fn new(votes: usize, ballot_cost: f64) -> Result<Self> {
        if votes == 0 || votes.is_multiple_of(2) {
            return Err(Error::config("votes", format!("must be odd and positive, got {votes}")));
        }
        Ok(MajorityVoteAgent { votes, ballot_cost })
    }
}

pub fn majority_vote_agent(votes: usize) -> Result<MajorityVoteAgent> {
    MajorityVoteAgent::new(votes, -1.0)
}

impl Agent for MajorityVoteAgent {
    fn label(&self) -> String {
        format!("mv({})", self.votes)
    }

    fn run(&self, source: &mut dyn BallotSource, _store: &mut WorkerStore) -> Result<EpisodeResult> {
        let mut h = BallotHistory::new();
        while h.len() < self.votes {
            match source.next_ballot() {
                Some(b) => h.push(b.ballot),
                None => break,
            }
        }
        let answers: Vec<AnswerId> = h.ballots().iter().map(|b| b.answer.clone()).collect();
        let submitted = plurality(&answers).ok_or(Error::EmptyHistory)?;
        let mut r = EpisodeResult::new(submitted, h, self.ballot_cost);
        r.source_exhausted = r.ballots_used < self.votes;
        Ok(r)
    }
}

/// Which agents an experiment compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Lookahead { depth: usize },
    MajorityVote { votes: usize },
}

impl AgentSpec {
    pub fn build(&self, task: &TaskConfig) -> Result<Box<dyn Agent>> {
        Ok(match *self {
            AgentSpec::Lookahead { depth } => {
                let cfg = TaskConfig {
                    lookahead_depth: depth,
                    ..task.clone()
                };
                cfg.validate()?;
                Box::new(LookaheadAgent { cfg })
            }
            AgentSpec::MajorityVote { votes } => {
                Box::new(MajorityVoteAgent::new(votes, task.ballot_cost)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// True difficulties; each is simulated `repetitions` times per cell.
    pub difficulties: Vec<f64>,
    pub repetitions: usize,
    pub gamma_ranges: Vec<GammaRange>,
    /// `C_W` values; one report cell per value and gamma range.
    pub wrong_values: Vec<f64>,
    /// Bandwagon coefficient of the simulated workers.
    pub theta_true: f64,
    /// Reveal each worker's true gamma to the agent.
    pub gamma_oracle: bool,
    /// Draw workers from a fixed population of this size instead of using a
    /// fresh worker per ballot.
    pub worker_population: Option<usize>,
    pub agents: Vec<AgentSpec>,
    /// Agent-side model parameters; `wrong_value` is overridden per cell.
    pub task: TaskConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            difficulties: (1..=9).map(|j| j as f64 / 10.0).collect(),
            repetitions: 100,
            gamma_ranges: vec![GammaRange { lo: 0.0, hi: 2.0 }],
            wrong_values: vec![-100.0],
            theta_true: 1.0,
            gamma_oracle: true,
            worker_population: None,
            agents: vec![
                AgentSpec::Lookahead { depth: 3 },
                AgentSpec::MajorityVote { votes: 7 },
            ],
            task: TaskConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be at least 1"));
        }
        if self.difficulties.is_empty() {
            return Err(Error::config("difficulties", "needs at least one value"));
        }
        if let Some(d) = self.difficulties.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::config("difficulties", format!("{d} is outside [0, 1]")));
        }
        if self.gamma_ranges.is_empty() {
            return Err(Error::config("gamma_ranges", "needs at least one range"));
        }
        for r in &self.gamma_ranges {
            GammaRange::new(r.lo, r.hi)?;
        }
        if self.wrong_values.is_empty() {
            return Err(Error::config("wrong_values", "needs at least one value"));
        }
        if !(self.theta_true > 0.0 && self.theta_true.is_finite()) {
            return Err(Error::config("theta_true", "must be positive"));
        }
        if self.agents.is_empty() {
            return Err(Error::config("agents", "needs at least one agent"));
        }
        if let Some(n) = self.worker_population {
            if n < self.task.max_ballots {
                return Err(Error::config(
                    "worker_population",
                    "must be at least task.max_ballots so tasks never run out of workers",
                ));
            }
        }
        for &wv in &self.wrong_values {
            let task = self.task_for(wv);
            task.validate()?;
            for a in &self.agents {
                a.build(&task)?;
            }
        }
        Ok(())
    }

    pub fn task_for(&self, wrong_value: f64) -> TaskConfig {
        TaskConfig {
            wrong_value,
            ..self.task.clone()
        }
    }

    pub fn episodes_per_cell(&self) -> usize {
        self.difficulties.len() * self.repetitions
    }
}

/// Outcome of one agent on one simulated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub wrong_value: f64,
    pub agent: String,
    pub difficulty: f64,
    pub repetition: usize,
    pub correct: bool,
    pub ballots: usize,
    pub net_utility: f64,
}

/// Aggregate over one (gamma range, `C_W`, agent) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub wrong_value: f64,
    pub agent: String,
    pub episodes: usize,
    pub accuracy_pct: f64,
    /// Mean ballots times `|c|`, reported positive.
    pub avg_cost: f64,
    pub avg_net_utility: f64,
    pub net_utility_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub episodes: Vec<EpisodeRecord>,
}

impl ExperimentReport {
    pub fn row(&self, gamma_hi: f64, wrong_value: f64, agent: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.gamma_hi == gamma_hi && r.wrong_value == wrong_value && r.agent == agent)
    }

    fn cell_episodes<'a>(
        &'a self,
        gamma_hi: f64,
        wrong_value: f64,
        agent: &'a str,
    ) -> impl Iterator<Item = &'a EpisodeRecord> + 'a {
        self.episodes
            .iter()
            .filter(move |e| e.gamma_hi == gamma_hi && e.wrong_value == wrong_value && e.agent == agent)
    }

    /// Mean and standard error of the per-episode net-utility difference
    /// `a - b`, pairing episodes that shared a worker stream.
    pub fn paired_difference(&self, gamma_hi: f64, wrong_value: f64, a: &str, b: &str) -> Option<(f64, f64)> {
        let xs: Vec<&EpisodeRecord> = self.cell_episodes(gamma_hi, wrong_value, a).collect();
        let ys: Vec<&EpisodeRecord> = self.cell_episodes(gamma_hi, wrong_value, b).collect();
        if xs.len() != ys.len() || xs.len() < 2 {
            return None;
        }
        let diffs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x.net_utility - y.net_utility).collect();
        Some(mean_and_se(&diffs))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("csv", e))?;
        Ok(())
    }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Job {
    range_idx: usize,
    range: GammaRange,
    wrong_value: f64,
    agent_idx: usize,
}

/// Runs every agent on every (gamma range, `C_W`, difficulty, repetition).
///
/// With the gamma oracle, episodes are independent and run in parallel. In
/// tracked mode an agent's worker store carries over between the tasks of a
/// cell, so those run in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for (range_idx, range) in cfg.gamma_ranges.iter().enumerate() {
        for &wrong_value in &cfg.wrong_values {
            for agent_idx in 0..cfg.agents.len() {
                jobs.push(Job {
                    range_idx,
                    range: *range,
                    wrong_value,
                    agent_idx,
                });
            }
        }
    }

    let per_cell: Vec<Vec<EpisodeRecord>> = jobs
        .par_iter()
        .map(|job| run_cell(cfg, job))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (job, eps) in jobs.iter().zip(&per_cell) {
        let n = eps.len() as f64;
        let nets: Vec<f64> = eps.iter().map(|e| e.net_utility).collect();
        let (avg_net, se) = mean_and_se(&nets);
        rows.push(ReportRow {
            gamma_lo: job.range.lo,
            gamma_hi: job.range.hi,
            wrong_value: job.wrong_value,
            agent: eps[0].agent.clone(),
            episodes: eps.len(),
            accuracy_pct: 100.0 * eps.iter().filter(|e| e.correct).count() as f64 / n,
            avg_cost: eps.iter().map(|e| e.ballots as f64).sum::<f64>() / n * cfg.task.ballot_cost.abs(),
            avg_net_utility: avg_net,
            net_utility_se: se,
        });
    }
    Ok(ExperimentReport {
        seed: cfg.seed,
        rows,
        episodes: per_cell.into_iter().flatten().collect(),
    })
}

fn run_cell(cfg: &ExperimentConfig, job: &Job) -> Result<Vec<EpisodeRecord>> {
    let task = cfg.task_for(job.wrong_value);
    let agent = cfg.agents[job.agent_idx].build(&task)?;
    let label = agent.label();
    let pool = match cfg.worker_population {
        None => WorkerPool::Fresh(job.range),
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[job.range_idx as u64, u64::MAX]));
            WorkerPool::population(n, job.range, &mut rng)
        }
    };

    let episodes: Vec<(usize, f64, usize)> = cfg
        .difficulties
        .iter()
        .enumerate()
        .flat_map(|(di, &d)| (0..cfg.repetitions).map(move |r| (di, d, r)))
        .collect();

    let run_one = |store: &mut WorkerStore, (di, d, rep): (usize, f64, usize)| -> Result<EpisodeRecord> {
        let seed = derive_seed(cfg.seed, &[job.range_idx as u64, di as u64, rep as u64]);
        let mut source = SimulatedTask::new(seed, d, cfg.theta_true, pool.clone(), cfg.gamma_oracle);
        let mut result = agent.run(&mut source, store)?;
        result.score(source.truth(), &task);
        Ok(EpisodeRecord {
            gamma_lo: job.range.lo,
            gamma_hi: job.range.hi,
            wrong_value: job.wrong_value,
            agent: label.clone(),
            difficulty: d,
            repetition: rep,
            correct: result.correct.unwrap_or(false),
            ballots: result.ballots_used,
            net_utility: result.net_utility.unwrap_or(f64::NAN),
        })
    };

    if cfg.gamma_oracle {
        episodes
            .into_par_iter()
            .map(|e| run_one(&mut WorkerStore::new(task.gamma_bar), e))
            .collect()
    } else {
        // interleave difficulties so the store sees a mixed task stream
        let mut order = episodes;
        order.sort_by_key(|&(di, _, rep)| (rep, di));
        let mut store = WorkerStore::new(task.gamma_bar);
        order.into_iter().map(|e| run_one(&mut store, e)).collect()
    }
}

/// One regime of the correlated-error study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub label: String,
    pub difficulty: f64,
    pub theta: f64,
    pub threshold: f64,
    pub adversarial: bool,
    pub accuracy_pct: f64,
    pub avg_ballots: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub gamma: f64,
    pub rows: Vec<RegimeRow>,
}

impl RegimeReport {
    pub fn get(&self, label: &str) -> Option<&RegimeRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeStudy {
    pub seed: u64,
    pub d_low: f64,
    pub d_high: f64,
    pub theta_low: f64,
    pub theta_high: f64,
    /// Every worker's gamma.
    pub gamma: f64,
    pub episodes: usize,
    pub task: TaskConfig,
}

impl Default for RegimeStudy {
    fn default() -> Self {
        RegimeStudy {
            seed: 0,
            d_low: 0.1,
            d_high: 0.7,
            theta_low: 0.05,
            theta_high: 5.0,
            gamma: 1.0,
            episodes: 400,
            task: TaskConfig::default(),
        }
    }
}

/// Runs the controller in three regimes with equally skilled workers: low
/// difficulty; high difficulty with scattered mistakes (high theta); high
/// difficulty with piled-up mistakes (low theta). The controller's model
/// uses the true theta of each regime.
pub fn adversarial_regime_study(study: &RegimeStudy) -> Result<RegimeReport> {
    let regimes = [
        ("low_d", study.d_low, study.theta_high),
        ("high_d_high_theta", study.d_high, study.theta_high),
        ("high_d_low_theta", study.d_high, study.theta_low),
    ];
    let mut rows = Vec::new();
    for (ri, (label, d, theta)) in regimes.into_iter().enumerate() {
        let task = TaskConfig {
            theta,
            gamma_bar: study.gamma,
            ..study.task.clone()
        };
        task.validate()?;
        let results: Vec<EpisodeResult> = (0..study.episodes)
            .into_par_iter()
            .map(|e| {
                let seed = derive_seed(study.seed, &[ri as u64, e as u64]);
                let range = GammaRange {
                    lo: study.gamma,
                    hi: study.gamma + f64::EPSILON,
                };
                let mut src = SimulatedTask::new(seed, d, theta, WorkerPool::Fresh(range), false);
                let mut store = WorkerStore::new(study.gamma);
                let mut r = run_task(&mut src, &task, &mut store)?;
                r.score(src.truth(), &task);
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let n = results.len() as f64;
        let threshold = adversarial_theta_threshold(d, study.gamma);
        rows.push(RegimeRow {
            label: label.into(),
            difficulty: d,
            theta,
            threshold,
            adversarial: theta < threshold,
            accuracy_pct: 100.0 * results.iter().filter(|r| r.correct == Some(true)).count() as f64 / n,
            avg_ballots: results.iter().map(|r| r.ballots_used as f64).sum::<f64>() / n,
        });
    }
    Ok(RegimeReport {
        gamma: study.gamma,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub n_tasks: usize,
    pub n_workers: usize,
    pub ballots_per_task: usize,
    pub gamma_range: GammaRange,
    /// Task difficulties are drawn uniformly from `[lo, hi]`.
    pub d_range: (f64, f64),
    pub theta_true: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_tasks: 200,
            n_workers: 40,
            ballots_per_task: 5,
            gamma_range: GammaRange { lo: 0.0, hi: 2.0 },
            d_range: (0.1, 0.7),
            theta_true: 0.2,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::config("n_tasks", "must be at least 1"));
        }
        if self.ballots_per_task == 0 {
            return Err(Error::config("ballots_per_task", "must be at least 1"));
        }
        if self.n_workers < self.ballots_per_task {
            return Err(Error::config("n_workers", "must be at least ballots_per_task"));
        }
        GammaRange::new(self.gamma_range.lo, self.gamma_range.hi)?;
        let (lo, hi) = self.d_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config("d_range", format!("need 0 <= lo <= hi <= 1, got ({lo}, {hi})")));
        }
        if !(self.theta_true > 0.0 && self.theta_true.is_finite()) {
            return Err(Error::config("theta_true", "must be positive"));
        }
        Ok(())
    }
}

/// Hidden parameters behind a planted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub seed: u64,
    pub answers: Vec<AnswerId>,
    pub difficulties: Vec<f64>,
    pub workers: Vec<(WorkerId, f64)>,
    pub theta: f64,
}

impl PlantedTruth {
    /// Percentage of tasks where `inferred` matches the planted answer.
    pub fn accuracy_pct(&self, inferred: &[AnswerId]) -> f64 {
        let hits = self.answers.iter().zip(inferred).filter(|(a, b)| a == b).count();
        100.0 * hits as f64 / self.answers.len() as f64
    }
}

/// Samples a batch of tasks with known answers: a fixed worker population,
/// `ballots_per_task` distinct workers per task, ballots from the model.
pub fn generate_planted_dataset(cfg: &PlantedConfig, seed: u64) -> Result<(EmDataset, PlantedTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let pool = WorkerPool::population(cfg.n_workers, cfg.gamma_range, &mut rng);
    let WorkerPool::Population(members) = &pool else {
        unreachable!()
    };
    let idx: Vec<usize> = (0..members.len()).collect();

    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    let mut answers = Vec::with_capacity(cfg.n_tasks);
    let mut difficulties = Vec::with_capacity(cfg.n_tasks);
    for t in 0..cfg.n_tasks {
        let (lo, hi) = cfg.d_range;
        let d = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let task_seed = derive_seed(seed, &[1, t as u64]);
        let mut fresh = RandomAnswers::new(derive_seed(task_seed, &[1]));
        let truth = fresh.next_answer();
        let mut h = BallotHistory::new();
        for &j in idx.choose_multiple(&mut rng, cfg.ballots_per_task) {
            let (w, gamma) = &members[j];
            let a = sample_ballot(&truth, d, *gamma, &h, cfg.theta_true, &mut rng, &mut fresh)?;
            h.push(Ballot {
                worker_id: w.clone(),
                answer: a,
            });
        }
        tasks.push(EmTask {
            task_id: format!("t{t:04}"),
            history: h,
        });
        answers.push(truth);
        difficulties.push(d);
    }
    let truth = PlantedTruth {
        seed,
        answers,
        difficulties,
        workers: members.clone(),
        theta: cfg.theta_true,
    };
    Ok((EmDataset::new(tasks)?, truth))
}

/// Per-task plurality answers of a dataset.
pub fn majority_answers(data: &EmDataset) -> Vec<AnswerId> {
    data.tasks()
        .iter()
        .map(|t| {
            let a: Vec<AnswerId> = t.history.ballots().iter().map(|b| b.answer.clone()).collect();
            plurality(&a).expect("tasks are nonempty")
        })
        .collect()
}
