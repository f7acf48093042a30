//! Batch EM over many tasks.
//!
//! Per-task difficulties, per-worker error parameters and a shared bandwagon
//! coefficient are treated as point parameters. The E-step computes each
//! task's posterior over its seen answers plus `⊥`; the M-step maximizes the
//! expected complete log-likelihood by coordinate ascent (grid search for
//! each difficulty, golden-section search for each gamma and for theta).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{ln_floor, DifficultyGrid, UNSEEN_LABEL};
use crate::error::{Error, Result};
use crate::model::{accuracy_unchecked, AnswerId, Ballot, BallotHistory, WorkerId};
use crate::optimize::golden_section_max;

#[derive(Debug, Clone, PartialEq)]
pub struct EmTask {
    pub task_id: String,
    pub history: BallotHistory,
}

/// One line of the JSONL input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallotRecord {
    pub task_id: String,
    pub worker_id: WorkerId,
    #[serde(with = "answer_token")]
    pub answer: AnswerId,
}

/// Accepts JSON strings and numbers as answer tokens; a number keeps its
/// literal spelling, so `5` and `5.0` stay distinct.
pub(crate) mod answer_token {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::AnswerId;

    pub fn serialize<S: Serializer>(a: &AnswerId, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(a.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AnswerId, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => Ok(AnswerId::new(s)),
            serde_json::Value::Number(n) => Ok(AnswerId::new(n.to_string())),
            other => Err(serde::de::Error::custom(format!(
                "answer must be a string or number, got {other}"
            ))),
        }
    }
}

/// Ballots grouped by task, with the sorted index of all workers.
#[derive(Debug, Clone)]
pub struct EmDataset {
    tasks: Vec<EmTask>,
    workers: Vec<WorkerId>,
    index: Vec<TaskIndex>,
    by_worker: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone)]
struct TaskIndex {
    k: usize,
    events: Vec<BallotEvent>,
}

#[derive(Debug, Clone)]
struct BallotEvent {
    worker: usize,
    answer: usize,
    before: usize,
    counts_before: Vec<usize>,
}

impl EmDataset {
    pub fn new(tasks: Vec<EmTask>) -> Result<Self> {
        if let Some(t) = tasks.iter().find(|t| t.history.is_empty()) {
            return Err(Error::Domain(format!("task `{}` has no ballots", t.task_id)));
        }
        let workers: Vec<WorkerId> = tasks
            .iter()
            .flat_map(|t| t.history.ballots().iter().map(|b| b.worker_id.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let worker_pos: HashMap<&WorkerId, usize> =
            workers.iter().enumerate().map(|(j, w)| (w, j)).collect();

        let mut by_worker = vec![Vec::new(); workers.len()];
        let mut index = Vec::with_capacity(tasks.len());
        for (t, task) in tasks.iter().enumerate() {
            let h = &task.history;
            let answer_pos: HashMap<&AnswerId, usize> =
                h.answers().iter().enumerate().map(|(j, a)| (a, j)).collect();
            let mut counts = vec![0usize; h.unique_count()];
            let mut events = Vec::with_capacity(h.len());
            for (j, b) in h.ballots().iter().enumerate() {
                let w = worker_pos[&b.worker_id];
                let a = answer_pos[&b.answer];
                events.push(BallotEvent {
                    worker: w,
                    answer: a,
                    before: j,
                    counts_before: counts.clone(),
                });
                counts[a] += 1;
                by_worker[w].push((t, j));
            }
            index.push(TaskIndex {
                k: h.unique_count(),
                events,
            });
        }
        Ok(EmDataset {
            tasks,
            workers,
            index,
            by_worker,
        })
    }

    pub fn from_records(records: impl IntoIterator<Item = BallotRecord>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut grouped: HashMap<String, BallotHistory> = HashMap::new();
        for r in records {
            let h = grouped.entry(r.task_id.clone()).or_insert_with(|| {
                order.push(r.task_id.clone());
                BallotHistory::new()
            });
            h.push(Ballot {
                worker_id: r.worker_id,
                answer: r.answer,
            });
        }
        let tasks = order
            .into_iter()
            .map(|id| EmTask {
                history: grouped.remove(&id).unwrap(),
                task_id: id,
            })
            .collect();
        Self::new(tasks)
    }

    /// Reads JSONL `{task_id, worker_id, answer}` records. Blank lines are
    /// skipped; a malformed line is reported with its line number.
    pub fn read_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: BallotRecord = serde_json::from_str(&line).map_err(|e| Error::ParseLine {
                path: path.to_owned(),
                line: n + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        if records.is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                message: "no ballots".into(),
            });
        }
        Self::from_records(records)
    }

    pub fn tasks(&self) -> &[EmTask] {
        &self.tasks
    }

    pub fn workers(&self) -> &[WorkerId] {
        &self.workers
    }

    pub fn worker_index(&self, w: &WorkerId) -> Option<usize> {
        self.workers.binary_search(w).ok()
    }

    /// Log of the ballot probability under hypothesis `h` (`None` is `⊥`).
    fn term(&self, ev: &BallotEvent, h: Option<usize>, d: f64, gamma: f64, theta: f64) -> f64 {
        let acc = accuracy_unchecked(d, gamma);
        let miss = 1.0 - acc;
        let f = ev.counts_before[ev.answer] as f64;
        match h {
            Some(v) if v == ev.answer => ln_floor(acc),
            Some(v) => {
                let others = (ev.before - ev.counts_before[v]) as f64;
                if f > 0.0 {
                    ln_floor(miss * f / (others + theta))
                } else {
                    ln_floor(miss * theta / (others + theta))
                }
            }
            None => {
                let n = ev.before as f64;
                if f > 0.0 {
                    ln_floor(miss * f / (n + theta))
                } else {
                    ln_floor(acc + miss * theta / (n + theta))
                }
            }
        }
    }

    fn log_prior(&self, t: usize, h: Option<usize>, d: f64) -> f64 {
        let i = self.index[t].events.len();
        let unseen = d.powi(i as i32);
        match h {
            None => ln_floor(unseen),
            Some(_) => ln_floor((1.0 - unseen) / self.index[t].k as f64),
        }
    }

    /// `ln p(v = h, b_t | d_t, gamma, theta)` for every hypothesis of task
    /// `t`, seen answers first and `⊥` last.
    fn log_joint(&self, t: usize, d: f64, gamma: &[f64], theta: f64) -> Vec<f64> {
        let idx = &self.index[t];
        hypotheses(idx.k)
            .map(|h| {
                self.log_prior(t, h, d)
                    + idx
                        .events
                        .iter()
                        .map(|ev| self.term(ev, h, d, gamma[ev.worker], theta))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Expected complete log-likelihood of task `t` under fixed posteriors.
    fn task_expected(&self, t: usize, q: &[f64], d: f64, gamma: &[f64], theta: f64) -> f64 {
        self.log_joint(t, d, gamma, theta)
            .iter()
            .zip(q)
            .map(|(l, p)| if *p > 0.0 { p * l } else { 0.0 })
            .sum()
    }

    /// The part of the expected log-likelihood that depends on worker `w`.
    fn worker_expected(&self, w: usize, q: &[Vec<f64>], d: &[f64], g: f64, theta: f64) -> f64 {
        self.by_worker[w]
            .iter()
            .map(|&(t, j)| {
                let ev = &self.index[t].events[j];
                hypotheses(self.index[t].k)
                    .zip(&q[t])
                    .map(|(h, p)| if *p > 0.0 { p * self.term(ev, h, d[t], g, theta) } else { 0.0 })
                    .sum::<f64>()
            })
            .sum()
    }
}

fn hypotheses(k: usize) -> impl Iterator<Item = Option<usize>> {
    (0..k).map(Some).chain(std::iter::once(None))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// Search bounds and stopping rules for the M-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub difficulty_grid: DifficultyGrid,
    pub gamma_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Width at which a golden-section bracket is considered converged.
    pub search_tol: f64,
    pub max_sweeps: usize,
    /// Stop the coordinate sweeps once one improves `L` by less than this.
    pub sweep_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            difficulty_grid: DifficultyGrid::default(),
            gamma_max: 8.0,
            theta_min: 0.01,
            theta_max: 16.0,
            search_tol: 1e-6,
            max_sweeps: 10,
            sweep_tol: 1e-6,
        }
    }
}

/// Current parameters and the answer posteriors they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    /// Per-task difficulty.
    pub d: Vec<f64>,
    /// Per-worker gamma, aligned with [`EmDataset::workers`].
    pub gamma: Vec<f64>,
    pub theta: f64,
    /// Per task: seen answers in first-seen order, then `⊥`.
    pub posteriors: Vec<Vec<f64>>,
    /// Observed-data log-likelihood at these parameters.
    pub log_likelihood: f64,
}

impl EmState {
    /// `d = 0.5` for every task, `gamma = gamma_bar` for every worker.
    pub fn initial(data: &EmDataset, gamma_bar: f64, theta: f64) -> Self {
        Self::with_params(
            data,
            vec![0.5; data.tasks.len()],
            vec![gamma_bar; data.workers.len()],
            theta,
        )
    }

    pub fn with_params(data: &EmDataset, d: Vec<f64>, gamma: Vec<f64>, theta: f64) -> Self {
        let mut s = EmState {
            d,
            gamma,
            theta,
            posteriors: Vec::new(),
            log_likelihood: f64::NAN,
        };
        s.posteriors = e_step(data, &s);
        s.log_likelihood = observed_log_likelihood(data, &s.d, &s.gamma, s.theta);
        s
    }

    /// The inferred answer of task `t`: the seen answer with the largest
    /// posterior, ties to the smallest token.
    pub fn inferred(&self, data: &EmDataset, t: usize) -> AnswerId {
        let answers = data.tasks[t].history.answers();
        let q = &self.posteriors[t];
        let mut best = 0;
        for j in 1..answers.len() {
            if q[j] > q[best] || (q[j] == q[best] && answers[j] < answers[best]) {
                best = j;
            }
        }
        answers[best].clone()
    }
}

/// Posterior over each task's hypotheses at the state's parameters.
pub fn e_step(data: &EmDataset, state: &EmState) -> Vec<Vec<f64>> {
    (0..data.tasks.len())
        .into_par_iter()
        .map(|t| softmax(&data.log_joint(t, state.d[t], &state.gamma, state.theta)))
        .collect()
}

/// `Σ_t Σ_v q_t(v) ln p(v, b_t | d_t, gamma, theta)`.
pub fn expected_complete_log_likelihood(
    data: &EmDataset,
    posteriors: &[Vec<f64>],
    d: &[f64],
    gamma: &[f64],
    theta: f64,
) -> f64 {
    (0..data.tasks.len())
        .map(|t| data.task_expected(t, &posteriors[t], d[t], gamma, theta))
        .sum()
}

/// `Σ_t ln Σ_v p(v, b_t | d_t, gamma, theta)`.
pub fn observed_log_likelihood(data: &EmDataset, d: &[f64], gamma: &[f64], theta: f64) -> f64 {
    (0..data.tasks.len())
        .map(|t| log_sum_exp(&data.log_joint(t, d[t], gamma, theta)))
        .sum()
}

/// New parameters from coordinate ascent on the expected complete
/// log-likelihood, holding the state's posteriors fixed. A coordinate only
/// moves when the move strictly improves the objective, so the result is
/// never worse than the input.
pub fn m_step(data: &EmDataset, state: &EmState, cfg: &EmConfig) -> (Vec<f64>, Vec<f64>, f64) {
    let q = &state.posteriors;
    let mut d = state.d.clone();
    let mut gamma = state.gamma.clone();
    let mut theta = state.theta;
    let mut current = expected_complete_log_likelihood(data, q, &d, &gamma, theta);

    for _ in 0..cfg.max_sweeps {
        let start = current;

        d = (0..data.tasks.len())
            .into_par_iter()
            .map(|t| {
                let here = data.task_expected(t, &q[t], d[t], &gamma, theta);
                let mut best = (d[t], here);
                for &c in cfg.difficulty_grid.centers() {
                    let v = data.task_expected(t, &q[t], c, &gamma, theta);
                    if v > best.1 {
                        best = (c, v);
                    }
                }
                best.0
            })
            .collect();

        let updated: Vec<f64> = (0..data.workers.len())
            .into_par_iter()
            .map(|w| {
                let here = data.worker_expected(w, q, &d, gamma[w], theta);
                let (g, v) = golden_section_max(
                    |g| data.worker_expected(w, q, &d, g, theta),
                    0.0,
                    cfg.gamma_max,
                    cfg.search_tol,
                );
                if v > here {
                    g
                } else {
                    gamma[w]
                }
            })
            .collect();
        gamma = updated;

        let here = expected_complete_log_likelihood(data, q, &d, &gamma, theta);
        let (th, v) = golden_section_max(
            |th| expected_complete_log_likelihood(data, q, &d, &gamma, th),
            cfg.theta_min,
            cfg.theta_max,
            cfg.search_tol,
        );
        if v > here {
            theta = th;
            current = v;
        } else {
            current = here;
        }

        if current - start < cfg.sweep_tol {
            break;
        }
    }
    (d, gamma, theta)
}

/// Result of [`run_em`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    pub state: EmState,
    /// Observed-data log-likelihood, starting with the initial state.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates M- and E-steps from `init` until the observed log-likelihood
/// changes by less than `tol` or `max_iters` iterations have run.
pub fn run_em(data: &EmDataset, init: EmState, cfg: &EmConfig, max_iters: usize, tol: f64) -> EmRun {
    let mut state = init;
    let mut trace = vec![state.log_likelihood];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        let (d, gamma, theta) = m_step(data, &state, cfg);
        let next = EmState::with_params(data, d, gamma, theta);
        let delta = next.log_likelihood - state.log_likelihood;
        trace.push(next.log_likelihood);
        state = next;
        if delta.abs() < tol {
            converged = true;
            break;
        }
    }
    EmRun {
        state,
        log_likelihood_trace: trace,
        iterations,
        converged,
    }
}

/// JSON output of an EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOutput {
    pub tasks: Vec<TaskOutput>,
    pub workers: Vec<WorkerOutput>,
    pub theta: f64,
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutput {
    pub task_id: String,
    pub inferred: AnswerId,
    pub posterior: BTreeMap<String, f64>,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerOutput {
    pub worker_id: WorkerId,
    pub gamma: f64,
}

impl EmOutput {
    pub fn new(data: &EmDataset, run: &EmRun) -> Self {
        let s = &run.state;
        let tasks = data
            .tasks
            .iter()
            .enumerate()
            .map(|(t, task)| {
                let mut posterior: BTreeMap<String, f64> = task
                    .history
                    .answers()
                    .iter()
                    .zip(&s.posteriors[t])
                    .map(|(a, p)| (a.to_string(), *p))
                    .collect();
                posterior.insert(UNSEEN_LABEL.into(), *s.posteriors[t].last().unwrap());
                TaskOutput {
                    task_id: task.task_id.clone(),
                    inferred: s.inferred(data, t),
                    posterior,
                    d: s.d[t],
                }
            })
            .collect();
        let workers = data
            .workers
            .iter()
            .zip(&s.gamma)
            .map(|(w, g)| WorkerOutput {
                worker_id: w.clone(),
                gamma: *g,
            })
            .collect();
        EmOutput {
            tasks,
            workers,
            theta: s.theta,
            log_likelihood_trace: run.log_likelihood_trace.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, ballots: &[(&str, &str)]) -> EmTask {
        let mut h = BallotHistory::new();
        for (w, a) in ballots {
            h.push(Ballot::new(*w, *a));
        }
        EmTask {
            task_id: id.into(),
            history: h,
        }
    }

    #[test]
    fn empty_task_rejected() {
        let t = EmTask {
            task_id: "t".into(),
            history: BallotHistory::new(),
        };
        assert!(EmDataset::new(vec![t]).is_err());
    }

    #[test]
    fn zero_difficulty_is_certain() {
        let data = EmDataset::new(vec![task("t", &[("w", "x")])]).unwrap();
        let s = EmState::with_params(&data, vec![0.0], vec![1.0], 1.0);
        assert!((s.posteriors[0][0] - 1.0).abs() < 1e-12);
        assert!(s.posteriors[0][1].abs() < 1e-12);
    }

    #[test]
    fn two_ballot_posterior_by_hand() {
        // v = x: prior (1 - 0.25) * acc * acc = 0.75 * 0.25
        // v = ⊥:  prior 0.25 * [first ballot new: 0.5 + 0.5 * 1] * [seen: 0.5 * 1 / (1 + 1)]
        let data = EmDataset::new(vec![task("t", &[("a", "x"), ("b", "x")])]).unwrap();
        let s = EmState::with_params(&data, vec![0.5], vec![1.0, 1.0], 1.0);
        let jx = 0.75 * 0.25;
        let ju = 0.25 * 1.0 * 0.25;
        assert!((s.posteriors[0][0] - jx / (jx + ju)).abs() < 1e-12);
        assert!((s.posteriors[0][1] - ju / (jx + ju)).abs() < 1e-12);
        assert!((s.log_likelihood - (jx + ju).ln()).abs() < 1e-12);
    }

    #[test]
    fn expected_ll_of_certain_task_is_zero() {
        let data = EmDataset::new(vec![task("t", &[("w", "x")])]).unwrap();
        // d = 0 makes the prior on x and its single likelihood term both 1
        let l = expected_complete_log_likelihood(&data, &[vec![1.0, 0.0]], &[0.0], &[1.0], 1.0);
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn jsonl_numbers_keep_their_spelling() {
        let input = "{\"task_id\":\"t\",\"worker_id\":\"a\",\"answer\":5}\n\n{\"task_id\":\"t\",\"worker_id\":\"b\",\"answer\":5.0}\n";
        let data = EmDataset::read_jsonl(input.as_bytes(), Path::new("x.jsonl")).unwrap();
        assert_eq!(data.tasks()[0].history.unique_count(), 2);
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let input = "{\"task_id\":\"t\",\"worker_id\":\"a\",\"answer\":\"x\"}\nnot json\n";
        match EmDataset::read_jsonl(input.as_bytes(), Path::new("x.jsonl")) {
            Err(Error::ParseLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(EmDataset::read_jsonl("".as_bytes(), Path::new("x.jsonl")).is_err());
    }

    #[test]
    fn m_step_never_decreases_objective() {
        let data = EmDataset::new(vec![
            task("1", &[("a", "x"), ("b", "x"), ("c", "y")]),
            task("2", &[("a", "p"), ("b", "q"), ("c", "q")]),
            task("3", &[("b", "r"), ("c", "r")]),
        ])
        .unwrap();
        let s = EmState::initial(&data, 1.0, 1.0);
        let before = expected_complete_log_likelihood(&data, &s.posteriors, &s.d, &s.gamma, s.theta);
        let (d, g, th) = m_step(&data, &s, &EmConfig::default());
        let after = expected_complete_log_likelihood(&data, &s.posteriors, &d, &g, th);
        assert!(after >= before - 1e-9);
    }

    #[test]
    fn output_json_shape() {
        let data = EmDataset::new(vec![task("1", &[("a", "x"), ("b", "x")])]).unwrap();
        let run = run_em(&data, EmState::initial(&data, 1.0, 1.0), &EmConfig::default(), 5, 1e-8);
        let v = serde_json::to_value(EmOutput::new(&data, &run)).unwrap();
        assert_eq!(v["tasks"][0]["inferred"], "x");
        assert!(v["tasks"][0]["posterior"]["⊥"].is_number());
        assert_eq!(v["workers"].as_array().unwrap().len(), 2);
        assert!(v["log_likelihood_trace"].as_array().unwrap().len() >= 2);
    }
}
