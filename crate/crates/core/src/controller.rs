//! The stop-or-request decision loop.
//!
//! At every step the controller compares the expected utility of submitting
//! its best answer now against buying another ballot and acting optimally
//! afterwards, estimated by a bounded expectimax lookahead in which every
//! hypothetical worker has the default error parameter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::belief::{Belief, DifficultyGrid};
use crate::error::{Error, Result};
use crate::model::{AnswerId, Ballot, BallotHistory, WorkerId};

/// Utilities and model parameters for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Value of submitting the correct answer (`C_C`).
    pub correct_value: f64,
    /// Value of submitting a wrong answer (`C_W`).
    pub wrong_value: f64,
    /// Utility of one more ballot; negative.
    pub ballot_cost: f64,
    pub theta: f64,
    /// Error parameter assumed for unseen and hypothetical workers.
    pub gamma_bar: f64,
    pub lookahead_depth: usize,
    pub difficulty_grid: DifficultyGrid,
    /// Charge `C_W` for posterior mass on "true answer not seen yet" when
    /// valuing a submission.
    pub penalize_unseen: bool,
    /// Let the `⊥` hypothesis contribute to the next-ballot distribution.
    pub predictive_includes_unseen: bool,
    /// Hard cap on ballots per task.
    pub max_ballots: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            correct_value: 0.0,
            wrong_value: -100.0,
            ballot_cost: -1.0,
            theta: 1.0,
            gamma_bar: 1.0,
            lookahead_depth: 3,
            difficulty_grid: DifficultyGrid::default(),
            penalize_unseen: true,
            predictive_includes_unseen: true,
            max_ballots: 50,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("correct_value", self.correct_value),
            ("wrong_value", self.wrong_value),
            ("ballot_cost", self.ballot_cost),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        if self.correct_value < self.wrong_value {
            return Err(Error::config("wrong_value", "must not exceed correct_value"));
        }
        if !(self.ballot_cost < 0.0) {
            return Err(Error::config("ballot_cost", "must be negative"));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::config("theta", "must be positive"));
        }
        if !(self.gamma_bar > 0.0 && self.gamma_bar.is_finite()) {
            return Err(Error::config("gamma_bar", "must be positive"));
        }
        if self.lookahead_depth == 0 {
            return Err(Error::config("lookahead_depth", "must be at least 1"));
        }
        if self.max_ballots == 0 {
            return Err(Error::config("max_ballots", "must be at least 1"));
        }
        // re-run grid checks for configs built field by field
        DifficultyGrid::new(self.difficulty_grid.centers().to_vec())?;
        Ok(())
    }

    pub fn empty_belief(&self) -> Result<Belief> {
        Belief::empty(self.difficulty_grid.clone(), self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Submit(AnswerId),
    Request,
}

/// `C_C` if `a` is the answer the controller believes correct, else `C_W`.
pub fn value_of(a: &AnswerId, a_star: &AnswerId, cfg: &TaskConfig) -> f64 {
    if a == a_star {
        cfg.correct_value
    } else {
        cfg.wrong_value
    }
}

/// Expected value of submitting the MAP answer now.
pub fn q_submit(b: &Belief, cfg: &TaskConfig) -> Result<f64> {
    let best = b.map_index().ok_or(Error::EmptyHistory)?;
    let mut q = 0.0;
    for (j, (_, m)) in b.marginals().into_iter().enumerate() {
        q += m * if j == best { cfg.correct_value } else { cfg.wrong_value };
    }
    if cfg.penalize_unseen {
        q += cfg.wrong_value * b.unseen_marginal();
    }
    Ok(q)
}

/// Expected value of requesting one more ballot, looking `depth` requests
/// ahead and forcing a submission after the last one.
pub fn q_request(b: &Belief, cfg: &TaskConfig, depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::Domain("lookahead depth must be at least 1".into()));
    }
    Ok(request_value(b, cfg, depth))
}

fn request_value(b: &Belief, cfg: &TaskConfig, depth: usize) -> f64 {
    let gamma = cfg.gamma_bar;
    let pred = b.predictive(gamma, cfg.predictive_includes_unseen);
    let mut q = cfg.ballot_cost;
    for (a, p) in &pred.seen {
        if *p > 0.0 {
            q += p * successor_utility(&extend(b, a, gamma), cfg, depth - 1);
        }
    }
    if pred.unseen > 0.0 {
        let fresh = synthetic_answer(b);
        q += pred.unseen * successor_utility(&extend(b, &fresh, gamma), cfg, depth - 1);
    }
    q
}

fn extend(b: &Belief, a: &AnswerId, gamma: f64) -> Belief {
    b.extend(a, gamma).expect("gamma_bar is validated")
}

fn successor_utility(b: &Belief, cfg: &TaskConfig, remaining: usize) -> f64 {
    let submit = q_submit(b, cfg).expect("successor holds at least one ballot");
    if remaining == 0 {
        submit
    } else {
        submit.max(request_value(b, cfg, remaining))
    }
}

/// An answer token not among the belief's seen answers, standing in for the
/// "new answer" outcome during lookahead.
fn synthetic_answer(b: &Belief) -> AnswerId {
    let mut n = b.answers().len();
    loop {
        let a = AnswerId::new(format!("\u{1}lookahead-{n}"));
        if !b.answers().contains(&a) {
            return a;
        }
        n += 1;
    }
}

/// Both action values together with the chosen action.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub q_submit: Option<f64>,
    pub q_request: Option<f64>,
}

/// Action values at the configured depth. Ties go to submitting.
pub fn evaluate(b: &Belief, cfg: &TaskConfig) -> Decision {
    if b.ballots() == 0 {
        return Decision {
            action: Action::Request,
            q_submit: None,
            q_request: None,
        };
    }
    let qs = q_submit(b, cfg).expect("nonempty belief");
    let qr = request_value(b, cfg, cfg.lookahead_depth.max(1));
    let action = if qs >= qr {
        Action::Submit(b.map_answer().expect("nonempty belief"))
    } else {
        Action::Request
    };
    Decision {
        action,
        q_submit: Some(qs),
        q_request: Some(qr),
    }
}

pub fn decide(b: &Belief, cfg: &TaskConfig) -> Action {
    evaluate(b, cfg).action
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub gamma: f64,
    /// Number of ballots the worker has been scored on.
    pub answered: u64,
}

/// Error parameters of the workers seen so far. Unknown workers start at
/// `default_gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerStore {
    default_gamma: f64,
    profiles: BTreeMap<WorkerId, WorkerProfile>,
}

impl WorkerStore {
    pub fn new(default_gamma: f64) -> Self {
        WorkerStore {
            default_gamma,
            profiles: BTreeMap::new(),
        }
    }

    pub fn default_gamma(&self) -> f64 {
        self.default_gamma
    }

    pub fn gamma(&self, w: &WorkerId) -> f64 {
        self.profiles.get(w).map_or(self.default_gamma, |p| p.gamma)
    }

    pub fn get(&self, w: &WorkerId) -> Option<&WorkerProfile> {
        self.profiles.get(w)
    }

    pub fn insert(&mut self, w: WorkerId, profile: WorkerProfile) {
        self.profiles.insert(w, profile);
    }

    pub fn entry(&mut self, w: &WorkerId) -> &mut WorkerProfile {
        let g = self.default_gamma;
        self.profiles.entry(w.clone()).or_insert(WorkerProfile {
            gamma: g,
            answered: 0,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&WorkerId, &WorkerProfile)> {
        self.profiles.iter()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Moves each participating worker's `gamma` after a submission: down by
/// `d * eps` for agreeing with `a_star`, up by `(1 - d) * eps` otherwise, with
/// `eps = 1 / (m + 1)`.
pub fn update_workers(h: &BallotHistory, a_star: &AnswerId, d_hat: f64, store: &mut WorkerStore) {
    for ballot in h.ballots() {
        let p = store.entry(&ballot.worker_id);
        let eps = 1.0 / (p.answered as f64 + 1.0);
        if &ballot.answer == a_star {
            p.gamma -= d_hat * eps;
        } else {
            p.gamma += (1.0 - d_hat) * eps;
        }
        p.gamma = p.gamma.max(0.0);
        p.answered += 1;
    }
}

/// A ballot as delivered by a source, optionally revealing the worker's true
/// error parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedBallot {
    pub ballot: Ballot,
    pub revealed_gamma: Option<f64>,
}

pub trait BallotSource {
    /// The next ballot, or `None` when the source is exhausted.
    fn next_ballot(&mut self) -> Option<SourcedBallot>;
}

/// Replays a fixed list of ballots.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    items: std::vec::IntoIter<SourcedBallot>,
}

impl ReplaySource {
    pub fn new(ballots: Vec<Ballot>) -> Self {
        Self::with_gammas(
            ballots
                .into_iter()
                .map(|ballot| SourcedBallot {
                    ballot,
                    revealed_gamma: None,
                })
                .collect(),
        )
    }

    pub fn with_gammas(items: Vec<SourcedBallot>) -> Self {
        ReplaySource {
            items: items.into_iter(),
        }
    }
}

impl BallotSource for ReplaySource {
    fn next_ballot(&mut self) -> Option<SourcedBallot> {
        self.items.next()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefDigest {
    pub map_answer: Option<AnswerId>,
    pub map_mass: f64,
    pub unseen_mass: f64,
    pub mean_difficulty: f64,
}

impl BeliefDigest {
    pub fn of(b: &Belief) -> Self {
        let map_answer = b.map_answer().ok();
        BeliefDigest {
            map_mass: map_answer.as_ref().map_or(0.0, |a| b.marginal(a)),
            map_answer,
            unseen_mass: b.unseen_marginal(),
            mean_difficulty: b.mean_difficulty(),
        }
    }
}

/// One line of a decision trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub ballot: AnswerId,
    pub worker_id: WorkerId,
    pub gamma: f64,
    pub q_submit: f64,
    pub q_request: f64,
    /// `"submit"` or `"request"`.
    pub action: String,
    pub belief_digest: BeliefDigest,
}

impl TraceStep {
    fn new(step: usize, ballot: &Ballot, gamma: f64, b: &Belief, d: &Decision) -> Self {
        TraceStep {
            step,
            ballot: ballot.answer.clone(),
            worker_id: ballot.worker_id.clone(),
            gamma,
            q_submit: d.q_submit.unwrap_or(f64::NAN),
            q_request: d.q_request.unwrap_or(f64::NAN),
            action: match d.action {
                Action::Submit(_) => "submit".into(),
                Action::Request => "request".into(),
            },
            belief_digest: BeliefDigest::of(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub submitted: AnswerId,
    pub ballots_used: usize,
    /// `ballots_used * |c|`.
    pub total_cost: f64,
    pub cap_reached: bool,
    pub source_exhausted: bool,
    pub history: BallotHistory,
    pub final_belief: Option<Belief>,
    pub trace: Vec<TraceStep>,
    /// Filled in by [`EpisodeResult::score`] when the truth is known.
    pub correct: Option<bool>,
    pub net_utility: Option<f64>,
}

impl EpisodeResult {
    pub fn new(submitted: AnswerId, history: BallotHistory, ballot_cost: f64) -> Self {
        let n = history.len();
        EpisodeResult {
            submitted,
            ballots_used: n,
            total_cost: n as f64 * ballot_cost.abs(),
            cap_reached: false,
            source_exhausted: false,
            history,
            final_belief: None,
            trace: Vec::new(),
            correct: None,
            net_utility: None,
        }
    }

    /// Scores against the true answer:
    /// `net = (C_C if correct else C_W) + ballots * c`.
    pub fn score(&mut self, truth: &AnswerId, cfg: &TaskConfig) {
        let correct = &self.submitted == truth;
        let value = if correct { cfg.correct_value } else { cfg.wrong_value };
        self.correct = Some(correct);
        self.net_utility = Some(value + self.ballots_used as f64 * cfg.ballot_cost);
    }
}

/// Runs the request/decide loop on one task until the controller submits,
/// the ballot cap is reached, or the source runs dry; then updates the
/// participating workers' records using the submitted answer.
///
/// Each ballot is scored with the worker's revealed gamma when the source
/// provides one, else with the store's current estimate.
pub fn run_task(
    source: &mut dyn BallotSource,
    cfg: &TaskConfig,
    store: &mut WorkerStore,
) -> Result<EpisodeResult> {
    let mut belief = cfg.empty_belief()?;
    let mut history = BallotHistory::new();
    let mut trace = Vec::new();
    let mut cap_reached = false;
    let mut exhausted = false;

    let submitted = loop {
        let Some(next) = source.next_ballot() else {
            exhausted = true;
            break belief.map_answer()?;
        };
        let gamma = next
            .revealed_gamma
            .unwrap_or_else(|| store.gamma(&next.ballot.worker_id));
        belief = belief.extend(&next.ballot.answer, gamma)?;
        history.push(next.ballot.clone());
        let decision = evaluate(&belief, cfg);
        trace.push(TraceStep::new(history.len(), &next.ballot, gamma, &belief, &decision));
        match decision.action {
            Action::Submit(a) => break a,
            Action::Request if history.len() >= cfg.max_ballots => {
                cap_reached = true;
                break belief.map_answer()?;
            }
            Action::Request => {}
        }
    };

    update_workers(&history, &submitted, belief.mean_difficulty(), store);
    let mut result = EpisodeResult::new(submitted, history, cfg.ballot_cost);
    result.cap_reached = cap_reached;
    result.source_exhausted = exhausted;
    result.final_belief = Some(belief);
    result.trace = trace;
    Ok(result)
}
