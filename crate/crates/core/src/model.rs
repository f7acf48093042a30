//! Generative worker model for free-response questions.
//!
//! A worker answers correctly with probability `(1 - d)^gamma`. A wrong answer
//! is seated in a Chinese restaurant whose tables are the wrong answers seen so
//! far: it repeats a previous mistake with probability proportional to how
//! often that mistake was made, or produces a brand-new answer with
//! probability proportional to the bandwagon coefficient `theta`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An answer token. Equality is exact token equality: `"5"` and `"5.0"` are
/// different answers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerId(String);

impl AnswerId {
    pub fn new(token: impl Into<String>) -> Self {
        AnswerId(token.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AnswerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

impl From<&str> for AnswerId {
    fn from(s: &str) -> Self {
        AnswerId(s.to_owned())
    }
}

impl From<String> for AnswerId {
    fn from(s: String) -> Self {
        AnswerId(s)
    }
}

impl From<u64> for AnswerId {
    fn from(n: u64) -> Self {
        AnswerId(n.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(String);

impl WorkerId {
    pub fn new(id: impl Into<String>) -> Self {
        WorkerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

impl From<&str> for WorkerId {
    fn from(s: &str) -> Self {
        WorkerId(s.to_owned())
    }
}

impl From<String> for WorkerId {
    fn from(s: String) -> Self {
        WorkerId(s)
    }
}

/// Either a concrete answer or the symbol standing for "any answer not seen
/// so far". Used both for ballots and for hypotheses about the true answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Outcome {
    Answer(AnswerId),
    Unseen,
}

impl Outcome {
    pub fn answer(&self) -> Option<&AnswerId> {
        match self {
            Outcome::Answer(a) => Some(a),
            Outcome::Unseen => None,
        }
    }
}

impl From<AnswerId> for Outcome {
    fn from(a: AnswerId) -> Self {
        Outcome::Answer(a)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Answer(a) => a.fmt(f),
            Outcome::Unseen => f.pad("⊥"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub worker_id: WorkerId,
    pub answer: AnswerId,
}

impl Ballot {
    pub fn new(worker_id: impl Into<WorkerId>, answer: impl Into<AnswerId>) -> Self {
        Ballot {
            worker_id: worker_id.into(),
            answer: answer.into(),
        }
    }
}

/// Append-only record of the ballots received for one task, together with the
/// unique answers (in first-seen order) and their multiplicities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BallotHistory {
    ballots: Vec<Ballot>,
    unique: Vec<AnswerId>,
    counts: HashMap<AnswerId, usize>,
}

impl BallotHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_answers<I, A>(answers: I) -> Self
    where
        I: IntoIterator<Item = A>,
        A: Into<AnswerId>,
    {
        let mut h = Self::new();
        for (j, a) in answers.into_iter().enumerate() {
            h.push(Ballot::new(format!("w{j}"), a));
        }
        h
    }

    pub fn push(&mut self, ballot: Ballot) {
        let n = self.counts.entry(ballot.answer.clone()).or_insert(0);
        if *n == 0 {
            self.unique.push(ballot.answer.clone());
        }
        *n += 1;
        self.ballots.push(ballot);
    }

    /// Number of ballots `i`.
    pub fn len(&self) -> usize {
        self.ballots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ballots.is_empty()
    }

    /// Number of unique answers `k`.
    pub fn unique_count(&self) -> usize {
        self.unique.len()
    }

    /// Unique answers in the order they first appeared.
    pub fn answers(&self) -> &[AnswerId] {
        &self.unique
    }

    pub fn ballots(&self) -> &[Ballot] {
        &self.ballots
    }

    pub fn count(&self, a: &AnswerId) -> usize {
        self.counts.get(a).copied().unwrap_or(0)
    }

    pub fn contains(&self, a: &AnswerId) -> bool {
        self.counts.contains_key(a)
    }

    /// The history made of the first `j` ballots.
    pub fn prefix(&self, j: usize) -> BallotHistory {
        let mut h = BallotHistory::new();
        for b in &self.ballots[..j] {
            h.push(b.clone());
        }
        h
    }
}

/// A Chinese restaurant: occupied tables with their customer counts and the
/// concentration parameter `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Restaurant {
    tables: BTreeMap<AnswerId, usize>,
    theta: f64,
}

impl Restaurant {
    pub fn new(theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(Restaurant {
            tables: BTreeMap::new(),
            theta,
        })
    }

    pub fn with_tables<I>(tables: I, theta: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (AnswerId, usize)>,
    {
        let mut r = Restaurant::new(theta)?;
        for (t, n) in tables {
            if n == 0 {
                return Err(Error::Domain(format!("table `{t}` has no customers")));
            }
            *r.tables.entry(t).or_insert(0) += n;
        }
        Ok(r)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn tables(&self) -> &BTreeMap<AnswerId, usize> {
        &self.tables
    }

    /// Total number of seated customers `N`.
    pub fn size(&self) -> usize {
        self.tables.values().sum()
    }

    /// `f(t) / (N + theta)`.
    pub fn seat_probability(&self, t: &AnswerId) -> Result<f64> {
        let f = *self
            .tables
            .get(t)
            .ok_or_else(|| Error::NotATable(t.to_string()))?;
        Ok(f as f64 / (self.size() as f64 + self.theta))
    }

    /// `theta / (N + theta)`.
    pub fn new_table_probability(&self) -> f64 {
        self.theta / (self.size() as f64 + self.theta)
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("theta must be positive and finite, got {theta}")))
    }
}

fn check_difficulty(d: f64, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Domain(format!("difficulty must lie in [0, 1], got {d}")));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be nonnegative, got {gamma}")));
    }
    Ok(())
}

/// Probability that a worker with error parameter `gamma` answers a task of
/// difficulty `d` correctly: `(1 - d)^gamma`.
pub fn accuracy(d: f64, gamma: f64) -> Result<f64> {
    check_difficulty(d, gamma)?;
    Ok(accuracy_unchecked(d, gamma))
}

#[inline]
pub(crate) fn accuracy_unchecked(d: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (1.0 - d).powf(gamma)
    }
}

/// Accuracy under the two-answer model, `(1 + (1 - d)^gamma) / 2`, where a
/// confused worker guesses between two options. Kept for comparison only.
pub fn accuracy_binary_reference(d: f64, gamma: f64) -> Result<f64> {
    Ok(0.5 * (1.0 + accuracy(d, gamma)?))
}

/// The restaurant of wrong answers under hypothesis `v`: every seen answer
/// except `v`, with its full count.
pub fn wrong_answer_restaurant(h: &BallotHistory, v: &Outcome, theta: f64) -> Result<Restaurant> {
    let excluded = v.answer();
    Restaurant::with_tables(
        h.answers()
            .iter()
            .filter(|a| Some(*a) != excluded)
            .map(|a| (a.clone(), h.count(a))),
        theta,
    )
}

/// Probability that the next ballot is `b` given true answer `v`, difficulty
/// `d`, the next worker's `gamma`, and the history so far.
///
/// A concrete `b` that is not in the history (and is not `v`) is scored as the
/// `Unseen` outcome. Under `v = Unseen` a correct ballot would itself be a new
/// answer, so the `Unseen` outcome absorbs the correct branch.
pub fn ballot_likelihood(
    b: &Outcome,
    v: &Outcome,
    d: f64,
    gamma: f64,
    h: &BallotHistory,
    theta: f64,
) -> Result<f64> {
    check_difficulty(d, gamma)?;
    check_theta(theta)?;
    let acc = accuracy_unchecked(d, gamma);
    let r = wrong_answer_restaurant(h, v, theta)?;
    if let (Outcome::Answer(va), Outcome::Answer(ba)) = (v, b) {
        if va == ba {
            return Ok(acc);
        }
    }
    if let Some(seen) = b.answer().filter(|a| r.tables.contains_key(*a)) {
        return Ok((1.0 - acc) * r.seat_probability(seen)?);
    }
    let wrong_new = (1.0 - acc) * r.new_table_probability();
    Ok(match v {
        Outcome::Answer(_) => wrong_new,
        Outcome::Unseen => acc + wrong_new,
    })
}

/// The largest `theta` for which, with fixed difficulty and equal workers, the
/// first-seen wrong answer is on average more likely than the correct one:
/// `(1 - 2a) / a` with `a = (1 - d)^gamma`.
///
/// Returns `+inf` when accuracy is zero. A nonpositive value means no positive
/// `theta` is adversarial.
pub fn adversarial_theta_threshold(d: f64, gamma: f64) -> f64 {
    let a = accuracy_unchecked(d, gamma);
    if a <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 - 2.0 * a) / a
    }
}

/// Supplies answer tokens for brand-new wrong answers.
pub trait FreshAnswers {
    fn next_answer(&mut self) -> AnswerId;
}

/// Fresh answers `"{prefix}{n}"` for increasing `n`.
#[derive(Debug, Clone)]
pub struct CountingAnswers {
    prefix: String,
    next: u64,
}

impl CountingAnswers {
    pub fn new(prefix: impl Into<String>) -> Self {
        CountingAnswers {
            prefix: prefix.into(),
            next: 0,
        }
    }
}

impl FreshAnswers for CountingAnswers {
    fn next_answer(&mut self) -> AnswerId {
        let a = AnswerId(format!("{}{}", self.prefix, self.next));
        self.next += 1;
        a
    }
}

/// Draws the next worker's ballot from the generative model.
///
/// Tables are visited in first-seen order so that a seeded generator yields a
/// reproducible answer stream.
pub fn sample_ballot<R: Rng + ?Sized, F: FreshAnswers + ?Sized>(
    v: &AnswerId,
    d: f64,
    gamma: f64,
    h: &BallotHistory,
    theta: f64,
    rng: &mut R,
    fresh: &mut F,
) -> Result<AnswerId> {
    check_difficulty(d, gamma)?;
    check_theta(theta)?;
    let acc = accuracy_unchecked(d, gamma);
    if rng.gen::<f64>() < acc {
        return Ok(v.clone());
    }
    let wrong_total = h.len() - h.count(v);
    let mut u = rng.gen::<f64>() * (wrong_total as f64 + theta);
    for a in h.answers().iter().filter(|a| *a != v) {
        let f = h.count(a) as f64;
        if u < f {
            return Ok(a.clone());
        }
        u -= f;
    }
    loop {
        let a = fresh.next_answer();
        if &a != v && !h.contains(&a) {
            return Ok(a);
        }
    }
}
