//! Posterior over (true answer, difficulty).
//!
//! The hypotheses are the answers seen so far plus `⊥`, "the true answer has
//! not been produced yet". Difficulty is discretized onto a grid of bucket
//! centers. The likelihood of the history is accumulated one ballot at a time
//! in log space, so extending a belief by a ballot costs `O(k * grid)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{accuracy_unchecked, AnswerId, BallotHistory, Outcome};

/// Probabilities are floored here before taking logs.
pub(crate) const PROB_FLOOR: f64 = 1e-300;

#[inline]
pub(crate) fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Bucket centers used to discretize difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DifficultyGrid {
    centers: Vec<f64>,
}

impl DifficultyGrid {
    pub fn new(centers: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::config("difficulty_grid", "needs at least one center"));
        }
        if let Some(c) = centers.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            return Err(Error::config(
                "difficulty_grid",
                format!("center {c} is outside (0, 1)"),
            ));
        }
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("difficulty_grid", "centers must be strictly increasing"));
        }
        Ok(DifficultyGrid { centers })
    }

    /// `n` equal buckets on `[0, 1]`.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::new((0..n).map(|j| (j as f64 + 0.5) / n as f64).collect())
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

impl Default for DifficultyGrid {
    /// Ten centers `0.05, 0.15, ..., 0.95`.
    fn default() -> Self {
        DifficultyGrid::uniform(10).expect("uniform grid is valid")
    }
}

impl TryFrom<Vec<f64>> for DifficultyGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        DifficultyGrid::new(v)
    }
}

impl From<DifficultyGrid> for Vec<f64> {
    fn from(g: DifficultyGrid) -> Self {
        g.centers
    }
}

/// Beta prior on difficulty, parameterized by the ballot and unique-answer
/// counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl DifficultyPrior {
    /// `alpha = ((i-1) k/i + 1)^(1/theta)`, `beta = ((1-i) k/i + i)^theta`.
    ///
    /// Many distinct answers push mass toward high difficulty; a large
    /// `theta` (wrong answers tend to be new) pulls it back toward low.
    pub fn from_counts(i: usize, k: usize, theta: f64) -> Result<Self> {
        if k < 1 || k > i {
            return Err(Error::Domain(format!(
                "unique count k={k} must lie in [1, i={i}]"
            )));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Domain(format!("theta must be positive, got {theta}")));
        }
        let (i, k) = (i as f64, k as f64);
        let alpha = ((i - 1.0) * k / i + 1.0).powf(1.0 / theta);
        let beta = ((1.0 - i) * k / i + i).powf(theta);
        Ok(DifficultyPrior { alpha, beta })
    }

    /// Normalized Beta density evaluated at the grid centers.
    pub fn mass(&self, grid: &DifficultyGrid) -> Vec<f64> {
        let logs: Vec<f64> = grid
            .centers()
            .iter()
            .map(|&d| (self.alpha - 1.0) * d.ln() + (self.beta - 1.0) * (1.0 - d).ln())
            .collect();
        normalize_logs(&logs)
    }

    /// Mean difficulty under the discretized prior.
    pub fn grid_mean(&self, grid: &DifficultyGrid) -> f64 {
        self.mass(grid)
            .iter()
            .zip(grid.centers())
            .map(|(m, d)| m * d)
            .sum()
    }
}

pub fn difficulty_prior_params(i: usize, k: usize, theta: f64) -> Result<DifficultyPrior> {
    DifficultyPrior::from_counts(i, k, theta)
}

pub fn difficulty_prior_mass(p: &DifficultyPrior, grid: &DifficultyGrid) -> Vec<f64> {
    p.mass(grid)
}

/// Prior probability that none of `i` ballots is the true answer: `d^i`.
pub fn unseen_prior(d: f64, i: usize) -> f64 {
    d.powi(i as i32)
}

fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Outcome distribution for the next ballot.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    /// Probability of repeating each seen answer, in first-seen order.
    pub seen: Vec<(AnswerId, f64)>,
    /// Probability of an answer not seen so far.
    pub unseen: f64,
}

impl Predictive {
    pub fn total(&self) -> f64 {
        self.seen.iter().map(|(_, p)| p).sum::<f64>() + self.unseen
    }

    pub fn get(&self, b: &Outcome) -> f64 {
        match b {
            Outcome::Unseen => self.unseen,
            Outcome::Answer(a) => self
                .seen
                .iter()
                .find(|(x, _)| x == a)
                .map_or(self.unseen, |(_, p)| *p),
        }
    }
}

/// Joint posterior over `(A_i ∪ {⊥}) × grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    grid: DifficultyGrid,
    theta: f64,
    ballots: usize,
    answers: Vec<AnswerId>,
    counts: Vec<usize>,
    /// Per seen answer, per grid center: ln P(B_i | v = answer, d).
    log_lik: Vec<Vec<f64>>,
    /// ln P(B_i | v = ⊥, d), each new ballot possibly being the correct one.
    log_lik_unseen: Vec<f64>,
    /// ln P(B_i | v = u, d) for a concrete answer u that has not appeared.
    log_lik_absent: Vec<f64>,
    masses: Vec<Vec<f64>>,
    unseen_masses: Vec<f64>,
}

impl Belief {
    /// The belief before any ballot: all mass on `⊥`, uniform over the grid.
    pub fn empty(grid: DifficultyGrid, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Domain(format!("theta must be positive, got {theta}")));
        }
        let g = grid.len();
        let mut b = Belief {
            grid,
            theta,
            ballots: 0,
            answers: Vec::new(),
            counts: Vec::new(),
            log_lik: Vec::new(),
            log_lik_unseen: vec![0.0; g],
            log_lik_absent: vec![0.0; g],
            masses: Vec::new(),
            unseen_masses: Vec::new(),
        };
        b.renormalize();
        Ok(b)
    }

    /// Belief after one more ballot `answer` from a worker with `gamma`.
    pub fn extend(&self, answer: &AnswerId, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Domain(format!("gamma must be nonnegative, got {gamma}")));
        }
        let mut next = self.clone();
        next.absorb(answer, gamma);
        Ok(next)
    }

    fn absorb(&mut self, answer: &AnswerId, gamma: f64) {
        let theta = self.theta;
        let i = self.ballots as f64;
        let seen_idx = self.answers.iter().position(|a| a == answer);
        let seen_count = seen_idx.map(|j| self.counts[j] as f64);

        // A brand-new answer was absent for every earlier ballot.
        let new_row: Option<Vec<f64>> = seen_idx.is_none().then(|| {
            self.grid
                .centers
                .iter()
                .zip(&self.log_lik_absent)
                .map(|(&d, ll)| ll + ln_floor(accuracy_unchecked(d, gamma)))
                .collect()
        });

        for (g, &d) in self.grid.centers.iter().enumerate() {
            let acc = accuracy_unchecked(d, gamma);
            let miss = 1.0 - acc;
            for (j, ll) in self.log_lik.iter_mut().enumerate() {
                let others = i - self.counts[j] as f64;
                ll[g] += if seen_idx == Some(j) {
                    ln_floor(acc)
                } else if let Some(f) = seen_count {
                    ln_floor(miss * f / (others + theta))
                } else {
                    ln_floor(miss * theta / (others + theta))
                };
            }
            let new_table = miss * theta / (i + theta);
            let (absent, unseen) = match seen_count {
                Some(f) => {
                    let p = ln_floor(miss * f / (i + theta));
                    (p, p)
                }
                None => (ln_floor(new_table), ln_floor(acc + new_table)),
            };
            self.log_lik_absent[g] += absent;
            self.log_lik_unseen[g] += unseen;
        }

        match (seen_idx, new_row) {
            (Some(j), _) => self.counts[j] += 1,
            (None, row) => {
                self.answers.push(answer.clone());
                self.counts.push(1);
                self.log_lik.push(row.expect("row built for a new answer"));
            }
        }
        self.ballots += 1;
        self.renormalize();
    }

    fn renormalize(&mut self) {
        let g = self.grid.len();
        let i = self.ballots;
        let k = self.answers.len();
        let prior_d = if i == 0 {
            vec![1.0 / g as f64; g]
        } else {
            DifficultyPrior::from_counts(i, k, self.theta)
                .expect("counts are consistent")
                .mass(&self.grid)
        };
        let mut logs = Vec::with_capacity((k + 1) * g);
        for ll in &self.log_lik {
            for (gi, &d) in self.grid.centers.iter().enumerate() {
                let pv = (1.0 - unseen_prior(d, i)) / k as f64;
                logs.push(ln_floor(prior_d[gi]) + ln_floor(pv) + ll[gi]);
            }
        }
        for (gi, &d) in self.grid.centers.iter().enumerate() {
            logs.push(ln_floor(prior_d[gi]) + ln_floor(unseen_prior(d, i)) + self.log_lik_unseen[gi]);
        }
        let flat = normalize_logs(&logs);
        let mut chunks = flat.chunks(g).map(<[f64]>::to_vec);
        self.masses = (0..k).map(|_| chunks.next().unwrap()).collect();
        self.unseen_masses = chunks.next().unwrap();
    }

    /// Overrides the posterior; for exercising functions of the marginals.
    #[cfg(test)]
    pub(crate) fn with_masses(mut self, masses: Vec<Vec<f64>>, unseen: Vec<f64>) -> Self {
        assert_eq!(masses.len(), self.answers.len());
        self.masses = masses;
        self.unseen_masses = unseen;
        self
    }

    pub fn grid(&self) -> &DifficultyGrid {
        &self.grid
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Number of ballots `i` the belief was computed from.
    pub fn ballots(&self) -> usize {
        self.ballots
    }

    /// Seen answers in first-seen order.
    pub fn answers(&self) -> &[AnswerId] {
        &self.answers
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Mass over the grid for seen answer `a`, or `None` if `a` is unseen.
    pub fn masses(&self, a: &AnswerId) -> Option<&[f64]> {
        self.answers
            .iter()
            .position(|x| x == a)
            .map(|j| self.masses[j].as_slice())
    }

    pub fn unseen_masses(&self) -> &[f64] {
        &self.unseen_masses
    }

    /// `∫ P(v = a, d | B) dd` for each seen answer, in first-seen order.
    pub fn marginals(&self) -> Vec<(AnswerId, f64)> {
        self.answers
            .iter()
            .zip(&self.masses)
            .map(|(a, m)| (a.clone(), m.iter().sum()))
            .collect()
    }

    pub fn marginal(&self, a: &AnswerId) -> f64 {
        self.masses(a).map_or(0.0, |m| m.iter().sum())
    }

    pub fn unseen_marginal(&self) -> f64 {
        self.unseen_masses.iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().flatten().sum::<f64>() + self.unseen_marginal()
    }

    /// Seen answer with the largest marginal; ties go to the smallest token.
    pub fn map_answer(&self) -> Result<AnswerId> {
        self.map_index()
            .map(|j| self.answers[j].clone())
            .ok_or(Error::EmptyHistory)
    }

    pub(crate) fn map_index(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, m) in self.masses.iter().enumerate() {
            let s: f64 = m.iter().sum();
            best = match best {
                None => Some((j, s)),
                Some((bj, bs)) if s > bs || (s == bs && self.answers[j] < self.answers[bj]) => {
                    Some((j, s))
                }
                keep => keep,
            };
        }
        best.map(|(j, _)| j)
    }

    /// Posterior mean of the difficulty.
    pub fn mean_difficulty(&self) -> f64 {
        self.grid
            .centers
            .iter()
            .enumerate()
            .map(|(g, d)| {
                let col: f64 = self.masses.iter().map(|m| m[g]).sum::<f64>() + self.unseen_masses[g];
                d * col
            })
            .sum()
    }

    /// Distribution of the next ballot from a worker with `gamma_next`.
    ///
    /// With `include_unseen` the `⊥` hypothesis contributes as well, which
    /// makes the outcomes sum to one. Without it only seen-answer hypotheses
    /// are summed.
    pub fn predictive(&self, gamma_next: f64, include_unseen: bool) -> Predictive {
        let theta = self.theta;
        let i = self.ballots as f64;
        let k = self.answers.len();
        let mut seen = vec![0.0; k];
        let mut unseen = 0.0;
        for (g, &d) in self.grid.centers.iter().enumerate() {
            let acc = accuracy_unchecked(d, gamma_next);
            let miss = 1.0 - acc;
            for j in 0..k {
                let m = self.masses[j][g];
                if m == 0.0 {
                    continue;
                }
                let denom = i - self.counts[j] as f64 + theta;
                for (l, s) in seen.iter_mut().enumerate() {
                    *s += if l == j {
                        m * acc
                    } else {
                        m * miss * self.counts[l] as f64 / denom
                    };
                }
                unseen += m * miss * theta / denom;
            }
            if include_unseen {
                let m = self.unseen_masses[g];
                let denom = i + theta;
                for (l, s) in seen.iter_mut().enumerate() {
                    *s += m * miss * self.counts[l] as f64 / denom;
                }
                unseen += m * (acc + miss * theta / denom);
            }
        }
        Predictive {
            seen: self.answers.iter().cloned().zip(seen).collect(),
            unseen,
        }
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        let mut hypotheses: Vec<HypothesisMasses> = self
            .answers
            .iter()
            .zip(&self.masses)
            .map(|(a, m)| HypothesisMasses {
                answer: a.to_string(),
                masses: m.clone(),
            })
            .collect();
        hypotheses.push(HypothesisMasses {
            answer: UNSEEN_LABEL.to_owned(),
            masses: self.unseen_masses.clone(),
        });
        BeliefSnapshot {
            hypotheses,
            grid: self.grid.centers.clone(),
        }
    }
}

pub const UNSEEN_LABEL: &str = "⊥";

/// JSON form of a belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub hypotheses: Vec<HypothesisMasses>,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisMasses {
    pub answer: String,
    pub masses: Vec<f64>,
}

/// Posterior after the ballots in `h`, the `j`-th ballot coming from a worker
/// with error parameter `gammas[j]`.
pub fn compute_belief(
    h: &BallotHistory,
    gammas: &[f64],
    theta: f64,
    grid: &DifficultyGrid,
) -> Result<Belief> {
    if gammas.len() != h.len() {
        return Err(Error::Domain(format!(
            "{} gammas supplied for {} ballots",
            gammas.len(),
            h.len()
        )));
    }
    let mut b = Belief::empty(grid.clone(), theta)?;
    for (ballot, &gamma) in h.ballots().iter().zip(gammas) {
        b = b.extend(&ballot.answer, gamma)?;
    }
    Ok(b)
}

pub fn map_answer(b: &Belief) -> Result<AnswerId> {
    b.map_answer()
}

/// Next-ballot distribution including the `⊥` hypothesis.
pub fn predictive_distribution(b: &Belief, gamma_next: f64) -> Predictive {
    b.predictive(gamma_next, true)
}
