//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the library's probability code: histories are
//! plain string slices and every term is recomputed from the model formulas.
#![allow(dead_code)]

use lazysusan::{BallotHistory, EmDataset};
use rand::Rng;

/// `None` is the "true answer not seen yet" hypothesis.
pub type Hyp<'a> = Option<&'a str>;

pub fn distinct<'a>(answers: &[&'a str]) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for a in answers {
        if !out.contains(a) {
            out.push(a);
        }
    }
    out
}

fn acc(d: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (1.0 - d).powf(gamma)
    }
}

/// `P(b_j | v, d, b_1..b_{j-1})`, enumerated case by case.
pub fn ballot_term(prefix: &[&str], b: &str, v: Hyp, d: f64, gamma: f64, theta: f64) -> f64 {
    let a = acc(d, gamma);
    let count = |x: &str| prefix.iter().filter(|p| **p == x).count() as f64;
    let n_wrong = prefix.iter().filter(|p| Some(**p) != v).count() as f64;
    match v {
        Some(v) if b == v => a,
        _ => {
            let seen_wrong = Some(b) != v && count(b) > 0.0;
            if seen_wrong {
                (1.0 - a) * count(b) / (n_wrong + theta)
            } else {
                let new_table = (1.0 - a) * theta / (n_wrong + theta);
                if v.is_none() {
                    a + new_table
                } else {
                    new_table
                }
            }
        }
    }
}

pub fn likelihood(answers: &[&str], gammas: &[f64], v: Hyp, d: f64, theta: f64) -> f64 {
    (0..answers.len())
        .map(|j| ballot_term(&answers[..j], answers[j], v, d, gammas[j], theta))
        .product()
}

/// Beta-density weights at the grid centers, normalized.
pub fn prior_d(i: usize, k: usize, theta: f64, grid: &[f64]) -> Vec<f64> {
    if i == 0 {
        return vec![1.0 / grid.len() as f64; grid.len()];
    }
    let (i, k) = (i as f64, k as f64);
    let alpha = ((i - 1.0) * k / i + 1.0).powf(1.0 / theta);
    let beta = ((1.0 - i) * k / i + i).powf(theta);
    // Large exponents underflow on narrow grids, so normalize in log space.
    let lw: Vec<f64> = grid
        .iter()
        .map(|d| (alpha - 1.0) * d.ln() + (beta - 1.0) * (1.0 - d).ln())
        .collect();
    let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn prior_v(v: Hyp, d: f64, i: usize, k: usize) -> f64 {
    let unseen = d.powi(i as i32);
    match v {
        None => unseen,
        Some(_) => (1.0 - unseen) / k as f64,
    }
}

/// Brute-force posterior: one row per seen answer (first-seen order), then
/// the unseen row; one column per grid center.
pub fn belief_oracle(answers: &[&str], gammas: &[f64], theta: f64, grid: &[f64]) -> Vec<Vec<f64>> {
    let seen = distinct(answers);
    let (i, k) = (answers.len(), seen.len());
    let pd = prior_d(i, k, theta, grid);
    let hyps: Vec<Hyp> = seen.iter().map(|a| Some(*a)).chain([None]).collect();
    let mut rows: Vec<Vec<f64>> = hyps
        .iter()
        .map(|v| {
            grid.iter()
                .zip(&pd)
                .map(|(&d, &p)| p * prior_v(*v, d, i, k) * likelihood(answers, gammas, *v, d, theta))
                .collect()
        })
        .collect();
    let z: f64 = rows.iter().flatten().sum();
    for r in &mut rows {
        for x in r.iter_mut() {
            *x /= z;
        }
    }
    rows
}

/// E-step posterior of one task at fixed `d`: seen answers then unseen.
pub fn e_step_oracle(answers: &[&str], gammas: &[f64], d: f64, theta: f64) -> Vec<f64> {
    let seen = distinct(answers);
    let (i, k) = (answers.len(), seen.len());
    let hyps: Vec<Hyp> = seen.iter().map(|a| Some(*a)).chain([None]).collect();
    let joint: Vec<f64> = hyps
        .iter()
        .map(|v| prior_v(*v, d, i, k) * likelihood(answers, gammas, *v, d, theta))
        .collect();
    let z: f64 = joint.iter().sum();
    joint.into_iter().map(|x| x / z).collect()
}

pub const ALPHABET: [&str; 4] = ["p", "q", "r", "s"];

/// A random history of at most `max_len` ballots over the first `max_k`
/// letters of [`ALPHABET`].
pub fn random_answers<R: Rng>(rng: &mut R, max_len: usize, max_k: usize) -> Vec<&'static str> {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| ALPHABET[rng.gen_range(0..max_k)]).collect()
}

pub fn history(answers: &[&str]) -> BallotHistory {
    BallotHistory::from_answers(answers.iter().copied())
}

/// A small random multi-task dataset with shared workers `w0..w{n-1}`.
pub fn random_dataset<R: Rng>(rng: &mut R, tasks: usize, workers: usize, max_len: usize) -> EmDataset {
    use lazysusan::em::BallotRecord;
    let mut records = Vec::new();
    for t in 0..tasks {
        let n = rng.gen_range(1..=max_len.min(workers));
        let mut ws: Vec<usize> = (0..workers).collect();
        for j in 0..n {
            let pick = rng.gen_range(j..workers);
            ws.swap(j, pick);
            records.push(BallotRecord {
                task_id: format!("t{t}"),
                worker_id: format!("w{}", ws[j]).into(),
                answer: ALPHABET[rng.gen_range(0..3)].into(),
            });
        }
    }
    EmDataset::from_records(records).unwrap()
}
