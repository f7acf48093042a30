mod common;

use std::collections::HashMap;

use common::*;
use lazysusan::controller::{run_task, ReplaySource, TaskConfig, WorkerStore};
use lazysusan::model::{sample_ballot, CountingAnswers};
use lazysusan::sim::{
    majority_vote_agent, Agent, AgentSpec, GammaRange, SimulatedTask, WorkerPool,
};
use lazysusan::{run_experiment, AnswerId, Ballot, BallotHistory, ExperimentConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sampled_ballots_follow_the_likelihood() {
    let prefix = ["x", "y", "y", "z"];
    let h = history(&prefix);
    let v = AnswerId::from("x");
    let (d, gamma, theta) = (0.4, 1.3, 0.7);
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut fresh = CountingAnswers::new("f");
    let mut counts: HashMap<String, usize> = HashMap::new();
    for _ in 0..n {
        let a = sample_ballot(&v, d, gamma, &h, theta, &mut rng, &mut fresh).unwrap();
        let key = if h.contains(&a) { a.as_str().to_string() } else { "new".into() };
        *counts.entry(key).or_default() += 1;
    }
    for key in ["x", "y", "z", "new"] {
        let p = if key == "new" {
            ballot_term(&prefix, "fresh", Some("x"), d, gamma, theta)
        } else {
            ballot_term(&prefix, key, Some("x"), d, gamma, theta)
        };
        let got = counts.get(key).copied().unwrap_or(0) as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((got - p).abs() <= 3.0 * sigma, "{key}: {got} vs {p} (sigma {sigma})");
    }
}

#[test]
fn hopeless_first_ballot_is_fresh() {
    let v = AnswerId::from("truth");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fresh = CountingAnswers::new("w");
    for _ in 0..200 {
        let a = sample_ballot(&v, 1.0, 0.8, &BallotHistory::new(), 1.0, &mut rng, &mut fresh).unwrap();
        assert_ne!(a, v);
    }
}

fn small_experiment() -> ExperimentConfig {
    ExperimentConfig {
        seed: 5,
        difficulties: vec![0.2, 0.5, 0.8],
        repetitions: 12,
        gamma_ranges: vec![GammaRange::new(0.0, 1.0).unwrap()],
        wrong_values: vec![-10.0, -100.0, -1000.0],
        agents: vec![AgentSpec::Lookahead { depth: 2 }, AgentSpec::MajorityVote { votes: 5 }],
        ..ExperimentConfig::default()
    }
}

#[test]
fn experiment_accounting_and_baseline_cost() {
    let cfg = small_experiment();
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 6);
    for e in &report.episodes {
        let value = if e.correct { cfg.task.correct_value } else { e.wrong_value };
        assert_eq!(e.net_utility, value + e.ballots as f64 * cfg.task.ballot_cost);
        if e.agent == "mv(5)" {
            assert_eq!(e.ballots, 5);
        }
    }
    for r in &report.rows {
        assert_eq!(r.episodes, cfg.episodes_per_cell());
        if r.agent == "mv(5)" {
            assert_eq!(r.avg_cost, 5.0);
        }
    }
}

#[test]
fn more_expensive_mistakes_buy_more_ballots() {
    let report = run_experiment(&small_experiment()).unwrap();
    let cost = |wv: f64| report.row(1.0, wv, "lazysusan(2)").unwrap().avg_cost;
    assert!(cost(-10.0) <= cost(-100.0), "{} {}", cost(-10.0), cost(-100.0));
    assert!(cost(-100.0) <= cost(-1000.0), "{} {}", cost(-100.0), cost(-1000.0));
}

#[test]
fn trivial_tasks_are_always_right() {
    let cfg = ExperimentConfig {
        difficulties: vec![0.0],
        repetitions: 20,
        ..small_experiment()
    };
    let report = run_experiment(&cfg).unwrap();
    for r in &report.rows {
        assert_eq!(r.accuracy_pct, 100.0, "{}", r.agent);
    }
}

#[test]
fn experiments_are_reproducible() {
    let cfg = small_experiment();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    let mut x = Vec::new();
    let mut y = Vec::new();
    a.write_csv(&mut x).unwrap();
    b.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
    let other = run_experiment(&ExperimentConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.episodes, other.episodes);
}

#[test]
fn tracked_mode_runs_on_a_population() {
    let base = small_experiment();
    let too_small = ExperimentConfig {
        gamma_oracle: false,
        worker_population: Some(base.task.max_ballots - 1),
        ..base.clone()
    };
    assert!(run_experiment(&too_small).is_err());
    let cfg = ExperimentConfig {
        gamma_oracle: false,
        worker_population: Some(base.task.max_ballots),
        wrong_values: vec![-100.0],
        ..base
    };
    let a = run_experiment(&cfg).unwrap();
    assert_eq!(a, run_experiment(&cfg).unwrap());
    assert_eq!(a.rows.len(), 2);
}

#[test]
fn agents_see_the_same_worker_stream() {
    let pool = WorkerPool::Fresh(GammaRange::new(0.0, 2.0).unwrap());
    let mut a = SimulatedTask::new(42, 0.5, 1.0, pool.clone(), true);
    let mut b = SimulatedTask::new(42, 0.5, 1.0, pool, true);
    let mv = majority_vote_agent(7).unwrap();
    let ra = mv.run(&mut a, &mut WorkerStore::new(1.0)).unwrap();
    let first: Vec<_> = (0..7).map(|_| b.draw().unwrap().0).collect();
    assert_eq!(ra.history.ballots(), &first[..]);
    assert_eq!(a.truth(), b.truth());
}

#[test]
fn unanimous_replay_submits_early() {
    let ballots: Vec<Ballot> = (0..10).map(|j| Ballot::new(format!("w{j}").as_str(), "42")).collect();
    let cfg = TaskConfig::default();
    let mut store = WorkerStore::new(cfg.gamma_bar);
    let r = run_task(&mut ReplaySource::new(ballots), &cfg, &mut store).unwrap();
    assert_eq!(r.submitted, AnswerId::from("42"));
    assert!(r.ballots_used < 10, "{}", r.ballots_used);
    assert!(!r.source_exhausted);
    assert_eq!(r.trace.len(), r.ballots_used);
    assert_eq!(r.trace.last().unwrap().action, "submit");
}

#[test]
fn exhausted_replay_submits_the_map_answer() {
    let ballots = vec![Ballot::new("a", "x"), Ballot::new("b", "y"), Ballot::new("c", "x")];
    let cfg = TaskConfig {
        wrong_value: -1e6,
        ..TaskConfig::default()
    };
    let mut store = WorkerStore::new(1.0);
    let r = run_task(&mut ReplaySource::new(ballots), &cfg, &mut store).unwrap();
    assert!(r.source_exhausted);
    assert_eq!(r.submitted, AnswerId::from("x"));
    assert_eq!(store.len(), 3);
}

#[test]
fn ballot_cap_is_respected() {
    let ballots: Vec<Ballot> = (0..20)
        .map(|j| Ballot::new(format!("w{j}").as_str(), ALPHABET[j % 3]))
        .collect();
    let cfg = TaskConfig {
        wrong_value: -1e6,
        max_ballots: 6,
        ..TaskConfig::default()
    };
    let r = run_task(&mut ReplaySource::new(ballots), &cfg, &mut WorkerStore::new(1.0)).unwrap();
    assert!(r.cap_reached);
    assert_eq!(r.ballots_used, 6);
}
