mod common;

use common::*;
use lazysusan::belief::{difficulty_prior_params, DifficultyPrior};
use lazysusan::controller::{q_request, q_submit, update_workers, TaskConfig, WorkerStore};
use lazysusan::em::{observed_log_likelihood, run_em, EmConfig, EmState};
use lazysusan::model::{accuracy, ballot_likelihood};
use lazysusan::{compute_belief, AnswerId, Ballot, BallotHistory, DifficultyGrid, Outcome, Restaurant};
use proptest::prelude::*;
use proptest::test_runner::Config;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn answers_strategy(max_len: usize, max_k: usize) -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(0..max_k, 0..=max_len).prop_map(|ix| ix.into_iter().map(|j| ALPHABET[j]).collect())
}

fn grid_strategy() -> impl Strategy<Value = DifficultyGrid> {
    prop::collection::btree_set(1u32..999, 1..6).prop_map(|s| {
        DifficultyGrid::new(s.into_iter().map(|x| x as f64 / 1000.0).collect()).unwrap()
    })
}

fn outcomes(h: &BallotHistory, v: &Outcome) -> Vec<Outcome> {
    let mut out: Vec<Outcome> = h.answers().iter().cloned().map(Outcome::Answer).collect();
    if let Outcome::Answer(a) = v {
        if !h.contains(a) {
            out.push(v.clone());
        }
    }
    out.push(Outcome::Unseen);
    out
}

proptest! {
    #![proptest_config(Config::with_cases(10_000))]

    #[test]
    fn restaurant_probabilities_sum_to_one(
        counts in prop::collection::vec(1usize..20, 0..6),
        theta in 0.001f64..50.0,
    ) {
        let tables = counts.iter().enumerate().map(|(j, c)| (AnswerId::from(format!("t{j}")), *c));
        let r = Restaurant::with_tables(tables, theta).unwrap();
        let total: f64 = r.tables().keys().map(|t| r.seat_probability(t).unwrap()).sum::<f64>()
            + r.new_table_probability();
        prop_assert!((total - 1.0).abs() < 1e-12, "{total}");
    }

    #[test]
    fn ballot_likelihood_sums_to_one(
        answers in answers_strategy(6, 4),
        v_pick in 0usize..6,
        d in 0.0f64..=1.0,
        gamma in 0.0f64..5.0,
        theta in 0.01f64..20.0,
    ) {
        let h = history(&answers);
        let seen = h.answers();
        let v = if v_pick < seen.len() {
            Outcome::Answer(seen[v_pick].clone())
        } else if v_pick % 2 == 0 {
            Outcome::Unseen
        } else {
            Outcome::Answer("never".into())
        };
        let total: f64 = outcomes(&h, &v)
            .iter()
            .map(|b| ballot_likelihood(b, &v, d, gamma, &h, theta).unwrap())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "{total}");
    }

    #[test]
    fn beliefs_and_predictives_are_normalized(
        answers in answers_strategy(8, 4),
        gammas in prop::collection::vec(0.0f64..4.0, 8),
        theta in 0.05f64..10.0,
        gamma_next in 0.0f64..4.0,
        grid in grid_strategy(),
    ) {
        let h = history(&answers);
        let b = compute_belief(&h, &gammas[..answers.len()], theta, &grid).unwrap();
        prop_assert!((b.total_mass() - 1.0).abs() < 1e-9);
        let all_nonneg = b.answers().iter().all(|a| b.masses(a).unwrap().iter().all(|m| *m >= 0.0))
            && b.unseen_masses().iter().all(|m| *m >= 0.0);
        prop_assert!(all_nonneg);
        prop_assert_eq!(b.answers().len(), h.unique_count());
        let p = b.predictive(gamma_next, true);
        prop_assert!((p.total() - 1.0).abs() < 1e-12, "{}", p.total());
    }
}

proptest! {
    #![proptest_config(Config::with_cases(2_000))]

    #[test]
    fn belief_matches_oracle(
        answers in answers_strategy(5, 3),
        gammas in prop::collection::vec(0.0f64..3.0, 5),
        theta in 0.1f64..5.0,
        grid in grid_strategy(),
    ) {
        let gammas = &gammas[..answers.len()];
        let b = compute_belief(&history(&answers), gammas, theta, &grid).unwrap();
        let want = belief_oracle(&answers, gammas, theta, grid.centers());
        let seen = distinct(&answers);
        for (row, a) in want.iter().zip(&seen) {
            let got = b.masses(&AnswerId::from(*a)).unwrap();
            for (x, y) in got.iter().zip(row) {
                prop_assert!((x - y).abs() < 1e-9, "{a}: {x} vs {y}");
            }
        }
        for (x, y) in b.unseen_masses().iter().zip(want.last().unwrap()) {
            prop_assert!((x - y).abs() < 1e-9, "unseen: {x} vs {y}");
        }
    }

    /// With equal gammas the likelihood under a concrete hypothesis is a CRP
    /// product over the wrong ballots, which is exchangeable.
    #[test]
    fn concrete_hypothesis_likelihood_is_exchangeable(
        answers in answers_strategy(7, 4),
        perm_seed in any::<u64>(),
        pick in 0usize..5,
        d in 0.0f64..1.0,
        gamma in 0.0f64..3.0,
        theta in 0.05f64..8.0,
    ) {
        prop_assume!(!answers.is_empty());
        let seen = distinct(&answers);
        let v = if pick < seen.len() { Outcome::Answer(seen[pick].into()) } else { Outcome::Answer("zz".into()) };
        let product = |xs: &[&str]| -> f64 {
            let mut h = BallotHistory::new();
            let mut p = 1.0;
            for x in xs {
                p *= ballot_likelihood(&Outcome::Answer((*x).into()), &v, d, gamma, &h, theta).unwrap();
                h.push(Ballot::new("w", *x));
            }
            p
        };
        let mut shuffled = answers.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let (a, b) = (product(&answers), product(&shuffled));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{a} vs {b}");
    }

    #[test]
    fn accuracy_is_monotone(d1 in 0.0f64..=1.0, d2 in 0.0f64..=1.0, g1 in 0.0f64..6.0, g2 in 0.0f64..6.0) {
        let (dl, dh) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (gl, gh) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        prop_assert!(accuracy(dl, g1).unwrap() >= accuracy(dh, g1).unwrap());
        prop_assert!(accuracy(d1, gl).unwrap() >= accuracy(d1, gh).unwrap());
    }

    #[test]
    fn worker_gammas_stay_nonnegative(
        tasks in prop::collection::vec(
            (prop::collection::vec((0usize..4, 0usize..3), 1..6), 0usize..3, 0.0f64..=1.0),
            1..30,
        ),
        start in 0.0f64..2.0,
    ) {
        let mut store = WorkerStore::new(start);
        for (ballots, star, d_hat) in tasks {
            let mut h = BallotHistory::new();
            for (w, a) in ballots {
                h.push(Ballot::new(format!("w{w}"), ALPHABET[a]));
            }
            update_workers(&h, &ALPHABET[star].into(), d_hat, &mut store);
            for (_, p) in store.iter() {
                prop_assert!(p.gamma >= 0.0 && p.gamma.is_finite());
            }
        }
    }

    #[test]
    fn prior_mean_grows_with_k(i in 1usize..15) {
        let grid = DifficultyGrid::default();
        let means: Vec<f64> = (1..=i)
            .map(|k| difficulty_prior_params(i, k, 1.0).unwrap().grid_mean(&grid))
            .collect();
        for w in means.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12, "{means:?}");
        }
    }

    #[test]
    fn prior_mean_falls_with_theta(i in 1usize..15, k_frac in 0.0f64..1.0, t1 in 0.05f64..8.0, t2 in 0.05f64..8.0) {
        let k = 1 + ((i - 1) as f64 * k_frac) as usize;
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let grid = DifficultyGrid::default();
        let mean = |t: f64| DifficultyPrior::from_counts(i, k, t).unwrap().grid_mean(&grid);
        prop_assert!(mean(hi) <= mean(lo) + 1e-12, "i={i} k={k}: {} > {}", mean(hi), mean(lo));
    }
}

proptest! {
    #![proptest_config(Config::with_cases(200))]

    /// One-step lookahead is the predictive-weighted submit value of each
    /// successor plus the ballot cost.
    #[test]
    fn depth_one_request_unrolls(
        answers in answers_strategy(4, 3),
        gammas in prop::collection::vec(0.2f64..2.5, 4),
        wrong in -200.0f64..-1.0,
        penalize in any::<bool>(),
    ) {
        prop_assume!(!answers.is_empty());
        let cfg = TaskConfig { wrong_value: wrong, penalize_unseen: penalize, ..TaskConfig::default() };
        let b = compute_belief(&history(&answers), &gammas[..answers.len()], cfg.theta, &cfg.difficulty_grid).unwrap();
        let pred = b.predictive(cfg.gamma_bar, cfg.predictive_includes_unseen);
        let mut want = cfg.ballot_cost;
        for (a, p) in &pred.seen {
            want += p * q_submit(&b.extend(a, cfg.gamma_bar).unwrap(), &cfg).unwrap();
        }
        let fresh = b.extend(&"brand-new".into(), cfg.gamma_bar).unwrap();
        want += pred.unseen * q_submit(&fresh, &cfg).unwrap();
        let got = q_request(&b, &cfg, 1).unwrap();
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

proptest! {
    #![proptest_config(Config::with_cases(24))]

    #[test]
    fn em_log_likelihood_never_decreases(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(&mut rng, 12, 6, 5);
        let run = run_em(&data, EmState::initial(&data, 1.0, 1.0), &EmConfig::default(), 15, 1e-9);
        for w in run.log_likelihood_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-6, "{:?}", run.log_likelihood_trace);
        }
        let last = *run.log_likelihood_trace.last().unwrap();
        let direct = observed_log_likelihood(&data, &run.state.d, &run.state.gamma, run.state.theta);
        prop_assert!((last - direct).abs() < 1e-9);
    }

    /// Reversing the task order and renaming workers leaves every task's
    /// posterior and difficulty unchanged.
    #[test]
    fn em_is_permutation_invariant(seed in any::<u64>()) {
        use lazysusan::em::{EmTask, EmDataset};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(&mut rng, 10, 5, 4);
        let relabeled: Vec<EmTask> = data
            .tasks()
            .iter()
            .rev()
            .map(|t| {
                let mut h = BallotHistory::new();
                for b in t.history.ballots() {
                    h.push(Ballot::new(format!("z{}", 9 - b.worker_id.as_str()[1..].parse::<u32>().unwrap()), b.answer.clone()));
                }
                EmTask { task_id: t.task_id.clone(), history: h }
            })
            .collect();
        let other = EmDataset::new(relabeled).unwrap();
        let cfg = EmConfig { max_sweeps: 3, ..EmConfig::default() };
        let a = run_em(&data, EmState::initial(&data, 1.0, 1.0), &cfg, 6, 1e-9);
        let b = run_em(&other, EmState::initial(&other, 1.0, 1.0), &cfg, 6, 1e-9);
        let n = data.tasks().len();
        prop_assert!((a.state.theta - b.state.theta).abs() < 1e-5);
        for t in 0..n {
            let u = n - 1 - t;
            prop_assert_eq!(a.state.d[t], b.state.d[u]);
            for (x, y) in a.state.posteriors[t].iter().zip(&b.state.posteriors[u]) {
                prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
            }
        }
    }
}
