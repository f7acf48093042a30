//! Draws ballots from the generative model and compares the empirical
//! next-ballot frequencies with the closed-form likelihood.

use std::collections::BTreeMap;

use lazysusan::model::{accuracy, ballot_likelihood, sample_ballot, CountingAnswers};
use lazysusan::{AnswerId, Ballot, BallotHistory, Outcome, Restaurant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lazysusan::Result<()> {
    let truth = AnswerId::from("42");
    let (d, gamma, theta) = (0.5, 1.0, 0.5);
    println!("worker accuracy at d={d}, gamma={gamma}: {:.3}", accuracy(d, gamma)?);

    let mut h = BallotHistory::new();
    for (w, a) in [("a", "42"), ("b", "17"), ("c", "17"), ("d", "8")] {
        h.push(Ballot::new(w, a));
    }

    // wrong answers seat like customers at a restaurant
    let r = Restaurant::with_tables([("17".into(), 2), ("8".into(), 1)], theta)?;
    println!("seat at 17: {:.3}, new table: {:.3}", r.seat_probability(&"17".into())?, r.new_table_probability());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut fresh = CountingAnswers::new("new-");
    let n = 50_000;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..n {
        let a = sample_ballot(&truth, d, gamma, &h, theta, &mut rng, &mut fresh)?;
        let key = if h.contains(&a) { a.to_string() } else { "(new)".into() };
        *counts.entry(key).or_default() += 1;
    }

    let v = Outcome::Answer(truth);
    println!("{:>6} {:>9} {:>9}", "answer", "sampled", "model");
    for (key, c) in &counts {
        let b = if key == "(new)" { Outcome::Unseen } else { Outcome::Answer(key.as_str().into()) };
        let p = ballot_likelihood(&b, &v, d, gamma, &h, theta)?;
        println!("{key:>6} {:>9.4} {p:>9.4}", *c as f64 / n as f64);
    }
    Ok(())
}
