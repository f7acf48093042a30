//! Feeds ballots into a belief one at a time and prints the posterior.

use lazysusan::{AnswerId, Belief, DifficultyGrid};

fn main() -> lazysusan::Result<()> {
    let mut b = Belief::empty(DifficultyGrid::default(), 1.0)?;
    for a in ["blue", "blue", "green", "blue", "teal"] {
        b = b.extend(&AnswerId::from(a), 1.0)?;
        let marginals: Vec<String> = b
            .marginals()
            .iter()
            .map(|(a, p)| format!("{a}={p:.3}"))
            .collect();
        println!(
            "after {a:>5}: {} unseen={:.3} mean d={:.3}",
            marginals.join(" "),
            b.unseen_marginal(),
            b.mean_difficulty()
        );
    }
    println!("{}", serde_json::to_string(&b.snapshot()).expect("snapshot serializes"));
    Ok(())
}
