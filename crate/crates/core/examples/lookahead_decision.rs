//! How the stopping decision moves with the price of a wrong answer and the
//! lookahead depth, on one fixed pair of disagreeing ballots.

use lazysusan::controller::evaluate;
use lazysusan::{AnswerId, TaskConfig};

fn main() -> lazysusan::Result<()> {
    let base = TaskConfig::default();
    let mut b = base.empty_belief()?;
    for a in ["7", "7", "9"] {
        b = b.extend(&AnswerId::from(a), base.gamma_bar)?;
    }
    println!("belief: 7={:.3} 9={:.3} unseen={:.3}", b.marginal(&"7".into()), b.marginal(&"9".into()), b.unseen_marginal());
    println!("{:>6} {:>5} {:>9} {:>9}  action", "C_W", "depth", "q_submit", "q_request");
    for wrong_value in [-5.0, -20.0, -100.0, -1000.0] {
        for depth in 1..=4 {
            let cfg = TaskConfig {
                wrong_value,
                lookahead_depth: depth,
                ..base.clone()
            };
            let d = evaluate(&b, &cfg);
            println!(
                "{wrong_value:>6} {depth:>5} {:>9.3} {:>9.3}  {:?}",
                d.q_submit.unwrap_or(f64::NAN),
                d.q_request.unwrap_or(f64::NAN),
                d.action
            );
        }
    }
    Ok(())
}
