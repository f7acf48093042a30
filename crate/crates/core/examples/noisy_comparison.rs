//! The lookahead controller against a 7-vote majority on simulated workers,
//! for two worker pools. Pass a seed as the first argument.

use lazysusan::sim::{AgentSpec, GammaRange};
use lazysusan::{run_experiment, ExperimentConfig};

fn main() -> lazysusan::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = ExperimentConfig {
        seed,
        gamma_ranges: vec![GammaRange::new(0.0, 2.0)?, GammaRange::new(0.0, 1.0)?],
        wrong_values: vec![-100.0],
        agents: vec![AgentSpec::Lookahead { depth: 3 }, AgentSpec::MajorityVote { votes: 7 }],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg)?;
    println!("{:>8} {:>14} {:>9} {:>7} {:>9}", "gamma", "agent", "accuracy", "cost", "net");
    for r in &report.rows {
        println!(
            "({},{}) {:>14} {:>8.1}% {:>7.2} {:>9.2}",
            r.gamma_lo, r.gamma_hi, r.agent, r.accuracy_pct, r.avg_cost, r.avg_net_utility
        );
    }
    for hi in [2.0, 1.0] {
        if let Some((m, se)) = report.paired_difference(hi, -100.0, "lazysusan(3)", "mv(7)") {
            println!("gamma (0,{hi}): net difference {m:.2} +- {se:.2}");
        }
    }
    Ok(())
}
