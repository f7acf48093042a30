//! Net utility of lookahead depths 1 to 4 against majority vote across three
//! prices of a wrong answer.

use lazysusan::sim::{AgentSpec, GammaRange};
use lazysusan::{run_experiment, ExperimentConfig};

fn main() -> lazysusan::Result<()> {
    let mut agents: Vec<AgentSpec> = (1..=4).map(|depth| AgentSpec::Lookahead { depth }).collect();
    agents.push(AgentSpec::MajorityVote { votes: 7 });
    let cfg = ExperimentConfig {
        repetitions: 10,
        gamma_ranges: vec![GammaRange::new(0.0, 2.0)?],
        wrong_values: vec![-10.0, -50.0, -100.0],
        agents,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg)?;
    for wv in &cfg.wrong_values {
        let line: Vec<String> = report
            .rows
            .iter()
            .filter(|r| r.wrong_value == *wv)
            .map(|r| format!("{} {:.2}", r.agent, r.avg_net_utility))
            .collect();
        println!("C_W {wv}: {}", line.join(", "));
    }
    Ok(())
}
