//! Learns difficulties, worker error rates and the bandwagon coefficient from
//! a planted batch, then scores EM against per-task majority vote.

use lazysusan::sim::{generate_planted_dataset, majority_answers, PlantedConfig};
use lazysusan::{run_em, AnswerId, EmConfig, EmState};

fn main() -> lazysusan::Result<()> {
    let cfg = PlantedConfig::default();
    let (data, truth) = generate_planted_dataset(&cfg, 7)?;
    println!("{} tasks, {} workers, true theta {}", data.tasks().len(), data.workers().len(), truth.theta);

    let run = run_em(&data, EmState::initial(&data, 1.0, 1.0), &EmConfig::default(), 100, 1e-6);
    for (j, l) in run.log_likelihood_trace.iter().enumerate().step_by(5) {
        println!("iter {j:>3}: log-likelihood {l:.3}");
    }
    println!("{} iterations, converged {}, theta {:.3}", run.iterations, run.converged, run.state.theta);

    let em: Vec<AnswerId> = (0..data.tasks().len()).map(|t| run.state.inferred(&data, t)).collect();
    println!("accuracy: em {:.1}%, majority {:.1}%", truth.accuracy_pct(&em), truth.accuracy_pct(&majority_answers(&data)));

    // learned vs true gamma for a few workers
    for (w, g) in truth.workers.iter().take(5) {
        let j = data.worker_index(w).expect("worker appears in the data");
        println!("{w}: true {g:.2}, learned {:.2}", run.state.gamma[j]);
    }
    Ok(())
}
