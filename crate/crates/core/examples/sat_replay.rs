//! Replays a recorded 14-ballot stream through the controller, step by step,
//! and compares with a 7-vote majority.

use lazysusan::controller::ReplaySource;
use lazysusan::sim::plurality;
use lazysusan::{run_task, AnswerId, Ballot, TaskConfig, WorkerStore};

const STREAM: [u64; 14] = [215, 43, 43, 43, 5, 215, 43, 3, 55, 43, 215, 215, 215, 215];

fn main() -> lazysusan::Result<()> {
    let ballots: Vec<Ballot> = STREAM
        .iter()
        .enumerate()
        .map(|(j, a)| Ballot::new(format!("w{j:02}").as_str(), *a))
        .collect();
    let cfg = TaskConfig::default();
    let mut store = WorkerStore::new(cfg.gamma_bar);
    let r = run_task(&mut ReplaySource::new(ballots), &cfg, &mut store)?;
    for s in &r.trace {
        println!(
            "{:>2} {:>4} q_submit={:>8.3} q_request={:>8.3} {}",
            s.step,
            s.ballot,
            s.q_submit,
            s.q_request,
            s.action
        );
    }
    println!("controller: {} after {} ballots", r.submitted, r.ballots_used);

    let first7: Vec<AnswerId> = STREAM[..7].iter().map(|a| AnswerId::from(*a)).collect();
    println!("majority of the first 7: {}", plurality(&first7).expect("nonempty"));
    for (w, p) in store.iter().take(3) {
        println!("{w}: gamma {:.3} after {} ballots", p.gamma, p.answered);
    }
    Ok(())
}
