//! Shows where correlated wrong answers beat the controller: hard tasks with
//! a low bandwagon coefficient.

use lazysusan::model::adversarial_theta_threshold;
use lazysusan::sim::{adversarial_regime_study, RegimeStudy};

fn main() -> lazysusan::Result<()> {
    for d in [0.3, 0.5, 2.0 / 3.0, 0.8] {
        println!("d={d:.3}: theta threshold {:.3}", adversarial_theta_threshold(d, 1.0));
    }
    let report = adversarial_regime_study(&RegimeStudy::default())?;
    for r in &report.rows {
        println!(
            "{:<18} d={:.1} theta={:<5} adversarial={:<5} accuracy {:>5.1}% ballots {:.2}",
            r.label, r.difficulty, r.theta, r.adversarial, r.accuracy_pct, r.avg_ballots
        );
    }
    Ok(())
}
