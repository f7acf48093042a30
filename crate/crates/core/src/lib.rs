//! Decision-theoretic control for crowdsourced free-response questions.
//!
//! Workers' answers are modeled with a Chinese-restaurant process over wrong
//! answers, which lets the answer space be unbounded. On top of the model sit
//! a Bayesian belief over (true answer, difficulty), a lookahead controller
//! that decides when to stop buying ballots, an EM learner for batches of
//! tasks, and a seeded simulator with a majority-vote baseline.

pub mod belief;
pub mod cli;
pub mod controller;
pub mod em;
pub mod error;
pub mod model;
pub mod optimize;
pub mod sim;

pub use belief::{compute_belief, Belief, DifficultyGrid, DifficultyPrior, Predictive};
pub use controller::{
    decide, q_request, q_submit, run_task, update_workers, Action, BallotSource, EpisodeResult,
    TaskConfig, WorkerProfile, WorkerStore,
};
pub use error::{Error, Result};
pub use em::{run_em, EmConfig, EmDataset, EmOutput, EmState};
pub use model::{AnswerId, Ballot, BallotHistory, Outcome, Restaurant, WorkerId};
pub use sim::{run_experiment, ExperimentConfig, ExperimentReport};
