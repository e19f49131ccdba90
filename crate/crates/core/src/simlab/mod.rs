//! Desk-scale experiments: a synthetic corpus with known noisy pairs, a toy
//! learner, and curves comparing selection strategies.

pub mod corpus;
pub mod experiment;
pub mod export;
pub mod learner;

pub use corpus::{generate_synthetic_corpus, SyntheticCorpus, SyntheticCorpusSpec, LEARNER_MODEL, REFERENCE_MODEL};
pub use experiment::{
    noise_exposure, run_experiment, run_on_corpus, write_curves_csv, CurvePoint, ExperimentConfig, ExperimentOutcome,
    LearningCurve,
};
pub use export::{export_corpus, ExportedCorpus, SimlabSpec};
pub use learner::{toy_learner_update, ToyLearnerState};
