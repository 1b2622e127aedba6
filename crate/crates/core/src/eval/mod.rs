//! Embeddings, cosine scoring, EER and the speed-perturbation sweep.

pub mod eer;
pub mod embedding;
pub mod protocol;

pub use eer::{compute_eer, ScoreSet};
pub use embedding::{cosine_score, extract_embedding, normalize, padded_length};
pub use protocol::{
    evaluate_protocol, parse_trials, perturbation_sweep, read_trials, score_protocol, sweep_table,
    EerReport, ScoreSummary, SweepRow, Trial,
};
