use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("surface sampling failed: {converged} of {seeds} seeds converged (max residual {max_residual:.3e})")]
    SamplingFailed {
        seeds: usize,
        converged: usize,
        max_residual: f64,
    },

    #[error("training diverged at epoch {epoch}")]
    TrainingFailed { epoch: usize },

    #[error("policy optimization diverged at step {step}: {diagnostics}")]
    Diverged { step: usize, diagnostics: String },

    #[error("SMILES syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("valence violation on atom {atom} ({element}): bond order sum {valence}")]
    Valence {
        atom: usize,
        element: String,
        valence: u32,
    },

    #[error("unclosed ring bond {0}")]
    UnclosedRing(u32),

    #[error("unclosed branch opened at byte {0}")]
    UnclosedBranch(usize),

    #[error("multi-fragment SMILES are not supported")]
    MultiFragment,

    #[error("linker subgraph is disconnected")]
    DisconnectedLinker,

    #[error("embedding failed: {0}")]
    EmbeddingFailed(String),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
