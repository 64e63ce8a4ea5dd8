use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("clip is empty")]
    EmptyClip,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("spectrogram carries no phase")]
    MissingPhase,
    #[error("designed filter is unstable for {spec} (pole magnitude {pole_magnitude:.6})")]
    UnstableFilter { spec: String, pole_magnitude: f64 },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("malformed wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("control signal: {0}")]
    Control(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
