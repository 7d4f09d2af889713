use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("pixel ({x}, {y}) has color {rgb:?} which matches no component")]
    UnknownColor { x: usize, y: usize, rgb: [u8; 3] },
    #[error("sketch has no foreground pixels")]
    EmptySketch,
    #[error("sketch bounding box {height}x{width} does not fit in a {canvas}x{canvas} canvas")]
    SketchLargerThanCanvas {
        width: usize,
        height: usize,
        canvas: usize,
    },
    #[error("unknown component {0}")]
    UnknownComponent(String),
    #[error("invalid category spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("convolution kernel length {0} is even")]
    EvenKernel(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint has bad magic bytes")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,

    #[error("dataset is empty")]
    EmptyDataset,
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("length mismatch: {0} predictions vs {1} points")]
    LengthMismatch(usize, usize),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
