//! Sweeps, timing comparisons and the end-to-end driver, plus provenance helpers.

mod ablation;
mod efficiency;
mod pipeline;

pub use ablation::{run_ablation, AblationConfig, AblationResult, AblationRow};
pub use efficiency::{run_efficiency, scene_corpus, EfficiencyConfig, EfficiencyReport, EfficiencyTiming, WorldTiming};
pub use pipeline::{evaluate, run_pipeline, write_query_outputs, ObjectMetrics, PipelineConfig, PipelineMetrics, PipelineOutput};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::CodecError;
use crate::field::FieldError;
use crate::query::QueryError;
use crate::raster::RenderError;
use crate::scene::SceneError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("timing error: {0}")]
    Timing(String),
    #[error("{0} stage failed: {1}")]
    Stage(&'static str, Box<HarnessError>),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 config, 3 numerical divergence, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use HarnessError as H;
        match self {
            H::Stage(_, inner) => inner.exit_code(),
            H::Config(_) | H::Json(_) => 2,
            H::Codec(CodecError::Config(_) | CodecError::Architecture(_) | CodecError::Json(_)) => 2,
            H::Field(FieldError::Config(_)) | H::Synth(SynthError::Params(_) | SynthError::Json(_)) => 2,
            H::Codec(CodecError::Divergence { .. } | CodecError::NonFinite) | H::Field(FieldError::Divergence { .. }) => 3,
            H::Io(_) | H::Scene(_) | H::Codec(CodecError::Io(_) | CodecError::Format(_)) | H::Synth(SynthError::Io(_) | SynthError::Scene(_)) => 4,
            _ => 1,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, name: &'static str) -> Result<T, HarnessError>;
}

impl<T, E: Into<HarnessError>> StageExt<T> for Result<T, E> {
    fn stage(self, name: &'static str) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::Stage(name, Box::new(e.into())))
    }
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form, first 16 hex digits.
pub fn config_hash<T: Serialize + ?Sized>(cfg: &T) -> String {
    let v = serde_json::to_value(cfg).expect("configs serialize");
    let digest = Sha256::digest(serde_json::to_string(&v).expect("value serializes").as_bytes());
    hex::encode(digest)[..16].to_string()
}

/// The single provenance line embedded in every output file.
pub fn provenance_line(hash: &str) -> String {
    format!("gensplat config-hash {hash}")
}

/// Stream seed for one member of a sweep, independent across members.
pub fn derive_seed(master: u64, member: u64) -> u64 {
    let digest = Sha256::digest([master.to_le_bytes(), member.to_le_bytes()].concat());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub(crate) fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
