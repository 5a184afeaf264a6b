//! Request and response bodies of the HTTP service, shared by the server
//! and its clients. Paths are resolved on the server's filesystem.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusFile, GeneratorConfig, Schema};
use crate::session::SessionTurn;
use crate::tokenizer::Variant;
use crate::tracker::DialogueState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    /// Score the gold annotations instead of model predictions.
    #[serde(default)]
    pub oracle: bool,
}

/// Where the generator's schema comes from: a built-in name (`toy`,
/// `travel`), a schema file, or an inline schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaSource {
    Builtin(String),
    Path(PathBuf),
    Inline(Schema),
}

impl SchemaSource {
    /// A built-in name when `spec` is one, otherwise a path.
    pub fn parse(spec: &str) -> Self {
        match spec {
            "toy" | "travel" => SchemaSource::Builtin(spec.to_string()),
            _ => SchemaSource::Path(spec.into()),
        }
    }

    pub fn resolve(&self) -> crate::Result<Schema> {
        match self {
            SchemaSource::Builtin(name) if name == "toy" => Ok(Schema::toy()),
            SchemaSource::Builtin(name) if name == "travel" => Ok(Schema::travel()),
            SchemaSource::Builtin(name) => Err(crate::Error::Configuration(format!(
                "no built-in schema {name:?}"
            ))),
            SchemaSource::Path(path) => Schema::load(path),
            SchemaSource::Inline(schema) => {
                schema.validate()?;
                Ok(schema.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub schema: SchemaSource,
    pub dialogues: usize,
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write the corpus here; when absent the corpus is returned inline.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub dialogues: usize,
    pub turns: usize,
    /// Measured intent/slot association; null for a degenerate table.
    pub cramers_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSessionRequest {
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub variant: Variant,
    pub schema: Schema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRequest {
    #[serde(default)]
    pub system: String,
    pub user: String,
}

pub type TurnResponse = SessionTurn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub turns: usize,
    pub state: DialogueState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    /// Error variant name, e.g. `configuration` or `io`.
    pub kind: String,
    pub message: String,
    /// True when the request itself was at fault.
    pub validation: bool,
}
