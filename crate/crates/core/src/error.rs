use thiserror::Error;

pub type Result<T, E = ChokeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ChokeError {
    #[error("line {line}: malformed json: {message}")]
    MalformedJson { line: usize, message: String },

    #[error("line {line}: schema violation at `{field}`: {message}")]
    SchemaViolation { line: usize, field: String, message: String },

    #[error("generation has no tokens")]
    EmptyGeneration,

    #[error("token step has {0} alternatives, at least 2 required")]
    InsufficientAlternatives(usize),

    #[error("no samples to score")]
    EmptySamples,

    #[error("equivalence oracle failed: {0}")]
    OracleFailure(String),

    #[error("invalid cluster assignment: {0}")]
    InvalidClusters(String),

    #[error("{0} set is empty")]
    EmptySet(&'static str),

    #[error("no score for `{metric}` on question {question_id}")]
    MissingScore { question_id: String, metric: String },

    #[error("metric `{0}` was not scored for every labeled record")]
    MissingMetric(String),

    #[error("subset violation: {0}")]
    SubsetViolation(String),

    #[error("cannot draw {wanted} items from a population of {population}")]
    SizeExceedsPopulation { wanted: usize, population: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("cannot write output: {0}")]
    UnwritableOutput(String),

    #[error("upstream artifact missing: {0} (run the producing command first)")]
    UpstreamArtifactMissing(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
