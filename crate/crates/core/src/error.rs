use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite output from module {module_index}")]
    NumericModule { module_index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error(
        "rank-deficient probe design ({rank} of {dim} columns); increase the probe count J or use a positive ridge"
    )]
    RankDeficient { rank: usize, dim: usize },

    #[error("unknown tap `{0}`")]
    UnknownTap(String),

    #[error("similarity undefined: {0}")]
    UndefinedSimilarity(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("jacobians vary across base points (relative spread {spread:.3e}); map is not linear")]
    NotLinear { spread: f64 },

    #[error("factorization not identifiable: {0}")]
    Unidentifiable(String),

    #[error("base points lie in a proper affine subspace")]
    DegenerateSupport,

    #[error("could not sample a well-conditioned reparameterization after {attempts} attempts")]
    RejectionExhausted { attempts: usize },

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data file error: {0}")]
    DataFile(String),

    #[error("at base point {index}: {source}")]
    AtBase {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("in stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_base(index: usize, source: Error) -> Self {
        Error::AtBase {
            index,
            source: Box::new(source),
        }
    }

    pub fn in_stage(stage: impl Into<String>, source: Error) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(source),
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 numeric, 4 data file.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::DataFile(_) | Error::Csv(_) | Error::Io(_) => 4,
            Error::AtBase { source, .. } | Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
