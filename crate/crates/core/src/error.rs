use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{name} = {value} is not a probability in [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("invalid correlation interval [{lower}, {upper}]")]
    InvalidInterval { lower: f64, upper: f64 },

    #[error("rho = {rho} lies outside the feasible range [{feasible_lower}, {feasible_upper}]")]
    InfeasibleRho {
        rho: f64,
        feasible_lower: f64,
        feasible_upper: f64,
    },

    #[error("degenerate marginal (mu0 = {mu0}, mu1 = {mu1}): correlation is undefined")]
    DegenerateMarginal { mu0: f64, mu1: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("no feasible joint distribution: {0}")]
    EmptyFeasibleSet(String),

    #[error("invalid joint table: {0}")]
    InvalidJoint(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("logistic fit diverged (coefficient norm {norm:.3e}); data look separable")]
    SeparationDetected { norm: f64 },

    #[error("labels are constant; logistic fit needs both classes")]
    DegenerateLabels,

    #[error("fold {fold}: {reason} (try fewer folds)")]
    FoldDegenerate { fold: usize, reason: String },

    #[error("nuisance fit is misaligned with the data: {0}")]
    MisalignedFit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Schema { row: Option<usize>, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error object.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidProbability { .. } => "invalid_probability",
            Error::InvalidInterval { .. } => "invalid_interval",
            Error::InfeasibleRho { .. } => "infeasible_rho",
            Error::DegenerateMarginal { .. } => "degenerate_marginal",
            Error::NotApplicable(_) => "not_applicable",
            Error::EmptyFeasibleSet(_) => "empty_feasible_set",
            Error::InvalidJoint(_) => "invalid_joint",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::SeparationDetected { .. } => "separation_detected",
            Error::DegenerateLabels => "degenerate_labels",
            Error::FoldDegenerate { .. } => "fold_degenerate",
            Error::MisalignedFit(_) => "misaligned_fit",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Replication { .. } => "replication",
            Error::Parse { .. } => "parse_error",
            Error::Schema { .. } => "schema_error",
            Error::Io(_) => "io_error",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
