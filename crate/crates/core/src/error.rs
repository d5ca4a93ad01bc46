use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("optimization diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("Hessian is numerically singular ({detail}); increase damping or lambda_reg")]
    Singular { detail: String },

    #[error(
        "LiSSA diverged at iteration {iteration}: |h| = {norm:.3e} exceeds {limit:.3e}; \
         increase scale or damping"
    )]
    LissaDiverged {
        iteration: usize,
        norm: f64,
        limit: f64,
    },

    #[error("inverse HVP was computed for model {expected:#018x}, not {found:#018x}")]
    StaleInverseHvp { expected: u64, found: u64 },

    #[error("{what} needs {requested} entries, cap is {cap}; {hint}")]
    CapExceeded {
        what: &'static str,
        requested: usize,
        cap: usize,
        hint: &'static str,
    },

    #[error("empty dataset")]
    EmptyDataset,

    /// `index` is the zero-based position of the offending record in the
    /// input sequence; file readers translate it to a line number.
    #[error("record {index} (instance {instance_id}): field `{field}`: {reason}")]
    Record {
        index: usize,
        instance_id: u64,
        field: &'static str,
        reason: String,
    },

    #[error("infeasible noise spec: {0}")]
    InfeasibleSpec(String),

    #[error("need at least {needed} rankable predictions, have {available}")]
    NotEnoughPredictions { needed: usize, available: usize },

    #[error("recall is undefined: no positive (non-NA) gold bags")]
    NoPositiveBags,

    #[error("gold labels unavailable: {0}")]
    GoldUnavailable(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
