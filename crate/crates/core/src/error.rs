use std::fmt;

/// Source position of a surface form, 1-based.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("type error: {0}")]
    Type(String),

    #[error("parse error at {pos}: {msg}")]
    Parse { pos: Pos, msg: String },

    #[error("lowering error: {0}")]
    Lower(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("weight assignment has {got} entries but {needed} are required")]
    WeightArity { needed: usize, got: usize },

    #[error("weight {0} is outside [0, 1]")]
    WeightRange(f64),

    #[error("BDD handle belongs to a different manager")]
    ForeignHandle,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("target value {0} is not in the support of the feature")]
    NotInSupport(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
