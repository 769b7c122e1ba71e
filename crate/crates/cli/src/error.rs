use std::fmt;

use medrag_core::corpus::CorpusError;
use medrag_core::eval::EvalError;
use medrag_core::index::IndexError;
use medrag_core::providers::ProviderError;
use medrag_core::retrieval::RetrievalError;

/// Error class; each maps to its own exit code. Usage errors exit 2 (from
/// the argument parser); panics exit 101.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Input,
    Provider,
    Partial,
    Interrupted,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Config => 3,
            Kind::Input => 4,
            Kind::Provider => 5,
            Kind::Partial => 6,
            Kind::Interrupted => 7,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Input => "input",
            Kind::Provider => "provider",
            Kind::Partial => "partial",
            Kind::Interrupted => "interrupted",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub msg: String,
}

impl CliError {
    pub fn new(kind: Kind, msg: impl Into<String>) -> Self {
        Self {
            kind,
            msg: msg.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::new(Kind::Config, msg)
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Self::new(Kind::Input, msg)
    }

    pub fn context(mut self, ctx: &str) -> Self {
        self.msg = format!("{ctx}: {}", self.msg);
        self
    }
}

/// `error[kind]: message` on one line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.msg.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {one_line}", self.kind.name())
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        let kind = match e {
            ProviderError::Config(_) => Kind::Config,
            _ => Kind::Provider,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        let kind = match e {
            IndexError::Provider { .. } => Kind::Provider,
            _ => Kind::Input,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Config(m) => Self::config(m),
            RetrievalError::Index(e) => e.into(),
            RetrievalError::Provider(e) => e.into(),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let kind = match e {
            CorpusError::InvalidParams(_) => Kind::Config,
            _ => Kind::Input,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Retrieval(e) => e.into(),
            EvalError::Provider(e) => e.into(),
            EvalError::Config(_) | EvalError::InvalidArgument(_) => Self::config(e.to_string()),
            EvalError::Interrupted { .. } => Self::new(Kind::Interrupted, e.to_string()),
            EvalError::NoPairs { .. } | EvalError::Empty(_) | EvalError::QidMismatch(_) => {
                Self::input(e.to_string())
            }
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}
