use std::fmt;
use std::process::ExitCode;

use reply_suggest::corpus::CorpusError;
use reply_suggest::generation::GenerationError;
use reply_suggest::harness::{ErrorClass, HarnessError};
use reply_suggest::langid::LangIdError;
use reply_suggest::retrieval::RetrievalError;

/// An error together with the exit code it maps to.
pub struct Failure {
    pub class: ErrorClass,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(msg: impl fmt::Display) -> Self {
        Failure {
            class: ErrorClass::Config,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Failure {
            class: ErrorClass::Data,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.class {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn with(class: ErrorClass, e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        class,
        error: e.into(),
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        with(e.class(), e)
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let class = if matches!(e, CorpusError::Config(_)) {
            ErrorClass::Config
        } else {
            ErrorClass::Data
        };
        with(class, e)
    }
}

impl From<RetrievalError> for Failure {
    fn from(e: RetrievalError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<GenerationError> for Failure {
    fn from(e: GenerationError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<LangIdError> for Failure {
    fn from(e: LangIdError) -> Self {
        let class = match e {
            LangIdError::TooFewLanguages(_) | LangIdError::InvalidParameter(_) => {
                ErrorClass::Config
            }
            LangIdError::Format { .. } | LangIdError::Io(_) => ErrorClass::Data,
        };
        with(class, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        with(ErrorClass::Data, e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        with(ErrorClass::Data, e)
    }
}

/// Adds a context line while keeping the exit class.
pub trait Context<T> {
    fn context(self, msg: impl fmt::Display) -> Result<T, Failure>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, msg: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| {
            let f: Failure = e.into();
            Failure {
                class: f.class,
                error: f.error.context(msg.to_string()),
            }
        })
    }
}
