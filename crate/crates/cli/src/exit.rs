//! Failure classes and their process exit codes.

use std::fmt;

use mpvqa::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Config,
    Data,
    Numeric,
}

impl Class {
    pub fn code(self) -> u8 {
        match self {
            Class::Config => 2,
            Class::Data => 3,
            Class::Numeric => 4,
        }
    }
}

/// An error tagged with an explicit class.
#[derive(Debug)]
pub struct Tagged {
    pub class: Class,
    pub message: String,
}

impl fmt::Display for Tagged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Tagged {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Tagged {
        class: Class::Config,
        message: message.into(),
    }
    .into()
}

pub fn data(message: impl Into<String>) -> anyhow::Error {
    Tagged {
        class: Class::Data,
        message: message.into(),
    }
    .into()
}

pub fn numeric(message: impl Into<String>) -> anyhow::Error {
    Tagged {
        class: Class::Numeric,
        message: message.into(),
    }
    .into()
}

fn library_class(e: &Error) -> Class {
    match e {
        Error::Config(_) | Error::Template(_) | Error::BankCapacity(_) | Error::Path { .. } => Class::Config,
        Error::Training(_) | Error::Shape(_) => Class::Numeric,
        _ => Class::Data,
    }
}

/// The first classified error in the chain decides; anything unclassified
/// (malformed JSON, I/O) is a data failure.
pub fn classify(err: &anyhow::Error) -> Class {
    for cause in err.chain() {
        if let Some(t) = cause.downcast_ref::<Tagged>() {
            return t.class;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return library_class(e);
        }
    }
    Class::Data
}

/// A path that must exist before any work starts.
pub fn require(path: &std::path::Path, what: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}
