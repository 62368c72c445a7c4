use std::fmt;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Malformed or missing input, bad arguments. Exit code 2.
    BadInput,
    /// No dictionary pairs survived vocabulary filtering. Exit code 3.
    EmptyDictionary,
    /// Anything else, e.g. divergence or an output write failure. Exit code 1.
    Failure,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Failure => 1,
            Kind::BadInput => 2,
            Kind::EmptyDictionary => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Failure => "failure",
            Kind::BadInput => "bad-input",
            Kind::EmptyDictionary => "empty-dictionary",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::BadInput,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Failure,
            message: message.into(),
        }
    }

    /// Wraps a library error raised while handling `context` (usually a path).
    pub fn core(context: impl fmt::Display, e: xling::Error) -> Self {
        let kind = match e {
            xling::Error::Diverged { .. } | xling::Error::NonFinite(_) => Kind::Failure,
            _ => Kind::BadInput,
        };
        CliError {
            kind,
            message: format!("{context}: {e}"),
        }
    }

    /// `error[<code>] <kind>: <message>` on a single line.
    pub fn diagnostic(&self) -> String {
        let flat = self.message.replace(['\n', '\r'], " ");
        format!("error[{}] {}: {flat}", self.kind.code(), self.kind.name())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
