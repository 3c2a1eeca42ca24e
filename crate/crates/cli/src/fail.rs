use std::fmt;

use tgraphx::ErrorKind;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<tgraphx::Error> for Failure {
    fn from(e: tgraphx::Error) -> Self {
        let msg = e.to_string();
        match e.kind() {
            ErrorKind::Usage => Failure::Usage(msg),
            ErrorKind::Data => Failure::Data(msg),
            ErrorKind::Numeric => Failure::Numeric(msg),
        }
    }
}

/// Attaches a path to I/O errors outside the library.
pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}
