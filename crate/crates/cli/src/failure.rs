//! Error classification into process exit codes.

use std::fmt;
use std::io;
use std::path::Path;

use npcc::detector::DetectorError;
use npcc::evaluate::EvaluateError;
use npcc::formats::FormatError;
use npcc::graph::GraphError;
use npcc::metrics::MetricsError;
use npcc::simulate::SimulateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage = 2,
    Io = 3,
    Schema = 4,
    Validation = 5,
    Compute = 6,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

pub type Outcome<T> = Result<T, Failure>;

impl Failure {
    pub fn new(kind: Kind, message: impl fmt::Display) -> Self {
        Failure {
            kind,
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        Failure::new(Kind::Usage, message)
    }

    pub fn validation(message: impl fmt::Display) -> Self {
        Failure::new(Kind::Validation, message)
    }

    pub fn schema(message: impl fmt::Display) -> Self {
        Failure::new(Kind::Schema, message)
    }

    /// Prefixes the message with the file it concerns.
    pub fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Diagnostics stay on one line.
        let flat: String = self
            .message
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        f.write_str(&flat)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::new(Kind::Io, e)
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Schema { .. } => Failure::schema(e),
            FormatError::Io(io) => io.into(),
        }
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        let kind = match e {
            GraphError::MalformedEdgeLine { .. } => Kind::Schema,
            GraphError::Io(_) => Kind::Io,
            GraphError::InvalidNode { .. } => Kind::Compute,
        };
        Failure::new(kind, e)
    }
}

impl From<DetectorError> for Failure {
    fn from(e: DetectorError) -> Self {
        let kind = match e {
            DetectorError::NonIncreasingTick { .. }
            | DetectorError::CheckpointVersion(_)
            | DetectorError::Checkpoint(_) => Kind::Schema,
            DetectorError::EmptyHistory | DetectorError::NegativeTau(_) => Kind::Compute,
            DetectorError::ZeroWindow | DetectorError::BadLambda(_) => Kind::Validation,
        };
        Failure::new(kind, e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let kind = match e {
            MetricsError::ZeroSampleSize => Kind::Validation,
            _ => Kind::Compute,
        };
        Failure::new(kind, e)
    }
}

impl From<SimulateError> for Failure {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::Metrics(m) => m.into(),
            SimulateError::Exhausted => Failure::new(Kind::Compute, e),
            _ => Failure::validation(e),
        }
    }
}

impl From<EvaluateError> for Failure {
    fn from(e: EvaluateError) -> Self {
        match e {
            EvaluateError::Detector(d) => d.into(),
            EvaluateError::LengthMismatch { .. } | EvaluateError::TickMismatch { .. } => {
                Failure::schema(e)
            }
            EvaluateError::EmptyGrid | EvaluateError::UnsortedGrid => Failure::validation(e),
            EvaluateError::UndefinedRate(_) => Failure::new(Kind::Compute, e),
        }
    }
}
