use std::fmt;

use kgpsl::annotate::AnnotateError;
use kgpsl::config::ConfigError;
use kgpsl::eval::EvalError;
use kgpsl::ground::GroundError;
use kgpsl::infer::InferError;
use kgpsl::kg::GraphError;
use kgpsl::learn::LearnError;
use kgpsl::rules::RuleError;

pub const EMPTY: u8 = 1;
pub const INVALID: u8 = 2;
pub const NUMERICAL: u8 = 3;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Failure::new(INVALID, message)
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn with_code(code: u8, e: impl fmt::Display) -> Failure {
    Failure::new(code, e.to_string())
}

fn ground_code(e: &GroundError) -> u8 {
    match e {
        GroundError::EmptyTargets => EMPTY,
        _ => INVALID,
    }
}

fn infer_code(e: &InferError) -> u8 {
    match e {
        InferError::NoVariables => EMPTY,
        InferError::NonFinite(_) => NUMERICAL,
        InferError::Ground(g) => ground_code(g),
        _ => INVALID,
    }
}

fn learn_code(e: &LearnError) -> u8 {
    match e {
        LearnError::NoGroundings => EMPTY,
        LearnError::NonFinite(_) => NUMERICAL,
        LearnError::Ground(g) => ground_code(g),
        _ => INVALID,
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::NoPositives | EvalError::TooSmall(_) => EMPTY,
        EvalError::Ground(g) => ground_code(g),
        EvalError::Infer(i) => infer_code(i),
        EvalError::Learn(l) => learn_code(l),
        _ => INVALID,
    }
}

impl From<GroundError> for Failure {
    fn from(e: GroundError) -> Self {
        with_code(ground_code(&e), e)
    }
}

impl From<InferError> for Failure {
    fn from(e: InferError) -> Self {
        with_code(infer_code(&e), e)
    }
}

impl From<LearnError> for Failure {
    fn from(e: LearnError) -> Self {
        with_code(learn_code(&e), e)
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        with_code(eval_code(&e), e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match &e {
            ConfigError::Eval(inner) => eval_code(inner),
            _ => INVALID,
        };
        with_code(code, e)
    }
}

impl From<AnnotateError> for Failure {
    fn from(e: AnnotateError) -> Self {
        let code = match e {
            AnnotateError::Empty => EMPTY,
            _ => INVALID,
        };
        with_code(code, e)
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        with_code(INVALID, e)
    }
}

impl From<RuleError> for Failure {
    fn from(e: RuleError) -> Self {
        with_code(INVALID, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        with_code(INVALID, e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        with_code(INVALID, e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        with_code(INVALID, e)
    }
}
