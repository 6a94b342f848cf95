//! Library side of the `pdnet` command-line tool.

pub mod commands;
pub mod config;
pub mod filters;

/// Command failure, mapped to the process exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, model or inputs: exit status 1.
    Validation(anyhow::Error),
    /// Failure while doing the work: exit status 2.
    Runtime(anyhow::Error),
    /// Gradients disagree with finite differences: exit status 3.
    Gradcheck(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Gradcheck(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "invalid input: {e:#}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
            Failure::Gradcheck(m) => write!(f, "gradcheck failed: {m}"),
        }
    }
}
