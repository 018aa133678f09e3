use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training state error: {0}")]
    TrainingState(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("training diverged at step {step} (lr {lr}): loss_g={loss_g} loss_d={loss_d}")]
    Diverged {
        step: u64,
        lr: f64,
        loss_g: f64,
        loss_d: f64,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
