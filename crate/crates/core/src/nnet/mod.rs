//! Dense numerical substrate for the corrector: tensors, LSTM stacks,
//! attention, gradient checking and the optimiser.

pub mod attention;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use attention::{luong_attention, Attention, AttentionStep};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use lstm::{LstmLayer, LstmStack, LstmState, StackTrace};
pub use optim::Adam;
pub use tensor::{ParamSet, Tensor};

/// Scale of the uniform initialiser.
pub const INIT_SCALE: f64 = 0.08;
