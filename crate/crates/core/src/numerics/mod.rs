//! Dense tensors, parameter storage, reverse-mode gradients, Adam and the
//! plateau learning-rate schedule.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use optim::{adam_step, LrSchedule, OptimizerState};
pub use params::{name_rng, seeded_init, InitScheme, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
