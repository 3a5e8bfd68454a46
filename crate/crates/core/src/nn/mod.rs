//! Numeric substrate: tensors, named parameters, FC blocks, a reverse-mode
//! tape, Adam, and a finite-difference gradient checker.

mod adam;
mod fc;
mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use fc::{
    apply_bn_updates, declare_fc_stack, fc_stack_forward, record_fc_stack, Activation, BnUpdate,
    FcStackConfig, Mode, BN_EPS,
};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use ops::{bce_loss, sigmoid, softmax_in_place, softmax_rows, BCE_EPS};
pub use params::{glorot_uniform, normal_init, ParamEntry, ParameterStore};
pub use tape::{BatchStats, DenseSlot, NodeId, Tape};
pub use tensor::{axpy, dot, Tensor2};
