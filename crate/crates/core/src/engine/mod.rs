//! A small deterministic neural-network engine: layers with hand-written
//! backward passes, softmax/NLL loss, RMSprop, a finite-difference gradient
//! checker and the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::Container;
pub use gradcheck::{gradient_check, Corrupted, Fragment, GradCheckOptions, GradCheckReport, Objective, SequentialFragment};
pub use layers::{Init, Layer, LayerKind, LayerSpec, Sequential};
pub use loss::{class_probabilities, nll_loss, softmax_nll_batch};
pub use ops::{Activation, Mode};
pub use optim::{RmsProp, RmsPropConfig};
pub use tensor::{Param, Tensor};
