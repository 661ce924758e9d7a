//! Dense feed-forward networks for the generator and the two
//! discriminators, plus their optimizers.

mod mlp;
mod optim;

pub use mlp::{init_params, mlp_forward, Activation, Layer, Mlp, MlpParams, MlpSpec, LEAKY_SLOPE};
pub use optim::{OptimizerKind, OptimizerState};
