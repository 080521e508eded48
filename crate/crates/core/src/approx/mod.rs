//! Value and policy approximators.

mod checkpoint;
pub mod mlp;
mod policy;
mod value;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use mlp::MlpShape;
pub use policy::{weighted_log_softmax, PolicyDensity, PolicyNet, UniformPolicy};
pub(crate) use policy::check_grid;
pub use value::{DerivativeBundle, DirectionPlan, FnValue, MlpValueNet, QuadraticValue, ValueFunction, ValueJets};
pub(crate) use value::check_state;
