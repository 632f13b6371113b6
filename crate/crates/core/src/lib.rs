pub mod agents;
pub mod categorical;
pub mod error;
pub mod harness;
pub mod imagination;
pub mod losses;
pub mod mdp;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod world_model;


/// Double-precision aliases for the common case.
pub type Mdp = mdp::TabularMdp<f64>;
pub type DynamicsModel = world_model::SoftmaxDynamicsModel<f64>;
pub type Policy = imagination::SoftmaxPolicy<f64>;
pub type Batch = imagination::ImaginedBatch<f64>;
