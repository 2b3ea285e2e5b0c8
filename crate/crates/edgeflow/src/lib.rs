//! Dynamic CNN inference on simulated edge hardware.
//!
//! Three execution modes over the same LeNet-5 pipeline:
//!
//! * full parameter streaming — every layer's weights arrive over the wire
//!   at run time;
//! * partial streaming — selected layers stream while the rest stay
//!   resident on-chip, trading bandwidth for memory;
//! * filter-split execution — a convolution too large for the device runs
//!   as sequentially loaded filter chunks on a simulated
//!   partial-reconfiguration slot, partial feature maps cascaded back
//!   together.
//!
//! The crate ships the tensor kernels, the fixed-point wire protocol, the
//! placement planners, a resource-budgeted device simulator, a multi-node
//! pipeline simulator, and the data/training/report harness behind the
//! `edgeflow` CLI.

pub mod edgesim;
pub mod harness;
pub mod model;
pub mod partition;
pub mod prsim;
pub mod quantstream;
pub mod tensor;
