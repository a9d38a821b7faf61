//! The predictive-representation language model: configuration, forward
//! passes and the binary checkpoint format.

mod checkpoint;
mod config;
mod prl;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{HeadKind, ModelConfig};
pub use prl::{
    AuxOutput, Bound, Carry, Dropout, Param, ParamGroup, PrlModel, StackState, TraceFeed, TraceMode,
};
