//! Content-aware super-resolution model zoo: patch features, a clustered
//! lookup table of fine-tuned models, online per-frame model selection, and
//! a trace-driven delivery simulator.

pub mod clustering;
pub mod config;
pub mod delivery;
pub mod edges;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod pixels;
pub mod scheduler;
pub mod seed;
pub mod sim;
pub mod zoo;

pub use config::{Config, OutputHeader};
pub use encoder::{BuiltinEncoder, Embedding, PatchEncoder};
pub use error::{Error, Result};
pub use pixels::{Frame, PatchView, SegmentId};
pub use scheduler::{SchedulerParams, Scheduler};
pub use zoo::{LookupTable, ModelId, ZooEntry};
