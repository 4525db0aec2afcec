//! Selective-sampling SGD training driven by the minimal margin score (MMS):
//! the distance, in penultimate-feature space, from a sample to the boundary
//! between its two highest-scoring classes. Each step forward-passes a
//! candidate pool, keeps the samples with the smallest margins, and trains
//! on those alone. Hard-negative (highest loss) and entropy selection are
//! provided as baselines.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod schedule;
pub mod scoring;
pub mod selection;
pub mod trainer;

pub use config::{DataSource, RunConfig};
pub use data::{Dataset, PoolPolicy, PoolSpec, Split};
pub use error::{Error, Result};
pub use model::{Architecture, ForwardResult, LinearHead, NetworkParams};
pub use numerics::{Matrix, Stream, Vector};
pub use schedule::LrSchedule;
pub use scoring::{Direction, ScoredPool};
pub use selection::{SelectionResult, Strategy};
pub use trainer::{MetricsRecord, Trainer};
