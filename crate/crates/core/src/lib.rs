//! Two-tier KV-cache management and a layer-wise decode pipeline simulator.
//!
//! * [`vector`]: token importance scoring and an exhaustive top-k.
//! * [`pools`]: per-layer CPU/SSD pools with hit-rate pinning and balanced
//!   bidirectional migration.
//! * [`hie`]: split importance evaluation with streamed score blocks.
//! * [`pipeline`]: device models, the capacity-ratio planner and the
//!   discrete-event simulator.
//! * [`workload`]: synthetic decode traces and the trace file format.
//! * [`experiment`]: parameter sweeps and CSV reports.

pub mod error;
pub mod experiment;
pub mod hie;
pub mod pipeline;
pub mod pools;
pub mod vector;
pub mod workload;

pub use error::{Error, Result};
pub use hie::{run_hie, HieCostReport, MergeState, ScoreBlock, SelectionResult};
pub use pools::{bytes_moved, KvEntry, MigrationReport, PoolConfig, PoolState, Tier};
pub use vector::{oracle_top_k, score_token, ImportanceScore, KeyVec, QueryVec, Shape, TokenPos};
