//! Detection of whole-file copy reuse across git repositories.
//!
//! For every blob the pipeline finds the first time it appeared in every
//! deforked project, elects the earliest project as its origin and emits one
//! copy instance per later project. Each step runs over 128 key-partitioned,
//! sorted, compressed record files, so every step can run as independent
//! shards.

pub mod defork;
pub mod detect;
pub mod engine;
pub mod error;
pub mod export;
pub mod fixture;
pub mod ingest;
pub mod oid;
pub mod oracle;
pub mod pipeline;
pub mod timeline;

pub use defork::{build_fork_components, ForkMap};
pub use detect::{CopyInstance, ExclusionList};
pub use engine::{partition_by_name, partition_by_sha1, KeySpec, PartitionId, SortConfig, SortedRun, PARTITIONS};
pub use error::{Error, Result};
pub use ingest::{BlobEvent, CommitMeta, CorpusManifest};
pub use oid::ObjectId;
pub use oracle::{oracle_copy_instances, OracleResult};
pub use pipeline::{run, verify, PipelineConfig, RunReport, Stage, VerifyReport};
pub use timeline::{sanitize_times, TimeBounds, TimelineEntry};
