//! Partitioned external-memory primitives: key routing, external sort,
//! k-way merge and merge-join over compressed line-record files.

pub mod join;
pub mod merge;
pub mod partition;
pub mod record;
pub mod runfile;
pub mod sort;

pub use join::{merge_join, JoinStats, MergeJoin};
pub use merge::{dedup_adjacent, k_way_merge, Groups, KWayMerge, RecordIter};
pub use partition::{fnv1a32, partition_by_name, partition_by_sha1, PartitionId, PARTITIONS};
pub use record::{KeySpec, SEP};
pub use runfile::{RunReader, RunWriter};
pub use sort::{external_sort, sort_records, SortConfig, SortedRun};
