//! Routing keys to one of 128 shards.
//!
//! Object keys use the top seven bits of the leading sha1 byte, which keeps
//! shard sizes even because sha1 output is uniform. Project names are not
//! uniform, so they go through a 32-bit FNV-1a digest first and take its top
//! seven bits.

use std::fmt;

use crate::error::{Error, Result};
use crate::oid::is_sha1_hex;

pub const PARTITIONS: usize = 128;

const FNV_OFFSET_BASIS: u32 = 0x811c_9dc5;
const FNV_PRIME: u32 = 0x0100_0193;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionId(u8);

impl PartitionId {
    pub fn new(value: usize) -> Result<Self> {
        if value < PARTITIONS {
            Ok(PartitionId(value as u8))
        } else {
            Err(Error::Config(format!("partition {value} out of range 0..=127")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = PartitionId> + Clone {
        (0..PARTITIONS as u8).map(PartitionId)
    }

    /// `<map>.<NNN>.gz`
    pub fn file_name(self, map: &str) -> String {
        format!("{map}.{:03}.gz", self.0)
    }
}

impl fmt::Display for PartitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03}", self.0)
    }
}

pub fn partition_by_sha1(key: &str) -> Result<PartitionId> {
    if !is_sha1_hex(key) {
        return Err(Error::InvalidSha1(key.to_owned()));
    }
    let first = u8::from_str_radix(&key[..2], 16).map_err(|_| Error::InvalidSha1(key.to_owned()))?;
    Ok(PartitionId(first >> 1))
}

pub fn fnv1a32(bytes: &[u8]) -> u32 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u32::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn partition_by_name(name: &str) -> PartitionId {
    PartitionId((fnv1a32(name.as_bytes()) >> 25) as u8)
}
