mod common;

use tempfile::TempDir;

#[test]
fn external_sort_million_records_with_spills() {
    let dir = TempDir::new().unwrap();
    // 32 MB of records against a 1 MiB budget: well over 64 spill runs
    common::check_external_sort(dir.path(), 1_000_000, 1 << 20, 7).unwrap();
}

#[test]
fn external_sort_small_inputs() {
    let dir = TempDir::new().unwrap();
    for (n, budget) in [(0, 1 << 10), (1, 1 << 10), (5_000, 4 << 10), (5_000, 64 << 20)] {
        common::check_external_sort(dir.path(), n, budget, n as u64).unwrap();
    }
}

#[test]
fn merge_join_matches_nested_loop() {
    let dir = TempDir::new().unwrap();
    for seed in 0..100 {
        common::check_merge_join(dir.path(), seed).unwrap();
    }
}

#[test]
fn k_way_merge_matches_concatenate_and_sort() {
    let dir = TempDir::new().unwrap();
    for seed in 0..100 {
        common::check_k_way_merge(dir.path(), seed).unwrap();
    }
}
