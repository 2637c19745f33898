//! Inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` records shaped like `blob;time;project`, in random order.
pub fn timeline_records(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut blob = [0u8; 20];
            rng.fill(&mut blob);
            let hex: String = blob.iter().map(|b| format!("{b:02x}")).collect();
            format!(
                "{hex};{:010};owner{}_repo",
                rng.gen_range(1_000_000_000..1_700_000_000u64),
                rng.gen_range(0..5_000)
            )
        })
        .collect()
}

/// `n` project names in the flattened owner_repo form.
pub fn project_names(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| format!("user{}_{}-{i}", rng.gen_range(0..100_000), rng.gen_range(0..100)))
        .collect()
}
