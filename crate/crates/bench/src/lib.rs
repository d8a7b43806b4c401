//! Fixtures shared by the benchmarks.

use labnet_core::wire::{DEVICE_TAG, ROOM_TAG};
use labnet_core::DataPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const T0: i64 = 1_600_000_000_000_000_000;
pub const STEP_NS: i64 = 20_000_000_000;

/// `n` three-field temperature points spread over `rooms` rooms, one every
/// 20 s per room.
pub fn temperature_points(n: usize, rooms: usize, seed: u64) -> Vec<DataPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let room = i % rooms;
            DataPoint::new("temperature")
                .tag(ROOM_TAG, format!("Lab{room:02}"))
                .tag(DEVICE_TAG, "Dev01")
                .field("T1", 21.0 + rng.gen::<f64>())
                .field("T2", 22.0 + rng.gen::<f64>())
                .field("T3", 25.0 + rng.gen::<f64>())
                .at(T0 + (i / rooms) as i64 * STEP_NS)
        })
        .collect()
}

/// White noise plus a sinusoid, `n` samples.
pub fn signal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| (i as f64 * 0.05).sin() + rng.gen::<f64>() - 0.5)
        .collect()
}
