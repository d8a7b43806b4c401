/// Per-point cost consistent with ~6.25 GB/year for 10 devices reporting 10
/// measurements every 20 s.
pub const BYTES_PER_POINT_CEILING: f64 = 40.0;

/// Projected bytes for `devices × measurements_per_device` series sampled
/// every `interval_s` for `duration_s`.
pub fn estimate_storage(
    devices: u64,
    measurements_per_device: u64,
    interval_s: f64,
    duration_s: f64,
    bytes_per_point: f64,
) -> f64 {
    if devices == 0 || measurements_per_device == 0 {
        return 0.0;
    }
    assert!(interval_s > 0.0, "interval must be positive");
    let series = (devices * measurements_per_device) as f64;
    series * (duration_s / interval_s) * bytes_per_point
}

#[cfg(test)]
mod tests {
    use super::*;

    const YEAR_S: f64 = 365.0 * 86_400.0;

    #[test]
    fn ten_by_ten_for_a_year() {
        let bytes = estimate_storage(10, 10, 20.0, YEAR_S, 39.6);
        assert!((bytes / 1e9 - 6.25).abs() < 0.01, "{bytes}");
    }

    #[test]
    fn degenerate_and_daily() {
        assert_eq!(estimate_storage(0, 10, 20.0, YEAR_S, 39.6), 0.0);
        assert_eq!(estimate_storage(1, 1, 1.0, 86_400.0, 40.0), 3_456_000.0);
    }
}
