pub const MAX_RECENCY_HOURS: usize = 720;
pub const POPULARITY_BINS: usize = 200;

/// Whole hours between publication and `reference_time`, clamped to
/// `[0, max_hours]`.
pub fn quantize_recency(publish_time: i64, reference_time: i64, max_hours: usize) -> usize {
    if reference_time <= publish_time {
        return 0;
    }
    let hours = (reference_time - publish_time) / 3600;
    (hours as u64).min(max_hours as u64) as usize
}

/// Uniform bin of a popularity value in `[0, 1]`; 1.0 lands in the last bin.
pub fn quantize_popularity(value: f64, bins: usize) -> usize {
    let x = if value.is_nan() {
        0.0
    } else {
        value.clamp(0.0, 1.0)
    };
    ((x * bins as f64).floor() as usize).min(bins - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recency_examples() {
        assert_eq!(quantize_recency(1000, 1000 + 90 * 60, 720), 1);
        assert_eq!(quantize_recency(1000, 1000, 720), 0);
        assert_eq!(quantize_recency(1000, 1000 + 45 * 24 * 3600, 720), 720);
        assert_eq!(quantize_recency(5000, 1000, 720), 0);
    }

    #[test]
    fn popularity_examples() {
        assert_eq!(quantize_popularity(0.0, 200), 0);
        assert_eq!(quantize_popularity(1.0, 200), 199);
        assert_eq!(quantize_popularity(0.081, 200), 16);
        assert_eq!(quantize_popularity(-3.0, 200), 0);
        assert_eq!(quantize_popularity(f64::NAN, 200), 0);
    }

    proptest! {
        #[test]
        fn recency_is_monotone_and_bounded(p in 1i64..10_000_000, a in -1_000_000i64..100_000_000, b in 0i64..100_000_000) {
            let r1 = quantize_recency(p, p + a, 720);
            let r2 = quantize_recency(p, p + a + b, 720);
            prop_assert!(r1 <= r2);
            prop_assert!(r2 <= 720);
        }

        #[test]
        fn popularity_is_monotone_and_bounded(x in -1.0f64..2.0, d in 0.0f64..1.0) {
            let b1 = quantize_popularity(x, 200);
            let b2 = quantize_popularity(x + d, 200);
            prop_assert!(b1 <= b2);
            prop_assert!(b2 < 200);
        }
    }
}
