//! Recommendation diversity: intra-list average distance and new-topic ratio.

use std::collections::HashSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ilad {
    pub value: f64,
    /// Pairs skipped because one side had zero norm.
    pub excluded_pairs: usize,
}

/// Mean pairwise cosine distance over the listed vectors. Lists shorter
/// than two (or with no usable pair) score 0.
pub fn ilad(vectors: &[&[f64]]) -> Ilad {
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let (mut total, mut pairs, mut excluded) = (0.0, 0usize, 0usize);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                excluded += 1;
                continue;
            }
            let dot: f64 = vectors[i].iter().zip(vectors[j]).map(|(a, b)| a * b).sum();
            total += 1.0 - dot / (norms[i] * norms[j]);
            pairs += 1;
        }
    }
    Ilad {
        value: if pairs == 0 {
            0.0
        } else {
            total / pairs as f64
        },
        excluded_pairs: excluded,
    }
}

/// Distinct topics among the clicked items of the top-`k` list that never
/// appear in the history, divided by `k`.
///
/// `top` holds `(topic, clicked)` for the ranked list, best first.
pub fn new_topic_ratio<'a>(
    top: &[(&'a str, bool)],
    history_topics: &HashSet<&'a str>,
    k: usize,
) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let novel: HashSet<&str> = top
        .iter()
        .take(k)
        .filter(|(t, clicked)| *clicked && !history_topics.contains(t))
        .map(|(t, _)| *t)
        .collect();
    novel.len() as f64 / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ilad_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ilad(&[&a, &a, &a]).value, 0.0);
        assert_eq!(ilad(&[&[1.0, 0.0], &[0.0, 3.0]]).value, 1.0);
        assert_eq!(ilad(&[&a]).value, 0.0);

        let (x, y, z) = ([1.0, 0.0], [1.0, 1.0], [-1.0, 0.0]);
        let cos = |p: &[f64; 2], q: &[f64; 2]| {
            (p[0] * q[0] + p[1] * q[1])
                / ((p[0] * p[0] + p[1] * p[1]).sqrt() * (q[0] * q[0] + q[1] * q[1]).sqrt())
        };
        let expected = ((1.0 - cos(&x, &y)) + (1.0 - cos(&x, &z)) + (1.0 - cos(&y, &z))) / 3.0;
        assert!((ilad(&[&x, &y, &z]).value - expected).abs() < 1e-15);

        let r = ilad(&[&x, &[0.0, 0.0], &y]);
        assert_eq!(r.excluded_pairs, 2);
        assert!((r.value - (1.0 - cos(&x, &y))).abs() < 1e-15);
    }

    #[test]
    fn new_topic_ratio_examples() {
        let hist: HashSet<&str> = ["a", "b"].into_iter().collect();
        assert_eq!(new_topic_ratio(&[("a", true), ("b", true)], &hist, 2), 0.0);
        let top = [
            ("c", true),
            ("a", false),
            ("d", true),
            ("a", true),
            ("e", false),
        ];
        assert_eq!(new_topic_ratio(&top, &hist, 5), 0.4);
        assert_eq!(new_topic_ratio(&[("z", true)], &HashSet::new(), 1), 1.0);
        // duplicate novel topics count once
        assert_eq!(new_topic_ratio(&[("c", true), ("c", true)], &hist, 2), 0.5);
    }

    use proptest::prelude::*;

    fn vectors() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0.0f64..5.0, 6), 2..10)
    }

    proptest! {
        #[test]
        fn ilad_ignores_order_and_scale(vs in vectors(), seed in any::<u64>(), scale in 0.1f64..50.0) {
            let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
            let base = ilad(&refs);
            prop_assert!((0.0..=2.0).contains(&base.value));

            let mut order: Vec<usize> = (0..vs.len()).collect();
            order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
            let permuted: Vec<&[f64]> = order.iter().map(|&i| vs[i].as_slice()).collect();
            prop_assert!((ilad(&permuted).value - base.value).abs() < 1e-12);

            let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let scaled_refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
            prop_assert!((ilad(&scaled_refs).value - base.value).abs() < 1e-12);
        }
    }
}
