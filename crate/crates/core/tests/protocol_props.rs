use std::collections::HashSet;

use cdvgae::eval::{all_pairs, concept_neighbors, sample_negatives, split_sizes, THRESHOLD};
use cdvgae::{compute_metrics, make_split, Domain, RelationSet, SeededRng};
use proptest::prelude::*;

/// A random set of at least 20 distinct ordered pairs.
fn relations() -> impl Strategy<Value = RelationSet> {
    (7usize..25, any::<u64>(), 0.0f64..1.0).prop_map(|(n, seed, frac)| {
        let mut pairs = all_pairs(n);
        let mut rng = SeededRng::new(seed);
        for i in (1..pairs.len()).rev() {
            pairs.swap(i, rng.below(i + 1));
        }
        let max = pairs.len() / 2;
        let keep = 20 + ((max - 20) as f64 * frac) as usize;
        pairs.truncate(keep);
        RelationSet::new(Domain::Target, n, pairs).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_partitions_positives(rel in relations(), seed in any::<u64>()) {
        let s = make_split(&rel, seed).unwrap();
        let mut all: Vec<_> = s.train_pos.iter().chain(&s.val_pos).chain(&s.test_pos).copied().collect();
        all.sort_unstable();
        let mut want = rel.pairs().to_vec();
        want.sort_unstable();
        prop_assert_eq!(all, want);
        let n = rel.len();
        prop_assert_eq!(s.train_pos.len(), n * 85 / 100);
        prop_assert_eq!(s.val_pos.len(), n * 5 / 100);
    }

    #[test]
    fn split_negatives_are_balanced_valid_and_distinct(rel in relations(), seed in any::<u64>()) {
        let s = make_split(&rel, seed).unwrap();
        prop_assert_eq!(s.train_neg.len(), s.train_pos.len());
        prop_assert_eq!(s.val_neg.len(), s.val_pos.len());
        prop_assert_eq!(s.test_neg.len(), s.test_pos.len());
        let mut seen = HashSet::new();
        for &(a, b) in s.train_neg.iter().chain(&s.val_neg).chain(&s.test_neg) {
            prop_assert!(a != b);
            prop_assert!(a < rel.n_concepts && b < rel.n_concepts);
            prop_assert!(!rel.contains(a, b));
            prop_assert!(seen.insert((a, b)));
        }
    }

    #[test]
    fn split_is_a_function_of_the_seed(rel in relations(), seed in any::<u64>()) {
        prop_assert_eq!(make_split(&rel, seed).unwrap(), make_split(&rel, seed).unwrap());
    }

    #[test]
    fn split_sizes_sum_to_n(n in 0usize..100_000) {
        let (a, b, c) = split_sizes(n);
        prop_assert_eq!(a + b + c, n);
        prop_assert!(a >= b);
    }

    #[test]
    fn negatives_respect_count_and_exclusions(rel in relations(), count in 0usize..30, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let free = rel.n_concepts * (rel.n_concepts - 1) - rel.len();
        match sample_negatives(rel.n_concepts, rel.pairs(), count, &mut rng) {
            Ok(neg) => {
                prop_assert_eq!(neg.len(), count);
                let uniq: HashSet<_> = neg.iter().collect();
                prop_assert_eq!(uniq.len(), count);
                prop_assert!(neg.iter().all(|&(a, b)| a != b && !rel.contains(a, b)));
            }
            Err(_) => prop_assert!(count > free),
        }
    }

    #[test]
    fn metrics_are_bounded_and_count_everything(labels in prop::collection::vec(any::<(bool, bool)>(), 1..200)) {
        let (preds, truth): (Vec<bool>, Vec<bool>) = labels.into_iter().unzip();
        let m = compute_metrics(&preds, &truth).unwrap();
        prop_assert_eq!(m.tp + m.fp + m.tn + m.fn_, preds.len());
        for v in [m.f1, m.accuracy, m.precision, m.recall] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
        prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12 || m.f1 == 0.0);
    }

    #[test]
    fn metrics_ignore_instance_order(labels in prop::collection::vec(any::<(bool, bool)>(), 1..100), seed in any::<u64>()) {
        let mut shuffled = labels.clone();
        let mut rng = SeededRng::new(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.below(i + 1));
        }
        let (p1, l1): (Vec<bool>, Vec<bool>) = labels.into_iter().unzip();
        let (p2, l2): (Vec<bool>, Vec<bool>) = shuffled.into_iter().unzip();
        prop_assert_eq!(compute_metrics(&p1, &l1).unwrap(), compute_metrics(&p2, &l2).unwrap());
    }

    #[test]
    fn neighbours_invert_each_other(rel in relations()) {
        for c in 0..rel.n_concepts {
            let (pre, suc) = concept_neighbors(&rel, c).unwrap();
            for p in pre {
                prop_assert!(rel.contains(p, c));
                prop_assert!(concept_neighbors(&rel, p).unwrap().1.contains(&c));
            }
            for s in suc {
                prop_assert!(rel.contains(c, s));
            }
        }
    }
}

#[test]
fn threshold_is_one_half() {
    assert_eq!(THRESHOLD, 0.5);
}

#[test]
fn perfect_predictions_score_one() {
    let labels = [true, false, true, true, false];
    let m = compute_metrics(&labels, &labels).unwrap();
    assert_eq!((m.f1, m.accuracy, m.precision, m.recall), (1.0, 1.0, 1.0, 1.0));
}
