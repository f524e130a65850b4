use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use iot_hub::analytics::{train, Algorithm, Analyzer, FeatureVector, LabeledInstance, ModelConfig, TrainedModel};

const LABELS: [&str; 3] = ["A", "B", "C"];
const CATS: [&str; 3] = ["red", "green", "blue"];

fn instance() -> impl Strategy<Value = LabeledInstance> {
    (-50.0..50.0f64, 0..CATS.len(), 0..LABELS.len()).prop_map(|(x, c, l)| LabeledInstance {
        features: FeatureVector::new().number("x", x).category("c", CATS[c]),
        label: LABELS[l].into(),
    })
}

fn dataset(max: usize) -> impl Strategy<Value = Vec<LabeledInstance>> {
    prop::collection::vec(instance(), 5..max)
}

fn cfg(algorithm: Algorithm) -> ModelConfig {
    ModelConfig::new(Analyzer::Location, algorithm, &["x", "c"])
}

fn counts(data: &[LabeledInstance]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for i in data {
        *m.entry(i.label.as_str()).or_default() += 1;
    }
    m
}

/// The most frequent label, if it is unique.
fn clear_majority(data: &[LabeledInstance]) -> Option<&str> {
    let c = counts(data);
    let top = *c.values().max()?;
    let winners: Vec<&str> = c.iter().filter(|(_, &n)| n == top).map(|(l, _)| *l).collect();
    (winners.len() == 1).then(|| winners[0])
}

fn predict(m: &TrainedModel, x: &FeatureVector) -> String {
    m.predict(x).unwrap().label
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn naive_bayes_posteriors_are_a_distribution(data in dataset(40), probe in instance()) {
        let m = train(&data, &cfg(Algorithm::NaiveBayes)).unwrap();
        let p = m.predict(&probe.features).unwrap();
        let total: f64 = p.scores.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum {total}");
        prop_assert!(p.scores.values().all(|s| (0.0..=1.0).contains(s)));
        let labels: BTreeSet<&str> = data.iter().map(|i| i.label.as_str()).collect();
        prop_assert_eq!(p.scores.keys().map(String::as_str).collect::<BTreeSet<_>>(), labels);
        let best = p.scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(p.scores[&p.label], best);
    }

    #[test]
    fn categorical_naive_bayes_matches_laplace_counts(
        rows in prop::collection::vec((0..CATS.len(), 0..LABELS.len()), 1..40),
        probe in 0..CATS.len(),
    ) {
        let data: Vec<LabeledInstance> = rows
            .iter()
            .map(|&(c, l)| LabeledInstance { features: FeatureVector::new().category("c", CATS[c]), label: LABELS[l].into() })
            .collect();
        let m = train(&data, &ModelConfig::new(Analyzer::Location, Algorithm::NaiveBayes, &["c"])).unwrap();
        let got = m.predict(&FeatureVector::new().category("c", CATS[probe])).unwrap().scores;
        let n = data.len() as f64;
        let classes = counts(&data);
        let vocab = rows.iter().map(|r| r.0).collect::<BTreeSet<_>>().len() as f64 + 1.0;
        let mut joint: BTreeMap<&str, f64> = BTreeMap::new();
        for (&label, &nc) in &classes {
            let hits = rows.iter().filter(|&&(c, l)| LABELS[l] == label && c == probe).count() as f64;
            let prior = (nc as f64 + 1.0) / (n + classes.len() as f64);
            joint.insert(label, prior * (hits + 1.0) / (nc as f64 + vocab));
        }
        let z: f64 = joint.values().sum();
        for (label, p) in joint {
            prop_assert!((got[label] - p / z).abs() < 1e-9, "{label}: {} vs {}", got[label], p / z);
        }
    }

    #[test]
    fn knn_over_everything_is_the_majority(mut data in dataset(30), probe in instance()) {
        if data.len() % 2 == 0 {
            data.pop();
        }
        prop_assume!(!data.is_empty());
        let m = train(&data, &cfg(Algorithm::Knn).with_param("k", data.len() as f64)).unwrap();
        if let Some(top) = clear_majority(&data) {
            prop_assert_eq!(predict(&m, &probe.features), top);
        }
        let shares: f64 = m.predict(&probe.features).unwrap().scores.values().sum();
        prop_assert!((shares - 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_nearest_neighbour_recalls_unique_points(data in dataset(30)) {
        let m = train(&data, &cfg(Algorithm::Knn).with_param("k", 1.0)).unwrap();
        for i in &data {
            let same: BTreeSet<&str> =
                data.iter().filter(|j| j.features == i.features).map(|j| j.label.as_str()).collect();
            if same.len() == 1 {
                prop_assert_eq!(predict(&m, &i.features), i.label.clone());
            }
        }
    }

    #[test]
    fn majority_predicts_the_most_frequent_label(data in dataset(40), probe in instance()) {
        let m = train(&data, &cfg(Algorithm::Majority)).unwrap();
        let c = counts(&data);
        prop_assert_eq!(c[predict(&m, &probe.features).as_str()], *c.values().max().unwrap());
    }

    #[test]
    fn training_order_does_not_matter(data in dataset(30), probe in instance(), seed in any::<u64>()) {
        let mut shuffled = data.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize).wrapping_mul(i + 7) % (i + 1));
        }
        for alg in [Algorithm::NaiveBayes, Algorithm::Knn, Algorithm::Majority] {
            let a = train(&data, &cfg(alg)).unwrap().predict(&probe.features).unwrap();
            let b = train(&shuffled, &cfg(alg)).unwrap().predict(&probe.features).unwrap();
            prop_assert_eq!(&a.label, &b.label, "{:?}", alg);
            for (l, s) in &a.scores {
                prop_assert!((s - b.scores[l]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn snapshots_round_trip(data in dataset(30), probe in instance()) {
        for alg in [Algorithm::NaiveBayes, Algorithm::Knn, Algorithm::Majority] {
            let m = train(&data, &cfg(alg)).unwrap();
            let back = TrainedModel::from_snapshot(&m.to_snapshot()).unwrap();
            prop_assert_eq!(m.predict(&probe.features).unwrap(), back.predict(&probe.features).unwrap());
        }
    }
}
