mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::*;
use iot_hub::knowledge::infer;
use iot_hub::semantic::{Graph, Triple};

fn graph_of<'a>(ts: impl IntoIterator<Item = &'a Triple>) -> Graph {
    let mut g = Graph::default();
    for t in ts {
        g.insert(t.clone());
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn semi_naive_equals_naive(seed in any::<u64>()) {
        let mut r = rng(seed);
        let facts = gen_facts(&mut r, 200);
        let rules = gen_program(&mut r, 5);
        let got: BTreeSet<Triple> = infer(&graph_of(&facts), &rules).unwrap().derived.into_iter().collect();
        prop_assert_eq!(got, naive_infer(&facts, &rules));
    }

    #[test]
    fn derived_facts_are_new_distinct_and_sorted(seed in any::<u64>()) {
        let mut r = rng(seed);
        let facts = gen_facts(&mut r, 100);
        let rules = gen_program(&mut r, 5);
        let out = infer(&graph_of(&facts), &rules).unwrap();
        prop_assert!(out.derived.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(out.derived.iter().all(|t| !facts.contains(t)));
        let fired: usize = out.fired_per_rule.values().sum();
        prop_assert!(fired >= out.derived.len());
    }

    #[test]
    fn closure_is_a_fixpoint(seed in any::<u64>()) {
        let mut r = rng(seed);
        let facts = gen_facts(&mut r, 100);
        let rules = gen_program(&mut r, 5);
        let derived = infer(&graph_of(&facts), &rules).unwrap().derived;
        let closed = graph_of(facts.iter().chain(&derived));
        prop_assert!(infer(&closed, &rules).unwrap().derived.is_empty());
    }

    #[test]
    fn more_facts_more_conclusions(seed in any::<u64>()) {
        let mut r = rng(seed);
        let small = gen_facts(&mut r, 80);
        let mut big = small.clone();
        big.extend(gen_facts(&mut r, 80));
        let rules = gen_program(&mut r, 4);
        let closure = |fs: &BTreeSet<Triple>| -> BTreeSet<Triple> {
            let mut all = fs.clone();
            all.extend(infer(&graph_of(fs), &rules).unwrap().derived);
            all
        };
        prop_assert!(closure(&small).is_subset(&closure(&big)));
    }
}
