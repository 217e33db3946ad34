use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use semgain::cluster::build_partition;
use semgain::grpo::group_advantages;
use semgain::numeric::mean;
use semgain::oracle::{EntailmentJudge, TableOracle};
use semgain::reward::{class_probabilities, MassMode};
use semgain::rollout::{parse_action, Action};
use semgain::sample::{AnswerSample, ContextTag};
use semgain::union_find::UnionFind;

const WORDS: [&str; 6] = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];

/// Random directed entailment scores over the fixed vocabulary.
fn table(scores: &[f64]) -> EntailmentJudge {
    let mut t = TableOracle::new(0.0);
    let mut k = 0;
    for a in WORDS {
        for b in WORDS {
            if a != b {
                t.insert(a, b, scores[k]);
                k += 1;
            }
        }
    }
    EntailmentJudge::new(Arc::new(t))
}

fn samples(texts: &[&str]) -> Vec<AnswerSample> {
    texts.iter().map(|t| AnswerSample::new(ContextTag::Posterior, *t, -1.0)).collect()
}

fn is_refinement(fine: &[Vec<usize>], coarse: &[Vec<usize>]) -> bool {
    fine.iter().all(|f| {
        coarse
            .iter()
            .any(|c| f.iter().all(|i| c.contains(i)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn partition_is_permutation_equivariant(
        idx in prop::collection::vec(0usize..WORDS.len(), 1..16),
        scores in prop::collection::vec(0.0f64..1.0, 30),
        perm_seed in any::<u64>(),
    ) {
        let judge = table(&scores);
        let texts: Vec<&str> = idx.iter().map(|i| WORDS[*i]).collect();
        let p = build_partition(&samples(&texts), &judge, "q", 0.5).unwrap();

        let mut order: Vec<usize> = (0..texts.len()).collect();
        let mut state = perm_seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<&str> = order.iter().map(|i| texts[*i]).collect();
        let q = build_partition(&samples(&shuffled), &judge, "q", 0.5).unwrap();
        // compare as multisets of texts per class
        let count = |classes: &[Vec<usize>], ts: &[&str]| -> BTreeSet<Vec<String>> {
            classes.iter().map(|c| { let mut v: Vec<String> = c.iter().map(|i| ts[*i].to_string()).collect(); v.sort(); v }).collect()
        };
        prop_assert_eq!(count(&p.classes, &texts), count(&q.classes, &shuffled));
    }

    #[test]
    fn raising_tau_refines_the_partition(
        idx in prop::collection::vec(0usize..WORDS.len(), 1..16),
        scores in prop::collection::vec(0.0f64..1.0, 30),
        lo in 0.05f64..0.5,
        gap in 0.0f64..0.45,
    ) {
        let judge = table(&scores);
        let texts: Vec<&str> = idx.iter().map(|i| WORDS[*i]).collect();
        let s = samples(&texts);
        let coarse = build_partition(&s, &judge, "q", lo).unwrap();
        let fine = build_partition(&s, &judge, "q", lo + gap).unwrap();
        prop_assert!(is_refinement(&fine.classes, &coarse.classes));
        prop_assert!(fine.classes.len() >= coarse.classes.len());
    }

    #[test]
    fn union_find_matches_reachability(
        n in 1usize..24,
        raw in prop::collection::vec((0usize..24, 0usize..24), 0..40),
    ) {
        let edges: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let mut uf = UnionFind::new(n);
        for &(a, b) in &edges {
            uf.union(a, b);
        }
        // breadth-first reachability as the oracle
        for start in 0..n {
            let mut seen = vec![false; n];
            seen[start] = true;
            let mut frontier = vec![start];
            while let Some(x) = frontier.pop() {
                for &(a, b) in &edges {
                    for (u, v) in [(a, b), (b, a)] {
                        if u == x && !seen[v] {
                            seen[v] = true;
                            frontier.push(v);
                        }
                    }
                }
            }
            for (j, reach) in seen.iter().enumerate() {
                prop_assert_eq!(uf.find(start) == uf.find(j), *reach);
            }
        }
    }

    #[test]
    fn class_probabilities_are_a_distribution(
        idx in prop::collection::vec(0usize..WORDS.len(), 1..20),
        lps in prop::collection::vec(-30.0f64..0.0, 20),
        mode in prop::sample::select(vec![MassMode::RawLikelihood, MassMode::LengthNormalized, MassMode::Frequency]),
    ) {
        let judge = table(&[0.0; 30]);
        let s: Vec<AnswerSample> = idx
            .iter()
            .enumerate()
            .map(|(k, i)| AnswerSample::from_tokens(ContextTag::Prior, WORDS[*i], vec![lps[k] / 2.0, lps[k] / 2.0]))
            .collect();
        let p = build_partition(&s, &judge, "q", 0.5).unwrap();
        let d = class_probabilities(&p, &s, mode).unwrap();
        let total: f64 = d.probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(d.probs.iter().all(|x| *x >= 0.0));
        if mode == MassMode::Frequency {
            for (c, prob) in p.classes.iter().zip(&d.probs) {
                prop_assert!((prob - c.len() as f64 / s.len() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rendered_actions_parse_back(
        content in "[a-zA-Z0-9 ,.?'()-]{0,40}",
        search in any::<bool>(),
        think in "[a-z ]{0,20}",
    ) {
        prop_assume!(!content.trim().is_empty());
        let content = content.trim().to_string();
        let action = if search { Action::search(content) } else { Action::answer(content) };
        let (_, parsed) = parse_action(&format!("<think>{think}</think>{}", action.render()));
        prop_assert_eq!(parsed, action);
    }

    #[test]
    fn advantages_are_standardized_and_affine_invariant(
        rewards in prop::collection::vec(-5.0f64..5.0, 2..10),
        scale in 0.1f64..10.0,
        shift in -10.0f64..10.0,
    ) {
        let a = group_advantages(&rewards, 0.0);
        let spread = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - rewards.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        prop_assert!(mean(&a).abs() < 1e-9);
        let var = a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64;
        prop_assert!((var - 1.0).abs() < 1e-9);

        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        let b = group_advantages(&moved, 0.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }
}

#[test]
fn constant_group_has_zero_advantages() {
    assert_eq!(group_advantages(&[0.7; 4], 1e-6), vec![0.0; 4]);
    assert_eq!(group_advantages(&[0.7; 4], 0.0), vec![0.0; 4]);
}
