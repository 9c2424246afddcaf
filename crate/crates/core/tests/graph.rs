use std::collections::BTreeSet;

use directlik::bench;
use directlik::graph::{self, moral_edge_count, moralize, Dag};
use directlik::model::presets::{self, Preset};
use directlik::model::{simulate, Dataset};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn arb_dag(max_p: usize) -> impl Strategy<Value = Dag> {
    (2..=max_p).prop_flat_map(|p| {
        let order = Just((0..p).collect::<Vec<_>>()).prop_shuffle();
        let mask = proptest::collection::vec(proptest::bool::weighted(0.4), p * (p - 1) / 2);
        (Just(p), order, mask).prop_map(|(p, order, mask)| {
            let mut edges = Vec::new();
            let mut m = mask.into_iter();
            for a in 0..p {
                for c in a + 1..p {
                    if m.next().unwrap() {
                        edges.push((order[a], order[c]));
                    }
                }
            }
            Dag::new(p, edges).unwrap()
        })
    })
}

/// Pairs that are adjacent or share a child, by direct enumeration.
fn moral_pairs_oracle(d: &Dag) -> BTreeSet<(usize, usize)> {
    let p = d.p();
    let mut out = BTreeSet::new();
    for a in 0..p {
        for b in a + 1..p {
            let linked = d.has_edge(a, b) || d.has_edge(b, a);
            let married = (0..p).any(|c| d.has_edge(a, c) && d.has_edge(b, c));
            if linked || married {
                out.insert((a, b));
            }
        }
    }
    out
}

#[test]
fn moralize_small_examples() {
    let chain = Dag::new(3, [(0, 1), (1, 2)]).unwrap();
    let collider = Dag::new(3, [(0, 2), (1, 2)]).unwrap();
    assert_eq!(moral_edge_count(&chain), 2);
    assert_eq!(moral_edge_count(&collider), 3);
    assert!(moralize(&collider).contains_edge(0, 1));
    assert_eq!(moral_edge_count(&Dag::empty(4)), 0);
}

#[test]
fn er_moral_count_matches_enumeration() {
    for seed in 0..20 {
        let d = graph::sample_er_dag(10, 0.1, seed).unwrap();
        assert_eq!(moral_edge_count(&d), moral_pairs_oracle(&d).len(), "seed {seed}");
    }
}

#[test]
fn er_degenerate_probabilities() {
    assert_eq!(graph::sample_er_dag(3, 0.0, 9).unwrap(), Dag::empty(3));
    let d = graph::sample_er_dag(2, 1.0, 9).unwrap();
    assert_eq!(d.n_edges(), 1);
    assert!(graph::sample_er_dag(3, 1.5, 0).is_err());
}

#[test]
fn er_mean_edge_count_is_near_ten() {
    let total: usize = (0..200).map(|s| graph::sample_er_dag(10, 0.1, s).unwrap().n_edges()).sum();
    let mean = total as f64 / 200.0;
    // 45 pairs, each linked with probability 1 - 0.9^2 = 0.19, less rejected cyclic draws
    assert!((7.0..10.0).contains(&mean), "{mean}");
}

#[test]
fn two_variable_chain_candidates_cover_both_orientations() {
    let cov = DMatrix::from_row_slice(2, 2, &[0.5, -0.35, -0.35, 0.745]);
    let n = 1000;
    // residual log-variances: empty log(0.5) + log(0.745), either edge log det = log(0.25)
    let pen = 2.0 * (n as f64).ln() / n as f64;
    let empty = 0.5f64.ln() + 0.745f64.ln();
    let linked = 0.25f64.ln() + pen;
    assert!(linked < empty);
    for (d, want) in [
        (Dag::empty(2), empty),
        (Dag::new(2, [(0, 1)]).unwrap(), linked),
        (Dag::new(2, [(1, 0)]).unwrap(), linked),
    ] {
        assert!((graph::pooled_bic_score(&cov, n, &d).unwrap() - want).abs() < 1e-12);
    }
    let cands = graph::generate_candidates(&cov, n, 4).unwrap();
    assert!(cands.iter().any(|d| d.has_edge(0, 1)));
    assert!(cands.iter().any(|d| d.has_edge(1, 0)));
}

#[test]
fn identity_covariance_hill_climbs_to_empty() {
    let d = graph::hill_climb(&DMatrix::identity(5, 5), 500, 4).unwrap();
    assert_eq!(d, Dag::empty(5));
}

#[test]
fn non_pd_pooled_covariance_is_rejected() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(graph::generate_candidates(&cov, 100, 4).is_err());
}

#[test]
fn setting_a_candidates_cover_truth_up_to_deletions() {
    // pooled data mixes environments, so the hill-climb optimum often carries
    // spurious edges; backward deletion in the search removes them
    let mut covered = 0;
    for seed in 0..10 {
        let inst = presets::build(Preset::SettingA, 64, seed).unwrap();
        let sim = simulate(&inst.params, &inst.n_per_env, inst.noise, &inst.latent_cov, inst.xi, seed).unwrap();
        let ds = Dataset::from_simulation(&sim);
        let cands = bench::candidates_for(&inst, &ds).unwrap();
        let truth = inst.truth();
        let hit = cands
            .iter()
            .any(|d| d.is_markov_equivalent(&truth) || truth.edges().all(|(j, i)| d.has_edge(j, i)));
        covered += hit as usize;
    }
    assert!(covered >= 8, "{covered}/10");
}

#[test]
fn dag_json_format() {
    let d = Dag::new(3, [(0, 1), (1, 2)]).unwrap();
    let s = serde_json::to_string(&d).unwrap();
    assert_eq!(s, r#"{"p":3,"edges":[[0,1],[1,2]]}"#);
    assert_eq!(serde_json::from_str::<Dag>(&s).unwrap(), d);
    assert!(serde_json::from_str::<Dag>(r#"{"p":2,"edges":[[0,1],[1,0]]}"#).is_err());
}

proptest! {
    #[test]
    fn moral_graph_matches_enumeration(d in arb_dag(7)) {
        let m = moralize(&d);
        let oracle = moral_pairs_oracle(&d);
        prop_assert_eq!(m.n_edges(), oracle.len());
        for &(a, b) in &oracle {
            prop_assert!(m.contains_edge(a, b) && m.contains_edge(b, a));
        }
    }

    #[test]
    fn adding_an_edge_never_removes_moral_edges(d in arb_dag(7), a in 0usize..7, b in 0usize..7) {
        let p = d.p();
        let (a, b) = (a % p, b % p);
        prop_assume!(a != b && !d.adjacent(a, b));
        if let Ok(bigger) = d.with_edge(a, b) {
            prop_assert!(moralize(&bigger).is_superset_of(&moralize(&d)));
        }
    }

    #[test]
    fn covered_edge_reversal_keeps_moral_count(d in arb_dag(7)) {
        for (j, i) in d.edges().collect::<Vec<_>>() {
            if d.is_covered(j, i) {
                let r = d.reversed(j, i).unwrap();
                prop_assert!(r.is_markov_equivalent(&d));
                prop_assert_eq!(moral_edge_count(&r), moral_edge_count(&d));
            }
        }
    }

    #[test]
    fn er_sampling_is_reproducible(p in 2usize..12, prob in 0.0f64..0.3, seed in any::<u64>()) {
        let a = graph::sample_er_dag(p, prob, seed);
        let b = graph::sample_er_dag(p, prob, seed);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn markov_equivalence_class_members_share_moral_count(d in arb_dag(5)) {
        let class = graph::markov_equivalence_class(&d, 200);
        prop_assert!(class.contains(&d));
        for m in &class {
            prop_assert!(m.is_markov_equivalent(&d));
            prop_assert_eq!(moral_edge_count(m), moral_edge_count(&d));
        }
    }
}
