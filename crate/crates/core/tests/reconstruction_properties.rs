mod common;

use std::collections::{BTreeSet, HashSet};

use kgalign::kg::{GraphTag, PrimalGraph};
use kgalign::reconstruct::{pseudo_labels, run_reconstruction, ReconstructionConfig};
use ndarray::Array2;
use proptest::prelude::*;

use common::*;

fn setup(seed: u64) -> (PrimalGraph, Array2<f64>, Array2<f64>, ReconstructionConfig) {
    let p = random_pair(&mut rng(seed), 20);
    let primal = PrimalGraph::build(graph_from(GraphTag::Kg1, &p.t1), graph_from(GraphTag::Kg2, &p.t2));
    let n1 = name_matrix(&primal.kg1, &p.names);
    let n2 = name_matrix(&primal.kg2, &p.names);
    let cfg = ReconstructionConfig { gamma_sim: p.gamma_sim, tau_sim: p.tau_sim, gamma_r: p.gamma_r };
    (primal, n1, n2, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn matches_brute_force(seed in any::<u64>()) {
        let p = random_pair(&mut rng(seed), 30);
        let primal = PrimalGraph::build(graph_from(GraphTag::Kg1, &p.t1), graph_from(GraphTag::Kg2, &p.t2));
        let n1 = name_matrix(&primal.kg1, &p.names);
        let n2 = name_matrix(&primal.kg2, &p.names);
        let cfg = ReconstructionConfig { gamma_sim: p.gamma_sim, tau_sim: p.tau_sim, gamma_r: p.gamma_r };
        let rec = run_reconstruction(&primal, n1.view(), n2.view(), &cfg).unwrap();
        let want = brute_force_reconstruction(&p.t1, &p.t2, &p.names, p.gamma_sim, p.tau_sim, p.gamma_r);
        let pl: BTreeSet<(String, String)> = rec.pseudo_labels.pairs.iter()
            .map(|&(a, b)| (primal.kg1.entity_name(a).unwrap().to_string(), primal.kg2.entity_name(b).unwrap().to_string()))
            .collect();
        prop_assert_eq!(pl, want.pseudo_labels);
        prop_assert_eq!(rec.aligned.pairs.len(), want.aligned.len());
        prop_assert_eq!(rec.triples.t_new_1.len(), want.t_new_1.len());
        prop_assert_eq!(rec.triples.t_new_2.len(), want.t_new_2.len());
    }

    #[test]
    fn pseudo_labels_are_one_to_one_and_above_threshold(seed in any::<u64>()) {
        let (_, n1, n2, cfg) = setup(seed);
        let sim = kgalign::reconstruct::cosine_matrix(n1.view(), n2.view()).unwrap();
        let pl = pseudo_labels(sim.view(), cfg.gamma_sim);
        let left: HashSet<usize> = pl.pairs.iter().map(|p| p.0).collect();
        let right: HashSet<usize> = pl.pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(left.len(), pl.len());
        prop_assert_eq!(right.len(), pl.len());
        prop_assert!(pl.len() <= n1.nrows().min(n2.nrows()));
        for (&(a, b), &s) in pl.pairs.iter().zip(&pl.scores) {
            prop_assert!(s > cfg.gamma_sim);
            prop_assert!(sim.row(a).iter().all(|&x| x <= s));
            prop_assert!(sim.column(b).iter().all(|&x| x <= s));
        }
    }

    #[test]
    fn output_is_a_subset_of_the_input(seed in any::<u64>()) {
        let (primal, n1, n2, cfg) = setup(seed);
        let rec = run_reconstruction(&primal, n1.view(), n2.view(), &cfg).unwrap();
        prop_assert!(rec.triples.t_new_1.iter().all(|t| primal.kg1.contains(t)));
        prop_assert!(rec.triples.t_new_2.iter().all(|t| primal.kg2.contains(t)));
        prop_assert!(!rec.triples.t_new_1.is_empty() && !rec.triples.t_new_2.is_empty());
        if !rec.triples.fallback_1 {
            let keep: HashSet<usize> = rec.aligned.pairs.iter().map(|p| p.0).collect();
            prop_assert!(rec.triples.t_new_1.iter().all(|t| keep.contains(&t.relation)));
        }
        if !rec.triples.fallback_2 {
            let keep: HashSet<usize> = rec.aligned.pairs.iter().map(|p| p.1).collect();
            prop_assert!(rec.triples.t_new_2.iter().all(|t| keep.contains(&t.relation)));
        }
        for &c in &rec.aligned.counts {
            prop_assert!(c > cfg.gamma_r);
        }
    }

    #[test]
    fn thresholds_are_monotone(seed in any::<u64>(), bump in 0usize..4, dsim in 0.0f64..0.3) {
        let (primal, n1, n2, cfg) = setup(seed);
        let base = run_reconstruction(&primal, n1.view(), n2.view(), &cfg).unwrap();
        let stricter_r = ReconstructionConfig { gamma_r: cfg.gamma_r + bump, ..cfg };
        let r = run_reconstruction(&primal, n1.view(), n2.view(), &stricter_r).unwrap();
        let base_pairs: HashSet<_> = base.aligned.pairs.iter().collect();
        prop_assert!(r.aligned.pairs.iter().all(|p| base_pairs.contains(p)));

        let sim = kgalign::reconstruct::cosine_matrix(n1.view(), n2.view()).unwrap();
        let a = pseudo_labels(sim.view(), cfg.gamma_sim);
        let b = pseudo_labels(sim.view(), cfg.gamma_sim + dsim);
        prop_assert!(b.len() <= a.len());
    }

    #[test]
    fn rerunning_on_the_output_never_regrows(seed in any::<u64>()) {
        let (primal, n1, n2, cfg) = setup(seed);
        let rec = run_reconstruction(&primal, n1.view(), n2.view(), &cfg).unwrap();
        let rebuilt = rec.apply(&primal);
        prop_assert_eq!(rebuilt.n1(), primal.n1());
        let again = run_reconstruction(&rebuilt, n1.view(), n2.view(), &cfg).unwrap();
        prop_assert!(again.triples.t_new_1.iter().all(|t| rebuilt.kg1.contains(t)));
        prop_assert!(again.triples.t_new_2.iter().all(|t| rebuilt.kg2.contains(t)));
    }
}

#[test]
fn unreachable_threshold_passes_everything_through() {
    let (primal, n1, n2, _) = setup(17);
    let cfg = ReconstructionConfig { gamma_sim: 1.1, ..Default::default() };
    let rec = run_reconstruction(&primal, n1.view(), n2.view(), &cfg).unwrap();
    assert!(rec.pseudo_labels.is_empty());
    assert!(rec.triples.fallback_1 && rec.triples.fallback_2);
    assert_eq!(rec.triples.t_new_1, primal.kg1.triples());
    assert_eq!(rec.triples.t_new_2, primal.kg2.triples());
}

#[test]
fn saved_files_round_trip() {
    let (primal, n1, n2, cfg) = setup(23);
    let rec = run_reconstruction(&primal, n1.view(), n2.view(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    rec.save(&primal, dir.path()).unwrap();
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("reconstruction_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["pseudo_label_count"], rec.pseudo_labels.len());
    assert_eq!(stats["triples_kept_1"], rec.triples.t_new_1.len());
    let reread = kgalign::kg::KnowledgeGraph::parse_triples(dir.path().join("reconstructed_triples_1"), GraphTag::Kg1).unwrap();
    assert_eq!(reread.num_triples(), rec.triples.t_new_1.len());
}
