#![allow(dead_code)]

//! Independent reference implementations and random instance generators
//! shared by the integration tests.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use kgalign::kg::{GraphTag, KnowledgeGraph};
use kgalign::lcat::{LcatDims, LcatParameters};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Random graph on `n` entities named `e0..`, no reflexive triples.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, n_rel: usize, n_triples: usize) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new(GraphTag::Kg1);
    for i in 0..n {
        g.add_entity(&format!("e{i}"));
    }
    if n < 2 {
        return g;
    }
    for _ in 0..n_triples {
        let h = rng.random_range(0..n);
        let mut t = rng.random_range(0..n);
        if t == h {
            t = (t + 1) % n;
        }
        let r = rng.random_range(0..n_rel);
        g.insert(&format!("e{h}"), &format!("r{r}"), &format!("e{t}"));
    }
    g
}

pub fn random_params<R: Rng>(rng: &mut R, dims: LcatDims, logit_range: f64) -> LcatParameters {
    let mut p = LcatParameters::init(dims, rng).unwrap();
    p.mlp_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    for l in p.lambda_logits.iter_mut() {
        *l = rng.random_range(-logit_range..logit_range);
    }
    p
}

/// Undirected closed neighborhoods read straight off the triple list.
pub fn closed_neighborhoods_naive(g: &KnowledgeGraph) -> Vec<BTreeSet<usize>> {
    let mut out: Vec<BTreeSet<usize>> = (0..g.num_entities()).map(|i| BTreeSet::from([i])).collect();
    for t in g.triples() {
        out[t.head].insert(t.tail);
        out[t.tail].insert(t.head);
    }
    out
}

/// GAT-form attention `softmax_j aᵀ[W2ᵀe_i ∥ W2ᵀe_j]` with `e = X·Wm + b`,
/// computed with explicit loops. Rows are in ascending neighbor order.
pub fn gat_attention(x: &Array2<f64>, p: &LcatParameters, nbrs: &[BTreeSet<usize>]) -> Vec<Vec<f64>> {
    let (n, d_in) = x.dim();
    let d_model = p.mlp_weight.ncols();
    let d_out = p.w2.ncols();
    let mut e = vec![vec![0.0; d_model]; n];
    for i in 0..n {
        for c in 0..d_model {
            let mut s = p.mlp_bias[c];
            for k in 0..d_in {
                s += x[[i, k]] * p.mlp_weight[[k, c]];
            }
            e[i][c] = s;
        }
    }
    let mut h = vec![vec![0.0; d_out]; n];
    for i in 0..n {
        for c in 0..d_out {
            h[i][c] = (0..d_model).map(|k| e[i][k] * p.w2[[k, c]]).sum();
        }
    }
    let left = |i: usize| (0..d_out).map(|c| p.attn[c] * h[i][c]).sum::<f64>();
    let right = |j: usize| (0..d_out).map(|c| p.attn[d_out + c] * h[j][c]).sum::<f64>();
    nbrs.iter()
        .enumerate()
        .map(|(i, nb)| {
            let scores: Vec<f64> = nb.iter().map(|&j| left(i) + right(j)).collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            scores.iter().map(|s| (s - m).exp() / z).collect()
        })
        .collect()
}

pub type NameTriple = (String, String, String);

/// Output of the brute-force reconstruction, everything keyed by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleReconstruction {
    pub pseudo_labels: BTreeSet<(String, String)>,
    pub aligned: BTreeMap<(String, String), usize>,
    pub t_new_1: BTreeSet<NameTriple>,
    pub t_new_2: BTreeSet<NameTriple>,
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn entities(triples: &[NameTriple]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (h, _, t) in triples {
        for x in [h, t] {
            if seen.insert(x.clone()) {
                out.push(x.clone());
            }
        }
    }
    out
}

/// Quadratic brute-force reconstruction straight from the definitions:
/// mutual-best pseudo-labels over `> gamma_sim`, greedy one-to-one neighbor
/// matching over `> tau_sim`, orientation-matched relation votes, `> gamma_r`
/// filter, component-wise triple filter with passthrough on empty output.
pub fn brute_force_reconstruction(
    t1: &[NameTriple],
    t2: &[NameTriple],
    names: &HashMap<String, Vec<f64>>,
    gamma_sim: f64,
    tau_sim: f64,
    gamma_r: usize,
) -> OracleReconstruction {
    let e1 = entities(t1);
    let e2 = entities(t2);
    let sim = |a: &str, b: &str| cos(&names[a], &names[b]);
    let idx1: HashMap<&str, usize> = e1.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let idx2: HashMap<&str, usize> = e2.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    // best by similarity, ties to the smaller id
    let mut pl = BTreeSet::new();
    for a in &e1 {
        for b in &e2 {
            let s = sim(a, b);
            if s <= gamma_sim {
                continue;
            }
            let row_best = e2.iter().all(|b2| {
                let s2 = sim(a, b2);
                b2 == b || s2 <= gamma_sim || s2 < s || (s2 == s && idx2[b.as_str()] < idx2[b2.as_str()])
            });
            let col_best = e1.iter().all(|a2| {
                let s2 = sim(a2, b);
                a2 == a || s2 <= gamma_sim || s2 < s || (s2 == s && idx1[a.as_str()] < idx1[a2.as_str()])
            });
            if row_best && col_best {
                pl.insert((a.clone(), b.clone()));
            }
        }
    }

    let nbrs = |t: &[NameTriple], x: &str| -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        for (h, _, tl) in t {
            if h == x {
                s.insert(tl.clone());
            }
            if tl == x {
                s.insert(h.clone());
            }
        }
        s
    };
    // (relation, outgoing?) for every triple linking x and y
    let links = |t: &[NameTriple], x: &str, y: &str| -> Vec<(String, bool)> {
        let mut v = Vec::new();
        for (h, r, tl) in t {
            if h == x && tl == y {
                v.push((r.clone(), true));
            }
            if tl == x && h == y {
                v.push((r.clone(), false));
            }
        }
        v
    };

    let mut counter: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (a, b) in &pl {
        let na: Vec<String> = nbrs(t1, a).into_iter().collect();
        let nb: Vec<String> = nbrs(t2, b).into_iter().collect();
        let mut used_u = BTreeSet::new();
        let mut used_v = BTreeSet::new();
        loop {
            let mut best: Option<(f64, usize, usize, &String, &String)> = None;
            for u in &na {
                for v in &nb {
                    if used_u.contains(u) || used_v.contains(v) {
                        continue;
                    }
                    let s = sim(u, v);
                    if s <= tau_sim {
                        continue;
                    }
                    let key = (s, idx1[u.as_str()], idx2[v.as_str()]);
                    let take = match best {
                        None => true,
                        Some((bs, bu, bv, _, _)) => key.0 > bs || (key.0 == bs && (key.1, key.2) < (bu, bv)),
                    };
                    if take {
                        best = Some((key.0, key.1, key.2, u, v));
                    }
                }
            }
            let Some((_, _, _, u, v)) = best else { break };
            used_u.insert(u.clone());
            used_v.insert(v.clone());
            for (r1, out1) in links(t1, a, u) {
                for (r2, out2) in links(t2, b, v) {
                    if out1 == out2 {
                        *counter.entry((r1.clone(), r2)).or_insert(0) += 1;
                    }
                }
            }
        }
    }

    let aligned: BTreeMap<(String, String), usize> = counter.into_iter().filter(|&(_, c)| c > gamma_r).collect();
    let keep1: BTreeSet<&String> = aligned.keys().map(|(r, _)| r).collect();
    let keep2: BTreeSet<&String> = aligned.keys().map(|(_, r)| r).collect();
    let filt = |t: &[NameTriple], keep: &BTreeSet<&String>| -> BTreeSet<NameTriple> {
        let kept: BTreeSet<NameTriple> = t.iter().filter(|(_, r, _)| keep.contains(r)).cloned().collect();
        if kept.is_empty() {
            t.iter().cloned().collect()
        } else {
            kept
        }
    };
    OracleReconstruction {
        pseudo_labels: pl,
        t_new_1: filt(t1, &keep1),
        t_new_2: filt(t2, &keep2),
        aligned,
    }
}

/// A correlated KG pair: KG2 mirrors KG1 through a relation permutation with
/// some triples dropped and some added, names share a base vector per entity.
/// A few entities get duplicate name vectors to exercise tie-breaking.
pub struct RandomPair {
    pub t1: Vec<NameTriple>,
    pub t2: Vec<NameTriple>,
    pub names: HashMap<String, Vec<f64>>,
    pub gamma_sim: f64,
    pub tau_sim: f64,
    pub gamma_r: usize,
}

pub fn random_pair<R: Rng>(rng: &mut R, max_entities: usize) -> RandomPair {
    let n = rng.random_range(3..=max_entities);
    let n_rel = rng.random_range(1..=4);
    let dim = 6;
    let noise = rng.random_range(0.0..0.6);
    let mut base: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    for _ in 0..rng.random_range(0..3) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        base[b] = base[a].clone();
    }
    let mut names = HashMap::new();
    for (i, v) in base.iter().enumerate() {
        names.insert(format!("x:e{i}"), v.clone());
        let noisy: Vec<f64> = v.iter().map(|x| x + rng.random_range(-noise..noise)).collect();
        names.insert(format!("y:e{i}"), if rng.random_bool(0.2) { v.clone() } else { noisy });
    }
    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..n_rel).collect();
        for i in (1..n_rel).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        p
    };
    let m = rng.random_range(n..=3 * n);
    let mut t1 = Vec::new();
    let mut t2 = Vec::new();
    for _ in 0..m {
        let h = rng.random_range(0..n);
        let t = (h + rng.random_range(1..n)) % n;
        let r = rng.random_range(0..n_rel);
        t1.push((format!("x:e{h}"), format!("x:r{r}"), format!("x:e{t}")));
        if rng.random_bool(0.85) {
            t2.push((format!("y:e{h}"), format!("y:r{}", perm[r]), format!("y:e{t}")));
        }
    }
    for _ in 0..rng.random_range(0..n) {
        let h = rng.random_range(0..n);
        let t = (h + rng.random_range(1..n)) % n;
        t2.push((format!("y:e{h}"), format!("y:r{}", rng.random_range(0..n_rel)), format!("y:e{t}")));
    }
    if t2.is_empty() {
        t2.push(("y:e0".into(), "y:r0".into(), "y:e1".into()));
    }
    t1.sort();
    t1.dedup();
    t2.sort();
    t2.dedup();
    RandomPair {
        t1,
        t2,
        names,
        gamma_sim: rng.random_range(0.3..0.95),
        tau_sim: rng.random_range(0.3..0.95),
        gamma_r: rng.random_range(0..4),
    }
}

pub fn graph_from(tag: GraphTag, triples: &[NameTriple]) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new(tag);
    for (h, r, t) in triples {
        g.insert(h, r, t);
    }
    g
}

/// Name vectors in entity-id order of `g`.
pub fn name_matrix(g: &KnowledgeGraph, names: &HashMap<String, Vec<f64>>) -> Array2<f64> {
    let dim = names.values().next().map_or(0, Vec::len);
    let mut m = Array2::zeros((g.num_entities(), dim));
    for (i, name) in g.entities().names().iter().enumerate() {
        for (k, v) in names[name].iter().enumerate() {
            m[[i, k]] = *v;
        }
    }
    m
}

/// Nearest neighbor by cosine over raw name vectors; ties to the first
/// target in `targets` order. Returns 1-based ranks of the gold targets.
pub fn name_only_ranks(sources: &[Vec<f64>], targets: &[Vec<f64>], gold: &[(usize, usize)]) -> Vec<usize> {
    gold.iter()
        .map(|&(s, t)| {
            let g = cos(&sources[s], &targets[t]);
            1 + targets
                .iter()
                .enumerate()
                .filter(|&(j, v)| {
                    let c = cos(&sources[s], v);
                    c > g || (c == g && j < t)
                })
                .count()
        })
        .collect()
}
