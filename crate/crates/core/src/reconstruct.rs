//! Relation-structure reconstruction.
//!
//! Runs once before training. Mutual-best name matches above a threshold
//! become pseudo-labels; neighbors of each pseudo-labelled pair are matched
//! one-to-one, every matched neighbor pair votes for the relation pairs that
//! connect it to its anchors, and relation pairs with enough votes decide
//! which triples each graph keeps.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::l2_normalize_rows;
use crate::kg::{EntityId, KnowledgeGraph, PrimalGraph, RelationId, RelationTriple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    /// Name-similarity threshold for pseudo-label candidates.
    pub gamma_sim: f64,
    /// Similarity threshold for neighbor matching.
    pub tau_sim: f64,
    /// A relation pair is kept when its match count exceeds this.
    pub gamma_r: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self { gamma_sim: 0.8, tau_sim: 0.8, gamma_r: 5 }
    }
}

/// Cosine similarity between every KG1 row and every KG2 row.
pub fn cosine_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            found: b.ncols(),
            context: "cosine matrix operands".into(),
        });
    }
    let mut a = a.to_owned();
    let mut b = b.to_owned();
    l2_normalize_rows(&mut a);
    l2_normalize_rows(&mut b);
    Ok(a.dot(&b.t()))
}

/// All `(i, j)` with `sim[i][j] > gamma`, in row-major order.
pub fn candidate_pairs(sim: ArrayView2<'_, f64>, gamma: f64) -> Vec<(EntityId, EntityId)> {
    sim.indexed_iter()
        .filter(|(_, &s)| s > gamma)
        .map(|(idx, _)| idx)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    /// `(kg1 entity, kg2 entity)`, sorted.
    pub pairs: Vec<(EntityId, EntityId)>,
    pub scores: Vec<f64>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn better(s: f64, best: Option<(usize, f64)>) -> bool {
    // strict: earlier (smaller) index wins ties
    best.is_none_or(|(_, b)| s > b)
}

/// Bidirectional mutual-best pairs among the candidates above `gamma`.
pub fn pseudo_labels(sim: ArrayView2<'_, f64>, gamma: f64) -> PseudoLabelSet {
    let (n1, n2) = sim.dim();
    let mut row_best: Vec<Option<(usize, f64)>> = vec![None; n1];
    let mut col_best: Vec<Option<(usize, f64)>> = vec![None; n2];
    for ((i, j), &s) in sim.indexed_iter() {
        if s <= gamma {
            continue;
        }
        if better(s, row_best[i]) {
            row_best[i] = Some((j, s));
        }
        if better(s, col_best[j]) {
            col_best[j] = Some((i, s));
        }
    }
    let mut out = PseudoLabelSet::default();
    for (i, best) in row_best.iter().enumerate() {
        if let Some((j, s)) = *best {
            if col_best[j].map(|(bi, _)| bi) == Some(i) {
                out.pairs.push((i, j));
                out.scores.push(s);
            }
        }
    }
    out
}

/// One-to-one greedy matching between the neighbors of `a` (in `g1`) and of
/// `b` (in `g2`): pairs above `tau` taken in descending similarity, ties by
/// smallest `(u, v)`.
pub fn neighbor_match(
    (a, b): (EntityId, EntityId),
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    sim: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<Vec<(EntityId, EntityId)>> {
    let n1 = g1.neighbors(a, false)?;
    let n2 = g2.neighbors(b, false)?;
    let mut cands: Vec<(f64, EntityId, EntityId)> = Vec::new();
    for &u in &n1 {
        for &v in &n2 {
            let s = sim[[u, v]];
            if s > tau {
                cands.push((s, u, v));
            }
        }
    }
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut used1 = vec![false; g1.num_entities()];
    let mut used2 = vec![false; g2.num_entities()];
    let mut out = Vec::new();
    for (_, u, v) in cands {
        if !used1[u] && !used2[v] {
            used1[u] = true;
            used2[v] = true;
            out.push((u, v));
        }
    }
    Ok(out)
}

/// A matched neighbor pair `(u, v)` together with its pseudo-label anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchoredMatch {
    pub anchor: (EntityId, EntityId),
    pub pair: (EntityId, EntityId),
}

pub type RelationCounter = BTreeMap<(RelationId, RelationId), usize>;

/// Votes for relation pairs: each g1 edge between the anchor and `u` meets
/// each g2 edge between the anchor and `v` of the same orientation.
pub fn relation_match_counts(matches: &[AnchoredMatch], g1: &KnowledgeGraph, g2: &KnowledgeGraph) -> Result<RelationCounter> {
    let mut counter = RelationCounter::new();
    for m in matches {
        let (a, b) = m.anchor;
        let (u, v) = m.pair;
        let e1 = g1.edges(a)?;
        let e2 = g2.edges(b)?;
        for x in e1.iter().filter(|e| e.neighbor == u) {
            for y in e2.iter().filter(|e| e.neighbor == v && e.direction == x.direction) {
                *counter.entry((x.relation, y.relation)).or_insert(0) += 1;
            }
        }
    }
    Ok(counter)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedRelationSet {
    /// `(kg1 relation, kg2 relation)`, sorted.
    pub pairs: Vec<(RelationId, RelationId)>,
    pub counts: Vec<usize>,
}

/// Keeps relation pairs whose count is strictly above `gamma_r`.
pub fn filter_relations(counter: &RelationCounter, gamma_r: usize) -> AlignedRelationSet {
    let mut out = AlignedRelationSet::default();
    for (&pair, &count) in counter {
        if count > gamma_r {
            out.pairs.push(pair);
            out.counts.push(count);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationStats {
    pub relation: RelationId,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconstructedTriples {
    pub t_new_1: Vec<RelationTriple>,
    pub t_new_2: Vec<RelationTriple>,
    pub stats_1: Vec<RelationStats>,
    pub stats_2: Vec<RelationStats>,
    /// Set when a side would have been left without triples and was passed
    /// through unfiltered instead.
    pub fallback_1: bool,
    pub fallback_2: bool,
}

fn filter_side(g: &KnowledgeGraph, keep: &[bool], label: &str) -> (Vec<RelationTriple>, Vec<RelationStats>, bool) {
    let mut stats: Vec<RelationStats> = (0..g.num_relations())
        .map(|relation| RelationStats { relation, kept: 0, dropped: 0 })
        .collect();
    let mut kept = Vec::new();
    for t in g.triples() {
        if keep[t.relation] {
            kept.push(*t);
            stats[t.relation].kept += 1;
        } else {
            stats[t.relation].dropped += 1;
        }
    }
    if kept.is_empty() && g.num_triples() > 0 {
        log::warn!("{label}: no triple survives relation filtering, keeping the original structure");
        for s in &mut stats {
            s.kept += s.dropped;
            s.dropped = 0;
        }
        return (g.triples().to_vec(), stats, true);
    }
    (kept, stats, false)
}

/// Keeps the triples whose relation appears on the matching side of an
/// aligned pair.
pub fn reconstruct_triples(g1: &KnowledgeGraph, g2: &KnowledgeGraph, aligned: &AlignedRelationSet) -> ReconstructedTriples {
    let mut keep1 = vec![false; g1.num_relations()];
    let mut keep2 = vec![false; g2.num_relations()];
    for &(r1, r2) in &aligned.pairs {
        keep1[r1] = true;
        keep2[r2] = true;
    }
    let (t_new_1, stats_1, fallback_1) = filter_side(g1, &keep1, "KG1");
    let (t_new_2, stats_2, fallback_2) = filter_side(g2, &keep2, "KG2");
    ReconstructedTriples { t_new_1, t_new_2, stats_1, stats_2, fallback_1, fallback_2 }
}

/// Everything the reconstruction stage produces.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub pseudo_labels: PseudoLabelSet,
    pub counter: RelationCounter,
    pub aligned: AlignedRelationSet,
    pub triples: ReconstructedTriples,
}

impl Reconstruction {
    pub fn report(&self, primal: &PrimalGraph) -> ReconstructionReport {
        ReconstructionReport {
            pseudo_label_count: self.pseudo_labels.len(),
            relation_pairs: self
                .aligned
                .pairs
                .iter()
                .zip(&self.aligned.counts)
                .map(|(&(r1, r2), &c)| {
                    (
                        primal.kg1.relation_name(r1).unwrap_or_default().to_owned(),
                        primal.kg2.relation_name(r2).unwrap_or_default().to_owned(),
                        c,
                    )
                })
                .collect(),
            triples_kept_1: self.triples.t_new_1.len(),
            triples_kept_2: self.triples.t_new_2.len(),
            fallback_1: self.triples.fallback_1,
            fallback_2: self.triples.fallback_2,
        }
    }

    /// The primal graph restricted to the reconstructed triples.
    pub fn apply(&self, primal: &PrimalGraph) -> PrimalGraph {
        primal.with_triples(&self.triples.t_new_1, &self.triples.t_new_2)
    }

    /// Writes the two reconstructed triple files and the JSON report.
    pub fn save(&self, primal: &PrimalGraph, dir: &Path) -> Result<()> {
        let rebuilt = self.apply(primal);
        rebuilt.kg1.save_triples(dir.join("reconstructed_triples_1"))?;
        rebuilt.kg2.save_triples(dir.join("reconstructed_triples_2"))?;
        let path = dir.join("reconstruction_stats.json");
        let json = serde_json::to_string_pretty(&self.report(primal))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub pseudo_label_count: usize,
    pub relation_pairs: Vec<(String, String, usize)>,
    pub triples_kept_1: usize,
    pub triples_kept_2: usize,
    pub fallback_1: bool,
    pub fallback_2: bool,
}

/// Full reconstruction from name vectors (`names1` rows follow KG1 ids,
/// `names2` rows follow KG2 ids).
pub fn run_reconstruction(
    primal: &PrimalGraph,
    names1: ArrayView2<'_, f64>,
    names2: ArrayView2<'_, f64>,
    config: &ReconstructionConfig,
) -> Result<Reconstruction> {
    if names1.nrows() != primal.n1() || names2.nrows() != primal.n2() {
        return Err(Error::Shape(format!(
            "name features have {}/{} rows, graphs have {}/{} entities",
            names1.nrows(),
            names2.nrows(),
            primal.n1(),
            primal.n2()
        )));
    }
    let sim = cosine_matrix(names1, names2)?;
    let pseudo = pseudo_labels(sim.view(), config.gamma_sim);

    let (g1, g2) = (&primal.kg1, &primal.kg2);
    let matches: Vec<AnchoredMatch> = pseudo
        .pairs
        .par_iter()
        .map(|&anchor| {
            neighbor_match(anchor, g1, g2, sim.view(), config.tau_sim)
                .map(|pairs| pairs.into_iter().map(|pair| AnchoredMatch { anchor, pair }).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let counter = relation_match_counts(&matches, g1, g2)?;
    let aligned = filter_relations(&counter, config.gamma_r);
    let triples = reconstruct_triples(g1, g2, &aligned);
    log::info!(
        "reconstruction: {} pseudo-labels, {} neighbor matches, {} relation pairs, kept {}/{} and {}/{} triples",
        pseudo.len(),
        matches.len(),
        aligned.pairs.len(),
        triples.t_new_1.len(),
        g1.num_triples(),
        triples.t_new_2.len(),
        g2.num_triples()
    );
    Ok(Reconstruction { pseudo_labels: pseudo, counter, aligned, triples })
}
