//! Alignment inference and evaluation.
//!
//! Candidates are scored with the consistency-adjusted distance
//! `d'(s, t) = (max_t' d(s, t') + max_s' d(s', t)) / 2 − d(s, t)`, which is
//! zero exactly for mutual-best pairs. Smaller is better.

use std::cmp::Ordering;
use std::fmt;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    #[default]
    Consistency,
    Cosine,
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankMode::Consistency => "consistency",
            RankMode::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for RankMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistency" => Ok(RankMode::Consistency),
            "cosine" => Ok(RankMode::Cosine),
            other => Err(Error::Config(format!("unknown rank mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSpace {
    /// Every entity of the opposite graph.
    #[default]
    Full,
    /// Only the targets of the evaluated gold pairs.
    GoldTargets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub raw: Array2<f64>,
    pub adjusted: Array2<f64>,
    pub row_max: Array1<f64>,
    pub col_max: Array1<f64>,
}

impl SimilarityMatrix {
    pub fn from_raw(raw: Array2<f64>) -> Result<Self> {
        if raw.nrows() == 0 || raw.ncols() == 0 {
            return Err(Error::Shape(format!("similarity matrix has an empty side {:?}", raw.dim())));
        }
        let row_max = raw.map_axis(Axis(1), |r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let col_max = raw.map_axis(Axis(0), |c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let mut adjusted = raw.clone();
        for ((i, j), v) in adjusted.indexed_iter_mut() {
            *v = (row_max[i] + col_max[j]) / 2.0 - *v;
        }
        Ok(Self { raw, adjusted, row_max, col_max })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.raw.dim()
    }

    /// Score where smaller ranks first.
    fn key(&self, mode: RankMode, i: usize, j: usize) -> f64 {
        match mode {
            RankMode::Consistency => self.adjusted[[i, j]],
            RankMode::Cosine => -self.raw[[i, j]],
        }
    }
}

/// Dot products between `source` rows and `target` rows of unit-normalized
/// embeddings, computed `block` source rows at a time.
pub fn similarity_matrix(
    embeddings: ArrayView2<'_, f64>,
    sources: &[usize],
    targets: &[usize],
    block: usize,
) -> Result<SimilarityMatrix> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::Shape("no source or no target entities to compare".into()));
    }
    let tgt = embeddings.select(Axis(0), targets);
    let block = block.max(1);
    let blocks: Vec<Array2<f64>> = sources
        .par_chunks(block)
        .map(|chunk| embeddings.select(Axis(0), chunk).dot(&tgt.t()))
        .collect();
    let mut raw = Array2::<f64>::zeros((sources.len(), targets.len()));
    for (b, m) in blocks.into_iter().enumerate() {
        let start = b * block;
        raw.slice_mut(s![start..start + m.nrows(), ..]).assign(&m);
    }
    SimilarityMatrix::from_raw(raw)
}

/// Per-row candidate orderings, best first. Row and column indices are
/// positions in the similarity matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rankings {
    pub lists: Vec<Vec<usize>>,
}

/// Sorts every row; ties go to the smaller column index.
pub fn rank_candidates(sim: &SimilarityMatrix, mode: RankMode) -> Rankings {
    let (n1, n2) = sim.dim();
    let lists = (0..n1)
        .into_par_iter()
        .map(|i| {
            let mut cols: Vec<usize> = (0..n2).collect();
            cols.sort_by(|&a, &b| sim.key(mode, i, a).total_cmp(&sim.key(mode, i, b)).then(a.cmp(&b)));
            cols
        })
        .collect();
    Rankings { lists }
}

/// 1-based rank of column `target` in row `row`, without sorting the row.
pub fn rank_of(sim: &SimilarityMatrix, mode: RankMode, row: usize, target: usize) -> usize {
    let gold = sim.key(mode, row, target);
    1 + (0..sim.dim().1)
        .filter(|&j| match sim.key(mode, row, j).total_cmp(&gold) {
            Ordering::Less => true,
            Ordering::Equal => j < target,
            Ordering::Greater => false,
        })
        .count()
}

impl Rankings {
    /// 1-based ranks of each gold `(row, column)` pair.
    pub fn gold_ranks(&self, gold: &[(usize, usize)]) -> Result<Vec<usize>> {
        gold.iter()
            .map(|&(s, t)| {
                let list = self.lists.get(s).ok_or_else(|| Error::MissingRanking(format!("row {s}")))?;
                list.iter()
                    .position(|&c| c == t)
                    .map(|p| p + 1)
                    .ok_or_else(|| Error::MissingRanking(format!("row {s} target {t}")))
            })
            .collect()
    }
}

/// Fraction of ranks `<= k`.
pub fn hits_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Greedy global one-to-one matching by ascending `d'`, ties by `(row, col)`.
pub fn predict_one_to_one(sim: &SimilarityMatrix) -> Vec<(usize, usize)> {
    let (n1, n2) = sim.dim();
    let mut cells: Vec<(f64, usize, usize)> = sim.adjusted.indexed_iter().map(|((i, j), &v)| (v, i, j)).collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_r = vec![false; n1];
    let mut used_c = vec![false; n2];
    let mut out = Vec::with_capacity(n1.min(n2));
    for (_, i, j) in cells {
        if !used_r[i] && !used_c[j] {
            used_r[i] = true;
            used_c[j] = true;
            out.push((i, j));
            if out.len() == n1.min(n2) {
                break;
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    #[serde(rename = "hits@1")]
    pub hits_at_1: f64,
    #[serde(rename = "hits@10")]
    pub hits_at_10: f64,
    pub mrr: f64,
    pub n_eval: usize,
    pub mode: RankMode,
    pub candidate_space: CandidateSpace,
}

/// Evaluated similarity plus the index maps back to entity ids.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: AlignmentReport,
    pub sim: SimilarityMatrix,
    /// Row `i` of `sim` is entity `sources[i]` (embedding row index).
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub ranks: Vec<usize>,
}

/// Scores `gold` pairs (embedding row indices) over `sources × targets`.
pub fn evaluate(
    embeddings: ArrayView2<'_, f64>,
    sources: &[usize],
    targets: &[usize],
    gold: &[(usize, usize)],
    mode: RankMode,
    space: CandidateSpace,
    block: usize,
) -> Result<Evaluation> {
    let (sources, targets): (Vec<usize>, Vec<usize>) = match space {
        CandidateSpace::Full => (sources.to_vec(), targets.to_vec()),
        CandidateSpace::GoldTargets => (gold.iter().map(|p| p.0).collect(), gold.iter().map(|p| p.1).collect()),
    };
    let sim = similarity_matrix(embeddings, &sources, &targets, block)?;
    let pos = |ids: &[usize], id: usize| ids.iter().position(|&x| x == id);
    let ranks = gold
        .iter()
        .map(|&(s, t)| {
            let i = pos(&sources, s).ok_or_else(|| Error::MissingRanking(format!("source row {s}")))?;
            let j = pos(&targets, t).ok_or_else(|| Error::MissingRanking(format!("target row {t}")))?;
            Ok(rank_of(&sim, mode, i, j))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AlignmentReport {
        hits_at_1: hits_at_k(&ranks, 1),
        hits_at_10: hits_at_k(&ranks, 10),
        mrr: mrr(&ranks),
        n_eval: ranks.len(),
        mode,
        candidate_space: space,
    };
    Ok(Evaluation { report, sim, sources, targets, ranks })
}
