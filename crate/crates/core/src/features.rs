//! Entity input features.
//!
//! Name vectors come from an external sentence encoder through the embedding
//! TSV format. Context vectors average the embeddings of random-walk paths
//! (entities and relations alike), and the two views are concatenated into
//! the multi-view feature matrix fed to the encoder.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{display_name, EntityId, KnowledgeGraph, RelationId};
use crate::rng::{item_stream, Stream};

const MAX_REPORTED_MISSING: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    EntityName,
    RelationLabel,
    PathSentence,
}

/// Dense vectors indexed by interned id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: Array2<f64>,
    pub kind: EmbeddingKind,
    pub normalized: bool,
}

impl EmbeddingTable {
    pub fn new(vectors: Array2<f64>, kind: EmbeddingKind, normalize: bool) -> Self {
        let mut vectors = vectors;
        if normalize {
            l2_normalize_rows(&mut vectors);
        }
        Self { dim: vectors.ncols(), vectors, kind, normalized: normalize }
    }

    pub fn row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(id)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }
}

/// Contents of an embedding TSV file, keyed by URI (or path key).
#[derive(Debug, Clone, Default)]
pub struct EmbeddingFile {
    pub dim: usize,
    keys: Vec<String>,
    rows: HashMap<String, Vec<f64>>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let source = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dim = None;
        let mut out = Self::default();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let err = |msg: String| Error::Parse { path: source.clone(), line: idx + 1, msg };
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(d) = comment.strip_prefix("dim=") {
                    let d: usize = d.trim().parse().map_err(|_| err(format!("bad dim header `{line}`")))?;
                    if d == 0 {
                        return Err(err("dimension must be positive".into()));
                    }
                    dim = Some(d);
                }
                continue;
            }
            let d = dim.ok_or_else(|| err("missing `#dim=<D>` header".into()))?;
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `<key>\\t<values>`".into()))?;
            let vector = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| err(format!("bad float `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if vector.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: vector.len(),
                    context: format!("{source}:{} ({key})", idx + 1),
                });
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(err(format!("non-finite value in row `{key}`")));
            }
            out.insert(key, vector);
        }
        out.dim = dim.unwrap_or(0);
        Ok(out)
    }

    pub fn insert(&mut self, key: &str, vector: Vec<f64>) {
        if self.rows.insert(key.to_owned(), vector).is_none() {
            self.keys.push(key.to_owned());
        }
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            writeln!(w, "#dim={}", self.dim)?;
            for key in &self.keys {
                let row = &self.rows[key];
                write!(w, "{key}\t")?;
                write_floats(&mut w, row)?;
                writeln!(w)?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    /// Table with one row per name in `names`, in order.
    pub fn table_for(&self, names: &[String], kind: EmbeddingKind, normalize: bool) -> Result<EmbeddingTable> {
        let missing: Vec<&String> = names.iter().filter(|n| !self.rows.contains_key(*n)).collect();
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings {
                count: missing.len(),
                missing: missing.into_iter().take(MAX_REPORTED_MISSING).cloned().collect(),
            });
        }
        let mut vectors = Array2::zeros((names.len(), self.dim));
        for (i, name) in names.iter().enumerate() {
            vectors.row_mut(i).assign(&ArrayView1::from(self.rows[name].as_slice()));
        }
        Ok(EmbeddingTable::new(vectors, kind, normalize))
    }
}

pub(crate) fn write_floats<W: Write>(w: &mut W, row: &[f64]) -> std::io::Result<()> {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            w.write_all(b" ")?;
        }
        write!(w, "{v}")?;
    }
    Ok(())
}

/// Loads the rows for `names` (interned order) from an embedding TSV.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    names: &[String],
    kind: EmbeddingKind,
    normalize: bool,
) -> Result<EmbeddingTable> {
    EmbeddingFile::read(path)?.table_for(names, kind, normalize)
}

pub fn l2_normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Cosine similarity. A zero vector has similarity 0 to everything.
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine of a zero vector, returning 0");
        return 0.0;
    }
    u.dot(&v) / (nu * nv)
}

/// A walk `[e0, r1, e1, ..., rk, ek]`, stored as its start plus steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkPath {
    pub start: EntityId,
    pub steps: Vec<(RelationId, EntityId)>,
}

impl WalkPath {
    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        std::iter::once(self.start).chain(self.steps.iter().map(|s| s.1))
    }

    /// Every step follows a triple of `g` in one direction or the other.
    pub fn is_valid_in(&self, g: &KnowledgeGraph) -> bool {
        let mut cur = self.start;
        for &(r, next) in &self.steps {
            let fwd = crate::kg::RelationTriple::new(cur, r, next);
            let back = crate::kg::RelationTriple::new(next, r, cur);
            if !g.contains(&fwd) && !g.contains(&back) {
                return false;
            }
            cur = next;
        }
        true
    }

    /// Space-joined display names of the path elements.
    pub fn sentence(&self, g: &KnowledgeGraph, underscores: bool) -> String {
        let mut parts = vec![display_name(g.entity_name(self.start).unwrap_or(""), underscores)];
        for &(r, e) in &self.steps {
            parts.push(display_name(g.relation_name(r).unwrap_or(""), underscores));
            parts.push(display_name(g.entity_name(e).unwrap_or(""), underscores));
        }
        parts.join(" ")
    }
}

/// Walks up to `k` steps, choosing uniformly among incident edges (either
/// direction). Stops early at an entity without edges.
pub fn random_walk<R: Rng + ?Sized>(g: &KnowledgeGraph, start: EntityId, k: usize, rng: &mut R) -> Result<WalkPath> {
    let mut steps = Vec::with_capacity(k);
    let mut cur = start;
    for _ in 0..k {
        let edges = g.edges(cur)?;
        if edges.is_empty() {
            break;
        }
        let edge = edges[rng.random_range(0..edges.len())];
        steps.push((edge.relation, edge.neighbor));
        cur = edge.neighbor;
    }
    if steps.is_empty() {
        g.edges(start)?;
    }
    Ok(WalkPath { start, steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Steps per walk.
    pub k: usize,
    /// Walks per entity.
    pub t: usize,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self { k: 3, t: 5 }
    }
}

/// The `T` walks of `entity`, drawn from that entity's own stream.
pub fn entity_walks(g: &KnowledgeGraph, entity: EntityId, params: WalkParams, seed: u64) -> Result<Vec<WalkPath>> {
    let mut rng = item_stream(seed, Stream::Walks, entity as u64);
    (0..params.t).map(|_| random_walk(g, entity, params.k, &mut rng)).collect()
}

/// Where path vectors come from.
#[derive(Debug, Clone, Copy)]
pub enum ContextSource<'a> {
    /// Mean of the element vectors along the path. Without a relation table
    /// only the entities are averaged.
    Compositional {
        entities: &'a EmbeddingTable,
        relations: Option<&'a EmbeddingTable>,
    },
    /// Precomputed path-sentence vectors keyed `<entity-URI>#<walk-index>`.
    Exact { sentences: &'a EmbeddingFile },
}

/// Context embedding per entity: normalized mean of its `T` path vectors.
pub fn context_embedding(g: &KnowledgeGraph, source: ContextSource<'_>, params: WalkParams, seed: u64) -> Result<Array2<f64>> {
    if params.t == 0 || params.k == 0 {
        return Err(Error::Config("walk count and walk length must be at least 1".into()));
    }
    let dim = match source {
        ContextSource::Compositional { entities, relations } => {
            if entities.len() != g.num_entities() {
                return Err(Error::Shape(format!(
                    "entity table has {} rows, graph has {} entities",
                    entities.len(),
                    g.num_entities()
                )));
            }
            if let Some(rel) = relations {
                if rel.dim != entities.dim {
                    return Err(Error::Dimension {
                        expected: entities.dim,
                        found: rel.dim,
                        context: "relation table vs entity table".into(),
                    });
                }
                if rel.len() != g.num_relations() {
                    return Err(Error::Shape(format!(
                        "relation table has {} rows, graph has {} relations",
                        rel.len(),
                        g.num_relations()
                    )));
                }
            }
            entities.dim
        }
        ContextSource::Exact { sentences } => sentences.dim,
    };

    let rows: Vec<Array1<f64>> = (0..g.num_entities())
        .into_par_iter()
        .map(|e| -> Result<Array1<f64>> {
            let mut acc = Array1::<f64>::zeros(dim);
            match source {
                ContextSource::Compositional { entities, relations } => {
                    for walk in entity_walks(g, e, params, seed)? {
                        let mut path = entities.row(walk.start).to_owned();
                        let mut count = 1.0;
                        for &(r, next) in &walk.steps {
                            if let Some(rel) = relations {
                                path += &rel.row(r);
                                count += 1.0;
                            }
                            path += &entities.row(next);
                            count += 1.0;
                        }
                        acc.scaled_add(1.0 / count, &path);
                    }
                }
                ContextSource::Exact { sentences } => {
                    let uri = g.entity_name(e).unwrap_or_default();
                    for t in 0..params.t {
                        let key = format!("{uri}#{t}");
                        let v = sentences.get(&key).ok_or_else(|| Error::MissingEmbeddings {
                            count: 1,
                            missing: vec![key.clone()],
                        })?;
                        acc += &ArrayView1::from(v);
                    }
                }
            }
            acc /= params.t as f64;
            let norm = acc.dot(&acc).sqrt();
            if norm > 0.0 {
                acc /= norm;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut out = Array2::zeros((g.num_entities(), dim));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// `(entity URI, walk index, sentence)` for every walk, in entity order.
/// Uses the same walk streams as [`context_embedding`].
pub fn walk_sentences(g: &KnowledgeGraph, params: WalkParams, seed: u64, underscores: bool) -> Result<Vec<(String, usize, String)>> {
    let mut out = Vec::with_capacity(g.num_entities() * params.t);
    for e in 0..g.num_entities() {
        let uri = g.entity_name(e).unwrap_or_default();
        for (t, walk) in entity_walks(g, e, params, seed)?.into_iter().enumerate() {
            out.push((uri.to_owned(), t, walk.sentence(g, underscores)));
        }
    }
    Ok(out)
}

pub fn write_walk_sentences(path: impl AsRef<Path>, sentences: &[(String, usize, String)]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        for (uri, t, s) in sentences {
            writeln!(w, "{uri}\t{t}\t{s}")?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Name view, context view, and their row-wise concatenation.
#[derive(Debug, Clone)]
pub struct MultiViewFeatures {
    pub name_part: Array2<f64>,
    pub context_part: Array2<f64>,
    pub combined: Array2<f64>,
}

pub fn multiview_concat(name: Array2<f64>, context: Array2<f64>) -> Result<MultiViewFeatures> {
    if name.nrows() != context.nrows() {
        return Err(Error::Shape(format!(
            "name view has {} rows, context view has {}",
            name.nrows(),
            context.nrows()
        )));
    }
    let combined = concatenate(Axis(1), &[name.view(), context.view()]).expect("row counts match");
    Ok(MultiViewFeatures { name_part: name, context_part: context, combined })
}
