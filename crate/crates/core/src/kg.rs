//! Knowledge graph ingestion, interning and neighborhood queries.
//!
//! Graphs hold relation triples only. Entity and relation ids are dense and
//! assigned in first-appearance order, so parsing the same file twice always
//! yields the same ids.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

/// Which source graph an entity or file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphTag {
    Kg1,
    Kg2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationTriple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl RelationTriple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

/// One incident edge as seen from an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub relation: RelationId,
    pub neighbor: EntityId,
    pub direction: Direction,
}

/// Bidirectional string table with dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    /// Appends `name` under a fresh id even if it is already present. Lookup
    /// by name then returns the earliest id.
    fn push(&mut self, name: &str) -> usize {
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.entry(name.to_owned()).or_insert(id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    pub tag: GraphTag,
    entities: Interner,
    relations: Interner,
    triples: Vec<RelationTriple>,
    triple_set: HashSet<RelationTriple>,
    adjacency: Vec<Vec<Edge>>,
}

impl KnowledgeGraph {
    pub fn new(tag: GraphTag) -> Self {
        Self {
            tag,
            entities: Interner::default(),
            relations: Interner::default(),
            triples: Vec::new(),
            triple_set: HashSet::new(),
            adjacency: Vec::new(),
        }
    }

    pub fn add_entity(&mut self, name: &str) -> EntityId {
        let id = self.entities.intern(name);
        if id == self.adjacency.len() {
            self.adjacency.push(Vec::new());
        }
        id
    }

    pub fn add_relation(&mut self, name: &str) -> RelationId {
        self.relations.intern(name)
    }

    /// Inserts a triple by id. Returns `false` if it was already present.
    pub fn add_triple(&mut self, triple: RelationTriple) -> Result<bool> {
        let n = self.entities.len();
        for e in [triple.head, triple.tail] {
            if e >= n {
                return Err(Error::UnknownEntity(e));
            }
        }
        if triple.relation >= self.relations.len() {
            return Err(Error::Shape(format!("unknown relation id {}", triple.relation)));
        }
        if !self.triple_set.insert(triple) {
            return Ok(false);
        }
        self.triples.push(triple);
        self.link(triple);
        Ok(true)
    }

    /// Interns the names and inserts the triple. Returns `false` on duplicates.
    pub fn insert(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.add_entity(head);
        let r = self.add_relation(relation);
        let t = self.add_entity(tail);
        self.add_triple(RelationTriple::new(h, r, t))
            .expect("interned ids are valid")
    }

    fn link(&mut self, t: RelationTriple) {
        self.adjacency[t.head].push(Edge {
            relation: t.relation,
            neighbor: t.tail,
            direction: Direction::Out,
        });
        self.adjacency[t.tail].push(Edge {
            relation: t.relation,
            neighbor: t.head,
            direction: Direction::In,
        });
    }

    /// Adjacency recomputed from scratch out of the triple list.
    pub fn rebuilt_adjacency(&self) -> Vec<Vec<Edge>> {
        let mut copy = self.with_triples(Vec::new());
        for &t in &self.triples {
            copy.link(t);
        }
        copy.adjacency
    }

    /// Same entity and relation tables with a different triple set. Triples
    /// must reference ids of this graph.
    pub fn with_triples(&self, triples: impl IntoIterator<Item = RelationTriple>) -> Self {
        let mut g = Self {
            tag: self.tag,
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            triples: Vec::new(),
            triple_set: HashSet::new(),
            adjacency: vec![Vec::new(); self.entities.len()],
        };
        for t in triples {
            g.add_triple(t).expect("triple ids come from the same graph");
        }
        g
    }

    pub fn from_reader<R: Read>(reader: R, tag: GraphTag, source: &str) -> Result<Self> {
        let mut g = Self::new(tag);
        let mut duplicates = 0usize;
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_err = |msg: String| Error::Parse {
                path: source.to_owned(),
                line: idx + 1,
                msg,
            };
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            if let Some(pos) = fields.iter().position(|f| f.trim().is_empty()) {
                return Err(parse_err(format!("empty token in field {}", pos + 1)));
            }
            if !g.insert(fields[0], fields[1], fields[2]) {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            log::warn!("{source}: dropped {duplicates} duplicate triples");
        }
        Ok(g)
    }

    /// Parses an OpenEA-style `rel_triples` file.
    pub fn parse_triples(path: impl AsRef<Path>, tag: GraphTag) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, tag, &path.display().to_string())
    }

    pub fn write_triples<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities.names[t.head], self.relations.names[t.relation], self.entities.names[t.tail]
            )?;
        }
        Ok(())
    }

    pub fn save_triples(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_triples(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn triples(&self) -> &[RelationTriple] {
        &self.triples
    }

    pub fn contains(&self, t: &RelationTriple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name)
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.name(id)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.name(id)
    }

    /// Incident edges of `e` in insertion order.
    pub fn edges(&self, e: EntityId) -> Result<&[Edge]> {
        self.adjacency
            .get(e)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownEntity(e))
    }

    pub fn adjacency(&self) -> &[Vec<Edge>] {
        &self.adjacency
    }

    /// Undirected neighborhood of `e`, sorted and deduplicated. Contains `e`
    /// itself iff `self_loop` is set or `e` has a reflexive triple.
    pub fn neighbors(&self, e: EntityId, self_loop: bool) -> Result<Vec<EntityId>> {
        let mut out: Vec<EntityId> = self.edges(e)?.iter().map(|edge| edge.neighbor).collect();
        if self_loop {
            out.push(e);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// `N*(i)` for every entity: the undirected neighborhood plus `i`.
    pub fn closed_neighborhoods(&self) -> Vec<Vec<EntityId>> {
        (0..self.num_entities())
            .map(|e| self.neighbors(e, true).expect("dense ids"))
            .collect()
    }
}

/// Human-readable name of a URI: its final path segment with `_` turned into
/// spaces (when `underscores` is set).
pub fn display_name(uri: &str, underscores: bool) -> String {
    let trimmed = uri.trim_end_matches('/');
    let segment = trimmed.rsplit('/').next().unwrap_or(trimmed);
    let segment = if segment.is_empty() { uri } else { segment };
    if underscores {
        segment.replace('_', " ")
    } else {
        segment.to_owned()
    }
}

/// Two source graphs under one id space. KG1 ids come first, KG2 ids are
/// shifted by the KG1 counts.
#[derive(Debug, Clone)]
pub struct PrimalGraph {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub merged: KnowledgeGraph,
    pub origin: Vec<GraphTag>,
}

impl PrimalGraph {
    /// Disjoint union of the two graphs.
    pub fn build(kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> Self {
        let mut merged = KnowledgeGraph::new(GraphTag::Kg1);
        for g in [&kg1, &kg2] {
            for name in g.entities.names() {
                merged.entities.push(name);
                merged.adjacency.push(Vec::new());
            }
            for name in g.relations.names() {
                merged.relations.push(name);
            }
        }
        let (e_off, r_off) = (kg1.num_entities(), kg1.num_relations());
        for t in kg1.triples() {
            merged.add_triple(*t).expect("kg1 ids are valid");
        }
        for t in kg2.triples() {
            merged
                .add_triple(RelationTriple::new(t.head + e_off, t.relation + r_off, t.tail + e_off))
                .expect("shifted kg2 ids are valid");
        }
        let origin = std::iter::repeat_n(GraphTag::Kg1, kg1.num_entities())
            .chain(std::iter::repeat_n(GraphTag::Kg2, kg2.num_entities()))
            .collect();
        Self { kg1, kg2, merged, origin }
    }

    pub fn n1(&self) -> usize {
        self.kg1.num_entities()
    }

    pub fn n2(&self) -> usize {
        self.kg2.num_entities()
    }

    pub fn entity_to_merged(&self, tag: GraphTag, id: EntityId) -> EntityId {
        match tag {
            GraphTag::Kg1 => id,
            GraphTag::Kg2 => id + self.n1(),
        }
    }

    pub fn relation_to_merged(&self, tag: GraphTag, id: RelationId) -> RelationId {
        match tag {
            GraphTag::Kg1 => id,
            GraphTag::Kg2 => id + self.kg1.num_relations(),
        }
    }

    pub fn entity_from_merged(&self, id: EntityId) -> (GraphTag, EntityId) {
        if id < self.n1() {
            (GraphTag::Kg1, id)
        } else {
            (GraphTag::Kg2, id - self.n1())
        }
    }

    /// Merged graph over the same entity tables but with replacement triple
    /// sets for each side (ids local to each source graph).
    pub fn with_triples(&self, t1: &[RelationTriple], t2: &[RelationTriple]) -> Self {
        Self::build(self.kg1.with_triples(t1.iter().copied()), self.kg2.with_triples(t2.iter().copied()))
    }

    /// Recovers both source graphs from the merged graph.
    pub fn split(&self) -> (KnowledgeGraph, KnowledgeGraph) {
        let (n1, r1) = (self.n1(), self.kg1.num_relations());
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        for t in self.merged.triples() {
            if t.head < n1 {
                t1.push(*t);
            } else {
                t2.push(RelationTriple::new(t.head - n1, t.relation - r1, t.tail - n1));
            }
        }
        (self.kg1.with_triples(t1), self.kg2.with_triples(t2))
    }
}

/// Reads a gold link file: `uri1 <TAB> uri2` per line.
pub fn parse_links(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut links = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: "expected `uri1<TAB>uri2`".into(),
            });
        }
        links.push((fields[0].to_owned(), fields[1].to_owned()));
    }
    Ok(links)
}
