//! Dictionary-encoded knowledge graph with reverse-augmented CSR adjacency.
//!
//! Relation ids are laid out as `[0, R)` for base relations, `[R, 2R)` for
//! their reverses (`R + r` is the reverse of `r`) and `2R` for the identity
//! relation. Identity self-loops are never stored; the explorer adds them.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// What an augmented relation id denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    Base(RelationId),
    /// Reverse of the contained base relation.
    Reverse(RelationId),
    Identity,
}

#[derive(Debug, Clone, Default)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    num_base_triples: usize,
    /// CSR row offsets, one row per entity.
    offsets: Vec<usize>,
    /// `(relation, tail)` pairs sorted within each row.
    targets: Vec<(RelationId, EntityId)>,
}

impl KnowledgeGraph {
    /// Builds a graph from `(head, relation, tail)` name triples. Ids are
    /// assigned in first-appearance order (head, then relation, then tail of
    /// each triple); duplicate triples are dropped.
    pub fn from_named_triples<I, S>(triples: I) -> Self
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: AsRef<str>,
    {
        let mut entities = Interner::default();
        let mut relations = Interner::default();
        let mut seen = HashSet::new();
        let mut base = Vec::new();
        for (h, r, t) in triples {
            let h = entities.intern(h.as_ref());
            let r = relations.intern(r.as_ref());
            let t = entities.intern(t.as_ref());
            if seen.insert((h, r, t)) {
                base.push((h, r, t));
            }
        }
        Self::build(entities, relations, base)
    }

    fn build(entities: Interner, relations: Interner, base: Vec<(u32, u32, u32)>) -> Self {
        let n = entities.names.len();
        let num_rel = relations.names.len() as u32;
        let mut edges: Vec<(u32, u32, u32)> = Vec::with_capacity(base.len() * 2);
        for &(h, r, t) in &base {
            edges.push((h, r, t));
            edges.push((t, num_rel + r, h));
        }
        edges.sort_unstable();
        edges.dedup();

        let mut offsets = vec![0usize; n + 1];
        for &(h, _, _) in &edges {
            offsets[h as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = edges
            .into_iter()
            .map(|(_, r, t)| (RelationId(r), EntityId(t)))
            .collect();

        Self {
            entities,
            relations,
            num_base_triples: base.len(),
            offsets,
            targets,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.names.len()
    }

    /// `|R|`, the number of base relations.
    pub fn num_base_relations(&self) -> usize {
        self.relations.names.len()
    }

    /// `2|R| + 1`
    pub fn num_relations(&self) -> usize {
        2 * self.num_base_relations() + 1
    }

    pub fn num_base_triples(&self) -> usize {
        self.num_base_triples
    }

    /// Number of stored augmented edges (base plus reverse).
    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn identity_relation(&self) -> RelationId {
        RelationId(2 * self.num_base_relations() as u32)
    }

    pub fn reverse_of(&self, base: RelationId) -> RelationId {
        debug_assert!(base.index() < self.num_base_relations());
        RelationId(base.0 + self.num_base_relations() as u32)
    }

    pub fn relation_kind(&self, rel: RelationId) -> RelationKind {
        let r = self.num_base_relations() as u32;
        match rel.0 {
            x if x < r => RelationKind::Base(rel),
            x if x < 2 * r => RelationKind::Reverse(RelationId(x - r)),
            x if x == 2 * r => RelationKind::Identity,
            _ => panic!("relation id {rel} out of range ({} augmented)", 2 * r + 1),
        }
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.ids.get(name).copied().map(EntityId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities.names[id.index()]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities.names
    }

    /// Base relation lookup by name.
    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.ids.get(name).copied().map(RelationId)
    }

    /// Name of a base relation.
    pub fn relation_name(&self, base: RelationId) -> &str {
        &self.relations.names[base.index()]
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations.names
    }

    /// Stored augmented out-edges of `e`, sorted by `(relation, tail)`.
    /// Does not include the identity self-loop.
    ///
    /// Panics if `e` is not a valid entity id.
    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        assert!(
            e.index() < self.num_entities(),
            "entity id {e} out of range ({} entities)",
            self.num_entities()
        );
        &self.targets[self.offsets[e.index()]..self.offsets[e.index() + 1]]
    }

    pub fn out_degree(&self, e: EntityId) -> usize {
        self.out_edges(e).len()
    }

    pub fn max_out_degree(&self) -> usize {
        self.offsets.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    /// Iterates the stored base triples (not reverses) in adjacency order.
    pub fn base_triples(&self) -> impl Iterator<Item = Triple> + '_ {
        let r = self.num_base_relations() as u32;
        (0..self.num_entities()).flat_map(move |h| {
            self.out_edges(EntityId(h as u32))
                .iter()
                .filter(move |(rel, _)| rel.0 < r)
                .map(move |&(relation, tail)| Triple {
                    head: EntityId(h as u32),
                    relation,
                    tail,
                })
        })
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|ext| ext == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(reader)))
}

/// Loads a `head<TAB>relation<TAB>tail` file, transparently gunzipping
/// `*.gz` paths. Blank lines are ignored.
pub fn load_triples(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let reader = open_maybe_gz(path)?;
    let mut triples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                triples.push((h.to_owned(), r.to_owned(), t.to_owned()));
            }
            _ => {
                return Err(Error::parse(
                    path,
                    i + 1,
                    "expected three non-empty tab-separated fields",
                ))
            }
        }
    }
    Ok(KnowledgeGraph::from_named_triples(triples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture() -> KnowledgeGraph {
        KnowledgeGraph::from_named_triples([
            ("a", "r0", "b"),
            ("a", "r1", "c"),
            ("b", "r0", "c"),
            ("c", "r1", "d"),
        ])
    }

    #[test]
    fn single_edge_gets_reverse() {
        let kg = KnowledgeGraph::from_named_triples([("a", "r0", "b")]);
        let a = kg.entity_id("a").unwrap();
        let b = kg.entity_id("b").unwrap();
        let r0 = kg.relation_id("r0").unwrap();
        assert_eq!(kg.out_edges(a), &[(r0, b)]);
        assert_eq!(kg.out_edges(b), &[(kg.reverse_of(r0), a)]);
        assert_eq!(kg.num_relations(), 3);
    }

    #[test]
    fn degrees_match_hand_count() {
        let kg = fixture();
        // a: r0->b, r1->c ; b: r0->c, -r0->a ; c: r1->d, -r1->a, -r0->b ; d: -r1->c
        let degrees: Vec<usize> = ["a", "b", "c", "d"]
            .iter()
            .map(|n| kg.out_degree(kg.entity_id(n).unwrap()))
            .collect();
        assert_eq!(degrees, vec![2, 2, 3, 1]);
        assert_eq!(kg.num_edges(), 8);
        assert_eq!(kg.max_out_degree(), 3);
    }

    #[test]
    fn out_edges_sorted_by_relation_then_tail() {
        let kg = fixture();
        let c = kg.entity_id("c").unwrap();
        let edges = kg.out_edges(c);
        let mut sorted = edges.to_vec();
        sorted.sort();
        assert_eq!(edges, sorted.as_slice());
    }

    #[test]
    fn self_loop_triple_stores_both_directions() {
        let kg = KnowledgeGraph::from_named_triples([("a", "r", "a")]);
        let a = kg.entity_id("a").unwrap();
        assert_eq!(kg.out_degree(a), 2);
        assert_eq!(kg.relation_kind(kg.identity_relation()), RelationKind::Identity);
    }

    #[test]
    fn augmented_count_for_nine_relations() {
        let triples: Vec<_> = (0..9).map(|i| ("x".to_string(), format!("r{i}"), "y".to_string())).collect();
        let kg = KnowledgeGraph::from_named_triples(triples);
        assert_eq!(kg.num_base_relations(), 9);
        assert_eq!(kg.num_relations(), 19);
    }

    #[test]
    fn relation_kinds() {
        let kg = fixture();
        let r1 = kg.relation_id("r1").unwrap();
        assert_eq!(kg.relation_kind(r1), RelationKind::Base(r1));
        assert_eq!(kg.relation_kind(kg.reverse_of(r1)), RelationKind::Reverse(r1));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_entity_panics() {
        fixture().out_edges(EntityId(99));
    }

    #[test]
    fn load_empty_file() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let kg = load_triples(f.path()).unwrap();
        assert_eq!(kg.num_entities(), 0);
        assert_eq!(kg.num_base_relations(), 0);
        assert_eq!(kg.num_relations(), 1);
    }

    #[test]
    fn load_reports_line_of_malformed_row() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a\tr\tb").unwrap();
        writeln!(f, "a\tr").unwrap();
        let err = load_triples(f.path()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn load_dedups_and_assigns_first_appearance_ids() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "b\tr\ta\nb\tr\ta\na\ts\tc\n").unwrap();
        let kg = load_triples(f.path()).unwrap();
        assert_eq!(kg.entity_names(), &["b", "a", "c"]);
        assert_eq!(kg.relation_names(), &["r", "s"]);
        assert_eq!(kg.num_base_triples(), 2);
    }

    #[test]
    fn load_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kg.tsv.gz");
        let mut enc = flate2::write::GzEncoder::new(File::create(&path).unwrap(), flate2::Compression::default());
        enc.write_all(b"a\tr\tb\n").unwrap();
        enc.finish().unwrap();
        let kg = load_triples(&path).unwrap();
        assert_eq!(kg.num_base_triples(), 1);
    }
}
