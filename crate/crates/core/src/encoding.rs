//! Text embeddings for questions and relations, and the learnable maps that
//! bring them into the model's working dimension.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId, RelationKind};
use crate::tensor::{add_assign, glorot_vec, Matrix};

pub const DEFAULT_HASH_DIM: usize = 512;
pub const DEFAULT_FILE_DIM: usize = 5120;
/// Seed mixed into every token hash of [`HashProvider`].
pub const HASH_SEED: u64 = 0x5EED_E7D0_2024_0001;

/// Raw (frozen) text embedding of length `d_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbedding(pub Vec<f64>);

impl RawEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn lookup(&self, text: &str) -> Result<RawEmbedding>;
}

/// Rejects blank text, then delegates to the provider.
pub fn encode_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<RawEmbedding> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("cannot encode empty text".into()));
    }
    provider.lookup(text)
}

/// Signed feature hashing of lowercased whitespace tokens, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashProvider {
    dim: usize,
    seed: u64,
}

impl HashProvider {
    pub fn new(dim: usize) -> Self {
        Self::with_seed(dim, HASH_SEED)
    }

    pub fn with_seed(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "hash dimension must be positive");
        Self { dim, seed }
    }
}

// FNV-1a, stable across platforms and toolchains.
fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbeddingProvider for HashProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, text: &str) -> Result<RawEmbedding> {
        let mut v = vec![0.0; self.dim];
        for token in text.split_whitespace() {
            let token = token.to_lowercase();
            let h = fnv1a(self.seed, token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(RawEmbedding(v))
    }
}

/// Embeddings read from a `d_L=<n>` header followed by `<text>\t<floats>` rows.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl FileProvider {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let dim = match lines.next() {
            Some((_, header)) => header
                .trim()
                .strip_prefix("d_L=")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::parse(path, 1, "expected header `d_L=<n>`"))?,
            None => return Err(Error::parse(path, 1, "missing `d_L=<n>` header")),
        };
        let mut rows = HashMap::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `<text>\\t<floats>`"))?;
            let vector: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, i + 1, format!("bad float: {e}")))?;
            if vector.len() != dim {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected {dim} values, found {}", vector.len()),
                ));
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(path, i + 1, "non-finite value"));
            }
            rows.insert(key.to_owned(), vector);
        }
        Ok(Self { dim, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, text: &str) -> Result<RawEmbedding> {
        self.rows
            .get(text)
            .cloned()
            .map(RawEmbedding)
            .ok_or_else(|| Error::MissingEmbedding(text.to_owned()))
    }
}

/// Learnable projection, reverse-relation map and identity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `d × d_L`
    pub w_l: Matrix,
    /// `d × d`
    pub w_neg: Matrix,
    pub b_neg: Vec<f64>,
    pub h_id: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(d: usize, d_l: usize) -> Self {
        Self {
            w_l: Matrix::zeros(d, d_l),
            w_neg: Matrix::zeros(d, d),
            b_neg: vec![0.0; d],
            h_id: vec![0.0; d],
        }
    }

    pub fn init<R: Rng>(d: usize, d_l: usize, rng: &mut R) -> Self {
        Self {
            w_l: Matrix::glorot(d, d_l, rng),
            w_neg: Matrix::glorot(d, d, rng),
            b_neg: vec![0.0; d],
            h_id: glorot_vec(d, d, 1, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_l.rows()
    }

    pub fn raw_dim(&self) -> usize {
        self.w_l.cols()
    }

    /// `W_L · raw`, no bias.
    pub fn project(&self, raw: &RawEmbedding) -> Result<Vec<f64>> {
        if raw.dim() != self.raw_dim() {
            return Err(Error::Shape(format!(
                "raw embedding has {} entries, projection expects {}",
                raw.dim(),
                self.raw_dim()
            )));
        }
        Ok(self.w_l.matvec(raw.as_slice()))
    }

    /// `W_neg · h + b_neg`
    pub fn reverse(&self, base: &[f64]) -> Vec<f64> {
        let mut out = self.w_neg.matvec(base);
        add_assign(&mut out, &self.b_neg);
        out
    }
}

/// Raw embeddings of every base relation name, computed once per graph.
#[derive(Debug, Clone)]
pub struct RelationTexts {
    raw: Vec<RawEmbedding>,
}

impl RelationTexts {
    pub fn encode(provider: &dyn EmbeddingProvider, kg: &KnowledgeGraph) -> Result<Self> {
        let raw = kg
            .relation_names()
            .iter()
            .map(|name| encode_text(provider, name))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { raw })
    }

    pub fn from_raw(raw: Vec<RawEmbedding>) -> Self {
        Self { raw }
    }

    pub fn num_base(&self) -> usize {
        self.raw.len()
    }

    pub fn raw(&self, base: RelationId) -> &RawEmbedding {
        &self.raw[base.index()]
    }
}

/// Working-dimension embeddings of every augmented relation for one
/// parameter state, laid out by relation id.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTable {
    rows: Vec<Vec<f64>>,
}

impl RelationTable {
    pub fn build(params: &EncoderParams, texts: &RelationTexts) -> Result<Self> {
        let base = texts
            .raw
            .iter()
            .map(|raw| params.project(raw))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(2 * base.len() + 1);
        rows.extend(base.iter().cloned());
        rows.extend(base.iter().map(|h| params.reverse(h)));
        rows.push(params.h_id.clone());
        Ok(Self { rows })
    }

    pub fn get(&self, rel: RelationId) -> &[f64] {
        &self.rows[rel.index()]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Uncached single-relation embedding.
pub fn relation_embedding(
    params: &EncoderParams,
    texts: &RelationTexts,
    kg: &KnowledgeGraph,
    rel: RelationId,
) -> Result<Vec<f64>> {
    if rel.index() >= kg.num_relations() {
        return Err(Error::Precondition(format!(
            "relation id {rel} out of range ({} augmented)",
            kg.num_relations()
        )));
    }
    Ok(match kg.relation_kind(rel) {
        RelationKind::Base(r) => params.project(texts.raw(r))?,
        RelationKind::Reverse(r) => params.reverse(&params.project(texts.raw(r))?),
        RelationKind::Identity => params.h_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    #[test]
    fn hash_is_deterministic_and_order_invariant() {
        let p = HashProvider::new(64);
        assert_eq!(p.lookup("a b").unwrap(), p.lookup("a b").unwrap());
        assert_eq!(p.lookup("a b").unwrap(), p.lookup("b a").unwrap());
        assert_eq!(p.lookup("A  b").unwrap(), p.lookup("a b").unwrap());
        let v = p.lookup("who directed this film").unwrap();
        let norm: f64 = v.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_rejected() {
        let p = HashProvider::new(8);
        assert!(matches!(encode_text(&p, "   "), Err(Error::Precondition(_))));
    }

    #[test]
    fn file_provider_returns_stored_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            "d_L=3\nwritten_by\t0.5 -1 2.25\nrelease year\t1e-3 0 7\nwho wrote Birdy?\t-0.125 0.0625 3\n"
        )
        .unwrap();
        let p = FileProvider::load(f.path()).unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p.len(), 3);
        assert_eq!(p.lookup("written_by").unwrap().0, vec![0.5, -1.0, 2.25]);
        assert_eq!(p.lookup("release year").unwrap().0, vec![0.001, 0.0, 7.0]);
        assert_eq!(p.lookup("who wrote Birdy?").unwrap().0, vec![-0.125, 0.0625, 3.0]);
        match p.lookup("missing") {
            Err(Error::MissingEmbedding(t)) => assert_eq!(t, "missing"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_provider_rejects_wrong_width() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "d_L=2\nx\t1 2 3\n").unwrap();
        assert!(matches!(FileProvider::load(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn project_zero_and_identity() {
        let mut p = EncoderParams::zeros(3, 3);
        p.w_l = Matrix::identity(3);
        let raw = RawEmbedding(vec![1.5, -2.0, 0.25]);
        assert_eq!(p.project(&raw).unwrap(), raw.0);
        assert_eq!(p.project(&RawEmbedding(vec![0.0; 3])).unwrap(), vec![0.0; 3]);
        assert!(matches!(p.project(&RawEmbedding(vec![0.0; 2])), Err(Error::Shape(_))));
    }

    #[test]
    fn project_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut p = EncoderParams::zeros(4, 6);
        p.w_l = Matrix::from_vec(4, 6, w.clone());
        let got = p.project(&RawEmbedding(raw.clone())).unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += w[i * 6 + j] * raw[j];
            }
            assert!((got[i] - acc).abs() < 1e-14);
        }
    }

    fn two_relation_graph() -> KnowledgeGraph {
        KnowledgeGraph::from_named_triples([("a", "r", "b"), ("b", "s", "c")])
    }

    #[test]
    fn relation_embeddings_by_kind() {
        let kg = two_relation_graph();
        let texts = RelationTexts::from_raw(vec![
            RawEmbedding(vec![1.0, 2.0, 3.0]),
            RawEmbedding(vec![-1.0, 0.5, 0.0]),
        ]);
        let mut p = EncoderParams::zeros(3, 3);
        p.w_l = Matrix::identity(3);
        p.w_neg = Matrix::identity(3);
        p.h_id = vec![0.1, 0.2, 0.3];
        let id = kg.identity_relation();
        assert_eq!(relation_embedding(&p, &texts, &kg, id).unwrap(), p.h_id);
        let r = kg.relation_id("r").unwrap();
        let rev = relation_embedding(&p, &texts, &kg, kg.reverse_of(r)).unwrap();
        assert_eq!(rev, vec![1.0, 2.0, 3.0]);
        assert!(relation_embedding(&p, &texts, &kg, RelationId(5)).is_err());
    }

    #[test]
    fn reverse_with_random_map_matches_hand_computation() {
        let kg = two_relation_graph();
        let texts = RelationTexts::from_raw(vec![
            RawEmbedding(vec![1.0, -2.0, 0.5]),
            RawEmbedding(vec![0.0, 0.0, 1.0]),
        ]);
        let mut p = EncoderParams::zeros(3, 3);
        p.w_l = Matrix::identity(3);
        p.w_neg = Matrix::from_vec(3, 3, vec![0.2, -0.1, 0.4, 1.0, 0.0, -0.5, 0.3, 0.3, 0.3]);
        p.b_neg = vec![0.01, 0.02, 0.03];
        let r = kg.relation_id("r").unwrap();
        let got = relation_embedding(&p, &texts, &kg, kg.reverse_of(r)).unwrap();
        // rows · (1, -2, 0.5) + b
        let expected = [
            0.2 + 0.2 + 0.2 + 0.01,
            1.0 + 0.0 - 0.25 + 0.02,
            0.3 - 0.6 + 0.15 + 0.03,
        ];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn cached_table_matches_uncached_lookup_bitwise() {
        let kg = two_relation_graph();
        let provider = HashProvider::new(16);
        let texts = RelationTexts::encode(&provider, &kg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = EncoderParams::init(5, 16, &mut rng);
        let table = RelationTable::build(&p, &texts).unwrap();
        assert_eq!(table.len(), kg.num_relations());
        for rel in 0..kg.num_relations() as u32 {
            let rel = RelationId(rel);
            assert_eq!(table.get(rel), relation_embedding(&p, &texts, &kg, rel).unwrap().as_slice());
        }
    }
}
