//! Top-K function retrieval by dot product between query and manual embeddings.
//!
//! The default [`HashingEmbedder`] lowercases, splits on non-alphanumerics,
//! hashes each token into a fixed number of buckets and L2-normalises the
//! resulting count vector. Ranking by raw dot product is the same as ranking
//! by `exp(dot)`, so the scores are reported unexponentiated.

use std::cmp::Ordering;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_base::{FunctionBase, FunctionSpec, StageTag};

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub components: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zeros(dimension: usize) -> Self {
        Self {
            components: vec![0.0; dimension],
        }
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.dimension() != other.dimension() {
            return Err(Error::DimensionMismatch {
                left: self.dimension(),
                right: other.dimension(),
            });
        }
        Ok(self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Maps text to a fixed-dimension vector. Implementations must be
/// deterministic.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        let mut v = EmbeddingVector::zeros(self.dimension);
        // coordinates in state summaries and examples carry no intent
        for token in tokenize(text).filter(|t| !t.chars().all(|c| c.is_ascii_digit())) {
            let bucket = (fnv1a(token.as_bytes()) % self.dimension as u64) as usize;
            v.components[bucket] += 1.0;
        }
        let norm = v.norm();
        if norm > 0.0 {
            v.components.iter_mut().for_each(|c| *c /= norm);
        }
        v
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// Embeds through an HTTP service: `POST {"text": ...}` answered by
/// `{"embedding": [f64; dimension]}`. Any failure falls back to the hashing
/// embedder of the same dimension.
pub struct RemoteEmbedder {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
    fallback: HashingEmbedder,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: std::env::var(crate::policies::TOKEN_ENV).ok(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            fallback: HashingEmbedder::new(dimension),
        }
    }

    fn fetch(&self, text: &str) -> Result<EmbeddingVector> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp: EmbedResponse = req
            .send_json(EmbedRequest { text })
            .map_err(|e| Error::Remote(e.to_string()))?
            .into_json()
            .map_err(|e| Error::Remote(e.to_string()))?;
        let v = EmbeddingVector {
            components: resp.embedding,
        };
        if v.dimension() != self.fallback.dimension() {
            return Err(Error::DimensionMismatch {
                left: v.dimension(),
                right: self.fallback.dimension(),
            });
        }
        if !v.is_finite() {
            return Err(Error::Remote("embedding has non-finite components".into()));
        }
        Ok(v)
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.fallback.dimension()
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        match self.fetch(text) {
            Ok(v) => v,
            Err(e) => {
                log::warn!(
                    "remote embedder at {} failed ({e}); using hashing embedder",
                    self.endpoint
                );
                self.fallback.embed(text)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub instructions: String,
    pub state_summary: String,
    pub stage_hint: Option<StageTag>,
}

impl RetrievalQuery {
    pub fn new(
        instructions: impl Into<String>,
        state_summary: impl Into<String>,
        stage_hint: Option<StageTag>,
    ) -> Result<Self> {
        let instructions = instructions.into();
        if instructions.trim().is_empty() {
            return Err(Error::InvalidTask("query instructions are empty".into()));
        }
        Ok(Self {
            instructions,
            state_summary: state_summary.into(),
            stage_hint,
        })
    }

    /// Labelled sections concatenated into the text that gets embedded.
    pub fn text(&self) -> String {
        let mut s = format!(
            "instructions: {}\nstate: {}",
            self.instructions, self.state_summary
        );
        if let Some(stage) = self.stage_hint {
            s.push_str(&format!("\nstage: {stage}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub score: f64,
}

/// Retrieved functions, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub items: Vec<Candidate>,
}

impl RankedCandidates {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.items.iter().any(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|c| c.name.as_str())
    }
}

/// Descending score, then ascending name.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.name.cmp(&b.name))
}

/// Retriever over one function base with cached manual embeddings.
pub struct Retriever {
    embedder: Box<dyn Embedder>,
    documents: Vec<(String, EmbeddingVector)>,
    k: usize,
}

impl Retriever {
    pub fn new(base: &FunctionBase, embedder: Box<dyn Embedder>, k: usize) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::EmptyBase);
        }
        if k == 0 {
            return Err(Error::ZeroK);
        }
        let documents = base
            .entries()
            .iter()
            .map(|spec| (spec.name.clone(), embedder.embed(&spec.document())))
            .collect();
        Ok(Self {
            embedder,
            documents,
            k,
        })
    }

    /// Hashing embedder, default dimension and K.
    pub fn with_defaults(base: &FunctionBase) -> Result<Self> {
        Self::new(base, Box::new(HashingEmbedder::default()), DEFAULT_K)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        self.embedder.embed(text)
    }

    pub fn score(&self, spec: &FunctionSpec, query: &RetrievalQuery) -> Result<f64> {
        let doc = match self.documents.iter().find(|(n, _)| *n == spec.name) {
            Some((_, v)) => v.clone(),
            None => self.embedder.embed(&spec.document()),
        };
        doc.dot(&self.embedder.embed(&query.text()))
    }

    /// The `k` best-scoring functions. When the base holds no more than `k`
    /// entries every entry is returned, still ordered by score.
    pub fn top_k(&self, query: &RetrievalQuery, k: usize) -> Result<RankedCandidates> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        let q = self.embedder.embed(&query.text());
        let mut items = self
            .documents
            .iter()
            .map(|(name, doc)| {
                Ok(Candidate {
                    name: name.clone(),
                    score: doc.dot(&q)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        items.sort_by(rank_order);
        items.truncate(k);
        Ok(RankedCandidates { items })
    }

    /// [`Self::top_k`] with the configured K.
    pub fn retrieve(&self, query: &RetrievalQuery) -> Result<RankedCandidates> {
        self.top_k(query, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_base::{build_default_base, restricted_filter_spec};
    use proptest::prelude::*;

    fn query(text: &str) -> RetrievalQuery {
        RetrievalQuery::new(text, "", None).unwrap()
    }

    #[test]
    fn embedding_is_deterministic_and_normalised() {
        let e = HashingEmbedder::default();
        let a = e.embed("Filter the VALID moves");
        assert_eq!(a, e.embed("Filter the VALID moves"));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(e.embed(""), EmbeddingVector::zeros(DEFAULT_DIMENSION));
        assert_eq!(e.embed("  ,;  "), EmbeddingVector::zeros(DEFAULT_DIMENSION));
    }

    #[test]
    fn repeated_tokens_give_parallel_vectors() {
        let e = HashingEmbedder::default();
        let once = e.embed("filter");
        let twice = e.embed("filter filter");
        assert!((once.dot(&twice).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tokenizer_splits_snake_case() {
        let tokens: Vec<_> = tokenize("filter_valid_moves(Pursuer=0)").collect();
        assert_eq!(tokens, ["filter", "valid", "moves", "pursuer", "0"]);
    }

    #[test]
    fn numeric_tokens_do_not_contribute() {
        let e = HashingEmbedder::default();
        assert_eq!(
            e.embed("pursuer (3,4) evader"),
            e.embed("pursuer (17, 20) evader")
        );
        assert_eq!(e.embed("12 7").norm(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = EmbeddingVector::zeros(3);
        let b = EmbeddingVector::zeros(4);
        assert!(matches!(
            a.dot(&b),
            Err(Error::DimensionMismatch { left: 3, right: 4 })
        ));
    }

    #[test]
    fn valid_moves_query_prefers_filter_over_distances() {
        let base = build_default_base();
        let r = Retriever::with_defaults(&base).unwrap();
        let q = query("which valid moves can each pursuer make");
        let filter = r
            .score(base.get("filter_valid_moves").unwrap(), &q)
            .unwrap();
        let dist = r.score(base.get("compute_distances").unwrap(), &q).unwrap();
        assert!(filter > dist, "{filter} vs {dist}");
    }

    #[test]
    fn disjoint_tokens_score_zero() {
        let e = HashingEmbedder::new(1 << 16);
        let a = e.embed("alpha");
        let b = e.embed("omega");
        assert_eq!(a.dot(&b).unwrap(), 0.0);
        assert_eq!(a.dot(&b).unwrap(), b.dot(&a).unwrap());
    }

    #[test]
    fn saturation_and_errors() {
        let base = build_default_base();
        let r = Retriever::with_defaults(&base).unwrap();
        let all = r.top_k(&query("pursuer"), 50).unwrap();
        assert_eq!(all.len(), base.len());
        assert!(all
            .items
            .windows(2)
            .all(|w| rank_order(&w[0], &w[1]).is_le()));
        assert!(matches!(r.top_k(&query("x"), 0), Err(Error::ZeroK)));
        let empty = FunctionBase::new(vec![]).unwrap();
        assert!(matches!(
            Retriever::with_defaults(&empty),
            Err(Error::EmptyBase)
        ));
    }

    #[test]
    fn identical_manuals_rank_by_name() {
        let mut a = restricted_filter_spec();
        a.name = "zeta".into();
        let mut b = restricted_filter_spec();
        b.name = "alpha".into();
        // names are part of the document; use a query that ignores them
        let base = FunctionBase::new(vec![a, b]).unwrap();
        let r = Retriever::new(&base, Box::new(ManualOnly), 2).unwrap();
        let ranked = r.top_k(&query("restricted area"), 2).unwrap();
        assert_eq!(ranked.items[0].score, ranked.items[1].score);
        assert_eq!(ranked.names().collect::<Vec<_>>(), ["alpha", "zeta"]);
    }

    /// Embeds everything except the first line (the function name).
    struct ManualOnly;

    impl Embedder for ManualOnly {
        fn dimension(&self) -> usize {
            DEFAULT_DIMENSION
        }
        fn embed(&self, text: &str) -> EmbeddingVector {
            let body = text.split_once('\n').map_or(text, |(_, rest)| rest);
            HashingEmbedder::default().embed(body)
        }
    }

    #[test]
    fn unreachable_remote_embedder_falls_back() {
        let remote =
            RemoteEmbedder::new("http://127.0.0.1:9/embed", 64, Duration::from_millis(200));
        assert_eq!(
            remote.embed("select best move"),
            HashingEmbedder::new(64).embed("select best move")
        );
    }

    proptest! {
        #[test]
        fn top_k_prefix_and_exp_invariance(words in proptest::collection::vec("[a-z]{1,8}", 0..12)) {
            let base = build_default_base();
            let r = Retriever::with_defaults(&base).unwrap();
            let q = RetrievalQuery::new(format!("pursuer {}", words.join(" ")), "", None).unwrap();
            let full = r.top_k(&q, base.len()).unwrap();
            for k in 1..=base.len() {
                let part = r.top_k(&q, k).unwrap();
                prop_assert_eq!(&part.items[..], &full.items[..k]);
            }
            let mut exp: Vec<Candidate> = full.items.iter()
                .map(|c| Candidate { name: c.name.clone(), score: c.score.exp() })
                .collect();
            exp.sort_by(rank_order);
            let a: Vec<_> = exp.iter().map(|c| c.name.clone()).collect();
            let b: Vec<_> = full.names().map(String::from).collect();
            prop_assert_eq!(a, b);
        }
    }
}
