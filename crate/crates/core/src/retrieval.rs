//! Cosine-similarity retrieval over L2-normalized visual features and the
//! top-k retrieval accuracy: a query scores 1 at k when an image of the
//! same item is among its k most similar gallery images.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::corpus::ImageSource;
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;

pub const INDEX_MAGIC: &[u8; 4] = b"WIDX";
pub const INDEX_VERSION: u16 = 1;

/// The retrieval k grid used by default.
pub const DEFAULT_KS: &[usize] = &[1, 5, 10, 20, 30, 40, 50];

const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub item_id: String,
    pub record_id: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    rows: Vec<IndexRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    /// Insertion position in the gallery.
    pub position: usize,
    pub record_id: String,
    pub item_id: String,
    pub similarity: f64,
}

/// L2-normalize; `None` for the zero vector.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-norm visual feature for one image.
pub fn embed(model: &EmbeddingModel, source: &dyn ImageSource) -> Result<Vec<f64>> {
    let z = model.extract(source.input())?;
    normalize(&z).ok_or_else(|| Error::ZeroEmbedding(source.record_id().to_string()))
}

/// Ranking order: higher similarity first, then lower insertion position.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked {
    similarity: f64,
    position: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    /// `Greater` means ranked ahead.
    fn cmp(&self, other: &Self) -> Ordering {
        self.similarity
            .partial_cmp(&other.similarity)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.position.cmp(&self.position))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RetrievalIndex {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    /// Normalize and append. Duplicate record ids are allowed.
    pub fn insert(&mut self, item_id: &str, record_id: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        let embedding = normalize(vector).ok_or_else(|| Error::ZeroEmbedding(record_id.to_string()))?;
        self.rows.push(IndexRow {
            item_id: item_id.to_string(),
            record_id: record_id.to_string(),
            embedding,
        });
        Ok(())
    }

    /// Embed every gallery image with `model` and index it.
    pub fn build<S: ImageSource + Sync>(model: &EmbeddingModel, gallery: &[S]) -> Result<Self> {
        if gallery.is_empty() {
            return Err(Error::InvalidInput("gallery is empty".into()));
        }
        let features: Vec<Vec<f64>> = gallery
            .par_iter()
            .map(|s| model.extract(s.input()))
            .collect::<Result<_>>()?;
        let mut index = Self::new(model.dim());
        for (s, z) in gallery.iter().zip(&features) {
            index.insert(s.item_id(), s.record_id(), z)?;
        }
        Ok(index)
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        Ok(())
    }

    /// Exact top-`k` rows by cosine similarity to a unit-norm query. Ties go
    /// to the earlier-inserted row.
    pub fn query(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        self.query_excluding(query, k, None)
    }

    /// Like [`query`](Self::query), skipping rows whose record id equals
    /// `exclude_record`.
    pub fn query_excluding(&self, query: &[f64], k: usize, exclude_record: Option<&str>) -> Result<Vec<Hit>> {
        self.check_query(query)?;
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        // min-heap on rank of the k best seen so far
        let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
        for (position, row) in self.rows.iter().enumerate() {
            if exclude_record.is_some_and(|id| id == row.record_id) {
                continue;
            }
            let cand = Ranked {
                similarity: cosine(query, &row.embedding),
                position,
            };
            if heap.len() < k {
                heap.push(std::cmp::Reverse(cand));
            } else if let Some(worst) = heap.peek() {
                if cand > worst.0 {
                    heap.pop();
                    heap.push(std::cmp::Reverse(cand));
                }
            }
        }
        let mut best: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
        best.sort_by(|a, b| b.cmp(a));
        Ok(best
            .into_iter()
            .map(|r| {
                let row = &self.rows[r.position];
                Hit {
                    position: r.position,
                    record_id: row.record_id.clone(),
                    item_id: row.item_id.clone(),
                    similarity: r.similarity,
                }
            })
            .collect())
    }

    /// 1-based rank of the best-ranked row of `item_id`, if any.
    pub fn first_match_rank(
        &self,
        query: &[f64],
        item_id: &str,
        exclude_record: Option<&str>,
    ) -> Result<Option<usize>> {
        self.check_query(query)?;
        let eligible = |row: &IndexRow| !exclude_record.is_some_and(|id| id == row.record_id);
        let sims: Vec<Option<Ranked>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(position, row)| {
                eligible(row).then(|| Ranked {
                    similarity: cosine(query, &row.embedding),
                    position,
                })
            })
            .collect();
        let best_match = sims
            .iter()
            .zip(&self.rows)
            .filter_map(|(r, row)| r.filter(|_| row.item_id == item_id))
            .max();
        Ok(best_match.map(|m| 1 + sims.iter().flatten().filter(|r| **r > m).count()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(INDEX_MAGIC);
        w.u16(INDEX_VERSION);
        w.u32(self.dim as u32);
        w.u64(self.rows.len() as u64);
        for row in &self.rows {
            w.str(&row.item_id);
            w.str(&row.record_id);
            for &v in &row.embedding {
                w.f64(v);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const KIND: &str = "index";
        let mut r = Reader::new(bytes, KIND);
        if r.take(4, "magic")? != INDEX_MAGIC {
            return Err(Error::corrupt(KIND, "bad magic"));
        }
        let version = r.u16("version")?;
        if version != INDEX_VERSION {
            return Err(Error::corrupt(KIND, format!("unsupported version {version}")));
        }
        let dim = r.u32("dimension")? as usize;
        let n = r.u64("row count")?;
        let mut rows = Vec::new();
        for i in 0..n {
            let item_id = r.str("item id")?;
            let record_id = r.str("record id")?;
            let embedding = (0..dim).map(|_| r.f64("embedding")).collect::<Result<Vec<_>>>()?;
            let norm = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs().is_nan() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::corrupt(KIND, format!("row {i} is not unit norm ({norm})")));
            }
            rows.push(IndexRow {
                item_id,
                record_id,
                embedding,
            });
        }
        r.expect_end()?;
        Ok(Self { dim, rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub record_id: String,
    pub item_id: String,
    /// Unit-norm query embedding.
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub record_id: String,
    pub item_id: String,
    /// 1-based rank of the first gallery image of the same item.
    pub first_match_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub accuracy: BTreeMap<usize, f64>,
    pub ranks: Vec<QueryRank>,
}

/// Top-k retrieval accuracy for every k in `ks`. With `exclude_self`, the
/// gallery rows carrying the query's own record id are ignored.
pub fn topk_accuracy(
    index: &RetrievalIndex,
    queries: &[RetrievalQuery],
    ks: &[usize],
    exclude_self: bool,
) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::InvalidInput("no queries".into()));
    }
    if ks.contains(&0) {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let ranks: Vec<QueryRank> = queries
        .par_iter()
        .map(|q| {
            let exclude = exclude_self.then_some(q.record_id.as_str());
            Ok(QueryRank {
                record_id: q.record_id.clone(),
                item_id: q.item_id.clone(),
                first_match_rank: index.first_match_rank(&q.embedding, &q.item_id, exclude)?,
            })
        })
        .collect::<Result<_>>()?;
    let accuracy = ks
        .iter()
        .map(|&k| {
            let hits = ranks
                .iter()
                .filter(|r| r.first_match_rank.is_some_and(|rank| rank <= k))
                .count();
            (k, hits as f64 / ranks.len() as f64)
        })
        .collect();
    Ok(RetrievalReport { accuracy, ranks })
}

/// Embed query images with `model`.
pub fn embed_queries<S: ImageSource + Sync>(model: &EmbeddingModel, sources: &[S]) -> Result<Vec<RetrievalQuery>> {
    sources
        .par_iter()
        .map(|s| {
            Ok(RetrievalQuery {
                record_id: s.record_id().to_string(),
                item_id: s.item_id().to_string(),
                embedding: embed(model, s)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_unit(r: &mut rng::Rng, dim: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng::normal(r)).collect();
        normalize(&v).unwrap()
    }

    #[test]
    fn insert_normalizes() {
        let mut idx = RetrievalIndex::new(2);
        idx.insert("i", "r", &[3.0, 4.0]).unwrap();
        let e = &idx.rows()[0].embedding;
        assert!((e[0] - 0.6).abs() < 1e-15 && (e[1] - 0.8).abs() < 1e-15);
        assert!(matches!(idx.insert("i", "z", &[0.0, 0.0]), Err(Error::ZeroEmbedding(id)) if id == "z"));
        assert!(matches!(
            idx.insert("i", "r", &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        idx.insert("i", "r", &[1.0, 1.0]).unwrap();
        assert_eq!(idx.len(), 2);
    }

    #[test]
    fn self_query_first() {
        let mut r = rng::seeded(1);
        let mut idx = RetrievalIndex::new(5);
        let vs: Vec<_> = (0..20).map(|_| random_unit(&mut r, 5)).collect();
        for (i, v) in vs.iter().enumerate() {
            idx.insert(&format!("i{i}"), &format!("r{i}"), v).unwrap();
        }
        let hits = idx.query(&vs[7], 3).unwrap();
        assert_eq!(hits[0].position, 7);
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_ties_keep_insertion_order() {
        let mut idx = RetrievalIndex::new(3);
        for i in 0..5 {
            let v = if i % 2 == 0 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, -1.0] };
            idx.insert("x", &format!("r{i}"), &v).unwrap();
        }
        let hits = idx.query(&[1.0, 0.0, 0.0], 5).unwrap();
        assert_eq!(hits.iter().map(|h| h.position).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
        assert!(hits.iter().all(|h| h.similarity == 0.0));
    }

    #[test]
    fn query_matches_full_sort() {
        let mut r = rng::seeded(2);
        for _ in 0..20 {
            let mut idx = RetrievalIndex::new(4);
            // coarse values produce exact ties
            for i in 0..200 {
                let v: Vec<f64> = (0..4).map(|_| (rng::below(&mut r, 3) as f64) - 1.0).collect();
                if v.iter().all(|x| *x == 0.0) {
                    continue;
                }
                idx.insert("x", &format!("r{i}"), &v).unwrap();
            }
            let q = random_unit(&mut r, 4);
            let mut oracle: Vec<(f64, usize)> = idx
                .rows()
                .iter()
                .enumerate()
                .map(|(i, row)| (cosine(&q, &row.embedding), i))
                .collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for k in [1, 7, 50, 500] {
                let got: Vec<usize> = idx.query(&q, k).unwrap().iter().map(|h| h.position).collect();
                let want: Vec<usize> = oracle.iter().take(k).map(|o| o.1).collect();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn exclude_self() {
        let mut idx = RetrievalIndex::new(2);
        idx.insert("a", "q", &[1.0, 0.0]).unwrap();
        idx.insert("a", "other", &[0.0, 1.0]).unwrap();
        idx.insert("b", "third", &[1.0, 0.1]).unwrap();
        let hits = idx.query_excluding(&[1.0, 0.0], 3, Some("q")).unwrap();
        assert!(hits.iter().all(|h| h.record_id != "q"));
        let queries = [RetrievalQuery {
            record_id: "q".into(),
            item_id: "a".into(),
            embedding: vec![1.0, 0.0],
        }];
        let with = topk_accuracy(&idx, &queries, &[1, 2], true).unwrap();
        assert_eq!(with.accuracy[&1], 0.0);
        assert_eq!(with.accuracy[&2], 1.0);
        let without = topk_accuracy(&idx, &queries, &[1], false).unwrap();
        assert_eq!(without.accuracy[&1], 1.0);
    }

    #[test]
    fn absent_item_scores_zero() {
        let mut idx = RetrievalIndex::new(2);
        idx.insert("a", "r1", &[1.0, 0.0]).unwrap();
        let queries = [RetrievalQuery {
            record_id: "q".into(),
            item_id: "missing".into(),
            embedding: vec![1.0, 0.0],
        }];
        let rep = topk_accuracy(&idx, &queries, &[1, 5], true).unwrap();
        assert!(rep.accuracy.values().all(|&a| a == 0.0));
        assert_eq!(rep.ranks[0].first_match_rank, None);
    }

    #[test]
    fn perfect_queries() {
        let mut idx = RetrievalIndex::new(2);
        idx.insert("a", "ga", &[1.0, 0.0]).unwrap();
        idx.insert("b", "gb", &[0.0, 1.0]).unwrap();
        let queries = vec![
            RetrievalQuery {
                record_id: "qa".into(),
                item_id: "a".into(),
                embedding: vec![1.0, 0.0],
            },
            RetrievalQuery {
                record_id: "qb".into(),
                item_id: "b".into(),
                embedding: vec![0.0, 1.0],
            },
        ];
        let rep = topk_accuracy(&idx, &queries, DEFAULT_KS, true).unwrap();
        assert!(rep.accuracy.values().all(|&a| a == 1.0));
    }

    #[test]
    fn accuracy_monotone_and_saturates() {
        let mut r = rng::seeded(4);
        let mut idx = RetrievalIndex::new(3);
        for i in 0..60 {
            idx.insert(&format!("item{}", i % 25), &format!("g{i}"), &random_unit(&mut r, 3))
                .unwrap();
        }
        let queries: Vec<RetrievalQuery> = (0..40)
            .map(|i| RetrievalQuery {
                record_id: format!("q{i}"),
                item_id: format!("item{}", i % 30),
                embedding: random_unit(&mut r, 3),
            })
            .collect();
        let ks: Vec<usize> = (1..=60).collect();
        let rep = topk_accuracy(&idx, &queries, &ks, true).unwrap();
        let accs: Vec<f64> = rep.accuracy.values().copied().collect();
        assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        let present = queries
            .iter()
            .filter(|q| (0..25).any(|i| q.item_id == format!("item{i}")))
            .count();
        assert_eq!(rep.accuracy[&60], present as f64 / queries.len() as f64);
    }

    #[test]
    fn first_match_rank_agrees_with_query() {
        let mut r = rng::seeded(5);
        let mut idx = RetrievalIndex::new(4);
        for i in 0..100 {
            idx.insert(&format!("it{}", i % 10), &format!("g{i}"), &random_unit(&mut r, 4))
                .unwrap();
        }
        for _ in 0..30 {
            let q = random_unit(&mut r, 4);
            let item = format!("it{}", rng::below(&mut r, 10));
            let rank = idx.first_match_rank(&q, &item, None).unwrap().unwrap();
            let hits = idx.query(&q, 100).unwrap();
            let pos = hits.iter().position(|h| h.item_id == item).unwrap();
            assert_eq!(rank, pos + 1);
        }
    }

    #[test]
    fn persistence_round_trip() {
        let mut r = rng::seeded(6);
        let mut idx = RetrievalIndex::new(3);
        for i in 0..10 {
            idx.insert(&format!("i{i}"), &format!("r{i}é"), &random_unit(&mut r, 3))
                .unwrap();
        }
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..4], b"WIDX");
        let back = RetrievalIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        assert!(RetrievalIndex::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn cosine_bounds() {
        let mut r = rng::seeded(7);
        for _ in 0..200 {
            let a = random_unit(&mut r, 6);
            let b = random_unit(&mut r, 6);
            assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            assert!((cosine(&a, &neg) + 1.0).abs() < 1e-12);
            assert!(cosine(&a, &b).abs() <= 1.0 + 1e-12);
        }
    }
}
