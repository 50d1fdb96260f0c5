//! Okapi BM25 lexical baseline.
//!
//! `score(q, D) = Σ_t idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|D|/avgdl))`
//! with the non-negative `idf(t) = ln(1 + (N − df + 0.5)/(df + 0.5))`.

use std::collections::HashMap;

use crate::error::{validation, Result};
use crate::retrieval::{Hit, RetrievalResult};

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

/// Lowercases, then splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    term_freqs: Vec<HashMap<String, u32>>,
    doc_lengths: Vec<usize>,
    avgdl: f64,
    doc_freq: HashMap<String, usize>,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn build<I, S, T>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        Self::build_with(docs, DEFAULT_K1, DEFAULT_B)
    }

    pub fn build_with<I, S, T>(docs: I, k1: f64, b: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        if !(k1 >= 0.0 && k1.is_finite()) || !(0.0..=1.0).contains(&b) {
            return Err(validation(format!(
                "bm25 parameters k1={k1} b={b} out of range"
            )));
        }
        let mut index = Self {
            ids: Vec::new(),
            positions: HashMap::new(),
            term_freqs: Vec::new(),
            doc_lengths: Vec::new(),
            avgdl: 0.0,
            doc_freq: HashMap::new(),
            k1,
            b,
        };
        for (id, text) in docs {
            let id = id.into();
            let tokens = tokenize(text.as_ref());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *index.doc_freq.entry(t.clone()).or_default() += 1;
            }
            if index
                .positions
                .insert(id.clone(), index.ids.len())
                .is_some()
            {
                return Err(validation(format!("duplicate document id {id:?}")));
            }
            index.ids.push(id);
            index.doc_lengths.push(tokens.len());
            index.term_freqs.push(tf);
        }
        if index.ids.is_empty() {
            return Err(validation("bm25 corpus is empty"));
        }
        index.avgdl =
            index.doc_lengths.iter().sum::<usize>() as f64 / index.doc_lengths.len() as f64;
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn score_position(&self, query_tokens: &[String], pos: usize) -> f64 {
        let tf_map = &self.term_freqs[pos];
        let length_ratio = self.doc_lengths[pos] as f64 / self.avgdl;
        query_tokens
            .iter()
            .filter_map(|t| tf_map.get(t).map(|&tf| (t, f64::from(tf))))
            .map(|(t, tf)| {
                let norm = tf + self.k1 * (1.0 - self.b + self.b * length_ratio);
                self.idf(t) * tf * (self.k1 + 1.0) / norm
            })
            .sum()
    }

    pub fn score(&self, query_tokens: &[String], doc_id: &str) -> Result<f64> {
        let pos = self
            .positions
            .get(doc_id)
            .ok_or_else(|| validation(format!("unknown document {doc_id:?}")))?;
        Ok(self.score_position(query_tokens, *pos))
    }

    /// Top-`k` documents by descending score; ties keep insertion order.
    pub fn retrieve(&self, query_text: &str, k: usize) -> Result<RetrievalResult> {
        if k == 0 || k > self.len() {
            return Err(validation(format!("k={k} must be in 1..={}", self.len())));
        }
        let tokens = tokenize(query_text);
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|p| (p, self.score_position(&tokens, p)))
            .collect();
        let cmp = |x: &(usize, f64), y: &(usize, f64)| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(RetrievalResult {
            hits: scored
                .into_iter()
                .map(|(p, score)| Hit {
                    id: self.ids[p].clone(),
                    score,
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Bm25Index {
        Bm25Index::build([
            ("D1", "the cat sat"),
            ("D2", "the dog ran"),
            ("D3", "cat and dog"),
        ])
        .unwrap()
    }

    #[test]
    fn tokenizer_cases() {
        assert_eq!(tokenize("The cat, sat!"), ["the", "cat", "sat"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("x2 = x2"), ["x2", "x2"]);
        assert_eq!(tokenize("Élan_vital·ÉTÉ"), ["élan", "vital", "été"]);
    }

    #[test]
    fn hand_checked_single_term_score() {
        let idx = toy();
        assert_eq!(idx.avgdl(), 3.0);
        let s = idx.score(&tokenize("cat"), "D1").unwrap();
        assert!((s - 1.6f64.ln()).abs() < 1e-12);
        assert!((s - 0.4700).abs() < 1e-4);
        assert_eq!(idx.score(&tokenize("cat"), "D2").unwrap(), 0.0);
    }

    #[test]
    fn absent_terms_and_empty_query() {
        let idx = toy();
        assert_eq!(idx.score(&tokenize("zebra"), "D1").unwrap(), 0.0);
        for d in ["D1", "D2", "D3"] {
            assert_eq!(idx.score(&[], d).unwrap(), 0.0);
        }
        assert!(idx.score(&[], "D9").is_err());
    }

    #[test]
    fn two_term_query_prefers_d3() {
        let r = toy().retrieve("cat dog", 3).unwrap();
        assert_eq!(r.hits[0].id, "D3");
        // D1 and D2 score ln(1.6) each; insertion order breaks the tie.
        assert_eq!(r.hits[1].id, "D1");
        assert_eq!(r.hits[2].id, "D2");
    }

    #[test]
    fn single_doc_corpus() {
        let idx = Bm25Index::build([("only", "hello world")]).unwrap();
        assert_eq!(idx.retrieve("world", 1).unwrap().hits[0].id, "only");
        assert!(idx.retrieve("world", 2).is_err());
    }

    #[test]
    fn empty_corpus_and_duplicate_ids() {
        assert!(Bm25Index::build(Vec::<(String, String)>::new()).is_err());
        assert!(Bm25Index::build([("a", "x"), ("a", "y")]).is_err());
    }

    #[test]
    fn all_empty_documents_score_zero() {
        let idx = Bm25Index::build([("a", ""), ("b", "!!")]).unwrap();
        let r = idx.retrieve("anything", 2).unwrap();
        assert!(r.hits.iter().all(|h| h.score == 0.0));
    }
}
