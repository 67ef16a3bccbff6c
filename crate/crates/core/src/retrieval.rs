//! Tokenization, an in-memory inverted index and BM25 top-k search.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::DocStore;
use crate::error::{Error, Result};

/// English stopwords removed by [`tokenize`] (33 words).
pub const STOPWORDS: [&str; 33] = [
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "that", "the", "their", "then", "there", "these", "they",
    "this", "to", "was", "what", "will", "with",
];

fn is_stopword(t: &str) -> bool {
    STOPWORDS.binary_search(&t).is_ok()
}

/// Lowercases, splits on non-alphanumeric characters and drops stopwords.
/// No stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !is_stopword(t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; never negative.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_index: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
    avg_doc_len: f64,
    params: Bm25Params,
}

/// One ranked result list, scores non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl InvertedIndex {
    pub fn build(docs: &DocStore) -> Result<Self> {
        Self::build_with(docs, Bm25Params::default())
    }

    pub fn build_with(docs: &DocStore, params: Bm25Params) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidInput("cannot index an empty collection".into()));
        }
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        // DocStore iterates in id order, so postings come out sorted by doc.
        for (row, (id, text)) in docs.iter().enumerate() {
            let tokens = tokenize(text);
            doc_lengths.push(tokens.len() as u32);
            doc_ids.push(id.to_string());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push(Posting {
                    doc: row as u32,
                    tf: n,
                });
            }
        }
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|p| p.doc);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_lengths.len() as f64;
        let doc_index = doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as u32))
            .collect();
        Ok(InvertedIndex {
            doc_ids,
            doc_index,
            doc_lengths,
            postings,
            avg_doc_len,
            params,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.doc_count(), self.df(term))
    }

    pub fn doc_id(&self, row: u32) -> &str {
        &self.doc_ids[row as usize]
    }

    pub fn doc_row(&self, id: &str) -> Option<u32> {
        self.doc_index.get(id).copied()
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.doc_row(id).map(|r| self.doc_lengths[r as usize])
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    fn term_weight(&self, idf: f64, tf: u32, len: u32, k1: f64, b: f64) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - b + b * len as f64 / self.avg_doc_len;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one document. Repeated query terms count repeatedly.
    pub fn bm25_score(&self, q_terms: &[String], doc: &str, k1: f64, b: f64) -> Result<f64> {
        let row = self
            .doc_row(doc)
            .ok_or_else(|| Error::UnknownId(doc.to_string()))?;
        let len = self.doc_lengths[row as usize];
        let mut score = 0.0;
        for t in q_terms {
            let list = self.postings(t);
            if let Ok(pos) = list.binary_search_by_key(&row, |p| p.doc) {
                score += self.term_weight(idf(self.doc_count(), list.len()), list[pos].tf, len, k1, b);
            }
        }
        Ok(score)
    }

    /// Top-`k` documents as `(row, score)`, score descending then doc id
    /// ascending.
    pub fn search_terms(&self, q_terms: &[String], k: usize) -> Vec<(u32, f64)> {
        let Bm25Params { k1, b } = self.params;
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in q_terms {
            let list = self.postings(t);
            if list.is_empty() {
                continue;
            }
            let w = idf(self.doc_count(), list.len());
            for p in list {
                let s = self.term_weight(w, p.tf, self.doc_lengths[p.doc as usize], k1, b);
                *acc.entry(p.doc).or_insert(0.0) += s;
            }
        }
        let mut hits: Vec<(u32, f64)> = acc.into_iter().collect();
        // rows are in doc-id order, so comparing rows compares ids
        let cmp = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k < hits.len() {
            hits.select_nth_unstable_by(k, cmp);
            hits.truncate(k);
        }
        hits.sort_unstable_by(cmp);
        hits
    }

    pub fn search(&self, query: &str, k: usize) -> Vec<(u32, f64)> {
        self.search_terms(&tokenize(query), k)
    }

    pub fn ranking(&self, query_id: &str, query: &str, k: usize) -> Ranking {
        Ranking {
            query_id: query_id.to_string(),
            entries: self
                .search(query, k)
                .into_iter()
                .map(|(row, s)| (self.doc_id(row).to_string(), s))
                .collect(),
        }
    }
}

/// Writes rankings as a TREC run file: `qid Q0 docid rank score tag`.
pub fn write_run(path: &Path, rankings: &[Ranking], tag: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rankings {
        for (rank, (doc, score)) in r.entries.iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {:.6} {}", r.query_id, doc, rank + 1, score, tag)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a TREC run file back into per-query rankings (in file order of
/// first appearance).
pub fn read_run(path: &Path) -> Result<Vec<Ranking>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<Ranking> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(Error::parse(path, i + 1, "expected `qid Q0 docid rank score tag`"));
        }
        let score: f64 = f[4]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad score `{}`", f[4])))?;
        match out.last_mut() {
            Some(r) if r.query_id == f[0] => r.entries.push((f[2].to_string(), score)),
            _ => out.push(Ranking {
                query_id: f[0].to_string(),
                entries: vec![(f[2].to_string(), score)],
            }),
        }
    }
    Ok(out)
}
