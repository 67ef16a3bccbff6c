//! Seeded synthetic corpora with planted topic structure, used by the test
//! suites and by `topicstream synth` for demos.
//!
//! Each topic owns a disjoint vocabulary. Optionally every query also carries
//! a set of shared "cue" words: a topic's relevant documents contain that
//! topic's cue while its near-miss distractors contain another topic's cue,
//! so a learned weight on a cue helps one topic and hurts the others.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocStore, QrelSet, QueryStore};
use crate::embeddings::EmbeddingTable;
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub queries_per_topic: usize,
    /// Non-relevant documents generated per query from the same topic words.
    pub distractors_per_query: usize,
    pub vocab_per_topic: usize,
    pub query_words: usize,
    pub doc_words: usize,
    pub cues: bool,
    /// Standard deviation of the embedding noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            topics: 3,
            queries_per_topic: 60,
            distractors_per_query: 3,
            vocab_per_topic: 40,
            query_words: 3,
            doc_words: 8,
            cues: false,
            noise: 0.05,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub query_vectors: EmbeddingTable,
    pub doc_vectors: EmbeddingTable,
    /// Ground-truth topic of every query.
    pub topic_of: BTreeMap<String, usize>,
}

impl SyntheticCorpus {
    /// Ground-truth clusters `(topic, queries)`.
    pub fn clusters(&self) -> Vec<(u32, Vec<String>)> {
        let mut out: Vec<(u32, Vec<String>)> = Vec::new();
        for (q, &t) in &self.topic_of {
            match out.iter_mut().find(|(c, _)| *c == t as u32) {
                Some((_, m)) => m.push(q.clone()),
                None => out.push((t as u32, vec![q.clone()])),
            }
        }
        out.sort_by_key(|c| c.0);
        out
    }
}

fn word(topic: usize, k: usize) -> String {
    format!("t{topic}w{k:03}")
}

fn cue(k: usize) -> String {
    format!("cue{k}")
}

struct VectorMaker {
    dim: usize,
    normal: Normal<f64>,
}

impl VectorMaker {
    /// Topic block plus a sub-direction, with Gaussian noise.
    fn make(&self, topic: usize, sub: usize, rng: &mut seed::Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.dim).map(|_| self.normal.sample(rng)).collect();
        v[4 * topic] += 1.0;
        v[4 * topic + 1 + sub] += 0.7;
        v
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let mut rng = seed::rng(spec.seed, "synthetic", 0);
    let dim = 4 * spec.topics.max(1);
    let maker = VectorMaker {
        dim,
        normal: Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise"),
    };
    let mut queries = QueryStore::new();
    let mut docs = DocStore::new();
    let mut qrels = QrelSet::new();
    let mut qvec = EmbeddingTable::new(dim)?;
    let mut dvec = EmbeddingTable::new(dim)?;
    let mut topic_of = BTreeMap::new();
    let all_cues: Vec<String> = (0..spec.topics).map(cue).collect();
    let half = (spec.vocab_per_topic / 2).max(1);

    for t in 0..spec.topics {
        let mut doc_no = 0usize;
        for i in 0..spec.queries_per_topic {
            let sub = i % 2;
            let qid = format!("t{t}q{i:04}");
            // each half of the vocabulary backs one sub-topic
            let pick = |rng: &mut seed::Rng, n: usize| -> Vec<String> {
                (0..n)
                    .map(|_| word(t, sub * half + rng.gen_range(0..half)))
                    .collect()
            };
            let q_words = pick(&mut rng, spec.query_words);
            let mut q_text = q_words.join(" ");
            if spec.cues {
                q_text = format!("{q_text} {}", all_cues.join(" "));
            }
            queries.insert(qid.clone(), q_text)?;
            qvec.insert(qid.clone(), &maker.make(t, sub, &mut rng))?;
            topic_of.insert(qid.clone(), t);

            let shared = spec.query_words.min(2);
            let mut make_doc = |rng: &mut seed::Rng, cue_word: Option<String>, doc_sub: usize| -> Result<String> {
                let did = format!("t{t}d{doc_no:05}");
                doc_no += 1;
                let mut words: Vec<String> = seed::sample(&q_words, shared, rng);
                while words.len() < spec.doc_words {
                    words.push(word(t, rng.gen_range(0..spec.vocab_per_topic.max(1))));
                }
                if let Some(c) = cue_word {
                    words.push(c);
                }
                docs.insert(did.clone(), words.join(" "))?;
                dvec.insert(did.clone(), &maker.make(t, doc_sub, rng))?;
                Ok(did)
            };
            let good = spec.cues.then(|| cue(t));
            let rel = make_doc(&mut rng, good, sub)?;
            qrels.add(qid.clone(), rel, 1);
            for j in 0..spec.distractors_per_query {
                let bad = (spec.cues && spec.topics > 1).then(|| cue((t + 1 + j % (spec.topics - 1)) % spec.topics));
                let s = rng.gen_range(0..2);
                make_doc(&mut rng, bad, s)?;
            }
        }
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(queries, docs, qrels),
        query_vectors: qvec,
        doc_vectors: dvec,
        topic_of,
    })
}

/// `groups × per_group` vectors around mutually orthogonal basis directions.
/// Returns the table and the planted group of every id.
pub fn planted_groups(
    groups: usize,
    per_group: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<(EmbeddingTable, BTreeMap<String, usize>)> {
    assert!(groups <= dim, "need one basis direction per group");
    let mut rng = seed::rng(seed, "planted", 0);
    let normal = Normal::new(0.0, noise).expect("finite noise");
    let mut table = EmbeddingTable::new(dim)?;
    let mut truth = BTreeMap::new();
    for g in 0..groups {
        for i in 0..per_group {
            let id = format!("g{g:02}v{i:04}");
            let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            v[g] += 1.0;
            table.insert(id.clone(), &v)?;
            truth.insert(id, g);
        }
    }
    Ok((table, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;

    #[test]
    fn generated_corpus_is_consistent() {
        let spec = SyntheticSpec { cues: true, ..Default::default() };
        let s = generate(&spec).unwrap();
        assert!(validate_corpus(&s.corpus, true).unwrap().is_empty());
        assert_eq!(s.corpus.queries.len(), 3 * 60);
        assert_eq!(s.corpus.docs.len(), 3 * 60 * 4);
        assert!(s.corpus.queries.get("t0q0000").unwrap().contains("cue2"));
        assert_eq!(s.clusters().len(), 3);
        let again = generate(&spec).unwrap();
        assert_eq!(again.corpus.docs, s.corpus.docs);
    }

    #[test]
    fn planted_groups_are_tight() {
        let (t, truth) = planted_groups(4, 10, 16, 0.04, 1).unwrap();
        assert_eq!(t.len(), 40);
        let a = "g00v0000";
        let b = "g00v0001";
        let c = "g01v0000";
        assert!(t.cosine(a, b).unwrap() > 0.8);
        assert!(t.cosine(a, c).unwrap() < 0.3);
        assert_eq!(truth[c], 1);
    }
}
