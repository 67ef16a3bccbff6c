//! MSMarco-format queries, passages and TREC qrels.
//!
//! Stores are keyed by opaque string ids and are immutable once loaded.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// `id -> text` records loaded from a tab-separated file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TextStore {
    entries: BTreeMap<String, String>,
}

pub type QueryStore = TextStore;
pub type DocStore = TextStore;

impl TextStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a record, rejecting duplicates and blank text.
    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) -> Result<()> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidInput(format!("empty text for id `{id}`")));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::InvalidInput(format!("duplicate id `{id}`")));
        }
        self.entries.insert(id, text);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn text(&self, id: &str) -> Result<&str> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        write_tsv(path, self.iter())
    }
}

impl FromIterator<(String, String)> for TextStore {
    /// Later duplicates overwrite earlier ones; use [`TextStore::insert`] for
    /// checked construction.
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        TextStore {
            entries: iter.into_iter().collect(),
        }
    }
}

pub(crate) fn write_tsv<'a>(path: &Path, rows: impl Iterator<Item = (&'a str, &'a str)>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, text) in rows {
        writeln!(w, "{id}\t{text}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn load_tsv(path: &Path) -> Result<TextStore> {
    let mut store = TextStore::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, text)) = line.split_once('\t') else {
            return Err(Error::parse(path, lineno, "expected `id<TAB>text`"));
        };
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty id"));
        }
        if text.trim().is_empty() {
            return Err(Error::parse(path, lineno, format!("empty text for id `{id}`")));
        }
        if store.contains(id) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id: id.to_string(),
            });
        }
        store.entries.insert(id.to_string(), text.to_string());
    }
    Ok(store)
}

/// Loads `id<TAB>text` query records. Blank lines are skipped.
pub fn load_queries(path: &Path) -> Result<QueryStore> {
    load_tsv(path)
}

/// Loads `id<TAB>text` passage records. Blank lines are skipped.
pub fn load_documents(path: &Path) -> Result<DocStore> {
    load_tsv(path)
}

/// Relevance judgments: query id -> (doc id -> grade >= 1).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    pairs: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a judgment. Grades below 1 are ignored and repeated pairs keep
    /// the maximum grade.
    pub fn add(&mut self, qid: impl Into<String>, did: impl Into<String>, grade: i64) {
        if grade < 1 {
            return;
        }
        let grade = grade.min(u32::MAX as i64) as u32;
        let slot = self
            .pairs
            .entry(qid.into())
            .or_default()
            .entry(did.into())
            .or_insert(grade);
        *slot = (*slot).max(grade);
    }

    pub fn relevant(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.pairs.get(qid)
    }

    /// Relevant doc ids of a query, ascending.
    pub fn relevant_docs(&self, qid: &str) -> Vec<&str> {
        self.pairs
            .get(qid)
            .map(|m| m.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn is_judged(&self, qid: &str) -> bool {
        self.pairs.get(qid).is_some_and(|m| !m.is_empty())
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.pairs.keys().map(String::as_str)
    }

    /// Iterates `(qid, did, grade)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.pairs.iter().flat_map(|(q, docs)| {
            docs.iter()
                .map(move |(d, g)| (q.as_str(), d.as_str(), *g))
        })
    }

    /// Number of (query, doc) pairs.
    pub fn len(&self) -> usize {
        self.pairs.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn query_count(&self) -> usize {
        self.pairs.len()
    }

    /// Judgments restricted to the given queries.
    pub fn restrict<'a>(&self, qids: impl IntoIterator<Item = &'a str>) -> QrelSet {
        let mut out = QrelSet::new();
        for q in qids {
            if let Some(docs) = self.pairs.get(q) {
                out.pairs.insert(q.to_string(), docs.clone());
            }
        }
        out
    }

    /// Union; overlapping pairs keep the maximum grade.
    pub fn merge(&mut self, other: &QrelSet) {
        for (q, d, g) in other.iter() {
            self.add(q, d, g as i64);
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (q, d, g) in self.iter() {
            writeln!(w, "{q} 0 {d} {g}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads TREC qrels (`qid 0 did grade`).
pub fn load_qrels(path: &Path) -> Result<QrelSet> {
    let mut qrels = QrelSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("non-integer grade `{}`", fields[3])))?;
        qrels.add(fields[0], fields[2], grade);
    }
    Ok(qrels)
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub queries: QueryStore,
    pub docs: DocStore,
    pub qrels: QrelSet,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Query ids referenced by qrels but absent from the query store.
    pub dangling_queries: Vec<String>,
    /// `(qid, did)` judgments whose doc is absent from the doc store.
    pub dangling_docs: Vec<(String, String)>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.dangling_queries.is_empty() && self.dangling_docs.is_empty()
    }
}

impl Corpus {
    pub fn new(queries: QueryStore, docs: DocStore, qrels: QrelSet) -> Self {
        Corpus { queries, docs, qrels }
    }

    /// Loads `queries.tsv`, `collection.tsv` and `qrels.txt` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(Corpus {
            queries: load_queries(&dir.join("queries.tsv"))?,
            docs: load_documents(&dir.join("collection.tsv"))?,
            qrels: load_qrels(&dir.join("qrels.txt"))?,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.queries.write_tsv(&dir.join("queries.tsv"))?;
        self.docs.write_tsv(&dir.join("collection.tsv"))?;
        self.qrels.write(&dir.join("qrels.txt"))
    }

    /// Queries present in the store that carry at least one judgment.
    pub fn judged_queries(&self) -> BTreeSet<&str> {
        self.qrels
            .queries()
            .filter(|q| self.queries.contains(q) && self.qrels.is_judged(q))
            .collect()
    }
}

/// Lists qrel entries pointing at missing queries or docs. With `strict`,
/// any finding is an error.
pub fn validate_corpus(c: &Corpus, strict: bool) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    for q in c.qrels.queries() {
        if !c.queries.contains(q) {
            report.dangling_queries.push(q.to_string());
        }
    }
    for (q, d, _) in c.qrels.iter() {
        if !c.docs.contains(d) {
            report.dangling_docs.push((q.to_string(), d.to_string()));
        }
    }
    if strict && !report.is_empty() {
        return Err(Error::Validation(format!(
            "{} dangling queries, {} dangling docs",
            report.dangling_queries.len(),
            report.dangling_docs.len()
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_queries() {
        let f = file("q1\twhat is water shortage\nq2\tlargest freshwater source\n");
        let store = load_queries(f.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("q2"), Some("largest freshwater source"));
    }

    #[test]
    fn empty_file_is_empty_store() {
        let f = file("");
        assert!(load_queries(f.path()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_names_id_and_line() {
        let f = file("q1\ta\nq1\tb\n");
        match load_queries(f.path()) {
            Err(Error::DuplicateId { line, id, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(id, "q1");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn documents_blank_trailing_line_ignored() {
        let f = file("d1\tone\nd2\ttwo\nd3\tthree\n\n");
        assert_eq!(load_documents(f.path()).unwrap().len(), 3);
    }

    #[test]
    fn missing_tab_reports_line() {
        let f = file("d1\tone\nd2 two\n");
        match load_documents(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn qrels_basic_filter_and_collapse() {
        let q = load_qrels(file("q1 0 d1 1\n").path()).unwrap();
        assert_eq!(q.relevant("q1").unwrap().get("d1"), Some(&1));

        let q = load_qrels(file("q1 0 d1 0\n").path()).unwrap();
        assert!(q.is_empty());
        assert!(!q.is_judged("q1"));

        let q = load_qrels(file("q1 0 d1 1\nq1 0 d1 2\n").path()).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.relevant("q1").unwrap().get("d1"), Some(&2));
    }

    #[test]
    fn qrels_non_integer_grade() {
        assert!(matches!(
            load_qrels(file("q1 0 d1 x\n").path()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            load_qrels(file("q1 0 d1\n").path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn small_corpus() -> Corpus {
        let queries: QueryStore = [("q1", "a"), ("q2", "b")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let docs: DocStore = [("d1", "x"), ("d2", "y")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let mut qrels = QrelSet::new();
        qrels.add("q1", "d1", 1);
        qrels.add("q2", "d2", 1);
        Corpus::new(queries, docs, qrels)
    }

    #[test]
    fn validation_findings() {
        let c = small_corpus();
        assert!(validate_corpus(&c, true).unwrap().is_empty());

        let mut bad = c.clone();
        bad.qrels.add("q9", "d1", 1);
        let r = validate_corpus(&bad, false).unwrap();
        assert_eq!(r.dangling_queries, vec!["q9".to_string()]);
        assert!(r.dangling_docs.is_empty());
        assert!(validate_corpus(&bad, true).is_err());

        let mut bad = c;
        bad.qrels.add("q1", "d9", 1);
        let r = validate_corpus(&bad, false).unwrap();
        assert!(r.dangling_queries.is_empty());
        assert_eq!(r.dangling_docs.len(), 1);
    }

    fn id() -> impl Strategy<Value = String> {
        "[a-z0-9]{1,6}"
    }

    proptest! {
        #[test]
        fn text_store_round_trips(
            rows in proptest::collection::btree_map(id(), "[a-zA-Z][a-zA-Z0-9 ?.-]{0,20}", 0..20)
        ) {
            let store: TextStore = rows.into_iter().collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            store.write_tsv(f.path()).unwrap();
            prop_assert_eq!(load_queries(f.path()).unwrap(), store);
        }

        #[test]
        fn qrels_round_trip_and_grades(
            rows in proptest::collection::vec((id(), id(), -2i64..4), 0..30)
        ) {
            let mut text = String::new();
            for (q, d, g) in &rows {
                text.push_str(&format!("{q} 0 {d} {g}\n"));
            }
            let qrels = load_qrels(file(&text).path()).unwrap();
            prop_assert!(qrels.len() <= rows.len());
            prop_assert!(qrels.iter().all(|(_, _, g)| g >= 1));

            let f = tempfile::NamedTempFile::new().unwrap();
            qrels.write(f.path()).unwrap();
            prop_assert_eq!(load_qrels(f.path()).unwrap(), qrels);
        }
    }
}
