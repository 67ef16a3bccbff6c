//! The continual loop: train a ranker on each task of a stream in turn and
//! evaluate the tracked tasks after every step.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{Corpus, QrelSet};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_group, EvalContext, RunHistory, Scores};
use crate::retrieval::{tokenize, InvertedIndex};
use crate::seed;
use crate::streams::{EvalGroup, Scenario, Task, TopicSequence};

/// One BM25 candidate handed to a re-ranker.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub doc_id: &'a str,
    pub text: &'a str,
    pub bm25: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub qid: String,
    pub query: String,
    pub did: String,
    pub doc: String,
}

/// Hard negatives: BM25 top-`depth` documents that are not judged for the
/// query.
pub struct NegativeSampler<'a> {
    pub index: &'a InvertedIndex,
    pub corpus: &'a Corpus,
    pub judged: &'a QrelSet,
    pub depth: usize,
    pub seed: u64,
}

impl NegativeSampler<'_> {
    pub fn sample(&self, pair: &TrainPair, n: usize, rng: &mut seed::Rng) -> Result<Vec<(String, String)>> {
        let judged = self.judged.relevant(&pair.qid);
        let pool: Vec<&str> = self
            .index
            .search(&pair.query, self.depth)
            .into_iter()
            .map(|(row, _)| self.index.doc_id(row))
            .filter(|d| *d != pair.did && !judged.is_some_and(|m| m.contains_key(*d)))
            .collect();
        seed::sample(&pool, n, rng)
            .into_iter()
            .map(|d| Ok((d.to_string(), self.corpus.docs.text(d)?.to_string())))
            .collect()
    }
}

pub trait Ranker: Send + Sync {
    fn name(&self) -> String;

    fn trainable(&self) -> bool;

    /// One epoch over `pairs`; returns the mean loss when the ranker reports
    /// one. `draw` selects the negative-sampling stream.
    fn train(&mut self, pairs: &[TrainPair], negatives: &NegativeSampler, epoch: usize, draw: u64) -> Result<Option<f64>>;

    /// One score per candidate, in candidate order.
    fn rescore(&self, qid: &str, query: &str, cands: &[Candidate]) -> Result<Vec<f64>>;

    /// Hyperparameters and identity, recorded in run manifests.
    fn describe(&self) -> Value {
        json!({ "name": self.name() })
    }

    /// Term weights to write after each step, if the ranker has any.
    fn checkpoint(&self) -> Option<Vec<(String, f64)>> {
        None
    }

    /// Whether queries may be rescored from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Scores candidates by their BM25 score, i.e. the identity re-rank.
#[derive(Debug, Default, Clone)]
pub struct Bm25Ranker;

impl Ranker for Bm25Ranker {
    fn name(&self) -> String {
        "bm25".into()
    }

    fn trainable(&self) -> bool {
        false
    }

    fn train(&mut self, _: &[TrainPair], _: &NegativeSampler, _: usize, _: u64) -> Result<Option<f64>> {
        Ok(None)
    }

    fn rescore(&self, _: &str, _: &str, cands: &[Candidate]) -> Result<Vec<f64>> {
        Ok(cands.iter().map(|c| c.bm25).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermWeightParams {
    pub margin: f64,
    pub learning_rate: f64,
    pub negatives_per_pair: usize,
    /// 0 gives plain SGD.
    pub momentum: f64,
}

impl Default for TermWeightParams {
    fn default() -> Self {
        TermWeightParams {
            margin: 1.0,
            learning_rate: 0.1,
            negatives_per_pair: 4,
            momentum: 0.0,
        }
    }
}

/// A trainable lexical ranker: `s(q, d) = sum of w_t * idf(t)` over the
/// distinct terms shared by query and document. Every weight starts at 1.
///
/// Training is SGD on a pairwise hinge loss. Only the weights of terms in
/// the positive or negative overlap move. Velocities persist across tasks.
#[derive(Debug, Clone)]
pub struct TermWeightRanker {
    pub params: TermWeightParams,
    idf: BTreeMap<String, f64>,
    doc_count: usize,
    weights: BTreeMap<String, f64>,
    velocity: BTreeMap<String, f64>,
}

fn term_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

impl TermWeightRanker {
    /// Takes idf values from the index so scores are comparable with BM25's
    /// term statistics.
    pub fn new(index: &InvertedIndex, params: TermWeightParams) -> Self {
        TermWeightRanker {
            params,
            idf: index.vocabulary().map(|t| (t.to_string(), index.idf(t))).collect(),
            doc_count: index.doc_count(),
            weights: BTreeMap::new(),
            velocity: BTreeMap::new(),
        }
    }

    fn idf(&self, term: &str) -> f64 {
        self.idf
            .get(term)
            .copied()
            .unwrap_or_else(|| crate::retrieval::idf(self.doc_count, 0))
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(1.0)
    }

    pub fn set_weight(&mut self, term: &str, w: f64) {
        self.weights.insert(term.to_string(), w);
    }

    fn score_overlap<'a>(&self, terms: impl IntoIterator<Item = &'a String>) -> f64 {
        terms.into_iter().map(|t| self.weight(t) * self.idf(t)).sum()
    }

    pub fn score(&self, query: &str, doc: &str) -> f64 {
        let q = term_set(query);
        let d = term_set(doc);
        self.score_overlap(q.intersection(&d))
    }

    /// One hinge step on `(q, d+, d-)`; returns the loss before the update.
    pub fn step(&mut self, query: &str, pos: &str, neg: &str) -> f64 {
        let q = term_set(query);
        let p: BTreeSet<String> = q.intersection(&term_set(pos)).cloned().collect();
        let n: BTreeSet<String> = q.intersection(&term_set(neg)).cloned().collect();
        let loss = (self.params.margin - self.score_overlap(&p) + self.score_overlap(&n)).max(0.0);
        if loss <= 0.0 {
            return 0.0;
        }
        // terms in both overlaps cancel
        for t in p.symmetric_difference(&n) {
            let sign = if p.contains(t) { -1.0 } else { 1.0 };
            let grad = sign * self.idf(t);
            let v = self.velocity.entry(t.clone()).or_insert(0.0);
            *v = self.params.momentum * *v + grad;
            let v = *v;
            let w = self.weights.entry(t.clone()).or_insert(1.0);
            *w -= self.params.learning_rate * v;
        }
        loss
    }
}

impl Ranker for TermWeightRanker {
    fn name(&self) -> String {
        "termweight".into()
    }

    fn trainable(&self) -> bool {
        true
    }

    fn train(&mut self, pairs: &[TrainPair], negatives: &NegativeSampler, epoch: usize, draw: u64) -> Result<Option<f64>> {
        let mut rng = seed::rng(negatives.seed, &format!("negatives-{draw}"), epoch as u64);
        let mut total = 0.0;
        let mut count = 0usize;
        for pair in pairs {
            for (_, neg) in negatives.sample(pair, self.params.negatives_per_pair, &mut rng)? {
                total += self.step(&pair.query, &pair.doc, &neg);
                count += 1;
            }
        }
        Ok((count > 0).then(|| total / count as f64))
    }

    fn rescore(&self, _: &str, query: &str, cands: &[Candidate]) -> Result<Vec<f64>> {
        let q = term_set(query);
        Ok(cands
            .iter()
            .map(|c| {
                let d = term_set(c.text);
                self.score_overlap(q.intersection(&d))
            })
            .collect())
    }

    fn describe(&self) -> Value {
        json!({
            "name": self.name(),
            "margin": self.params.margin,
            "learning_rate": self.params.learning_rate,
            "negatives_per_pair": self.params.negatives_per_pair,
            "momentum": self.params.momentum,
            "hyperparameters": "toolkit defaults, not taken from a published setup",
        })
    }

    fn checkpoint(&self) -> Option<Vec<(String, f64)>> {
        Some(self.weights.iter().map(|(t, w)| (t.clone(), *w)).collect())
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<std::io::Result<String>>,
}

/// A ranker living in a child process that speaks newline-delimited JSON on
/// stdin/stdout. One request is in flight at a time.
pub struct ExternalRanker {
    command: Vec<String>,
    trainable: bool,
    timeout: Duration,
    channel: Mutex<Channel>,
}

impl ExternalRanker {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::InvalidInput("empty ranker command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut ranker = ExternalRanker {
            command: command.to_vec(),
            trainable: false,
            timeout,
            channel: Mutex::new(Channel {
                child,
                stdin,
                replies: rx,
            }),
        };
        let hello = ranker.request(&json!({"op": "hello"}))?;
        ranker.trainable = hello
            .get("trainable")
            .and_then(Value::as_bool)
            .ok_or_else(|| Error::Protocol("hello reply lacks boolean `trainable`".into()))?;
        Ok(ranker)
    }

    fn request(&self, msg: &Value) -> Result<Value> {
        let mut ch = self.channel.lock().expect("ranker channel poisoned");
        let line = serde_json::to_string(msg)?;
        let sent = ch
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Protocol("ranker stdin closed".into()))
            .and_then(|w| {
                writeln!(w, "{line}")
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::Protocol(format!("write failed: {e}")))
            });
        if let Err(e) = sent {
            return Err(exit_error(&mut ch.child).unwrap_or(e));
        }
        let reply = match ch.replies.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(Error::Protocol(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Protocol(format!("no reply within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(exit_error(&mut ch.child)
                    .unwrap_or_else(|| Error::Protocol("ranker closed its output".into())))
            }
        };
        let value: Value = serde_json::from_str(&reply)
            .map_err(|e| Error::Protocol(format!("malformed reply `{}`: {e}", truncate(&reply))))?;
        if value.get("ok").and_then(Value::as_bool) != Some(true) {
            let why = value.get("error").and_then(Value::as_str).unwrap_or("no error message");
            return Err(Error::Protocol(format!("ranker refused request: {why}")));
        }
        Ok(value)
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

/// Waits briefly for the child to exit and describes how it did.
fn exit_error(child: &mut Child) -> Option<Error> {
    let deadline = Instant::now() + Duration::from_secs(2);
    while Instant::now() < deadline {
        if let Ok(Some(status)) = child.try_wait() {
            return Some(Error::Protocol(format!("ranker exited with {status}")));
        }
        thread::sleep(Duration::from_millis(20));
    }
    None
}

impl Drop for ExternalRanker {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().expect("ranker channel poisoned");
        ch.stdin.take();
        if exit_error(&mut ch.child).is_none() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

impl Ranker for ExternalRanker {
    fn name(&self) -> String {
        "external".into()
    }

    fn trainable(&self) -> bool {
        self.trainable
    }

    fn train(&mut self, pairs: &[TrainPair], _: &NegativeSampler, epoch: usize, _: u64) -> Result<Option<f64>> {
        let pairs: Vec<Value> = pairs
            .iter()
            .map(|p| json!({"q": p.query, "qid": p.qid, "d": p.doc, "did": p.did}))
            .collect();
        let reply = self.request(&json!({"op": "train", "pairs": pairs, "epoch": epoch}))?;
        match reply.get("loss") {
            Some(Value::Number(n)) => Ok(n.as_f64()),
            None | Some(Value::Null) => Ok(None),
            Some(other) => Err(Error::Protocol(format!("non-numeric loss {other}"))),
        }
    }

    fn rescore(&self, qid: &str, query: &str, cands: &[Candidate]) -> Result<Vec<f64>> {
        let list: Vec<Value> = cands.iter().map(|c| json!({"did": c.doc_id, "d": c.text})).collect();
        let reply = self.request(&json!({"op": "rescore", "qid": qid, "q": query, "cands": list}))?;
        let scores = reply
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("rescore reply lacks `scores`".into()))?;
        if scores.len() != cands.len() {
            return Err(Error::Protocol(format!(
                "{} scores for {} candidates",
                scores.len(),
                cands.len()
            )));
        }
        scores
            .iter()
            .map(|s| {
                s.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Protocol(format!("score {s} is not a finite number")))
            })
            .collect()
    }

    fn describe(&self) -> Value {
        json!({"name": self.name(), "command": self.command, "trainable": self.trainable})
    }

    fn concurrent(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sequential,
    /// Train once on the shuffled union of all tasks.
    Joint,
    /// Never train.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub candidates_depth: usize,
    pub epochs_per_task: usize,
    pub cutoffs: (usize, usize),
    pub mode: Mode,
    /// BM25 depth from which training negatives are drawn.
    pub negatives_depth: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 13,
            candidates_depth: 1000,
            epochs_per_task: 1,
            cutoffs: (10, 100),
            mode: Mode::Sequential,
            negatives_depth: 100,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates_depth < self.cutoffs.0.max(self.cutoffs.1) {
            return Err(Error::InvalidInput("candidate depth below the largest cutoff".into()));
        }
        if self.cutoffs != (10, 100) {
            return Err(Error::InvalidInput("only cutoffs 10 and 100 are recorded".into()));
        }
        Ok(())
    }
}

/// What a run iterates over.
#[derive(Debug, Clone, Copy)]
pub enum Stream<'a> {
    Sequence(&'a TopicSequence),
    Scenario(&'a Scenario),
}

impl<'a> Stream<'a> {
    /// Task trained before step 0, if any.
    pub fn init(&self) -> Option<&'a Task> {
        match self {
            Stream::Sequence(_) => None,
            Stream::Scenario(s) => s.tasks.first(),
        }
    }

    pub fn steps(&self) -> &'a [Task] {
        match self {
            Stream::Sequence(s) => &s.tasks,
            Stream::Scenario(s) => &s.tasks[1..],
        }
    }

    /// Groups evaluated at every step.
    pub fn targets(&self) -> Vec<EvalGroup> {
        match self {
            Stream::Sequence(s) => s.tracked.iter().map(|&i| s.tasks[i].eval_group()).collect(),
            Stream::Scenario(s) => s.eval_groups.clone(),
        }
    }

    /// Groups in the final table: every task for sequences.
    pub fn final_targets(&self) -> Vec<EvalGroup> {
        match self {
            Stream::Sequence(s) => s.tasks.iter().map(Task::eval_group).collect(),
            Stream::Scenario(s) => s.eval_groups.clone(),
        }
    }

    fn all_tasks(&self) -> Vec<&'a Task> {
        self.init().into_iter().chain(self.steps()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: RunHistory,
    /// Scores of every final target after the last step.
    pub final_scores: Vec<(String, Scores)>,
    /// `(step, epoch, loss)` for every training epoch that reported one.
    /// Step 0 is the init pre-training.
    pub losses: Vec<(usize, usize, f64)>,
}

pub fn task_pairs(task: &Task, corpus: &Corpus) -> Result<Vec<TrainPair>> {
    task.train_pairs()
        .into_iter()
        .map(|(qid, did)| {
            Ok(TrainPair {
                query: corpus.queries.text(&qid)?.to_string(),
                doc: corpus.docs.text(&did)?.to_string(),
                qid,
                did,
            })
        })
        .collect()
}

fn write_checkpoint(dir: &Path, step: usize, weights: &[(String, f64)]) -> Result<()> {
    let path = dir.join("checkpoints").join(format!("step-{step}.tsv"));
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for (t, x) in weights {
        writeln!(w, "{t}\t{x}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

struct Runner<'a> {
    ranker: &'a mut dyn Ranker,
    cfg: &'a RunConfig,
    corpus: &'a Corpus,
    index: &'a InvertedIndex,
    judged: QrelSet,
    out: Option<&'a Path>,
    history: RunHistory,
    targets: Vec<EvalGroup>,
    losses: Vec<(usize, usize, f64)>,
}

impl Runner<'_> {
    fn train(&mut self, step: usize, pairs: &[TrainPair], draw: u64) -> Result<()> {
        for epoch in 0..self.cfg.epochs_per_task {
            let sampler = NegativeSampler {
                index: self.index,
                corpus: self.corpus,
                judged: &self.judged,
                depth: self.cfg.negatives_depth,
                seed: self.cfg.seed,
            };
            if let Some(loss) = self.ranker.train(pairs, &sampler, epoch, draw)? {
                log::debug!("step {step} epoch {epoch}: loss {loss:.6}");
                self.losses.push((step, epoch, loss));
            }
        }
        Ok(())
    }

    fn evaluate(&self, group: &EvalGroup) -> Result<Scores> {
        let ctx = EvalContext {
            index: self.index,
            queries: &self.corpus.queries,
            docs: &self.corpus.docs,
            depth: self.cfg.candidates_depth,
        };
        evaluate_group(&*self.ranker, group, &ctx)
    }

    fn evaluate_step(&mut self, step: usize) -> Result<()> {
        for t in 0..self.targets.len() {
            let s = self.evaluate(&self.targets[t])?;
            self.history.record(t, step, s);
        }
        self.flush(step)
    }

    fn copy_step(&mut self, from: usize, to: usize) -> Result<()> {
        for t in 0..self.targets.len() {
            let s = self.history.get(t, from).expect("evaluated earlier");
            self.history.record(t, to, s);
        }
        self.flush(to)
    }

    fn flush(&self, step: usize) -> Result<()> {
        if let Some(dir) = self.out {
            self.history.write_csv(&dir.join("history.csv"))?;
            if let Some(w) = self.ranker.checkpoint() {
                write_checkpoint(dir, step, &w)?;
            }
        }
        Ok(())
    }
}

/// Runs `stream`, writing `history.csv` and `checkpoints/step-<j>.tsv` under
/// `out` as it goes. A failing ranker aborts the run with the step and task
/// in the error; steps completed so far stay on disk.
pub fn run_sequence(
    stream: Stream,
    ranker: &mut dyn Ranker,
    cfg: &RunConfig,
    corpus: &Corpus,
    index: &InvertedIndex,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let steps = stream.steps();
    if steps.is_empty() {
        return Err(Error::InvalidInput("stream has no tasks".into()));
    }
    if let Some(dir) = out {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
    }
    let mut judged = corpus.qrels.clone();
    for t in stream.all_tasks() {
        judged.merge(&t.qrels);
    }
    let targets = stream.targets();
    let history = RunHistory::new(targets.iter().map(|g| g.name.clone()).collect(), steps.len());
    let train = cfg.mode != Mode::Frozen && ranker.trainable();
    let mut r = Runner {
        ranker,
        cfg,
        corpus,
        index,
        judged,
        out,
        history,
        targets,
        losses: Vec::new(),
    };

    let at = |step: usize, task: &str| {
        let task = task.to_string();
        move |e: Error| {
            if e.is_runtime() {
                Error::Session {
                    step,
                    task,
                    message: e.to_string(),
                }
            } else {
                e
            }
        }
    };

    if let Some(init) = stream.init() {
        if train {
            let pairs = task_pairs(init, corpus)?;
            r.train(0, &pairs, 0).map_err(at(0, &init.id))?;
        }
    }
    let step0 = stream.init().map_or("(none)", |t| t.id.as_str());
    r.evaluate_step(0).map_err(at(0, step0))?;

    match cfg.mode {
        Mode::Sequential if train => {
            for (j, task) in steps.iter().enumerate() {
                let step = j + 1;
                let pairs = task_pairs(task, corpus)?;
                r.train(step, &pairs, step as u64).map_err(at(step, &task.id))?;
                r.evaluate_step(step).map_err(at(step, &task.id))?;
                log::info!("step {step}/{} ({}) done", steps.len(), task.id);
            }
        }
        Mode::Joint if train => {
            let mut union = Vec::new();
            for task in steps {
                union.extend(task_pairs(task, corpus)?);
            }
            let union = seed::shuffled(&union, &mut seed::rng(cfg.seed, "joint", 0));
            let last = &steps[steps.len() - 1].id;
            r.train(1, &union, 1).map_err(at(1, last))?;
            r.evaluate_step(1).map_err(at(1, last))?;
            for step in 2..=steps.len() {
                r.copy_step(1, step)?;
            }
        }
        // nothing changes the ranker, so every step equals step 0
        _ => {
            for step in 1..=steps.len() {
                r.copy_step(0, step)?;
            }
        }
    }

    let last = &steps[steps.len() - 1].id;
    let final_scores = stream
        .final_targets()
        .iter()
        .map(|g| {
            let pos = r.targets.iter().position(|t| t.name == g.name);
            match pos {
                Some(t) => Ok((g.name.clone(), r.history.get(t, steps.len()).expect("complete"))),
                None => Ok((g.name.clone(), r.evaluate(g).map_err(at(steps.len(), last))?)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert!(r.history.is_complete());
    Ok(RunOutcome {
        history: r.history,
        final_scores,
        losses: r.losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DocStore, QueryStore};
    use crate::retrieval::Bm25Params;

    fn index(docs: &[(&str, &str)]) -> InvertedIndex {
        let store: DocStore = docs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        InvertedIndex::build_with(&store, Bm25Params::default()).unwrap()
    }

    #[test]
    fn no_shared_query_terms_means_no_update() {
        let idx = index(&[("d1", "apple"), ("d2", "pear"), ("d3", "plum")]);
        let mut r = TermWeightRanker::new(&idx, TermWeightParams::default());
        let loss = r.step("kiwi", "apple", "pear");
        assert_eq!(loss, 1.0);
        assert!(r.checkpoint().unwrap().is_empty());
    }

    #[test]
    fn inactive_hinge_means_no_update() {
        let idx = index(&[("d1", "apple"), ("d2", "pear"), ("d3", "plum")]);
        let params = TermWeightParams {
            margin: 0.0,
            ..Default::default()
        };
        let mut r = TermWeightRanker::new(&idx, params);
        assert_eq!(r.step("apple pear", "apple", "plum"), 0.0);
        assert!(r.checkpoint().unwrap().is_empty());
    }

    #[test]
    fn separable_pair_converges_to_margin() {
        let idx = index(&[("d1", "apple banana"), ("d2", "banana cherry"), ("d3", "plum")]);
        let mut r = TermWeightRanker::new(&idx, TermWeightParams::default());
        let q = "apple cherry";
        let mut losses = Vec::new();
        for _ in 0..50 {
            losses.push(r.step(q, "apple banana", "banana cherry"));
        }
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(r.score(q, "apple banana") - r.score(q, "banana cherry") >= 1.0 - 1e-12);
    }

    #[test]
    fn momentum_velocity_carries_over() {
        let idx = index(&[("d1", "apple"), ("d2", "pear"), ("d3", "plum")]);
        let params = TermWeightParams {
            momentum: 0.5,
            margin: 100.0,
            ..Default::default()
        };
        let mut r = TermWeightRanker::new(&idx, params);
        r.step("apple pear", "apple", "pear");
        let w1 = r.weight("apple");
        r.step("apple pear", "apple", "pear");
        let w2 = r.weight("apple");
        // second step moves 1.5x as far as the first
        assert!(((w2 - w1) / (w1 - 1.0) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn bm25_ranker_is_identity() {
        let c = [
            Candidate { doc_id: "a", text: "", bm25: 2.0 },
            Candidate { doc_id: "b", text: "", bm25: 1.0 },
        ];
        assert_eq!(Bm25Ranker.rescore("q", "x", &c).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn negatives_exclude_judged() {
        let docs: DocStore = [("d1", "apple x"), ("d2", "apple y"), ("d3", "apple z"), ("d4", "plum")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let idx = InvertedIndex::build(&docs).unwrap();
        let mut qrels = QrelSet::new();
        qrels.add("q1", "d1", 1);
        qrels.add("q1", "d2", 1);
        let queries: QueryStore = [("q1".to_string(), "apple".to_string())].into_iter().collect();
        let corpus = Corpus::new(queries, docs, qrels.clone());
        let s = NegativeSampler {
            index: &idx,
            corpus: &corpus,
            judged: &qrels,
            depth: 100,
            seed: 1,
        };
        let pair = TrainPair {
            qid: "q1".into(),
            query: "apple".into(),
            did: "d1".into(),
            doc: "apple x".into(),
        };
        let negs = s.sample(&pair, 4, &mut seed::rng(1, "t", 0)).unwrap();
        assert_eq!(negs, vec![("d3".to_string(), "apple z".to_string())]);
    }

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn external_ranker_errors() {
        let t = Duration::from_secs(5);
        assert!(matches!(ExternalRanker::spawn(&sh("read x; echo garbage"), t), Err(Error::Protocol(_))));
        assert!(matches!(ExternalRanker::spawn(&sh("exit 3"), t), Err(Error::Protocol(_))));
        assert!(matches!(
            ExternalRanker::spawn(&sh(r#"read x; echo '{"ok":false,"error":"nope"}'"#), t),
            Err(Error::Protocol(m)) if m.contains("nope")
        ));
        let slow = ExternalRanker::spawn(&sh("read x; sleep 5"), Duration::from_millis(200));
        assert!(matches!(slow, Err(Error::Protocol(m)) if m.contains("no reply")));
    }

    #[test]
    fn external_ranker_length_contract() {
        let script = r#"read x; echo '{"ok":true,"trainable":false}'; read x; echo '{"ok":true,"scores":[1.0,0.5]}'"#;
        let r = ExternalRanker::spawn(&sh(script), Duration::from_secs(5)).unwrap();
        assert!(!r.trainable());
        let c = [
            Candidate { doc_id: "a", text: "x", bm25: 2.0 },
            Candidate { doc_id: "b", text: "y", bm25: 1.0 },
            Candidate { doc_id: "c", text: "z", bm25: 0.5 },
        ];
        assert!(matches!(r.rescore("q", "x", &c), Err(Error::Protocol(_))));
    }
}
