//! Topic sequences, their randomized baselines and the controlled scenarios
//! (direct transfer, information update, language drift).
//!
//! Every builder is a pure function of its inputs and the run seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::clustering::constrained_2means;
use crate::corpus::{load_qrels, load_queries, write_tsv, QrelSet, QueryStore};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Topic,
    Random,
    Init,
    DtPlus,
    DtMinus,
    DtForeign,
    IuPrime,
    IuSecond,
    LdStar,
    LdStarstar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub provenance: Provenance,
    /// Clusters the task's queries were drawn from.
    pub clusters: Vec<u32>,
    /// Tasks this one was derived from (init aggregates, scenario splits).
    pub source_tasks: Vec<String>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub qrels: QrelSet,
}

impl Task {
    pub fn split(&self, s: Split) -> &[String] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// train ∪ val ∪ test, ascending.
    pub fn all_queries(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(qid, did)` training pairs in query order.
    pub fn train_pairs(&self) -> Vec<(String, String)> {
        self.train
            .iter()
            .flat_map(|q| {
                self.qrels
                    .relevant_docs(q)
                    .into_iter()
                    .map(move |d| (q.clone(), d.to_string()))
            })
            .collect()
    }

    pub fn eval_group(&self) -> EvalGroup {
        EvalGroup {
            name: self.id.clone(),
            queries: self.test.clone(),
            qrels: self.qrels.restrict(self.test.iter().map(String::as_str)),
        }
    }
}

/// Queries plus the judgments used to score them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGroup {
    pub name: String,
    pub queries: Vec<String>,
    pub qrels: QrelSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicSequence {
    pub kind: String,
    pub tasks: Vec<Task>,
    /// Positions (0-based) of the tasks evaluated at every step.
    pub tracked: Vec<usize>,
    pub seed: u64,
}

impl TopicSequence {
    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplitSizes {
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { val: 40, test: 40 }
    }
}

impl SplitSizes {
    /// Smallest cluster that can be split.
    pub fn min_cluster(&self) -> usize {
        self.val + self.test + 1
    }

    /// `(val, test)` sizes for a cluster of `n` queries: `min(cap, n / 3)`.
    pub fn for_size(&self, n: usize) -> (usize, usize) {
        (self.val.min(n / 3), self.test.min(n / 3))
    }
}

fn carve(mut members: Vec<String>, val: usize, test: usize, rng: &mut seed::Rng) -> [Vec<String>; 3] {
    members.sort();
    let shuffled = seed::shuffled(&members, rng);
    let mut v = shuffled[..val].to_vec();
    let mut t = shuffled[val..val + test].to_vec();
    let mut tr = shuffled[val + test..].to_vec();
    v.sort();
    t.sort();
    tr.sort();
    [tr, v, t]
}

fn pick_tracked(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let all: Vec<usize> = (0..n).collect();
    let mut tracked = seed::sample(&all, count, &mut seed::rng(seed, "tracked", 0));
    tracked.sort_unstable();
    tracked
}

/// Number of tracked tasks in a sequence.
pub const DEFAULT_TRACKED: usize = 5;

/// Turns clusters into a shuffled sequence of split tasks.
///
/// Only judged queries count. Clusters smaller than `sizes.min_cluster()`
/// are dropped with a warning.
pub fn build_topic_sequence(
    clusters: &[(u32, Vec<String>)],
    queries: &QueryStore,
    qrels: &QrelSet,
    sizes: SplitSizes,
    tracked: usize,
    seed: u64,
) -> Result<TopicSequence> {
    let mut tasks = Vec::new();
    let mut ordered: Vec<&(u32, Vec<String>)> = clusters.iter().collect();
    ordered.sort_by_key(|c| c.0);
    for (cid, members) in ordered {
        let mut judged: Vec<String> = members
            .iter()
            .filter(|q| queries.contains(q) && qrels.is_judged(q))
            .cloned()
            .collect();
        judged.sort();
        judged.dedup();
        if judged.len() < sizes.min_cluster() {
            warn!(
                "dropping cluster {cid}: {} judged queries, need {}",
                judged.len(),
                sizes.min_cluster()
            );
            continue;
        }
        let (v, t) = sizes.for_size(judged.len());
        let mut rng = seed::rng(seed, "split", *cid as u64);
        let task_qrels = qrels.restrict(judged.iter().map(String::as_str));
        let [train, val, test] = carve(judged, v, t, &mut rng);
        tasks.push(Task {
            id: format!("topic-{cid:03}"),
            provenance: Provenance::Topic,
            clusters: vec![*cid],
            source_tasks: Vec::new(),
            train,
            val,
            test,
            qrels: task_qrels,
        });
    }
    if tasks.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "only {} cluster(s) large enough for a sequence; need at least 2",
            tasks.len()
        )));
    }
    let tasks = seed::shuffled(&tasks, &mut seed::rng(seed, "order", 0));
    Ok(TopicSequence {
        kind: "topics".into(),
        tracked: pick_tracked(tasks.len(), tracked, seed),
        tasks,
        seed,
    })
}

/// Size-matched randomized baseline: the union of the reference's queries is
/// shuffled and dealt back into tasks with the reference's split sizes.
pub fn build_random_sequence(reference: &TopicSequence, seed: u64) -> Result<TopicSequence> {
    let mut pool: Vec<String> = reference.tasks.iter().flat_map(Task::all_queries).collect();
    pool.sort();
    pool.dedup();
    let mut qrels = QrelSet::new();
    for t in &reference.tasks {
        qrels.merge(&t.qrels);
    }
    let pool = seed::shuffled(&pool, &mut seed::rng(seed, "random-pool", 0));
    let mut tasks = Vec::with_capacity(reference.tasks.len());
    let mut at = 0;
    for (i, r) in reference.tasks.iter().enumerate() {
        let n = r.all_queries().len();
        let chunk = &pool[at..at + n];
        at += n;
        let take = |lo: usize, hi: usize| {
            let mut v = chunk[lo..hi].to_vec();
            v.sort();
            v
        };
        let (nv, nt) = (r.val.len(), r.test.len());
        let val = take(0, nv);
        let test = take(nv, nv + nt);
        let train = take(nv + nt, n);
        tasks.push(Task {
            id: format!("random-{i:03}"),
            provenance: Provenance::Random,
            clusters: Vec::new(),
            source_tasks: Vec::new(),
            qrels: qrels.restrict(chunk.iter().map(String::as_str)),
            train,
            val,
            test,
        });
    }
    Ok(TopicSequence {
        kind: "random".into(),
        tasks,
        tracked: reference.tracked.clone(),
        seed,
    })
}

fn aggregate(id: &str, provenance: Provenance, parts: &[&Task]) -> Task {
    let union = |f: fn(&Task) -> &Vec<String>| {
        let mut v: Vec<String> = parts.iter().flat_map(|t| f(t).iter().cloned()).collect();
        v.sort();
        v.dedup();
        v
    };
    let train = union(|t| &t.train);
    let val = union(|t| &t.val);
    let test = union(|t| &t.test);
    let mut qrels = QrelSet::new();
    let mut clusters = Vec::new();
    for t in parts {
        qrels.merge(&t.qrels);
        clusters.extend(&t.clusters);
    }
    clusters.sort_unstable();
    let mut source_tasks: Vec<String> = parts.iter().map(|t| t.id.clone()).collect();
    source_tasks.sort();
    Task {
        id: id.to_string(),
        provenance,
        clusters,
        source_tasks,
        train,
        val,
        test,
        qrels,
    }
}

/// Pre-training task: the union of `k` random tasks not in `excluded`.
pub fn build_init_task(
    seq: &TopicSequence,
    k: usize,
    excluded: &BTreeSet<String>,
    seed: u64,
    draw: u64,
) -> Result<Task> {
    let eligible: Vec<&Task> = seq
        .tasks
        .iter()
        .filter(|t| !excluded.contains(&t.id))
        .collect();
    if k == 0 || eligible.len() < k {
        return Err(Error::InvalidInput(format!(
            "init task needs {k} tasks outside the {} excluded, only {} available",
            excluded.len(),
            eligible.len()
        )));
    }
    let chosen = seed::sample(&eligible, k, &mut seed::rng(seed, "init", draw));
    Ok(aggregate("init", Provenance::Init, &chosen))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DirectTransfer,
    InformationUpdate,
    LanguageDrift,
}

impl ScenarioKind {
    pub fn short(self) -> &'static str {
        match self {
            ScenarioKind::DirectTransfer => "dt",
            ScenarioKind::InformationUpdate => "iu",
            ScenarioKind::LanguageDrift => "ld",
        }
    }
}

/// The two halves of a topic used by IU and LD, in forward orientation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopicPartition {
    pub q1: Vec<String>,
    pub q2: Vec<String>,
    pub d1: Vec<String>,
    pub d2: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub kind: ScenarioKind,
    pub reversed: bool,
    pub topic: String,
    pub foreign: Option<String>,
    /// `tasks[0]` is always the init task.
    pub tasks: Vec<Task>,
    pub eval_groups: Vec<EvalGroup>,
    pub partition: Option<TopicPartition>,
    /// Targets chosen by more than one source in the nearest-neighbor map.
    pub mapping_collisions: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ScenarioParams {
    /// Tasks aggregated into the init task.
    pub k: usize,
    /// Topics drawn per scenario kind.
    pub topics: usize,
    pub dt_plus_fraction: f64,
    pub min_frac: f64,
    pub max_iter: usize,
    /// Cap on each IU/LD evaluation group's val and test size.
    pub group_cap: usize,
    /// Minimum distinct docs (IU) or queries (LD) for a topic to be split.
    pub min_topic_items: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            k: 5,
            topics: 3,
            dt_plus_fraction: 0.75,
            min_frac: 0.25,
            max_iter: 100,
            group_cap: 20,
            min_topic_items: 8,
        }
    }
}

/// Direct transfer: `(init, τi+, τj, τi-)` for `params.topics` random topics.
pub fn build_direct_transfer(seq: &TopicSequence, params: &ScenarioParams, seed: u64) -> Result<Vec<Scenario>> {
    if seq.tasks.len() < params.k + 2 {
        return Err(Error::InvalidInput(format!(
            "direct transfer needs at least {} tasks, sequence has {}",
            params.k + 2,
            seq.tasks.len()
        )));
    }
    let positions: Vec<usize> = (0..seq.tasks.len()).collect();
    let topics = seed::sample(&positions, params.topics, &mut seed::rng(seed, "dt-topics", 0));
    let mut out = Vec::new();
    for (s, &i) in topics.iter().enumerate() {
        let topic = &seq.tasks[i];
        let others: Vec<usize> = positions.iter().copied().filter(|&p| p != i).collect();
        let j = seed::sample(&others, 1, &mut seed::rng(seed, "dt-foreign", s as u64))[0];
        let foreign = &seq.tasks[j];
        let excluded: BTreeSet<String> = [topic.id.clone(), foreign.id.clone()].into();
        let init = build_init_task(seq, params.k, &excluded, seed, s as u64)?;

        let train = seed::shuffled(&topic.train, &mut seed::rng(seed, "dt-split", s as u64));
        let n_plus = (params.dt_plus_fraction * train.len() as f64).round() as usize;
        let part = |id: String, provenance, qs: &[String]| {
            let mut qs = qs.to_vec();
            qs.sort();
            let keep = qs.iter().chain(&topic.val).chain(&topic.test).map(String::as_str);
            Task {
                id,
                provenance,
                clusters: topic.clusters.clone(),
                source_tasks: vec![topic.id.clone()],
                qrels: topic.qrels.restrict(keep),
                train: qs,
                val: topic.val.clone(),
                test: topic.test.clone(),
            }
        };
        let plus = part(format!("{}-plus", topic.id), Provenance::DtPlus, &train[..n_plus]);
        let minus = part(format!("{}-minus", topic.id), Provenance::DtMinus, &train[n_plus..]);
        let mut foreign_task = foreign.clone();
        foreign_task.provenance = Provenance::DtForeign;
        foreign_task.source_tasks = vec![foreign.id.clone()];

        let mut topic_group = topic.eval_group();
        topic_group.name = "topic".into();
        let mut foreign_group = foreign.eval_group();
        foreign_group.name = "foreign".into();
        out.push(Scenario {
            id: format!("dt-{s}"),
            kind: ScenarioKind::DirectTransfer,
            reversed: false,
            topic: topic.id.clone(),
            foreign: Some(foreign.id.clone()),
            tasks: vec![init, plus, foreign_task, minus],
            eval_groups: vec![topic_group, foreign_group],
            partition: None,
            mapping_collisions: 0,
            seed,
        });
    }
    Ok(out)
}

/// One relevant doc per query (uniform among its judged docs).
fn sample_single_docs(queries: &[String], qrels: &QrelSet, seed: u64, draw: u64) -> BTreeMap<String, String> {
    let mut rng = seed::rng(seed, "sample-doc", draw);
    let mut out = BTreeMap::new();
    for q in queries {
        let docs: Vec<String> = qrels.relevant_docs(q).into_iter().map(str::to_string).collect();
        if let Some(d) = seed::sample(&docs, 1, &mut rng).pop() {
            out.insert(q.clone(), d);
        }
    }
    out
}

/// One half of a split topic: queries carved into train/val/test, each
/// query paired with its single relevant doc.
struct Half {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
    docs: BTreeMap<String, String>,
}

impl Half {
    fn new(queries: Vec<String>, docs: &BTreeMap<String, String>, cap: usize, rng: &mut seed::Rng) -> Self {
        let e = cap.min(queries.len() / 3);
        let own: BTreeMap<String, String> = queries.iter().map(|q| (q.clone(), docs[q].clone())).collect();
        let [train, val, test] = carve(queries, e, e, rng);
        Half { train, val, test, docs: own }
    }

    fn eval(&self) -> Vec<String> {
        self.test.clone()
    }

    fn group(&self, name: &str) -> EvalGroup {
        let mut qrels = QrelSet::new();
        for q in &self.test {
            qrels.add(q.clone(), self.docs[q].clone(), 1);
        }
        EvalGroup {
            name: name.into(),
            queries: self.eval(),
            qrels,
        }
    }

    fn doc_set(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.docs.values().collect();
        set.into_iter().cloned().collect()
    }
}

fn sorted_union(a: &[String], b: &[String]) -> Vec<String> {
    let mut v: Vec<String> = a.iter().chain(b).cloned().collect();
    v.sort();
    v.dedup();
    v
}

fn count_collisions<'a>(targets: impl Iterator<Item = &'a String>) -> usize {
    let mut hits: BTreeMap<&String, usize> = BTreeMap::new();
    for t in targets {
        *hits.entry(t).or_default() += 1;
    }
    hits.values().filter(|&&n| n > 1).count()
}

/// Chooses up to `params.topics` topics in random order that pass `ok`.
fn choose_topics<'a>(
    seq: &'a TopicSequence,
    params: &ScenarioParams,
    seed: u64,
    op: &str,
    mut ok: impl FnMut(&Task) -> bool,
) -> Vec<(usize, &'a Task)> {
    let order = seed::shuffled(&(0..seq.tasks.len()).collect::<Vec<_>>(), &mut seed::rng(seed, op, 0));
    let mut picked = Vec::new();
    for i in order {
        if picked.len() == params.topics {
            break;
        }
        let t = &seq.tasks[i];
        if ok(t) {
            picked.push((i, t));
        } else {
            warn!("{op}: skipping {} (too few distinct items to split)", t.id);
        }
    }
    picked
}

fn scenario_pair(
    kind: ScenarioKind,
    topic: &Task,
    forward: (Vec<Task>, usize),
    reversed: (Vec<Task>, usize),
    groups: Vec<EvalGroup>,
    partition: TopicPartition,
    init: Task,
    seed: u64,
) -> [Scenario; 2] {
    let make = |(tasks, collisions): (Vec<Task>, usize), rev: bool| {
        let mut all = vec![init.clone()];
        all.extend(tasks);
        Scenario {
            id: format!("{}-{}-{}", kind.short(), topic.id, if rev { "rev" } else { "fwd" }),
            kind,
            reversed: rev,
            topic: topic.id.clone(),
            foreign: None,
            tasks: all,
            eval_groups: groups.clone(),
            partition: Some(partition.clone()),
            mapping_collisions: collisions,
            seed,
        }
    };
    [make(forward, false), make(reversed, true)]
}

fn eval_groups(h1: &Half, h2: &Half) -> Vec<EvalGroup> {
    let g1 = h1.group("Q1D1");
    let g2 = h2.group("Q2D2");
    let mut qrels = g1.qrels.clone();
    qrels.merge(&g2.qrels);
    let union = EvalGroup {
        name: "union".into(),
        queries: sorted_union(&g1.queries, &g2.queries),
        qrels,
    };
    vec![g1, g2, union]
}

fn derived_task(
    id: String,
    provenance: Provenance,
    topic: &Task,
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
    qrels: QrelSet,
) -> Task {
    Task {
        id,
        provenance,
        clusters: topic.clusters.clone(),
        source_tasks: vec![topic.id.clone()],
        train,
        val,
        test,
        qrels,
    }
}

/// Information update: queries persist while their relevant documents shift
/// from one half of the topic's documents to the other.
pub fn build_information_update(
    seq: &TopicSequence,
    emb_docs: &EmbeddingTable,
    params: &ScenarioParams,
    seed: u64,
) -> Result<Vec<Scenario>> {
    let mut sampled: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let chosen = choose_topics(seq, params, seed, "iu-topics", |t| {
        let pos = seq.position(&t.id).unwrap_or(0) as u64;
        let docs = sample_single_docs(&t.all_queries(), &t.qrels, seed, pos);
        let distinct: BTreeSet<&String> = docs.values().collect();
        let ok = distinct.len() >= params.min_topic_items && distinct.iter().all(|d| emb_docs.contains(d));
        sampled.insert(t.id.clone(), docs);
        ok
    });
    let excluded: BTreeSet<String> = chosen.iter().map(|(_, t)| t.id.clone()).collect();
    let mut out = Vec::new();
    for (draw, (pos, topic)) in chosen.into_iter().enumerate() {
        let docs = &sampled[&topic.id];
        let distinct: Vec<String> = docs.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let split = constrained_2means(
            &distinct,
            emb_docs,
            params.min_frac,
            params.max_iter,
            seed::derive(seed, "iu-2means", pos as u64),
        )?;
        let d1: BTreeSet<&String> = split.first.iter().collect();
        let (q1, q2): (Vec<String>, Vec<String>) = docs.keys().cloned().partition(|q| d1.contains(&docs[q]));
        let h1 = Half::new(q1, docs, params.group_cap, &mut seed::rng(seed, "iu-carve-1", pos as u64));
        let h2 = Half::new(q2, docs, params.group_cap, &mut seed::rng(seed, "iu-carve-2", pos as u64));

        let build = |a: &Half, b: &Half| -> Result<(Vec<Task>, usize)> {
            let a_docs = a.doc_set();
            let mut map: BTreeMap<String, String> = BTreeMap::new();
            for d in b.doc_set() {
                let (target, _) = emb_docs.nearest(&d, &a_docs)?;
                map.insert(d, target);
            }
            let collisions = count_collisions(map.values());

            let mut prime = QrelSet::new();
            for q in a.docs.keys() {
                prime.add(q.clone(), a.docs[q].clone(), 1);
            }
            for q in b.docs.keys() {
                prime.add(q.clone(), map[&b.docs[q]].clone(), 1);
            }
            let mut second = QrelSet::new();
            for q in b.docs.keys() {
                second.add(q.clone(), b.docs[q].clone(), 1);
            }
            let t_prime = derived_task(
                format!("{}-iu-prime", topic.id),
                Provenance::IuPrime,
                topic,
                sorted_union(&a.train, &b.train),
                sorted_union(&a.val, &b.val),
                sorted_union(&a.test, &b.test),
                prime,
            );
            let t_second = derived_task(
                format!("{}-iu-second", topic.id),
                Provenance::IuSecond,
                topic,
                b.train.clone(),
                b.val.clone(),
                b.test.clone(),
                second,
            );
            Ok((vec![t_prime, t_second], collisions))
        };
        let forward = build(&h1, &h2)?;
        let reversed = build(&h2, &h1)?;
        info!(
            "iu {}: |D1|={} |D2|={} collisions fwd={} rev={}",
            topic.id,
            split.first.len(),
            split.second.len(),
            forward.1,
            reversed.1
        );
        let partition = TopicPartition {
            q1: h1.docs.keys().cloned().collect(),
            q2: h2.docs.keys().cloned().collect(),
            d1: split.first.clone(),
            d2: split.second.clone(),
        };
        let init = build_init_task(seq, params.k, &excluded, seed, draw as u64)?;
        let groups = eval_groups(&h1, &h2);
        out.extend(scenario_pair(
            ScenarioKind::InformationUpdate,
            topic,
            forward,
            reversed,
            groups,
            partition,
            init,
            seed,
        ));
    }
    Ok(out)
}

/// Language drift: information needs persist while query formulations shift
/// from one half of the topic's queries to the other.
pub fn build_language_drift(
    seq: &TopicSequence,
    emb_queries: &EmbeddingTable,
    params: &ScenarioParams,
    seed: u64,
) -> Result<Vec<Scenario>> {
    let chosen = choose_topics(seq, params, seed, "ld-topics", |t| {
        let qs = t.all_queries();
        qs.len() >= params.min_topic_items && qs.iter().all(|q| emb_queries.contains(q))
    });
    let excluded: BTreeSet<String> = chosen.iter().map(|(_, t)| t.id.clone()).collect();
    let mut out = Vec::new();
    for (draw, (pos, topic)) in chosen.into_iter().enumerate() {
        let queries = topic.all_queries();
        let docs = sample_single_docs(&queries, &topic.qrels, seed, pos as u64);
        let split = constrained_2means(
            &queries,
            emb_queries,
            params.min_frac,
            params.max_iter,
            seed::derive(seed, "ld-2means", pos as u64),
        )?;
        let h1 = Half::new(split.first.clone(), &docs, params.group_cap, &mut seed::rng(seed, "ld-carve-1", pos as u64));
        let h2 = Half::new(split.second.clone(), &docs, params.group_cap, &mut seed::rng(seed, "ld-carve-2", pos as u64));

        let build = |a: &Half, b: &Half| -> Result<(Vec<Task>, usize)> {
            let mut map: BTreeMap<String, String> = BTreeMap::new();
            for q in &b.train {
                let (target, _) = emb_queries.nearest(q, &a.train)?;
                map.insert(q.clone(), target);
            }
            let collisions = count_collisions(map.values());

            let mut star = QrelSet::new();
            for q in a.docs.keys() {
                star.add(q.clone(), a.docs[q].clone(), 1);
            }
            for (qb, qa) in &map {
                star.add(qa.clone(), b.docs[qb].clone(), 1);
            }
            let mut starstar = QrelSet::new();
            for q in b.docs.keys() {
                starstar.add(q.clone(), b.docs[q].clone(), 1);
            }
            let t_star = derived_task(
                format!("{}-ld-star", topic.id),
                Provenance::LdStar,
                topic,
                a.train.clone(),
                a.val.clone(),
                a.test.clone(),
                star,
            );
            let t_starstar = derived_task(
                format!("{}-ld-starstar", topic.id),
                Provenance::LdStarstar,
                topic,
                b.train.clone(),
                b.val.clone(),
                b.test.clone(),
                starstar,
            );
            Ok((vec![t_star, t_starstar], collisions))
        };
        if h1.train.is_empty() || h2.train.is_empty() {
            warn!("ld {}: a half has no training queries, skipping", topic.id);
            continue;
        }
        let forward = build(&h1, &h2)?;
        let reversed = build(&h2, &h1)?;
        info!(
            "ld {}: |Q1|={} |Q2|={} collisions fwd={} rev={}",
            topic.id,
            split.first.len(),
            split.second.len(),
            forward.1,
            reversed.1
        );
        let partition = TopicPartition {
            q1: split.first.clone(),
            q2: split.second.clone(),
            d1: h1.doc_set(),
            d2: h2.doc_set(),
        };
        let init = build_init_task(seq, params.k, &excluded, seed, draw as u64)?;
        let groups = eval_groups(&h1, &h2);
        out.extend(scenario_pair(
            ScenarioKind::LanguageDrift,
            topic,
            forward,
            reversed,
            groups,
            partition,
            init,
            seed,
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// On-disk layout

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaskHeader {
    id: String,
    provenance: Provenance,
    clusters: Vec<u32>,
    source_tasks: Vec<String>,
}

impl From<&Task> for TaskHeader {
    fn from(t: &Task) -> Self {
        TaskHeader {
            id: t.id.clone(),
            provenance: t.provenance,
            clusters: t.clusters.clone(),
            source_tasks: t.source_tasks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SequenceManifest {
    kind: String,
    seed: u64,
    tasks: Vec<TaskHeader>,
    tracked: Vec<usize>,
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn write_query_set(dir: &Path, queries: &[String], qrels: &QrelSet, texts: &QueryStore) -> Result<()> {
    mkdir(dir)?;
    let rows: Vec<(&str, &str)> = queries
        .iter()
        .map(|q| Ok((q.as_str(), texts.text(q)?)))
        .collect::<Result<_>>()?;
    write_tsv(&dir.join("queries.tsv"), rows.into_iter())?;
    qrels
        .restrict(queries.iter().map(String::as_str))
        .write(&dir.join("qrels.txt"))
}

fn read_query_set(dir: &Path) -> Result<(Vec<String>, QrelSet)> {
    let store = load_queries(&dir.join("queries.tsv"))?;
    let qrels = load_qrels(&dir.join("qrels.txt"))?;
    Ok((store.ids().map(str::to_string).collect(), qrels))
}

/// Writes `tasks/<task-id>/<split>/{queries.tsv,qrels.txt}` under `root`.
pub fn write_task(root: &Path, task: &Task, texts: &QueryStore) -> Result<()> {
    let dir = root.join("tasks").join(&task.id);
    for s in Split::ALL {
        write_query_set(&dir.join(s.name()), task.split(s), &task.qrels, texts)?;
    }
    Ok(())
}

fn read_task(root: &Path, header: &TaskHeader) -> Result<Task> {
    let dir = root.join("tasks").join(&header.id);
    let mut qrels = QrelSet::new();
    let mut splits = Vec::new();
    for s in Split::ALL {
        let (qs, q) = read_query_set(&dir.join(s.name()))?;
        qrels.merge(&q);
        splits.push(qs);
    }
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Task {
        id: header.id.clone(),
        provenance: header.provenance,
        clusters: header.clusters.clone(),
        source_tasks: header.source_tasks.clone(),
        train,
        val,
        test,
        qrels,
    })
}

/// Writes task files plus `sequence.json`.
pub fn write_sequence(dir: &Path, seq: &TopicSequence, texts: &QueryStore) -> Result<()> {
    mkdir(dir)?;
    for t in &seq.tasks {
        write_task(dir, t, texts)?;
    }
    write_json(
        &dir.join("sequence.json"),
        &SequenceManifest {
            kind: seq.kind.clone(),
            seed: seq.seed,
            tasks: seq.tasks.iter().map(TaskHeader::from).collect(),
            tracked: seq.tracked.clone(),
        },
    )
}

pub fn read_sequence(dir: &Path) -> Result<TopicSequence> {
    let path = dir.join("sequence.json");
    let m: SequenceManifest = read_json(&path)?;
    if let Some(bad) = m.tracked.iter().find(|&&i| i >= m.tasks.len()) {
        return Err(Error::parse(&path, 1, format!("tracked index {bad} out of range")));
    }
    Ok(TopicSequence {
        kind: m.kind,
        seed: m.seed,
        tracked: m.tracked,
        tasks: m.tasks.iter().map(|h| read_task(dir, h)).collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScenarioManifest {
    id: String,
    kind: ScenarioKind,
    reversed: bool,
    topic: String,
    foreign: Option<String>,
    seed: u64,
    tasks: Vec<TaskHeader>,
    eval_groups: Vec<String>,
    partition: Option<TopicPartition>,
    mapping_collisions: usize,
}

/// Writes `scenario.json`, `tasks/...` and `groups/<name>/...` under
/// `dir`.
pub fn write_scenario(dir: &Path, sc: &Scenario, texts: &QueryStore) -> Result<()> {
    mkdir(dir)?;
    for t in &sc.tasks {
        write_task(dir, t, texts)?;
    }
    for g in &sc.eval_groups {
        write_query_set(&dir.join("groups").join(&g.name), &g.queries, &g.qrels, texts)?;
    }
    write_json(
        &dir.join("scenario.json"),
        &ScenarioManifest {
            id: sc.id.clone(),
            kind: sc.kind,
            reversed: sc.reversed,
            topic: sc.topic.clone(),
            foreign: sc.foreign.clone(),
            seed: sc.seed,
            tasks: sc.tasks.iter().map(TaskHeader::from).collect(),
            eval_groups: sc.eval_groups.iter().map(|g| g.name.clone()).collect(),
            partition: sc.partition.clone(),
            mapping_collisions: sc.mapping_collisions,
        },
    )
}

pub fn read_scenario(dir: &Path) -> Result<Scenario> {
    let m: ScenarioManifest = read_json(&dir.join("scenario.json"))?;
    let tasks = m.tasks.iter().map(|h| read_task(dir, h)).collect::<Result<_>>()?;
    let eval_groups = m
        .eval_groups
        .iter()
        .map(|name| {
            let (queries, qrels) = read_query_set(&dir.join("groups").join(name))?;
            Ok(EvalGroup {
                name: name.clone(),
                queries,
                qrels,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Scenario {
        id: m.id,
        kind: m.kind,
        reversed: m.reversed,
        topic: m.topic,
        foreign: m.foreign,
        tasks,
        eval_groups,
        partition: m.partition,
        mapping_collisions: m.mapping_collisions,
        seed: m.seed,
    })
}
