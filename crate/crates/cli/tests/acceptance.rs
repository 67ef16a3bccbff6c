//! Acceptance suite: one PASS/FAIL/SKIP line per criterion, each computed
//! against an oracle written here rather than reusing library code paths.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use topicstream::clustering::{
    constrained_2means, partition_objective, populate_clusters, seed_clusters, size_floor, split_sample,
    ClusterParams,
};
use topicstream::corpus::{Corpus, DocStore, QrelSet, QueryStore};
use topicstream::embeddings::{load_vectors, EmbeddingTable};
use topicstream::harness::{run_sequence, Bm25Ranker, Mode, RunConfig, Stream, TermWeightParams, TermWeightRanker};
use topicstream::metrics::{
    c_score, mf_score, mrr_at_k, similarity_matrix, Metric, RunHistory, Scores, SimilarityParams,
};
use topicstream::retrieval::{Bm25Params, InvertedIndex, Ranking};
use topicstream::seed;
use topicstream::streams::{
    build_direct_transfer, build_information_update, build_language_drift, build_random_sequence,
    build_topic_sequence, Provenance, Scenario, ScenarioParams, SplitSizes, Task, TopicSequence,
};
use topicstream::synthetic::{generate, planted_groups, SyntheticSpec};

type Check = Result<(bool, String), String>;

struct Line {
    name: &'static str,
    status: &'static str,
    detail: String,
}

fn criterion(name: &'static str, limit: Duration, f: impl FnOnce() -> Check) -> Line {
    let start = Instant::now();
    let result = f();
    let took = start.elapsed();
    let (status, detail) = match result {
        Ok((true, d)) if took <= limit => ("PASS", d),
        Ok((true, d)) => ("FAIL", format!("{d}; took {took:.1?}, limit {limit:?}")),
        Ok((false, d)) => ("FAIL", d),
        Err(e) if e.starts_with("skip:") => ("SKIP", e[5..].trim().to_string()),
        Err(e) => ("FAIL", format!("error: {e}")),
    };
    Line {
        name,
        status,
        detail: format!("{detail} [{took:.1?}]"),
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn rng(tag: &str) -> seed::Rng {
    seed::rng(2024, tag, 0)
}

// ---------------------------------------------------------------------------
// Oracles

fn oracle_rr(ranked: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let mut rank = 1;
    for d in ranked {
        if rank > k {
            break;
        }
        if relevant.contains(d) {
            return 1.0 / rank as f64;
        }
        rank += 1;
    }
    0.0
}

fn oracle_mf(series: &[f64], step: usize) -> f64 {
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted[0] - series[step]
}

/// Whitespace-tokenized BM25 over a small collection.
struct ScalarBm25 {
    docs: Vec<(String, Vec<String>)>,
    avg: f64,
}

impl ScalarBm25 {
    fn new(docs: &[(String, String)]) -> Self {
        let mut docs: Vec<(String, Vec<String>)> = docs
            .iter()
            .map(|(id, t)| (id.clone(), t.split_whitespace().map(String::from).collect()))
            .collect();
        docs.sort();
        let avg = docs.iter().map(|d| d.1.len() as f64).sum::<f64>() / docs.len() as f64;
        ScalarBm25 { docs, avg }
    }

    fn score(&self, query: &str, doc: usize) -> f64 {
        let (k1, b) = (0.9, 0.4);
        let n = self.docs.len() as f64;
        let words = &self.docs[doc].1;
        let mut s = 0.0;
        for t in query.split_whitespace() {
            let tf = words.iter().filter(|w| *w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = self.docs.iter().filter(|d| d.1.iter().any(|w| w == t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * words.len() as f64 / self.avg));
        }
        s
    }

    /// Docs with a positive score, best first, ties by id.
    fn top(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = (0..self.docs.len())
            .map(|i| (self.docs[i].0.clone(), self.score(query, i)))
            .filter(|x| x.1 > 0.0)
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }
}

fn random_text(r: &mut seed::Rng, vocab: usize, len: usize) -> String {
    (0..len)
        .map(|_| format!("w{}", r.gen_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn bare_task(id: &str, queries: Vec<String>) -> Task {
    let mut queries = queries;
    queries.sort();
    Task {
        id: id.into(),
        provenance: Provenance::Topic,
        clusters: vec![],
        source_tasks: vec![],
        train: queries,
        val: vec![],
        test: vec![],
        qrels: QrelSet::new(),
    }
}

// ---------------------------------------------------------------------------
// Criteria

fn metric_oracles() -> Check {
    let mut r = rng("metrics");
    let mut worst_mrr = 0.0f64;
    let mut mf_mismatch = 0;
    let mut worst_c = 0.0f64;
    for _ in 0..200 {
        // MRR@K
        let pool: Vec<String> = (0..200).map(|i| format!("d{i}")).collect();
        let len = r.gen_range(0..150);
        let ranked: Vec<String> = pool.choose_multiple(&mut r, len).cloned().collect();
        let nrel = r.gen_range(0..6);
        let relevant: BTreeSet<String> = pool.choose_multiple(&mut r, nrel).cloned().collect();
        let ranking = Ranking {
            query_id: "q".into(),
            entries: ranked.iter().map(|d| (d.clone(), 0.0)).collect(),
        };
        for k in [1, 10, 100] {
            let diff = (mrr_at_k(&ranking, &relevant, k) - oracle_rr(&ranked, &relevant, k)).abs();
            worst_mrr = worst_mrr.max(diff);
        }

        // mf
        let steps = r.gen_range(1..20);
        let series: Vec<f64> = (0..=steps).map(|_| r.gen_range(0.0..1.0)).collect();
        let mut h = RunHistory::new(vec!["t".into()], steps);
        for (j, v) in series.iter().enumerate() {
            h.record(0, j, Scores { mrr10: *v, mrr100: *v });
        }
        for j in 0..=steps {
            if mf_score(&h, 0, j, Metric::Mrr10).map_err(e)? != oracle_mf(&series, j) {
                mf_mismatch += 1;
            }
        }

        // c-score through retrieval, pooling and overlap
        let docs: Vec<(String, String)> = (0..40)
            .map(|i| {
                let n = r.gen_range(3..10);
                (format!("d{i:02}"), random_text(&mut r, 25, n))
            })
            .collect();
        let store: DocStore = docs.iter().cloned().collect();
        let index = InvertedIndex::build(&store).map_err(e)?;
        let oracle = ScalarBm25::new(&docs);
        let mut queries = QueryStore::new();
        let mut make_task = |name: &str, r: &mut seed::Rng| -> Task {
            let n = r.gen_range(6..20);
            let ids: Vec<String> = (0..n).map(|i| format!("{name}q{i:02}")).collect();
            for q in &ids {
                let len = r.gen_range(1..5);
                queries.insert(q.clone(), random_text(r, 25, len)).unwrap();
            }
            bare_task(name, ids)
        };
        let a = make_task("a", &mut r);
        let b = make_task("b", &mut r);
        let tasks = [a, b];
        let params = SimilarityParams {
            pool_size: r.gen_range(2..10),
            depth: r.gen_range(1..30),
            seed: r.gen(),
        };
        let i = r.gen_range(0..2);
        let j = r.gen_range(0..2);
        let got = c_score(&tasks[i], i, &tasks[j], j, &index, &queries, &params).map_err(e)?;

        let pools = |t: &Task, pos: usize| -> (Vec<String>, Vec<String>) {
            let mut all = t.train.clone();
            all.sort();
            let mut g = seed::rng(params.seed, "pool", pos as u64);
            let shuffled = seed::shuffled(&all, &mut g);
            let p = params.pool_size.min(all.len() / 2);
            (shuffled[..p].to_vec(), shuffled[p..2 * p].to_vec())
        };
        let retrieved = |pool: &[String]| -> Vec<String> {
            let mut out: Vec<String> = Vec::new();
            for q in pool {
                for (d, _) in oracle.top(queries.get(q).unwrap(), params.depth) {
                    if !out.contains(&d) {
                        out.push(d);
                    }
                }
            }
            out
        };
        let da = retrieved(&pools(&tasks[i], i).0);
        let db = retrieved(&pools(&tasks[j], j).1);
        if da.is_empty() {
            continue;
        }
        let common = da.iter().filter(|d| db.contains(d)).count();
        worst_c = worst_c.max((got - common as f64 / da.len() as f64).abs());
    }
    let ok = worst_mrr <= 1e-9 && mf_mismatch == 0 && worst_c <= 1e-9;
    Ok((
        ok,
        format!("200 instances: max |ΔMRR| {worst_mrr:.1e}, mf mismatches {mf_mismatch}, max |Δc| {worst_c:.1e}"),
    ))
}

fn bm25_fixture() -> Vec<(String, String)> {
    let texts = [
        "river water flood river bank",
        "water shortage drought farm",
        "drought relief water supply water water",
        "bank loan interest rate",
        "interest rate rise inflation bank",
        "flood warning river level",
        "farm subsidy grain price",
        "grain export price rise",
        "inflation price index",
        "water price index rise",
        "river fish salmon",
        "salmon farm water quality quality",
        "quality control factory",
        "factory output rise",
        "output price index grain farm",
        "loan default bank crisis crisis crisis",
        "crisis relief supply",
        "supply chain factory output export",
        "export tariff rate",
        "tariff grain farm export price water river flood drought",
    ];
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("doc{i:02}"), t.to_string()))
        .collect()
}

fn bm25_correctness() -> Check {
    let docs = bm25_fixture();
    let store: DocStore = docs.iter().cloned().collect();
    let index = InvertedIndex::build_with(&store, Bm25Params { k1: 0.9, b: 0.4 }).map_err(e)?;
    let oracle = ScalarBm25::new(&docs);
    let queries = [
        "water",
        "river flood",
        "price rise index",
        "bank crisis",
        "water water drought",
        "salmon quality farm",
        "export tariff grain price",
        "unknownterm",
    ];
    let mut worst = 0.0f64;
    let mut prefix_ok = true;
    for q in queries {
        let terms: Vec<String> = q.split_whitespace().map(String::from).collect();
        for (i, (id, _)) in oracle.docs.iter().enumerate() {
            let s = index.bm25_score(&terms, id, 0.9, 0.4).map_err(e)?;
            worst = worst.max((s - oracle.score(q, i)).abs());
        }
        let full: Vec<(String, f64)> = index
            .search(q, 100)
            .into_iter()
            .map(|(row, s)| (index.doc_id(row).to_string(), s))
            .collect();
        let expected = oracle.top(q, 100);
        if full.len() != expected.len() || full.iter().zip(&expected).any(|(a, b)| a.0 != b.0) {
            prefix_ok = false;
        }
        for k in [1, 5, 10, 100] {
            let top = index.search(q, k);
            let n = k.min(full.len());
            if top.len() != n || top.iter().zip(&full).any(|(a, b)| index.doc_id(a.0) != b.0) {
                prefix_ok = false;
            }
        }
    }
    Ok((
        worst <= 1e-9 && prefix_ok,
        format!("20 docs, 8 queries: max |Δscore| {worst:.1e}, ordering and prefix property {}", if prefix_ok { "hold" } else { "violated" }),
    ))
}

fn clustering_invariants() -> Check {
    // seed + populate on planted groups
    let (table, truth) = planted_groups(10, 100, 64, 0.04, 7).map_err(e)?;
    let params = ClusterParams {
        t1: 0.8,
        t2: 0.6,
        min_size: 5,
        sample_size: 500,
        seed: 13,
    };
    let ids: Vec<String> = table.ids().to_vec();
    let (sample, rest) = split_sample(&ids, &params);
    let seeds = seed_clusters(&sample, &table, &params).map_err(e)?;
    let clusters = populate_clusters(&seeds, &rest, &table, &params).map_err(e)?;
    let mut majority = 0usize;
    let mut members = 0usize;
    for c in &clusters {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for m in c.members() {
            *counts.entry(truth[m]).or_default() += 1;
        }
        majority += counts.values().max().copied().unwrap_or(0);
        members += c.len();
    }
    let purity = majority as f64 / members.max(1) as f64;
    let found = clusters.len();

    // size floor on random instances
    let mut r = rng("2means");
    let mut floor_violations = 0;
    let random_table = |n: usize, dim: usize, r: &mut seed::Rng| -> (EmbeddingTable, Vec<String>) {
        let mut t = EmbeddingTable::new(dim).unwrap();
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        for id in &ids {
            let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            t.insert(id.clone(), &v).unwrap();
        }
        (t, ids)
    };
    for inst in 0..500 {
        let n = r.gen_range(4..60);
        let frac = r.gen_range(0.01..=0.5);
        let (t, ids) = random_table(n, r.gen_range(2..10), &mut r);
        let split = constrained_2means(&ids, &t, frac, 100, inst).map_err(e)?;
        let floor = ((frac * n as f64).ceil() as usize).min(n / 2).max(1);
        debug_assert_eq!(floor, size_floor(n, frac));
        if split.first.len() < floor || split.second.len() < floor || split.first.len() + split.second.len() != n {
            floor_violations += 1;
        }
    }

    // objective against random feasible partitions
    let mut beaten = 0;
    for inst in 0..20 {
        let n = r.gen_range(20..60);
        let (t, ids) = random_table(n, 6, &mut r);
        let frac = 0.25;
        let split = constrained_2means(&ids, &t, frac, 100, inst).map_err(e)?;
        let ours = partition_objective(&split.first, &split.second, &t).map_err(e)?;
        let floor = ((frac * n as f64).ceil() as usize).min(n / 2);
        let mut best_random = f64::NEG_INFINITY;
        for _ in 0..1000 {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut r);
            let cut = r.gen_range(floor..=n - floor);
            let o = partition_objective(&shuffled[..cut], &shuffled[cut..], &t).map_err(e)?;
            best_random = best_random.max(o);
        }
        if ours >= best_random - 1e-12 {
            beaten += 1;
        }
    }
    let ok = found == 10 && purity >= 0.99 && floor_violations == 0 && beaten == 20;
    Ok((
        ok,
        format!(
            "{found} clusters, purity {:.2}%, floor violations {floor_violations}/500, beats random partitions on {beaten}/20",
            100.0 * purity
        ),
    ))
}

fn ground_truth_sequence(spec: &SyntheticSpec, sizes: SplitSizes, tracked: usize) -> Result<(Corpus, TopicSequence, topicstream::synthetic::SyntheticCorpus), String> {
    let s = generate(spec).map_err(e)?;
    let seq = build_topic_sequence(&s.clusters(), &s.corpus.queries, &s.corpus.qrels, sizes, tracked, spec.seed)
        .map_err(e)?;
    Ok((s.corpus.clone(), seq, s))
}

fn table1_structure() -> Check {
    let spec = SyntheticSpec {
        topics: 2,
        queries_per_topic: 300,
        ..Default::default()
    };
    let (corpus, seq, _) = ground_truth_sequence(&spec, SplitSizes::default(), 2)?;
    let random = build_random_sequence(&seq, 13).map_err(e)?;
    let index = InvertedIndex::build(&corpus.docs).map_err(e)?;
    let params = SimilarityParams {
        pool_size: 250,
        depth: 100,
        seed: 13,
    };
    let topical = similarity_matrix(&seq.tasks, &index, &corpus.queries, &params).map_err(e)?;
    let mixed = similarity_matrix(&random.tasks, &index, &corpus.queries, &params).map_err(e)?;
    let (ti, tx) = (topical.intra_mean(), topical.inter_mean());
    let (ri, rx) = (mixed.intra_mean(), mixed.inter_mean());
    let ok = ti > 10.0 * tx && ti > 0.0 && (ri - rx).abs() < 0.05;
    Ok((
        ok,
        format!(
            "topic sequence intra {:.1} / inter {:.1}; random intra {:.1} / inter {:.1} (x100, depth 100)",
            100.0 * ti,
            100.0 * tx,
            100.0 * ri,
            100.0 * rx
        ),
    ))
}

fn final_max_mf(h: &RunHistory) -> Result<f64, String> {
    let mut best = 0.0f64;
    for t in 0..h.targets.len() {
        best = best.max(mf_score(h, t, h.steps, Metric::Mrr10).map_err(e)?);
    }
    Ok(best)
}

fn forgetting_end_to_end() -> Check {
    let spec = SyntheticSpec {
        cues: true,
        ..Default::default()
    };
    let (corpus, seq, _) = ground_truth_sequence(&spec, SplitSizes { val: 10, test: 20 }, 3)?;
    let index = InvertedIndex::build(&corpus.docs).map_err(e)?;
    let mut histories = Vec::new();
    for mode in [Mode::Sequential, Mode::Joint] {
        let mut ranker = TermWeightRanker::new(&index, TermWeightParams::default());
        let cfg = RunConfig {
            mode,
            ..Default::default()
        };
        let out = run_sequence(Stream::Sequence(&seq), &mut ranker, &cfg, &corpus, &index, None).map_err(e)?;
        histories.push(out.history);
    }
    let h = &histories[0];
    let first = h.target_index(&seq.tasks[0].id).ok_or("first task not tracked")?;
    let own = mf_score(h, first, 1, Metric::Mrr10).map_err(e)?;
    let after = mf_score(h, first, 2, Metric::Mrr10).map_err(e)?;
    let seq_max = final_max_mf(h)?;
    let joint_max = final_max_mf(&histories[1])?;
    let ok = after > 0.0 && own == 0.0 && joint_max <= seq_max;
    Ok((
        ok,
        format!(
            "mf(topic 1) at own step {own:.3}, after topic 2 {after:.3}; final max mf joint {joint_max:.3} vs sequential {seq_max:.3}"
        ),
    ))
}

fn set(v: &[String]) -> BTreeSet<String> {
    v.iter().cloned().collect()
}

fn qrel_docs(t: &Task) -> BTreeSet<String> {
    t.qrels.iter().map(|(_, d, _)| d.to_string()).collect()
}

/// `(Q_a, Q_b, D_a, D_b)` in the roles of the scenario's direction.
fn roles(sc: &Scenario) -> (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) {
    let p = sc.partition.as_ref().expect("iu/ld carry a partition");
    let (q1, q2, d1, d2) = (set(&p.q1), set(&p.q2), set(&p.d1), set(&p.d2));
    if sc.reversed {
        (q2, q1, d2, d1)
    } else {
        (q1, q2, d1, d2)
    }
}

fn scenario_invariants() -> Check {
    let spec = SyntheticSpec {
        topics: 9,
        queries_per_topic: 60,
        ..Default::default()
    };
    let (_, seq, s) = ground_truth_sequence(&spec, SplitSizes { val: 10, test: 10 }, 5)?;
    let params = ScenarioParams::default();
    let mut problems = Vec::new();

    let iu = build_information_update(&seq, &s.doc_vectors, &params, 5).map_err(e)?;
    for sc in &iu {
        let (_, qb, da, _) = roles(sc);
        if !qrel_docs(&sc.tasks[1]).is_subset(&da) {
            problems.push(format!("{}: τ′ docs outside D1", sc.id));
        }
        if set(&sc.tasks[2].all_queries()) != qb {
            problems.push(format!("{}: τ″ queries differ from Q2", sc.id));
        }
    }

    let ld = build_language_drift(&seq, &s.query_vectors, &params, 5).map_err(e)?;
    let mut mapped = 0;
    for sc in &ld {
        let (_, _, da, db) = roles(sc);
        let star = &sc.tasks[1];
        let targets: BTreeSet<&String> = star
            .train
            .iter()
            .filter(|q| star.qrels.relevant_docs(q).len() > 1)
            .collect();
        for q in targets {
            mapped += 1;
            let docs: Vec<&str> = star.qrels.relevant_docs(q);
            if !docs.iter().any(|d| da.contains(*d)) || !docs.iter().any(|d| db.contains(*d)) {
                problems.push(format!("{}: mapped {q} lacks a D1 or D2 judgment", sc.id));
            }
        }
    }

    let dt = build_direct_transfer(&seq, &params, 5).map_err(e)?;
    for sc in &dt {
        let plus = sc.tasks[1].train.len() as f64;
        let minus = sc.tasks[3].train.len() as f64;
        if (plus - 0.75 * (plus + minus)).abs() > 1.0 {
            problems.push(format!("{}: split {plus}/{minus}", sc.id));
        }
    }

    for pair in iu.chunks(2).chain(ld.chunks(2)) {
        let (f, r) = (&pair[0], &pair[1]);
        let (fqa, fqb, fda, fdb) = roles(f);
        let (rqa, rqb, rda, rdb) = roles(r);
        if f.reversed || !r.reversed || f.eval_groups != r.eval_groups || (fqa, fqb, fda, fdb) != (rqb, rqa, rdb, rda) {
            problems.push(format!("{} / {}: roles do not swap", f.id, r.id));
        }
    }
    let ok = problems.is_empty() && !iu.is_empty() && !ld.is_empty() && mapped > 0 && dt.len() == 3;
    let detail = if problems.is_empty() {
        format!("{} iu, {} ld ({mapped} mapped queries), {} dt scenarios", iu.len(), ld.len(), dt.len())
    } else {
        problems.join("; ")
    };
    Ok((ok, detail))
}

const BIN: &str = env!("CARGO_BIN_EXE_topicstream");

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN).current_dir(dir).args(args).output().map_err(e)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            stack.extend(fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()));
        } else {
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
        }
    }
    out
}

fn determinism() -> Check {
    let mut trees = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(e)?;
        let d = tmp.path();
        let c = ["--corpus-dir", "corp", "--log-level", "warn"];
        let with = |x: &[&'static str]| -> Vec<&'static str> { [&c[..], x].concat() };
        cli(d, &["--out-dir", "corp", "--log-level", "warn", "synth", "--topics", "9", "--queries-per-topic", "40", "--cues"])?;
        cli(d, &with(&["--out-dir", "seq", "build-topics", "--vectors", "corp/query_vectors.txt", "--t1", "0.6", "--s", "10", "--t2", "0.4", "--val", "8", "--test", "8"]))?;
        cli(d, &with(&["--out-dir", "rnd", "build-random", "--reference-sequence", "seq"]))?;
        cli(d, &with(&["--out-dir", "sim", "similarity", "--sequence", "seq", "--depth", "100"]))?;
        cli(d, &with(&["--out-dir", "iu", "build-scenario", "--kind", "iu", "--sequence", "seq", "--k", "3", "--doc-vectors", "corp/doc_vectors.txt"]))?;
        cli(d, &with(&["--out-dir", "run", "run", "--sequence", "seq", "--ranker", "termweight", "--depth", "200"]))?;
        cli(d, &with(&["--out-dir", "rep", "report", "--run", "run", "--matrix", "sim/matrix.csv"]))?;
        trees.push(tree(d));
    }
    let differing: Vec<String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let has = |p: &str| trees[0].contains_key(Path::new(p));
    let key_files = has("seq/tasks") || trees[0].keys().any(|k| k.starts_with("seq/tasks"));
    let ok = differing.is_empty()
        && trees[0].len() == trees[1].len()
        && key_files
        && has("run/history.csv")
        && has("sim/matrix.csv");
    Ok((
        ok,
        if differing.is_empty() {
            format!("7 subcommands rerun, {} output files byte-identical", trees[0].len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

/// Runs only when `TOPICSTREAM_MSMARCO` points at a directory with
/// `queries.tsv`, `collection.tsv`, `qrels.txt` and `query_vectors.txt`.
fn msmarco_gated() -> Check {
    let Some(dir) = std::env::var_os("TOPICSTREAM_MSMARCO").map(PathBuf::from) else {
        return Err("skip: TOPICSTREAM_MSMARCO not set".into());
    };
    let corpus = Corpus::load_dir(&dir).map_err(e)?;
    let table = load_vectors(&dir.join("query_vectors.txt")).map_err(e)?;
    let judged: Vec<String> = corpus.judged_queries().into_iter().map(String::from).collect();
    let params = ClusterParams::default();
    let (sample, rest) = split_sample(&judged, &params);
    let seeds = seed_clusters(&sample, &table, &params).map_err(e)?;
    let clusters = populate_clusters(&seeds, &rest, &table, &params).map_err(e)?;
    let members: Vec<(u32, Vec<String>)> = clusters
        .iter()
        .map(|c| (c.cluster_id, c.members().map(String::from).collect()))
        .collect();
    let seq = build_topic_sequence(&members, &corpus.queries, &corpus.qrels, SplitSizes::default(), 5, 13)
        .map_err(e)?;
    let index = InvertedIndex::build(&corpus.docs).map_err(e)?;
    let cfg = RunConfig {
        mode: Mode::Frozen,
        ..Default::default()
    };
    let out = run_sequence(Stream::Sequence(&seq), &mut Bm25Ranker, &cfg, &corpus, &index, None).map_err(e)?;
    let n = out.final_scores.len() as f64;
    let m10 = 100.0 * out.final_scores.iter().map(|s| s.1.mrr10).sum::<f64>() / n;
    let m100 = 100.0 * out.final_scores.iter().map(|s| s.1.mrr100).sum::<f64>() / n;
    let ok = (15..=25).contains(&clusters.len()) && (m10 - 10.8).abs() <= 2.0 && (m100 - 11.7).abs() <= 2.0;
    Ok((ok, format!("{} clusters; frozen BM25 MRR@10 {m10:.1}, MRR@100 {m100:.1}", clusters.len())))
}

#[test]
fn acceptance() {
    let s = Duration::from_secs;
    let lines = vec![
        criterion("metric oracles", s(10), metric_oracles),
        criterion("bm25 correctness", s(5), bm25_correctness),
        criterion("clustering invariants", s(60), clustering_invariants),
        criterion("similarity structure (topic vs random)", s(120), table1_structure),
        criterion("forgetting end-to-end", s(120), forgetting_end_to_end),
        criterion("scenario invariants", s(30), scenario_invariants),
        criterion("determinism", s(300), determinism),
        criterion("dataset-gated MSMarco check", s(86_400), msmarco_gated),
    ];
    println!();
    for l in &lines {
        println!("{:<4}  {:<40} {}", l.status, l.name, l.detail);
    }
    let failed: Vec<&str> = lines.iter().filter(|l| l.status == "FAIL").map(|l| l.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
