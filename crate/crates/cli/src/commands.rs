use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use topicstream::clustering::{populate_clusters, seed_clusters, split_sample, write_clusters_jsonl, ClusterParams};
use topicstream::corpus::{load_qrels, load_queries, Corpus};
use topicstream::embeddings::load_vectors;
use topicstream::harness::{
    run_sequence, Bm25Ranker, ExternalRanker, Mode, Ranker, RunConfig, Stream, TermWeightParams, TermWeightRanker,
};
use topicstream::metrics::{
    mf_score, quartile_forgetting, similarity_matrix, write_quartiles_csv, Metric, RunHistory, SimilarityMatrix,
    SimilarityParams,
};
use topicstream::retrieval::InvertedIndex;
use topicstream::streams::{
    build_direct_transfer, build_information_update, build_language_drift, build_random_sequence,
    build_topic_sequence, read_scenario, read_sequence, write_scenario, write_sequence, ScenarioParams, SplitSizes,
};
use topicstream::synthetic::{generate, SyntheticSpec};
use topicstream::Error;

use crate::manifest::Manifest;
use crate::{
    BuildRandomArgs, BuildScenarioArgs, BuildTopicsArgs, Global, Kind, MetricArg, ModeArg, RankerKind, ReportArgs,
    RunArgs, SimilarityArgs, SynthArgs,
};

fn manifest<A: Serialize>(command: &str, g: &Global, args: &A) -> Result<Manifest> {
    let flags = json!({ "global": g, "args": args });
    Ok(Manifest::new(command, g.seed, flags))
}

fn load_corpus(g: &Global) -> Result<Corpus> {
    let c = Corpus::load_dir(&g.corpus_dir)?;
    info!(
        "corpus: {} queries, {} docs, {} judged queries",
        c.queries.len(),
        c.docs.len(),
        c.qrels.query_count()
    );
    Ok(c)
}

fn corpus_inputs(m: &mut Manifest, g: &Global) -> Result<()> {
    for f in ["queries.tsv", "collection.tsv", "qrels.txt"] {
        m.input(&g.corpus_dir.join(f))?;
    }
    Ok(())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn synth(g: &Global, a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        topics: a.topics,
        queries_per_topic: a.queries_per_topic,
        distractors_per_query: a.distractors,
        cues: a.cues,
        noise: a.noise,
        seed: g.seed,
        ..Default::default()
    };
    let s = generate(&spec)?;
    let out = &g.out_dir;
    s.corpus.write_dir(out)?;
    s.query_vectors.write(&out.join("query_vectors.txt"))?;
    s.doc_vectors.write(&out.join("doc_vectors.txt"))?;
    let truth: String = s.topic_of.iter().map(|(q, t)| format!("{q}\t{t}\n")).collect();
    fs::write(out.join("topics.tsv"), truth)?;

    let mut m = manifest("synth", g, a)?;
    m.details = json!({ "spec": spec });
    m.write(out)?;
    println!(
        "wrote {} queries and {} documents to {}",
        s.corpus.queries.len(),
        s.corpus.docs.len(),
        out.display()
    );
    Ok(())
}

pub fn build_topics(g: &Global, a: &BuildTopicsArgs) -> Result<()> {
    let qpath = a.queries.clone().unwrap_or_else(|| g.corpus_dir.join("queries.tsv"));
    let rpath = a.qrels.clone().unwrap_or_else(|| g.corpus_dir.join("qrels.txt"));
    let queries = load_queries(&qpath)?;
    let qrels = load_qrels(&rpath)?;
    let dangling = qrels.queries().filter(|q| !queries.contains(q)).count();
    if dangling > 0 {
        return Err(Error::Validation(format!("{dangling} judged queries missing from {}", qpath.display())).into());
    }
    let table = load_vectors(&a.vectors)?;
    let judged: Vec<String> = qrels
        .queries()
        .filter(|q| qrels.is_judged(q))
        .map(str::to_string)
        .collect();
    let missing = judged.iter().filter(|q| !table.contains(q)).count();
    if missing > 0 {
        return Err(Error::Validation(format!("{missing} judged queries have no vector")).into());
    }

    let params = ClusterParams {
        t1: a.t1,
        t2: a.t2,
        min_size: a.s,
        sample_size: a.sample_size,
        seed: g.seed,
    };
    params.validate()?;
    let (sample, rest) = split_sample(&judged, &params);
    info!("clustering a sample of {} queries, {} left to populate", sample.len(), rest.len());
    let seeds = seed_clusters(&sample, &table, &params)?;
    let clusters = populate_clusters(&seeds, &rest, &table, &params)?;

    let out = &g.out_dir;
    fs::create_dir_all(out)?;
    write_clusters_jsonl(&out.join("clusters.jsonl"), &clusters)?;
    let members: Vec<(u32, Vec<String>)> = clusters
        .iter()
        .map(|c| (c.cluster_id, c.members().map(str::to_string).collect()))
        .collect();
    let seq = build_topic_sequence(
        &members,
        &queries,
        &qrels,
        SplitSizes { val: a.val, test: a.test },
        a.tracked,
        g.seed,
    )?;
    write_sequence(out, &seq, &queries)?;

    let sizes: Vec<f64> = clusters.iter().map(|c| c.len() as f64).collect();
    let (mean, sd) = mean_sd(&sizes);
    let mut m = manifest("build-topics", g, a)?;
    m.input(&qpath)?;
    m.input(&rpath)?;
    m.input(&a.vectors)?;
    m.details = json!({
        "clusters": clusters.len(),
        "tasks": seq.tasks.len(),
        "tracked": seq.tracked,
    });
    m.write(out)?;
    println!("{} clusters, size {mean:.1} ± {sd:.1}", clusters.len());
    println!("{} tasks in sequence, tracked positions {:?}", seq.tasks.len(), seq.tracked);
    Ok(())
}

pub fn build_random(g: &Global, a: &BuildRandomArgs) -> Result<()> {
    if !a.reference_sequence.join("sequence.json").exists() {
        bail!(Error::InvalidInput(format!(
            "no sequence.json under {}",
            a.reference_sequence.display()
        )));
    }
    let reference = read_sequence(&a.reference_sequence)?;
    let qpath = g.corpus_dir.join("queries.tsv");
    let queries = load_queries(&qpath)?;
    let seq = build_random_sequence(&reference, g.seed)?;
    write_sequence(&g.out_dir, &seq, &queries)?;
    let mut m = manifest("build-random", g, a)?;
    m.input(&a.reference_sequence)?;
    m.input(&qpath)?;
    m.details = json!({ "tasks": seq.tasks.len() });
    m.write(&g.out_dir)?;
    println!("{} random tasks written to {}", seq.tasks.len(), g.out_dir.display());
    Ok(())
}

pub fn similarity(g: &Global, a: &SimilarityArgs) -> Result<()> {
    let seq = read_sequence(&a.sequence)?;
    let corpus = load_corpus(g)?;
    let index = InvertedIndex::build(&corpus.docs)?;
    let params = SimilarityParams {
        pool_size: a.pool_size,
        depth: a.depth,
        seed: g.seed,
    };
    let matrix = similarity_matrix(&seq.tasks, &index, &corpus.queries, &params)?;
    fs::create_dir_all(&g.out_dir)?;
    matrix.write_csv(&g.out_dir.join("matrix.csv"))?;
    let (intra, inter) = (matrix.intra_mean(), matrix.inter_mean());
    let mut m = manifest("similarity", g, a)?;
    m.input(&a.sequence)?;
    corpus_inputs(&mut m, g)?;
    m.details = json!({ "intra": intra, "inter": inter });
    m.write(&g.out_dir)?;
    println!("intra {:.1}  inter {:.1}  (c-score x100)", 100.0 * intra, 100.0 * inter);
    Ok(())
}

fn need(p: &Option<PathBuf>, flag: &str, kind: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::InvalidInput(format!("--kind {kind} needs {flag}")).into())
}

pub fn build_scenario(g: &Global, a: &BuildScenarioArgs) -> Result<()> {
    let seq = read_sequence(&a.sequence)?;
    let qpath = g.corpus_dir.join("queries.tsv");
    let queries = load_queries(&qpath)?;
    let params = ScenarioParams {
        k: a.k,
        topics: a.topics,
        ..Default::default()
    };
    let mut m = manifest("build-scenario", g, a)?;
    m.input(&a.sequence)?;
    m.input(&qpath)?;
    let scenarios = match a.kind {
        Kind::Dt => build_direct_transfer(&seq, &params, g.seed)?,
        Kind::Iu => {
            let p = need(&a.doc_vectors, "--doc-vectors", "iu")?;
            m.input(&p)?;
            build_information_update(&seq, &load_vectors(&p)?, &params, g.seed)?
        }
        Kind::Ld => {
            let p = need(&a.query_vectors, "--query-vectors", "ld")?;
            m.input(&p)?;
            build_language_drift(&seq, &load_vectors(&p)?, &params, g.seed)?
        }
    };
    if scenarios.is_empty() {
        bail!(Error::InvalidInput("no topic is large enough for this scenario".into()));
    }
    for sc in &scenarios {
        write_scenario(&g.out_dir.join(&sc.id), sc, &queries)?;
        println!("{}: {} tasks, {} mapping collisions", sc.id, sc.tasks.len(), sc.mapping_collisions);
    }
    m.details = json!({ "scenarios": scenarios.iter().map(|s| &s.id).collect::<Vec<_>>() });
    m.write(&g.out_dir)?;
    Ok(())
}

fn make_ranker(a: &RunArgs, index: &InvertedIndex) -> Result<Box<dyn Ranker>> {
    Ok(match a.ranker {
        RankerKind::Bm25 => Box::new(Bm25Ranker),
        RankerKind::Termweight => Box::new(TermWeightRanker::new(
            index,
            TermWeightParams {
                margin: a.margin,
                learning_rate: a.learning_rate,
                momentum: a.momentum,
                ..Default::default()
            },
        )),
        RankerKind::External => {
            let cmd: Vec<String> = a
                .ranker_cmd
                .as_deref()
                .unwrap_or_default()
                .split_whitespace()
                .map(str::to_string)
                .collect();
            Box::new(ExternalRanker::spawn(&cmd, Duration::from_secs(a.timeout))?)
        }
    })
}

pub fn run(g: &Global, a: &RunArgs) -> Result<()> {
    let corpus = load_corpus(g)?;
    let index = InvertedIndex::build(&corpus.docs)?;
    let (sequence, scenario) = match (&a.sequence, &a.scenario) {
        (Some(p), _) => (Some(read_sequence(p)?), None),
        (None, Some(p)) => (None, Some(read_scenario(p)?)),
        (None, None) => bail!(Error::InvalidInput("give --sequence or --scenario".into())),
    };
    let stream = match (&sequence, &scenario) {
        (Some(s), _) => Stream::Sequence(s),
        (_, Some(s)) => Stream::Scenario(s),
        _ => unreachable!(),
    };
    let cfg = RunConfig {
        seed: g.seed,
        candidates_depth: a.depth,
        epochs_per_task: a.epochs,
        mode: match a.mode {
            ModeArg::Sequential => Mode::Sequential,
            ModeArg::Joint => Mode::Joint,
            ModeArg::Frozen => Mode::Frozen,
        },
        ..Default::default()
    };
    let mut ranker = make_ranker(a, &index)?;

    let out = &g.out_dir;
    let mut m = manifest("run", g, a)?;
    m.input(a.sequence.as_ref().or(a.scenario.as_ref()).expect("checked above"))?;
    corpus_inputs(&mut m, g)?;
    m.details = json!({
        "config": cfg,
        "ranker": ranker.describe(),
        "task_order": stream.steps().iter().map(|t| &t.id).collect::<Vec<_>>(),
        "init": stream.init().map(|t| &t.id),
    });
    m.write(out)?;

    let outcome = run_sequence(stream, ranker.as_mut(), &cfg, &corpus, &index, Some(out))?;
    let mut table = String::from("task,mrr10,mrr100\n");
    println!("{:<28} {:>7} {:>7}", "task", "MRR@10", "MRR@100");
    for (name, s) in &outcome.final_scores {
        table.push_str(&format!("{name},{},{}\n", s.mrr10, s.mrr100));
        println!("{name:<28} {:>7.1} {:>7.1}", 100.0 * s.mrr10, 100.0 * s.mrr100);
    }
    fs::write(out.join("final.csv"), table)?;
    let n = outcome.final_scores.len() as f64;
    let mean10 = outcome.final_scores.iter().map(|s| s.1.mrr10).sum::<f64>() / n;
    let mean100 = outcome.final_scores.iter().map(|s| s.1.mrr100).sum::<f64>() / n;
    println!("{:<28} {:>7.1} {:>7.1}", "mean", 100.0 * mean10, 100.0 * mean100);
    Ok(())
}

fn task_order(run: &Path) -> Result<Vec<String>> {
    let path = run.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text)?;
    v.pointer("/details/task_order")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect())
        .ok_or_else(|| anyhow!(Error::InvalidInput(format!("{} lacks a task order", path.display()))))
}

pub fn report(g: &Global, a: &ReportArgs) -> Result<()> {
    let history = RunHistory::read_csv(&a.run.join("history.csv"))?;
    let matrix = SimilarityMatrix::read_csv(&a.matrix)?;
    let order = task_order(&a.run)?;
    let metric = match a.metric {
        MetricArg::Mrr10 => Metric::Mrr10,
        MetricArg::Mrr100 => Metric::Mrr100,
    };
    let rows = quartile_forgetting(&history, &matrix, &order, metric)?;
    fs::create_dir_all(&g.out_dir)?;
    write_quartiles_csv(&g.out_dir.join("quartiles.csv"), &rows)?;

    let mut summary = String::from("task\tbest_step\tbest\tfinal_mf\n");
    for (t, name) in history.targets.iter().enumerate() {
        let series = history.series(t, metric)?;
        let mut best = 0;
        for (j, v) in series.iter().enumerate() {
            if *v > series[best] {
                best = j;
            }
        }
        let mf = mf_score(&history, t, history.steps, metric)?;
        summary.push_str(&format!("{name}\t{best}\t{}\t{mf}\n", series[best]));
    }
    summary.push_str("\nquartile\tmean_similarity\tmean_mf\n");
    for r in rows.iter().filter(|r| r.tracked == topicstream::metrics::POOLED) {
        summary.push_str(&format!("{}\t{}\t{}\n", r.quartile, r.mean_similarity, r.mean_mf));
    }
    fs::write(g.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");

    let mut m = manifest("report", g, a)?;
    m.input(&a.run.join("history.csv"))?;
    m.input(&a.matrix)?;
    m.write(&g.out_dir)
}
