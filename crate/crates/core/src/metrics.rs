//! Retrieval quality (MRR@K), forgetting (mf), task similarity (c-score)
//! and the quartile view that relates the two.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocStore, QueryStore};
use crate::error::{Error, Result};
use crate::harness::{Candidate, Ranker};
use crate::retrieval::{InvertedIndex, Ranking};
use crate::seed;
use crate::streams::{EvalGroup, Task};

/// Reciprocal rank of the first relevant doc within the top `k`, else 0.
pub fn reciprocal_rank<S: AsRef<str>>(ranked: &[S], is_relevant: impl Fn(&str) -> bool, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|d| is_relevant(d.as_ref()))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

pub fn mrr_at_k(ranking: &Ranking, relevant: &BTreeSet<String>, k: usize) -> f64 {
    let docs: Vec<&str> = ranking.entries.iter().map(|(d, _)| d.as_str()).collect();
    reciprocal_rank(&docs, |d| relevant.contains(d), k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Mrr10,
    Mrr100,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub mrr10: f64,
    pub mrr100: f64,
}

impl Scores {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Mrr10 => self.mrr10,
            Metric::Mrr100 => self.mrr100,
        }
    }
}

/// Shared inputs of an evaluation.
pub struct EvalContext<'a> {
    pub index: &'a InvertedIndex,
    pub queries: &'a QueryStore,
    pub docs: &'a DocStore,
    /// First-stage depth.
    pub depth: usize,
}

/// Re-ranks each query's BM25 top-`depth` candidates with `ranker` and
/// averages MRR@10 / MRR@100. Ties in the ranker's scores keep BM25 order.
pub fn evaluate_group(ranker: &dyn Ranker, group: &EvalGroup, ctx: &EvalContext) -> Result<Scores> {
    if group.queries.is_empty() {
        return Err(Error::InvalidInput(format!("evaluation group `{}` has no queries", group.name)));
    }
    let one = |qid: &String| -> Result<(f64, f64)> {
        let text = ctx.queries.text(qid)?;
        let hits = ctx.index.search(text, ctx.depth);
        let cands: Vec<Candidate> = hits
            .iter()
            .map(|&(row, bm25)| {
                let doc_id = ctx.index.doc_id(row);
                Ok(Candidate {
                    doc_id,
                    text: ctx.docs.text(doc_id)?,
                    bm25,
                })
            })
            .collect::<Result<_>>()?;
        let scores = ranker.rescore(qid, text, &cands)?;
        if scores.len() != cands.len() {
            return Err(Error::Protocol(format!(
                "ranker returned {} scores for {} candidates",
                scores.len(),
                cands.len()
            )));
        }
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let ranked: Vec<&str> = order.iter().map(|&i| cands[i].doc_id).collect();
        let rel = group.qrels.relevant(qid);
        let is_rel = |d: &str| rel.is_some_and(|m| m.contains_key(d));
        Ok((reciprocal_rank(&ranked, is_rel, 10), reciprocal_rank(&ranked, is_rel, 100)))
    };
    let per_query: Vec<(f64, f64)> = if ranker.concurrent() {
        group.queries.par_iter().map(one).collect::<Result<_>>()?
    } else {
        group.queries.iter().map(one).collect::<Result<_>>()?
    };
    let n = per_query.len() as f64;
    Ok(Scores {
        mrr10: per_query.iter().map(|p| p.0).sum::<f64>() / n,
        mrr100: per_query.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Evaluation results per target (task or scenario group) and step.
/// Step 0 is the evaluation before any sequence training.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub targets: Vec<String>,
    /// Number of training steps `n`; steps run `0..=n`.
    pub steps: usize,
    cells: Vec<Vec<Option<Scores>>>,
}

impl RunHistory {
    pub fn new(targets: Vec<String>, steps: usize) -> Self {
        let cells = vec![vec![None; steps + 1]; targets.len()];
        RunHistory { targets, steps, cells }
    }

    pub fn target_index(&self, name: &str) -> Option<usize> {
        self.targets.iter().position(|t| t == name)
    }

    pub fn record(&mut self, target: usize, step: usize, s: Scores) {
        self.cells[target][step] = Some(s);
    }

    pub fn get(&self, target: usize, step: usize) -> Option<Scores> {
        self.cells.get(target)?.get(step).copied().flatten()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|row| row.iter().all(Option::is_some))
    }

    /// Scores of one target over steps `0..=n`.
    pub fn series(&self, target: usize, m: Metric) -> Result<Vec<f64>> {
        self.cells[target]
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.map(|s| s.get(m)).ok_or_else(|| {
                    Error::InvalidInput(format!("history missing {} at step {j}", self.targets[target]))
                })
            })
            .collect()
    }

    /// Writes `task,step,mrr10,mrr100` rows for every recorded cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "task,step,mrr10,mrr100").map_err(io)?;
        for step in 0..=self.steps {
            for (t, name) in self.targets.iter().enumerate() {
                if let Some(s) = self.cells[t][step] {
                    writeln!(w, "{name},{step},{},{}", s.mrr10, s.mrr100).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<(String, usize, Scores)> = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::parse(path, i + 1, "expected `task,step,mrr10,mrr100`");
            if f.len() != 4 {
                return Err(bad());
            }
            let step = f[1].parse().map_err(|_| bad())?;
            let mrr10 = f[2].parse().map_err(|_| bad())?;
            let mrr100 = f[3].parse().map_err(|_| bad())?;
            rows.push((f[0].to_string(), step, Scores { mrr10, mrr100 }));
        }
        let mut targets: Vec<String> = Vec::new();
        for (t, _, _) in &rows {
            if !targets.contains(t) {
                targets.push(t.clone());
            }
        }
        let steps = rows.iter().map(|r| r.1).max().unwrap_or(0);
        let mut h = RunHistory::new(targets, steps);
        for (t, step, s) in rows {
            let ti = h.target_index(&t).expect("collected above");
            h.record(ti, step, s);
        }
        Ok(h)
    }
}

/// Forgetting of `target` at `step`: best score over the recorded steps minus
/// the score at `step`.
pub fn mf_score(h: &RunHistory, target: usize, step: usize, m: Metric) -> Result<f64> {
    let series = h.series(target, m)?;
    let at = *series
        .get(step)
        .ok_or_else(|| Error::InvalidInput(format!("step {step} beyond history length")))?;
    let best = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(best - at)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub pool_size: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            pool_size: 250,
            depth: 1000,
            seed: 13,
        }
    }
}

/// Two disjoint query pools `(A, B)` drawn from a task's full query set, each
/// of `min(pool_size, n / 2)` queries.
pub fn task_pools(task: &Task, pool_size: usize, seed: u64, index: u64) -> (Vec<String>, Vec<String>) {
    let all = task.all_queries();
    let p = pool_size.min(all.len() / 2);
    let shuffled = seed::shuffled(&all, &mut seed::rng(seed, "pool", index));
    (shuffled[..p].to_vec(), shuffled[p..2 * p].to_vec())
}

/// Union of the BM25 top-`depth` doc rows over a pool of queries.
pub fn retrieved_docs(pool: &[String], index: &InvertedIndex, queries: &QueryStore, depth: usize) -> Result<BTreeSet<u32>> {
    let lists: Vec<Vec<(u32, f64)>> = pool
        .par_iter()
        .map(|q| Ok(index.search(queries.text(q)?, depth)))
        .collect::<Result<_>>()?;
    Ok(lists.into_iter().flatten().map(|(row, _)| row).collect())
}

/// `|A ∩ B| / |A|`.
pub fn c_score_sets<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Degenerate("c-score: first pool retrieved no documents".into()));
    }
    Ok(a.intersection(b).count() as f64 / a.len() as f64)
}

/// c-score between two tasks at sequence positions `i` and `j`. When
/// `i == j` the two pools are disjoint halves of the same task.
#[allow(clippy::too_many_arguments)]
pub fn c_score(
    task_i: &Task,
    i: usize,
    task_j: &Task,
    j: usize,
    index: &InvertedIndex,
    queries: &QueryStore,
    params: &SimilarityParams,
) -> Result<f64> {
    let (a, _) = task_pools(task_i, params.pool_size, params.seed, i as u64);
    let (_, b) = task_pools(task_j, params.pool_size, params.seed, j as u64);
    let da = retrieved_docs(&a, index, queries, params.depth)?;
    let db = retrieved_docs(&b, index, queries, params.depth)?;
    c_score_sets(&da, &db)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub ids: Vec<String>,
    /// `values[i][j]` = c-score(task i, task j).
    pub values: Vec<Vec<f64>>,
    pub pool_size: usize,
    pub depth: usize,
}

impl SimilarityMatrix {
    pub fn intra_mean(&self) -> f64 {
        let n = self.ids.len();
        (0..n).map(|i| self.values[i][i]).sum::<f64>() / n as f64
    }

    pub fn inter_mean(&self) -> f64 {
        let n = self.ids.len();
        if n < 2 {
            return f64::NAN;
        }
        let total: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .sum();
        total / (n * (n - 1)) as f64
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Header row and column of task ids, raw (not ×100) cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "task,{}", self.ids.join(",")).map_err(io)?;
        for (id, row) in self.ids.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{id},{}", cells.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a matrix CSV. `pool_size` and `depth` are not stored in the
    /// file and come back as 0.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty matrix file"))?
            .map_err(|e| Error::io(path, e))?;
        let ids: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let lineno = i + 2;
            if f.len() != ids.len() + 1 || f[0] != ids[values.len()] {
                return Err(Error::parse(path, lineno, "row does not match header"));
            }
            let row = f[1..]
                .iter()
                .map(|x| x.parse::<f64>().map_err(|_| Error::parse(path, lineno, format!("bad value `{x}`"))))
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        if values.len() != ids.len() {
            return Err(Error::parse(path, 1, "matrix is not square"));
        }
        Ok(SimilarityMatrix {
            ids,
            values,
            pool_size: 0,
            depth: 0,
        })
    }
}

/// c-score over all ordered task pairs.
pub fn similarity_matrix(
    tasks: &[Task],
    index: &InvertedIndex,
    queries: &QueryStore,
    params: &SimilarityParams,
) -> Result<SimilarityMatrix> {
    let retrieved: Vec<(BTreeSet<u32>, BTreeSet<u32>)> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (a, b) = task_pools(t, params.pool_size, params.seed, i as u64);
            Ok((
                retrieved_docs(&a, index, queries, params.depth)?,
                retrieved_docs(&b, index, queries, params.depth)?,
            ))
        })
        .collect::<Result<_>>()?;
    let values = (0..tasks.len())
        .into_par_iter()
        .map(|i| {
            (0..tasks.len())
                .map(|j| c_score_sets(&retrieved[i].0, &retrieved[j].1))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(SimilarityMatrix {
        ids: tasks.iter().map(|t| t.id.clone()).collect(),
        values,
        pool_size: params.pool_size,
        depth: params.depth,
    })
}

/// Linear-interpolation percentile of sorted values, `p` in `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuartileRow {
    /// Tracked task id, or `pooled` for all tracked tasks together.
    pub tracked: String,
    /// 1..=4
    pub quartile: usize,
    pub count: usize,
    pub mean_similarity: f64,
    pub mean_mf: f64,
}

pub const POOLED: &str = "pooled";

/// Buckets `(similarity, mf)` pairs into quartiles of similarity. Values on
/// an edge go to the lower bucket. Empty buckets report NaN means.
pub fn quartile_buckets(pairs: &[(f64, f64)]) -> Result<[(usize, f64, f64); 4]> {
    if pairs.len() < 4 {
        return Err(Error::InvalidInput(format!("quartiles need at least 4 pairs, got {}", pairs.len())));
    }
    let mut sims: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    sims.sort_by(f64::total_cmp);
    let edges = [percentile(&sims, 0.25), percentile(&sims, 0.5), percentile(&sims, 0.75)];
    let mut acc = [(0usize, 0.0f64, 0.0f64); 4];
    for &(s, mf) in pairs {
        let q = edges.iter().position(|&e| s <= e).unwrap_or(3);
        acc[q].0 += 1;
        acc[q].1 += s;
        acc[q].2 += mf;
    }
    Ok(acc.map(|(n, s, m)| {
        if n == 0 {
            (0, f64::NAN, f64::NAN)
        } else {
            (n, s / n as f64, m / n as f64)
        }
    }))
}

/// Quartile table relating forgetting to similarity.
///
/// For each tracked task `i` and every other task `j`, pairs
/// `c-score(i, j)` with `mf(i, step after training j)`. `sequence` gives the
/// task order of the run (step `j + 1` follows training task `j`).
pub fn quartile_forgetting(
    h: &RunHistory,
    m: &SimilarityMatrix,
    sequence: &[String],
    metric: Metric,
) -> Result<Vec<QuartileRow>> {
    if h.steps != sequence.len() {
        return Err(Error::InvalidInput(format!(
            "history has {} steps but the sequence has {} tasks",
            h.steps,
            sequence.len()
        )));
    }
    let mut rows = Vec::new();
    let mut pooled = Vec::new();
    for (ti, tracked) in h.targets.iter().enumerate() {
        let i = m
            .position(tracked)
            .ok_or_else(|| Error::InvalidInput(format!("tracked task {tracked} missing from matrix")))?;
        let mut pairs = Vec::new();
        for (pos, other) in sequence.iter().enumerate() {
            if other == tracked {
                continue;
            }
            let j = m
                .position(other)
                .ok_or_else(|| Error::InvalidInput(format!("task {other} missing from matrix")))?;
            pairs.push((m.values[i][j], mf_score(h, ti, pos + 1, metric)?));
        }
        for (q, (count, sim, mf)) in quartile_buckets(&pairs)?.into_iter().enumerate() {
            rows.push(QuartileRow {
                tracked: tracked.clone(),
                quartile: q + 1,
                count,
                mean_similarity: sim,
                mean_mf: mf,
            });
        }
        pooled.extend(pairs);
    }
    for (q, (count, sim, mf)) in quartile_buckets(&pooled)?.into_iter().enumerate() {
        rows.push(QuartileRow {
            tracked: POOLED.into(),
            quartile: q + 1,
            count,
            mean_similarity: sim,
            mean_mf: mf,
        });
    }
    Ok(rows)
}

pub fn write_quartiles_csv(path: &Path, rows: &[QuartileRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "tracked_task,quartile,mean_similarity,mean_mf").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.tracked, r.quartile, r.mean_similarity, r.mean_mf).map_err(io)?;
    }
    w.flush().map_err(io)
}
