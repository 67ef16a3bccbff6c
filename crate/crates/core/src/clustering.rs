//! Topic extraction (threshold community clustering followed by a
//! population pass) and the size-constrained spherical 2-means used to split
//! a topic in two.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{dot, dot_dense, normalize, EmbeddingTable, DEGENERATE_NORM};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Seed-community threshold.
    pub t1: f64,
    /// Population threshold, below `t1`.
    pub t2: f64,
    /// Minimum seed community size.
    pub min_size: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            t1: 0.7,
            t2: 0.5,
            min_size: 40,
            sample_size: 50_000,
            seed: 13,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |t: f64| t > 0.0 && t < 1.0;
        if !unit(self.t1) || !unit(self.t2) {
            return Err(Error::InvalidInput(format!(
                "thresholds must lie in (0,1): t1={} t2={}",
                self.t1, self.t2
            )));
        }
        if self.t2 >= self.t1 {
            return Err(Error::InvalidInput(format!(
                "t2 ({}) must be below t1 ({})",
                self.t2, self.t1
            )));
        }
        if self.min_size == 0 {
            return Err(Error::InvalidInput("minimum cluster size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicCluster {
    pub cluster_id: u32,
    /// Query whose neighborhood seeded the community.
    pub anchor: String,
    pub seed_members: BTreeSet<String>,
    pub populated_members: BTreeSet<String>,
    pub centroid: Vec<f64>,
}

impl TopicCluster {
    pub fn len(&self) -> usize {
        self.seed_members.len() + self.populated_members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn members(&self) -> impl Iterator<Item = &str> {
        self.seed_members
            .iter()
            .chain(&self.populated_members)
            .map(String::as_str)
    }
}

/// Uniform sample (without replacement) of the queries that seed clustering.
/// Returns `(sample, rest)`, both in ascending id order.
pub fn split_sample(judged: &[String], params: &ClusterParams) -> (Vec<String>, Vec<String>) {
    let mut sorted = judged.to_vec();
    sorted.sort();
    let mut rng = seed::rng(params.seed, "cluster-sample", 0);
    let picked: BTreeSet<String> = seed::sample(&sorted, params.sample_size, &mut rng)
        .into_iter()
        .collect();
    let rest = sorted.into_iter().filter(|q| !picked.contains(q)).collect();
    (picked.into_iter().collect(), rest)
}

/// Anchor-based greedy community extraction.
///
/// Every query's `t1` neighborhood (itself included) is a candidate community.
/// Candidates of at least `min_size` are visited by descending size, then
/// anchor id; each takes the members not already taken and is kept only if
/// that remainder still has `min_size` members.
pub fn seed_clusters(
    sample: &[String],
    table: &EmbeddingTable,
    params: &ClusterParams,
) -> Result<Vec<TopicCluster>> {
    params.validate()?;
    let mut ids: Vec<&str> = sample.iter().map(String::as_str).collect();
    ids.sort_unstable();
    ids.dedup();
    let vectors: Vec<&[f32]> = ids.iter().map(|id| table.vector(id)).collect::<Result<_>>()?;

    let neighborhoods: Vec<Vec<usize>> = (0..ids.len())
        .into_par_iter()
        .map(|i| {
            (0..ids.len())
                .filter(|&j| i == j || dot(vectors[i], vectors[j]) >= params.t1)
                .collect()
        })
        .collect();

    let mut candidates: Vec<usize> = (0..ids.len())
        .filter(|&i| neighborhoods[i].len() >= params.min_size)
        .collect();
    candidates.sort_by(|&a, &b| {
        neighborhoods[b]
            .len()
            .cmp(&neighborhoods[a].len())
            .then_with(|| ids[a].cmp(ids[b]))
    });

    let mut taken = vec![false; ids.len()];
    let mut communities: Vec<(usize, Vec<usize>)> = Vec::new();
    for anchor in candidates {
        let members: Vec<usize> = neighborhoods[anchor]
            .iter()
            .copied()
            .filter(|&j| !taken[j])
            .collect();
        if members.len() >= params.min_size {
            for &j in &members {
                taken[j] = true;
            }
            communities.push((anchor, members));
        }
    }
    communities.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| ids[a.0].cmp(ids[b.0])));

    communities
        .into_iter()
        .enumerate()
        .map(|(k, (anchor, members))| {
            let seed_members: BTreeSet<String> = members.iter().map(|&j| ids[j].to_string()).collect();
            let centroid = table.centroid(seed_members.iter().map(String::as_str))?;
            Ok(TopicCluster {
                cluster_id: k as u32,
                anchor: ids[anchor].to_string(),
                seed_members,
                populated_members: BTreeSet::new(),
                centroid,
            })
        })
        .collect()
}

/// Single population pass: each pool query joins the cluster whose centroid
/// it is most similar to (lower cluster id on ties) when that similarity is
/// at least `t2`. Centroids stay fixed during the pass and are recomputed
/// once afterwards.
pub fn populate_clusters(
    clusters: &[TopicCluster],
    pool: &[String],
    table: &EmbeddingTable,
    params: &ClusterParams,
) -> Result<Vec<TopicCluster>> {
    params.validate()?;
    let mut out: Vec<TopicCluster> = clusters.to_vec();
    out.sort_by_key(|c| c.cluster_id);
    if out.is_empty() {
        return Ok(out);
    }
    let seeded: BTreeSet<&str> = out
        .iter()
        .flat_map(|c| c.seed_members.iter().map(String::as_str))
        .collect();
    let pool: Vec<&str> = pool
        .iter()
        .map(String::as_str)
        .filter(|q| {
            let keep = !seeded.contains(q);
            if !keep {
                debug!("populate: skipping seed member {q} found in pool");
            }
            keep
        })
        .collect();

    let assignments: Vec<Option<usize>> = pool
        .par_iter()
        .map(|q| -> Result<Option<usize>> {
            let v = table.vector(q)?;
            let mut best: Option<(usize, f64)> = None;
            for (k, c) in out.iter().enumerate() {
                let sim = dot_dense(v, &c.centroid);
                if best.is_none_or(|(_, s)| sim > s) {
                    best = Some((k, sim));
                }
            }
            Ok(best.filter(|(_, s)| *s >= params.t2).map(|(k, _)| k))
        })
        .collect::<Result<_>>()?;

    for (q, a) in pool.iter().zip(assignments) {
        if let Some(k) = a {
            out[k].populated_members.insert(q.to_string());
        }
    }
    for c in &mut out {
        if !c.populated_members.is_empty() {
            c.centroid = table.centroid(c.members())?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: u32,
    pub seed_members: Vec<String>,
    pub populated_members: Vec<String>,
}

impl From<&TopicCluster> for ClusterRecord {
    fn from(c: &TopicCluster) -> Self {
        ClusterRecord {
            cluster_id: c.cluster_id,
            seed_members: c.seed_members.iter().cloned().collect(),
            populated_members: c.populated_members.iter().cloned().collect(),
        }
    }
}

pub fn write_clusters_jsonl(path: &Path, clusters: &[TopicCluster]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for c in clusters {
        let line = serde_json::to_string(&ClusterRecord::from(c))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_clusters_jsonl(path: &Path) -> Result<Vec<ClusterRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Result of [`constrained_2means`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMeansSplit {
    pub first: Vec<String>,
    pub second: Vec<String>,
    /// Sum over points of the cosine to their own (normalized) center.
    pub objective: f64,
    /// Objective after each iteration.
    pub trace: Vec<f64>,
}

/// Smallest allowed side for `n` points. Capped at `n / 2` so that
/// `min_frac = 0.5` stays feasible for odd `n`.
pub fn size_floor(n: usize, min_frac: f64) -> usize {
    ((min_frac * n as f64).ceil() as usize).min(n / 2).max(1)
}

/// Independent initializations of [`constrained_2means`]; the best final
/// objective wins.
const RESTARTS: u64 = 10;

/// Least similar pair among up to 8 seeded random candidates.
fn initial_pair(vectors: &[&[f32]], seed: u64, restart: u64) -> (usize, usize) {
    let mut rng = seed::rng(seed, "2means-init", restart);
    let all: Vec<usize> = (0..vectors.len()).collect();
    let cands = seed::sample(&all, 8, &mut rng);
    let mut pair = (cands[0], cands[1]);
    let mut lowest = f64::INFINITY;
    for (a, &i) in cands.iter().enumerate() {
        for &j in &cands[a + 1..] {
            let sim = dot(vectors[i], vectors[j]);
            if sim < lowest {
                lowest = sim;
                pair = (i, j);
            }
        }
    }
    pair
}

/// Alternates floor-respecting assignment and center updates from one
/// initial pair. Returns the side of every point and the objective trace.
fn lloyd(vectors: &[&[f32]], dim: usize, floor: usize, pair: (usize, usize), max_iter: usize) -> (Vec<u8>, Vec<f64>) {
    let n = vectors.len();
    let as_dense = |v: &[f32]| v.iter().map(|x| *x as f64).collect::<Vec<f64>>();
    let mut centers = [as_dense(vectors[pair.0]), as_dense(vectors[pair.1])];

    let mut side: Vec<u8> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let margins: Vec<f64> = vectors
            .iter()
            .map(|v| dot_dense(v, &centers[0]) - dot_dense(v, &centers[1]))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
        let preferred = margins.iter().filter(|m| **m >= 0.0).count();
        let take = preferred.clamp(floor, n - floor);
        let mut next = vec![1u8; n];
        for &i in &order[..take] {
            next[i] = 0;
        }
        if next == side {
            break;
        }
        side = next;

        for (k, center) in centers.iter_mut().enumerate() {
            let mut mean = vec![0.0f64; dim];
            for (v, _) in vectors.iter().zip(&side).filter(|(_, s)| **s as usize == k) {
                for (m, x) in mean.iter_mut().zip(v.iter()) {
                    *m += *x as f64;
                }
            }
            if normalize(&mut mean) >= DEGENERATE_NORM {
                *center = mean;
            }
        }
        let objective: f64 = vectors
            .iter()
            .zip(&side)
            .map(|(v, s)| dot_dense(v, &centers[*s as usize]))
            .sum();
        trace.push(objective);
    }
    (side, trace)
}

/// Size-constrained spherical 2-means.
///
/// Each of several seeded restarts starts from the least similar pair among
/// up to 8 random candidates; the restart with the best objective is kept.
/// Each iteration assigns points optimally for the current
/// centers under the size floor (the points with the largest margin
/// `cos(x, c0) - cos(x, c1)` go to side 0) and then moves each center to its
/// side's normalized mean. Stops when the assignment is stable.
pub fn constrained_2means<S: AsRef<str>>(
    ids: &[S],
    table: &EmbeddingTable,
    min_frac: f64,
    max_iter: usize,
    seed: u64,
) -> Result<TwoMeansSplit> {
    let n = ids.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("2-means needs at least 4 points, got {n}")));
    }
    if !(min_frac > 0.0 && min_frac <= 0.5) {
        return Err(Error::InvalidInput(format!("min_frac must lie in (0, 0.5], got {min_frac}")));
    }
    let vectors: Vec<&[f32]> = ids
        .iter()
        .map(|id| table.vector(id.as_ref()))
        .collect::<Result<_>>()?;
    let floor = size_floor(n, min_frac);

    let mut best: Option<(Vec<u8>, Vec<f64>)> = None;
    for restart in 0..RESTARTS {
        let pair = initial_pair(&vectors, seed, restart);
        let (side, trace) = lloyd(&vectors, table.dim(), floor, pair, max_iter);
        let score = |t: &[f64]| *t.last().unwrap_or(&f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |b| score(&trace) > score(&b.1)) {
            best = Some((side, trace));
        }
    }
    let (side, trace) = best.expect("at least one restart");

    let pick = |k: u8| -> Vec<String> {
        ids.iter()
            .zip(&side)
            .filter(|(_, s)| **s == k)
            .map(|(id, _)| id.as_ref().to_string())
            .collect()
    };
    Ok(TwoMeansSplit {
        first: pick(0),
        second: pick(1),
        objective: *trace.last().unwrap_or(&0.0),
        trace,
    })
}

/// Objective of an arbitrary two-way partition with optimal (normalized
/// mean) centers.
pub fn partition_objective<S: AsRef<str>>(
    first: &[S],
    second: &[S],
    table: &EmbeddingTable,
) -> Result<f64> {
    let mut total = 0.0;
    for side in [first, second] {
        let mut mean = vec![0.0f64; table.dim()];
        for id in side {
            for (m, x) in mean.iter_mut().zip(table.vector(id.as_ref())?) {
                *m += *x as f64;
            }
        }
        // sum_i <x_i, mean/|mean|> = |sum_i x_i|
        total += mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    Ok(total)
}
