//! Precomputed dense embeddings, stored unit-normalized so cosine is a dot
//! product.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Below this norm a mean direction is considered degenerate.
pub const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn dot_dense(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * y).sum()
}

/// Normalizes in place; returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    /// Adds a vector, normalizing it. Rejects wrong length, non-finite
    /// components, zero norm and duplicate ids.
    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "vector `{id}` has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("vector `{id}` has non-finite components")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::InvalidInput(format!("duplicate vector id `{id}`")));
        }
        let mut v = vector.to_vec();
        if normalize(&mut v) == 0.0 {
            return Err(Error::InvalidInput(format!("vector `{id}` has zero norm")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend(v.iter().map(|x| *x as f32));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, id: &str) -> Result<&[f32]> {
        let row = *self
            .index
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        Ok(&self.data[row * self.dim..(row + 1) * self.dim])
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        Ok(dot(self.vector(a)?, self.vector(b)?))
    }

    /// Unit-normalized mean of the vectors of `ids`.
    pub fn centroid<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Vec<f64>> {
        let mut sum = vec![0.0f64; self.dim];
        let mut count = 0usize;
        for id in ids {
            for (s, x) in sum.iter_mut().zip(self.vector(id)?) {
                *s += *x as f64;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidInput("centroid of an empty set".into()));
        }
        sum.iter_mut().for_each(|s| *s /= count as f64);
        if normalize(&mut sum) < DEGENERATE_NORM {
            return Err(Error::Degenerate("centroid mean has (near) zero norm".into()));
        }
        Ok(sum)
    }

    /// Candidate with the highest cosine to `src`; ties go to the earliest
    /// candidate.
    pub fn nearest<S: AsRef<str>>(&self, src: &str, candidates: &[S]) -> Result<(String, f64)> {
        let source = self.vector(src)?;
        let mut best: Option<(&str, f64)> = None;
        for c in candidates {
            let c = c.as_ref();
            let sim = dot(source, self.vector(c)?);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((c, sim));
            }
        }
        best.map(|(id, s)| (id.to_string(), s))
            .ok_or_else(|| Error::InvalidInput("nearest: empty candidate list".into()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "#dim {}", self.dim).map_err(|e| Error::io(path, e))?;
        for (row, id) in self.ids.iter().enumerate() {
            let v = &self.data[row * self.dim..(row + 1) * self.dim];
            let cols: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{id}\t{}", cols.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a vectors file: a `#dim D` header, then `id<TAB>f1 ... fD` lines.
pub fn load_vectors(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table: Option<EmbeddingTable> = None;
    let mut buf = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let Some(t) = table.as_mut() else {
            let dim = line
                .strip_prefix("#dim")
                .and_then(|d| d.trim().parse::<usize>().ok())
                .filter(|d| *d > 0)
                .ok_or_else(|| Error::parse(path, lineno, "expected header `#dim D`"))?;
            table = Some(EmbeddingTable::new(dim)?);
            continue;
        };
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected `id<TAB>values`"))?;
        buf.clear();
        for tok in rest.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad float `{tok}`")))?;
            buf.push(x);
        }
        if buf.len() != t.dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("dimension mismatch: {} values, expected {}", buf.len(), t.dim),
            ));
        }
        t.insert(id, &buf)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    table.ok_or_else(|| Error::parse(path, 1, "missing `#dim D` header"))
}
