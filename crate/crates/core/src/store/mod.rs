//! Image embedding storage, cosine similarity, and working-set selection.

pub mod manifest;
pub mod vlsl;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use manifest::ImageRecord;
pub use vlsl::RawMatrix;

/// Rows already this close to unit length are kept verbatim, which makes
/// load -> write -> load reproduce the same bytes.
const UNIT_NORM_SLACK: f64 = 1e-6;

/// Unit-normalized image embeddings with stable ids, immutable after load.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Validates and normalizes `data` (row-major, `ids.len()` rows of `dim`).
    pub fn from_rows(ids: Vec<String>, dim: usize, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: data.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (id, row) in ids.iter().zip(data.chunks_exact_mut(dim)) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(id.clone()));
            }
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroNorm(id.clone()));
            }
            if (norm - 1.0).abs() > UNIT_NORM_SLACK {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        Ok(Self {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn from_raw(ids: Vec<String>, raw: RawMatrix) -> Result<Self> {
        if ids.len() != raw.count {
            return Err(Error::ManifestCount {
                manifest: ids.len(),
                rows: raw.count,
            });
        }
        Self::from_rows(ids, raw.dim, raw.data)
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

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.row(r))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Cosine similarity of every row against `query` (normalized here).
    pub fn similarities(&self, query: &[f32]) -> Result<Vec<f64>> {
        let q = normalized(query)?;
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        Ok((0..self.len())
            .map(|r| dot_clamped(self.row(r), &q))
            .collect())
    }
}

/// Embeddings plus their manifest records, row-aligned.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub matrix: EmbeddingMatrix,
    pub records: Vec<ImageRecord>,
}

/// Loads a VLSL file and its JSON-lines manifest, normalizing every row.
pub fn load_embeddings(vlsl_path: &Path, manifest_path: &Path) -> Result<Corpus> {
    let raw = vlsl::read(BufReader::new(File::open(vlsl_path)?))?;
    let records = manifest::read(BufReader::new(File::open(manifest_path)?))?;
    let ids = records.iter().map(|r| r.id.clone()).collect();
    let matrix = EmbeddingMatrix::from_raw(ids, raw)?;
    Ok(Corpus { matrix, records })
}

/// Writes the (normalized) matrix as VLSL plus a manifest.
pub fn write_embeddings(corpus: &Corpus, vlsl_path: &Path, manifest_path: &Path) -> Result<()> {
    vlsl::write(
        BufWriter::new(File::create(vlsl_path)?),
        corpus.matrix.dim(),
        corpus.matrix.as_slice(),
    )?;
    manifest::write(
        BufWriter::new(File::create(manifest_path)?),
        &corpus.records,
    )
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Returns a unit-length copy of `v`.
pub fn normalized(v: &[f32]) -> Result<Vec<f32>> {
    if v.is_empty() {
        return Err(Error::Empty("vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "vector has non-finite entries".into(),
        ));
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err(Error::InvalidArgument("zero-norm vector".into()));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Dot product of two unit vectors, accumulated in f64 and clamped to [-1, 1].
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(dot_clamped(u, v))
}

#[inline]
pub(crate) fn dot_clamped(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let dot: f64 = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    dot.clamp(-1.0, 1.0)
}

/// The `k` images most aligned with the baseline caption, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingSet {
    pub baseline_caption: String,
    pub image_ids: Vec<String>,
    #[serde(skip)]
    rows: Vec<usize>,
}

impl WorkingSet {
    /// Builds a working set from explicit ids, e.g. when importing a snapshot.
    pub fn from_ids(
        matrix: &EmbeddingMatrix,
        baseline_caption: impl Into<String>,
        image_ids: Vec<String>,
    ) -> Result<Self> {
        if image_ids.is_empty() {
            return Err(Error::Empty("working set"));
        }
        let mut seen = std::collections::HashSet::with_capacity(image_ids.len());
        let mut rows = Vec::with_capacity(image_ids.len());
        for id in &image_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            rows.push(
                matrix
                    .row_of(id)
                    .ok_or_else(|| Error::UnknownId(id.clone()))?,
            );
        }
        Ok(Self {
            baseline_caption: baseline_caption.into(),
            image_ids,
            rows,
        })
    }

    pub fn k(&self) -> usize {
        self.image_ids.len()
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    /// Matrix row indices, aligned with `image_ids`.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }
}

/// Selects the `k` rows most similar to `baseline_embedding`.
///
/// Ordered by similarity descending; equal similarities fall back to
/// lexicographic id order.
pub fn select_working_set(
    matrix: &EmbeddingMatrix,
    baseline_caption: &str,
    baseline_embedding: &[f32],
    k: usize,
) -> Result<WorkingSet> {
    if k < 1 || k > matrix.len() {
        return Err(Error::InvalidK {
            k,
            count: matrix.len(),
        });
    }
    let sims = matrix.similarities(baseline_embedding)?;
    let mut order: Vec<usize> = (0..matrix.len()).collect();
    let cmp = |&a: &usize, &b: &usize| -> Ordering {
        sims[b]
            .total_cmp(&sims[a])
            .then_with(|| matrix.id(a).cmp(matrix.id(b)))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);

    Ok(WorkingSet {
        baseline_caption: baseline_caption.to_string(),
        image_ids: order.iter().map(|&r| matrix.id(r).to_string()).collect(),
        rows: order,
    })
}
