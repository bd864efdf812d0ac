//! Per-query state shared by clustering, slicing and validation.

use std::collections::HashMap;
use std::sync::Arc;

use crate::affinity::{self, AffinityProfile, Query};
use crate::error::{Error, Result};
use crate::store::{self, normalized, EmbeddingMatrix, WorkingSet};

/// Working set plus its affinity profile, indexed by working-set position.
#[derive(Debug, Clone)]
pub struct QueryContext {
    matrix: Arc<EmbeddingMatrix>,
    query: Query,
    working_set: WorkingSet,
    profile: AffinityProfile,
    position: HashMap<String, usize>,
}

impl QueryContext {
    /// Selects the working set and computes delta_c for `query`.
    pub fn build(
        matrix: Arc<EmbeddingMatrix>,
        query: Query,
        baseline_embedding: &[f32],
        augmented_embedding: &[f32],
    ) -> Result<Self> {
        query.validate()?;
        let ws = store::select_working_set(&matrix, &query.baseline, baseline_embedding, query.k)?;
        let profile = affinity::delta_c(&matrix, &ws, baseline_embedding, augmented_embedding)?;
        Self::from_parts(matrix, query, ws, profile)
    }

    pub fn from_parts(
        matrix: Arc<EmbeddingMatrix>,
        query: Query,
        working_set: WorkingSet,
        profile: AffinityProfile,
    ) -> Result<Self> {
        if working_set.is_empty() {
            return Err(Error::Empty("working set"));
        }
        if profile.len() != working_set.len() {
            return Err(Error::DimensionMismatch {
                expected: working_set.len(),
                got: profile.len(),
            });
        }
        let position = working_set
            .image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(Self {
            matrix,
            query,
            working_set,
            profile,
            position,
        })
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn shared_matrix(&self) -> &Arc<EmbeddingMatrix> {
        &self.matrix
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn working_set(&self) -> &WorkingSet {
        &self.working_set
    }

    pub fn profile(&self) -> &AffinityProfile {
        &self.profile
    }

    pub fn len(&self) -> usize {
        self.working_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.working_set.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.position.get(id).copied()
    }

    /// Position of `id`, or `OutsideWorkingSet`.
    pub fn require(&self, id: &str) -> Result<usize> {
        self.position(id)
            .ok_or_else(|| Error::OutsideWorkingSet(id.to_string()))
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.working_set.image_ids[pos]
    }

    pub fn embedding(&self, pos: usize) -> &[f32] {
        self.matrix.row(self.working_set.rows()[pos])
    }

    pub fn delta_c(&self, pos: usize) -> f64 {
        self.profile.delta_c[pos]
    }

    /// Cosine of every working-set image to `direction` (normalized here).
    pub fn similarities_to(&self, direction: &[f32]) -> Result<Vec<f64>> {
        let d = normalized(direction)?;
        if d.len() != self.matrix.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.dim(),
                got: d.len(),
            });
        }
        Ok((0..self.len())
            .map(|p| store::dot_clamped(self.embedding(p), &d))
            .collect())
    }
}

/// Centroid and delta_c moments of a member set.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MemberStats {
    pub centroid: Vec<f32>,
    pub mean_dc: f64,
    pub var_dc: f64,
}

impl MemberStats {
    /// `members` must be non-empty.
    pub fn compute(ctx: &QueryContext, members: &[usize]) -> Self {
        debug_assert!(!members.is_empty());
        let rows: Vec<&[f32]> = members.iter().map(|&m| ctx.embedding(m)).collect();
        let centroid = centroid(&rows);

        let n = members.len() as f64;
        let mean_dc = members.iter().map(|&m| ctx.delta_c(m)).sum::<f64>() / n;
        let var_dc = members
            .iter()
            .map(|&m| (ctx.delta_c(m) - mean_dc).powi(2))
            .sum::<f64>()
            / n;
        Self {
            centroid,
            mean_dc,
            var_dc,
        }
    }
}

/// Renormalized mean of unit rows. When the mean vanishes (e.g. antipodal
/// members) the first row is returned instead. `rows` must be non-empty.
pub fn centroid(rows: &[&[f32]]) -> Vec<f32> {
    let dim = rows[0].len();
    let mut sum = vec![0.0f64; dim];
    for row in rows {
        for (s, &v) in sum.iter_mut().zip(row.iter()) {
            *s += f64::from(v);
        }
    }
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-9 * rows.len() as f64 {
        sum.iter().map(|&x| (x / norm) as f32).collect()
    } else {
        rows[0].to_vec()
    }
}
