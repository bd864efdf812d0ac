//! User-built slices and similar/counterfactual cluster recommendations.

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analysis::{MemberStats, QueryContext};
use crate::clustering::Cluster;
use crate::error::{Error, Result};
use crate::store;

/// Upper bound on clusters returned per recommendation.
pub const MAX_RECOMMENDATIONS: usize = 50;

pub const PLACEHOLDER_NAME: &str = "Untitled slice";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub slice_id: String,
    pub name: String,
    pub image_ids: Vec<String>,
    pub size: usize,
    pub mean_dc: f64,
    pub var_dc: f64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(skip)]
    members: Vec<usize>,
    #[serde(skip)]
    centroid: Option<Vec<f32>>,
}

impl Slice {
    /// Creates a slice from `seed_ids`, dropping repeated ids. A blank name
    /// is replaced with [`PLACEHOLDER_NAME`].
    pub fn create(
        ctx: &QueryContext,
        slice_id: impl Into<String>,
        name: &str,
        seed_ids: &[String],
        now: DateTime<Utc>,
    ) -> Result<Self> {
        let mut members = Vec::with_capacity(seed_ids.len());
        for id in seed_ids {
            let pos = ctx.require(id)?;
            if !members.contains(&pos) {
                members.push(pos);
            }
        }
        let mut slice = Self {
            slice_id: slice_id.into(),
            name: normalize_name(name),
            image_ids: Vec::new(),
            size: 0,
            mean_dc: 0.0,
            var_dc: 0.0,
            created_at: now,
            updated_at: now,
            members,
            centroid: None,
        };
        slice.refresh(ctx);
        Ok(slice)
    }

    /// Removes `remove` then appends `add`. Validation happens before any
    /// change, so a failed call leaves the slice untouched.
    pub fn mutate(
        &mut self,
        ctx: &QueryContext,
        add: &[String],
        remove: &[String],
        now: DateTime<Utc>,
    ) -> Result<()> {
        let mut drop = HashSet::with_capacity(remove.len());
        for id in remove {
            let pos = ctx
                .position(id)
                .filter(|p| self.members.contains(p))
                .ok_or_else(|| Error::NotAMember(id.clone()))?;
            drop.insert(pos);
        }
        let adds = add
            .iter()
            .map(|id| ctx.require(id))
            .collect::<Result<Vec<_>>>()?;

        self.members.retain(|p| !drop.contains(p));
        for pos in adds {
            if !self.members.contains(&pos) {
                self.members.push(pos);
            }
        }
        self.updated_at = now;
        self.refresh(ctx);
        Ok(())
    }

    pub fn rename(&mut self, name: &str, now: DateTime<Utc>) {
        self.name = normalize_name(name);
        self.updated_at = now;
    }

    fn refresh(&mut self, ctx: &QueryContext) {
        self.image_ids = self
            .members
            .iter()
            .map(|&p| ctx.id(p).to_string())
            .collect();
        self.size = self.members.len();
        if self.members.is_empty() {
            self.centroid = None;
            self.mean_dc = 0.0;
            self.var_dc = 0.0;
        } else {
            let stats = MemberStats::compute(ctx, &self.members);
            self.centroid = Some(stats.centroid);
            self.mean_dc = stats.mean_dc;
            self.var_dc = stats.var_dc;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Working-set positions in insertion order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// `None` while the slice is empty.
    pub fn centroid(&self) -> Option<&[f32]> {
        self.centroid.as_deref()
    }
}

fn normalize_name(name: &str) -> String {
    let trimmed = name.trim();
    if trimmed.is_empty() {
        PLACEHOLDER_NAME.to_string()
    } else {
        trimmed.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationKind {
    Similar,
    Counterfactual,
}

impl std::str::FromStr for RecommendationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similar" => Ok(Self::Similar),
            "counterfactual" => Ok(Self::Counterfactual),
            other => Err(Error::InvalidArgument(format!(
                "unknown recommendation kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationStatus {
    Ok,
    /// Counterfactuals requested for a slice whose mean delta_c is exactly zero.
    NoSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedCluster {
    pub cluster_id: usize,
    /// Cosine between the slice centroid and the cluster centroid.
    pub similarity: f64,
    pub mean_dc: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub kind: RecommendationKind,
    pub status: RecommendationStatus,
    pub clusters: Vec<RecommendedCluster>,
}

/// Clusters nearest the slice centroid, skipping any cluster that shares an
/// image with the slice. Counterfactuals additionally require a mean delta_c
/// of strictly opposite sign to the slice's.
pub fn recommend(
    slice: &Slice,
    clusters: &[Cluster],
    kind: RecommendationKind,
) -> Result<Recommendation> {
    let centroid = slice.centroid().ok_or(Error::Empty("slice"))?;
    if kind == RecommendationKind::Counterfactual && slice.mean_dc == 0.0 {
        return Ok(Recommendation {
            kind,
            status: RecommendationStatus::NoSign,
            clusters: Vec::new(),
        });
    }

    let captured: HashSet<usize> = slice.members().iter().copied().collect();
    let mut picked: Vec<RecommendedCluster> = clusters
        .iter()
        .filter(|c| !c.members().iter().any(|m| captured.contains(m)))
        .filter(|c| match kind {
            RecommendationKind::Similar => true,
            RecommendationKind::Counterfactual => c.mean_dc * slice.mean_dc < 0.0,
        })
        .map(|c| RecommendedCluster {
            cluster_id: c.cluster_id,
            similarity: store::dot_clamped(centroid, c.centroid()),
            mean_dc: c.mean_dc,
            size: c.size,
        })
        .collect();
    picked.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    picked.truncate(MAX_RECOMMENDATIONS);

    Ok(Recommendation {
        kind,
        status: RecommendationStatus::Ok,
        clusters: picked,
    })
}
