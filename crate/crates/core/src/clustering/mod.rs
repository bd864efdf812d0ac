//! Average-linkage agglomerative clustering of the working set.
//!
//! Images are compared with a blend of visual cosine distance and delta_c
//! disagreement:
//!
//! ```text
//!   D(i, j) = a * (1 - cos(e_i, e_j)) + (1 - a) * |dc_i - dc_j|
//! ```
//!
//! Clusters start as singletons and the closest pair (mean pairwise D) is
//! merged until the closest pair is farther apart than `dt`.

mod view;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use view::{
    attribute_histograms, filter_clusters, rerank_by_text, Attribute, ClusterView, Filter,
    Histogram, SortKey, TextScore, DEFAULT_HISTOGRAM_BINS,
};

use crate::analysis::{MemberStats, QueryContext};
use crate::error::{Error, Result};
use crate::store;

/// Number of representative images kept per cluster.
pub const SAMPLE_SIZE: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    /// Weight of visual distance against delta_c disagreement.
    pub a: f64,
    /// Merging stops once the closest pair is farther than this.
    pub dt: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { a: 0.95, dt: 0.2 }
    }
}

impl ClusteringConfig {
    pub fn new(a: f64, dt: f64) -> Result<Self> {
        let cfg = Self { a, dt };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::InvalidArgument(format!(
                "a={} outside [0, 1]",
                self.a
            )));
        }
        if self.dt.is_nan() || self.dt <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "dt={} must be positive",
                self.dt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: usize,
    pub image_ids: Vec<String>,
    pub size: usize,
    pub mean_dc: f64,
    pub var_dc: f64,
    /// Members nearest the centroid, best first.
    pub sample_ids: Vec<String>,
    #[serde(skip)]
    pub(crate) members: Vec<usize>,
    #[serde(skip)]
    pub(crate) centroid: Vec<f32>,
}

impl Cluster {
    fn from_members(ctx: &QueryContext, cluster_id: usize, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        let stats = MemberStats::compute(ctx, &members);

        let mut ranked: Vec<(f64, &str)> = members
            .iter()
            .map(|&m| {
                (
                    store::dot_clamped(ctx.embedding(m), &stats.centroid),
                    ctx.id(m),
                )
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let sample_ids = ranked
            .iter()
            .take(SAMPLE_SIZE)
            .map(|(_, id)| id.to_string())
            .collect();

        Self {
            cluster_id,
            image_ids: members.iter().map(|&m| ctx.id(m).to_string()).collect(),
            size: members.len(),
            mean_dc: stats.mean_dc,
            var_dc: stats.var_dc,
            sample_ids,
            members,
            centroid: stats.centroid,
        }
    }

    /// Working-set positions of the members, ascending.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn centroid(&self) -> &[f32] {
        &self.centroid
    }

    pub fn attribute(&self, attribute: Attribute) -> f64 {
        match attribute {
            Attribute::Size => self.size as f64,
            Attribute::MeanDc => self.mean_dc,
            Attribute::VarDc => self.var_dc,
        }
    }
}

/// Blended distance between two working-set positions.
pub fn distance_at(ctx: &QueryContext, i: usize, j: usize, cfg: &ClusteringConfig) -> f64 {
    if i == j {
        return 0.0;
    }
    let visual = 1.0 - store::dot_clamped(ctx.embedding(i), ctx.embedding(j));
    let consistency = (ctx.delta_c(i) - ctx.delta_c(j)).abs();
    cfg.a * visual + (1.0 - cfg.a) * consistency
}

pub fn pairwise_distance(
    ctx: &QueryContext,
    i: &str,
    j: &str,
    cfg: &ClusteringConfig,
) -> Result<f64> {
    let pi = ctx
        .position(i)
        .ok_or_else(|| Error::UnknownId(i.to_string()))?;
    let pj = ctx
        .position(j)
        .ok_or_else(|| Error::UnknownId(j.to_string()))?;
    Ok(distance_at(ctx, pi, pj, cfg))
}

/// Clusters the whole working set. Output is ordered by smallest member
/// position and `cluster_id` is the index in that order.
pub fn agglomerate(ctx: &QueryContext, cfg: &ClusteringConfig) -> Result<Vec<Cluster>> {
    cfg.validate()?;
    let n = ctx.len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance_at(ctx, i, j, cfg);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let groups = average_linkage(n, dist, cfg.dt);
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(id, members)| Cluster::from_members(ctx, id, members))
        .collect())
}

/// Merge-order key: distance, then the (lower id, higher id) pair.
#[inline]
fn pair_key_cmp(a: (f64, usize, usize), b: (f64, usize, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

#[inline]
fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Average linkage over a dense `n x n` distance matrix, stopping once the
/// closest pair exceeds `threshold`.
///
/// A cluster is identified by its smallest member index; equal distances
/// merge the pair with the lexicographically smallest (lower, higher) ids.
/// Inter-cluster sums of pairwise distances are carried through merges, so
/// every average is a mean over member pairs. Each cluster caches its
/// nearest neighbour, which only needs a full rescan when that neighbour
/// took part in a merge.
pub fn average_linkage(n: usize, mut sums: Vec<f64>, threshold: f64) -> Vec<Vec<usize>> {
    assert_eq!(sums.len(), n * n, "distance matrix must be n x n");
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    let avg = |sums: &[f64], size: &[usize], i: usize, j: usize| -> f64 {
        sums[i * n + j] / (size[i] * size[j]) as f64
    };
    let nearest = |sums: &[f64], size: &[usize], active: &[bool], i: usize| {
        let mut best: Option<(f64, usize, usize)> = None;
        let mut best_j = usize::MAX;
        for j in (0..n).filter(|&j| j != i && active[j]) {
            let (lo, hi) = ordered(i, j);
            let key = (avg(sums, size, i, j), lo, hi);
            if best.is_none_or(|b| pair_key_cmp(key, b) == Ordering::Less) {
                best = Some(key);
                best_j = j;
            }
        }
        (best_j, best.map_or(f64::INFINITY, |b| b.0))
    };

    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];
    for i in 0..n {
        (nn[i], nn_dist[i]) = nearest(&sums, &size, &active, i);
    }

    let mut remaining = n;
    while remaining > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            let (lo, hi) = ordered(i, nn[i]);
            let key = (nn_dist[i], lo, hi);
            if best.is_none_or(|b| pair_key_cmp(key, b) == Ordering::Less) {
                best = Some(key);
            }
        }
        let Some((d, keep, gone)) = best else { break };
        if d > threshold {
            break;
        }

        for k in (0..n).filter(|&k| active[k] && k != keep && k != gone) {
            let merged = sums[keep * n + k] + sums[gone * n + k];
            sums[keep * n + k] = merged;
            sums[k * n + keep] = merged;
        }
        size[keep] += size[gone];
        active[gone] = false;
        let absorbed = std::mem::take(&mut members[gone]);
        members[keep].extend(absorbed);
        remaining -= 1;

        (nn[keep], nn_dist[keep]) = nearest(&sums, &size, &active, keep);
        for k in (0..n).filter(|&k| active[k] && k != keep) {
            if nn[k] == keep || nn[k] == gone {
                (nn[k], nn_dist[k]) = nearest(&sums, &size, &active, k);
            } else {
                let d_new = avg(&sums, &size, k, keep);
                let (lo, hi) = ordered(k, keep);
                let (clo, chi) = ordered(k, nn[k]);
                if pair_key_cmp((d_new, lo, hi), (nn_dist[k], clo, chi)) == Ordering::Less {
                    nn[k] = keep;
                    nn_dist[k] = d_new;
                }
            }
        }
    }

    let mut out: Vec<Vec<usize>> = members
        .into_iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .map(|(mut m, _)| {
            m.sort_unstable();
            m
        })
        .collect();
    out.sort_by_key(|m| m[0]);
    out
}
