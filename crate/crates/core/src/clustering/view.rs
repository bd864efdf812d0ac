//! Sorting, filtering, histograms and text search over clusters.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Cluster;
use crate::analysis::QueryContext;
use crate::error::{Error, Result};
use crate::store::{self, normalized};

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Size,
    MeanDc,
    VarDc,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Size, Attribute::MeanDc, Attribute::VarDc];

    pub fn as_str(&self) -> &'static str {
        match self {
            Attribute::Size => "size",
            Attribute::MeanDc => "mean_dc",
            Attribute::VarDc => "var_dc",
        }
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "size" => Ok(Attribute::Size),
            "mean_dc" => Ok(Attribute::MeanDc),
            "var_dc" => Ok(Attribute::VarDc),
            other => Err(Error::InvalidArgument(format!(
                "unknown attribute {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    #[default]
    MeanDcDesc,
    MeanDcAsc,
    /// Largest first.
    Size,
    /// Most consistent (lowest variance) first.
    VarDc,
    TextRelevance,
}

impl FromStr for SortKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_dc_desc" => Ok(SortKey::MeanDcDesc),
            "mean_dc_asc" => Ok(SortKey::MeanDcAsc),
            "size" => Ok(SortKey::Size),
            "var_dc" => Ok(SortKey::VarDc),
            "text_relevance" => Ok(SortKey::TextRelevance),
            other => Err(Error::InvalidArgument(format!(
                "unknown sort key {other:?}"
            ))),
        }
    }
}

/// Inclusive range on one attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub attribute: Attribute,
    pub min: f64,
    pub max: f64,
}

impl Filter {
    pub fn new(attribute: Attribute, min: f64, max: f64) -> Result<Self> {
        let f = Self {
            attribute,
            min,
            max,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.is_nan() || self.max.is_nan() || self.min > self.max {
            return Err(Error::InvalidArgument(format!(
                "inverted range [{}, {}] for {}",
                self.min, self.max, self.attribute
            )));
        }
        Ok(())
    }

    pub fn accepts(&self, cluster: &Cluster) -> bool {
        let v = cluster.attribute(self.attribute);
        v >= self.min && v <= self.max
    }

    /// Parses a comma-separated list of `attribute:min:max`. An empty bound
    /// is open (`size:10:` means at least ten).
    pub fn parse_list(s: &str) -> Result<Vec<Filter>> {
        s.split(',')
            .map(str::trim)
            .filter(|part| !part.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [attr, min, max] = parts[..] else {
            return Err(Error::InvalidArgument(format!(
                "filter {s:?} is not attribute:min:max"
            )));
        };
        let bound = |v: &str, open: f64| -> Result<f64> {
            if v.is_empty() {
                return Ok(open);
            }
            v.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad bound {v:?} in filter {s:?}")))
        };
        Filter::new(
            attr.parse()?,
            bound(min, f64::NEG_INFINITY)?,
            bound(max, f64::INFINITY)?,
        )
    }
}

/// Ids of clusters satisfying every filter, in input order.
pub fn filter_clusters(clusters: &[Cluster], filters: &[Filter]) -> Result<Vec<usize>> {
    for f in filters {
        f.validate()?;
    }
    Ok(clusters
        .iter()
        .filter(|c| filters.iter().all(|f| f.accepts(c)))
        .map(|c| c.cluster_id)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub attribute: Attribute,
    /// `bins + 1` uniformly spaced edges from min to max.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn attribute_histograms(clusters: &[Cluster], bins: usize) -> Result<Vec<Histogram>> {
    if clusters.is_empty() {
        return Err(Error::Empty("clusters"));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    Ok(Attribute::ALL
        .iter()
        .map(|&attribute| {
            let values: Vec<f64> = clusters.iter().map(|c| c.attribute(attribute)).collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / bins as f64;
            let edges = (0..=bins)
                .map(|i| if i == bins { hi } else { lo + width * i as f64 })
                .collect();
            let mut counts = vec![0usize; bins];
            for v in values {
                let bin = if width > 0.0 {
                    (((v - lo) / width) as usize).min(bins - 1)
                } else {
                    0
                };
                counts[bin] += 1;
            }
            Histogram {
                attribute,
                edges,
                counts,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextScore {
    pub cluster_id: usize,
    /// Mean cosine similarity of the members to the text embedding.
    pub score: f64,
}

/// Orders clusters by mean member similarity to `text_embedding`, highest first.
pub fn rerank_by_text(
    clusters: &[Cluster],
    ctx: &QueryContext,
    text_embedding: &[f32],
) -> Result<Vec<TextScore>> {
    if clusters.is_empty() {
        return Err(Error::Empty("clusters"));
    }
    let text = normalized(text_embedding)?;
    if text.len() != ctx.matrix().dim() {
        return Err(Error::DimensionMismatch {
            expected: ctx.matrix().dim(),
            got: text.len(),
        });
    }
    let mut scores: Vec<TextScore> = clusters
        .iter()
        .map(|c| {
            let total: f64 = c
                .members()
                .iter()
                .map(|&m| store::dot_clamped(ctx.embedding(m), &text))
                .sum();
            TextScore {
                cluster_id: c.cluster_id,
                score: total / c.size as f64,
            }
        })
        .collect();
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    Ok(scores)
}

type ClusterOrder<'a> = Box<dyn Fn(&usize, &usize) -> Ordering + 'a>;

/// Display order of clusters under a sort key and filter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub sort_key: SortKey,
    pub filters: Vec<Filter>,
    pub ordering: Vec<usize>,
}

impl ClusterView {
    /// `text_scores` is required for [`SortKey::TextRelevance`] and ignored otherwise.
    pub fn build(
        clusters: &[Cluster],
        sort_key: SortKey,
        filters: Vec<Filter>,
        text_scores: Option<&[TextScore]>,
    ) -> Result<Self> {
        let passing = filter_clusters(clusters, &filters)?;
        let mut ordering: Vec<usize> = passing;

        let by_id = |id: usize| &clusters[id];
        let cmp: ClusterOrder<'_> = match sort_key {
            SortKey::MeanDcDesc => {
                Box::new(move |a, b| by_id(*b).mean_dc.total_cmp(&by_id(*a).mean_dc))
            }
            SortKey::MeanDcAsc => {
                Box::new(move |a, b| by_id(*a).mean_dc.total_cmp(&by_id(*b).mean_dc))
            }
            SortKey::Size => Box::new(move |a, b| by_id(*b).size.cmp(&by_id(*a).size)),
            SortKey::VarDc => Box::new(move |a, b| by_id(*a).var_dc.total_cmp(&by_id(*b).var_dc)),
            SortKey::TextRelevance => {
                let scores = text_scores.ok_or_else(|| {
                    Error::InvalidArgument("text_relevance ordering needs a search text".into())
                })?;
                let mut rank = vec![usize::MAX; clusters.len()];
                for (r, s) in scores.iter().enumerate() {
                    if let Some(slot) = rank.get_mut(s.cluster_id) {
                        *slot = r;
                    }
                }
                Box::new(move |a, b| rank[*a].cmp(&rank[*b]))
            }
        };
        ordering.sort_by(|a, b| cmp(a, b).then(a.cmp(b)));
        Ok(Self {
            sort_key,
            filters,
            ordering,
        })
    }
}
