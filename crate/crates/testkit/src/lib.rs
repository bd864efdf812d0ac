//! Test-only helpers: seeded synthetic corpora and slow reference
//! implementations that the fast paths in `vlaudit-core` are checked against.
//!
//! The references here share no code with the library beyond its data types.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use vlaudit_core::affinity::{percentile_ranks, AffinityProfile, Query};
use vlaudit_core::store::{self, Corpus};
use vlaudit_core::{EmbeddingMatrix, ImageRecord, QueryContext, WorkingSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img_{i:05}")).collect()
}

/// Isotropic Gaussian direction, normalized in f64.
pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

pub fn unit(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

pub fn basis(dim: usize, axis: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| random_unit(rng, dim)).collect()
}

/// `n` points scattered around `groups` random centres. `spread` is the
/// per-coordinate noise relative to a unit centre.
pub fn clustered_rows<R: Rng>(
    rng: &mut R,
    n: usize,
    dim: usize,
    groups: usize,
    spread: f64,
) -> Vec<Vec<f32>> {
    let centres = random_rows(rng, groups.max(1), dim);
    let noise = Normal::new(0.0, spread).expect("spread must be finite and non-negative");
    (0..n)
        .map(|_| {
            let c = &centres[rng.random_range(0..centres.len())];
            let v: Vec<f64> = c
                .iter()
                .map(|&x| f64::from(x) + noise.sample(rng))
                .collect();
            unit(&v)
        })
        .collect()
}

pub fn matrix_from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> EmbeddingMatrix {
    let dim = rows[0].len();
    EmbeddingMatrix::from_rows(ids, dim, rows.concat()).expect("valid synthetic rows")
}

/// Context whose working set is every row, in row order, with `delta_c`
/// derived from the given raw scores.
pub fn context_from_scores(rows: &[Vec<f32>], s_b: Vec<f64>, s_a: Vec<f64>) -> QueryContext {
    let ids = ids(rows.len());
    let matrix = Arc::new(matrix_from_rows(ids.clone(), rows));
    let ws = WorkingSet::from_ids(&matrix, "baseline", ids).expect("fresh ids");
    let profile =
        vlaudit_core::affinity::profile_from_scores(s_b, s_a).expect("aligned score vectors");
    QueryContext::from_parts(matrix, query(rows.len()), ws, profile).expect("consistent parts")
}

/// Full pipeline on a random corpus: random captions, top-`k` working set.
pub fn random_context<R: Rng>(rng: &mut R, n: usize, dim: usize, k: usize) -> QueryContext {
    let groups = rng.random_range(2..=8);
    let spread = rng.random_range(0.05..0.4) / (dim as f64).sqrt();
    let rows = clustered_rows(rng, n, dim, groups, spread);
    let matrix = Arc::new(matrix_from_rows(ids(n), &rows));
    let b = random_unit(rng, dim);
    let a = random_unit(rng, dim);
    QueryContext::build(matrix, query(k), &b, &a).expect("valid random query")
}

fn query(k: usize) -> Query {
    Query {
        baseline: "baseline".into(),
        augmented: "augmented".into(),
        k,
    }
}

/// Writes `matrix` as a VLSL file plus manifest under `dir`.
pub fn write_corpus(dir: &Path, matrix: EmbeddingMatrix) -> (PathBuf, PathBuf) {
    let records = matrix
        .ids()
        .iter()
        .map(|id| ImageRecord::new(id.clone(), format!("synthetic://{id}.png")))
        .collect();
    let corpus = Corpus { matrix, records };
    let vlsl = dir.join("corpus.vlsl");
    let manifest = dir.join("manifest.jsonl");
    store::write_embeddings(&corpus, &vlsl, &manifest).expect("writable temp dir");
    (vlsl, manifest)
}

/// Reference implementations written for clarity, not speed.
pub mod oracle {
    /// `|{j : s_j <= s_i}| / n` by direct counting.
    pub fn percentile_ranks(scores: &[f64]) -> Vec<f64> {
        let n = scores.len();
        scores
            .iter()
            .map(|&s| {
                let mut count = 0usize;
                for &t in scores {
                    if t <= s {
                        count += 1;
                    }
                }
                count as f64 / n as f64
            })
            .collect()
    }

    pub fn delta_c(s_b: &[f64], s_a: &[f64]) -> Vec<f64> {
        let p_b = percentile_ranks(s_b);
        let p_a = percentile_ranks(s_a);
        p_a.iter().zip(&p_b).map(|(a, b)| a - b).collect()
    }

    pub fn cosine(u: &[f32], v: &[f32]) -> f64 {
        let mut dot = 0.0f64;
        for k in 0..u.len() {
            dot += f64::from(u[k]) * f64::from(v[k]);
        }
        dot.clamp(-1.0, 1.0)
    }

    pub fn blended_distance(u: &[f32], v: &[f32], dc_u: f64, dc_v: f64, a: f64) -> f64 {
        a * (1.0 - cosine(u, v)) + (1.0 - a) * (dc_u - dc_v).abs()
    }

    /// Textbook average linkage: every step recomputes every inter-cluster
    /// mean from scratch. Clusters are named by their smallest member and
    /// equal means merge the lexicographically smallest pair of names.
    pub fn average_linkage(rows: &[Vec<f32>], delta: &[f64], a: f64, dt: f64) -> Vec<Vec<usize>> {
        let n = rows.len();
        let mut d = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[i][j] = blended_distance(&rows[i], &rows[j], delta[i], delta[j], a);
                }
            }
        }
        let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        while clusters.len() > 1 {
            let mut best: Option<(f64, usize, usize)> = None;
            for p in 0..clusters.len() {
                for q in (p + 1)..clusters.len() {
                    let mut total = 0.0;
                    for &x in &clusters[p] {
                        for &y in &clusters[q] {
                            total += d[x][y];
                        }
                    }
                    let mean = total / (clusters[p].len() * clusters[q].len()) as f64;
                    if best.is_none_or(|(m, _, _)| mean < m) {
                        best = Some((mean, p, q));
                    }
                }
            }
            let (mean, p, q) = best.expect("at least two clusters");
            if mean > dt {
                break;
            }
            let absorbed = clusters.remove(q);
            clusters[p].extend(absorbed);
            clusters[p].sort_unstable();
        }
        clusters
    }
}

/// Corpus with a subject direction (the baseline caption) and an
/// independent concept direction along which delta_c is planted.
pub struct PlantedCorpus {
    pub matrix: Arc<EmbeddingMatrix>,
    pub subject_ids: Vec<String>,
    pub subject_direction: Vec<f32>,
    pub concept_direction: Vec<f32>,
}

pub const PLANTED_DIM: usize = 32;

/// `n` images, `n_subject` of which lean strongly toward the subject axis
/// with a uniform concept loading; the rest are diffuse.
pub fn planted_corpus(seed: u64, n: usize, n_subject: usize) -> PlantedCorpus {
    let mut rng = rng(seed);
    let dim = PLANTED_DIM;
    let subject_noise = Normal::new(0.0, 0.2).unwrap();
    let background_noise = Normal::new(0.0, 0.5).unwrap();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = vec![0.0f64; dim];
        if i < n_subject {
            v[0] = 1.0;
            v[1] = rng.random_range(0.0..1.5);
            for x in &mut v[2..] {
                *x = subject_noise.sample(&mut rng);
            }
        } else {
            v[0] = rng.random_range(-0.3..0.3);
            v[1] = rng.random_range(0.0..1.5);
            for x in &mut v[2..] {
                *x = background_noise.sample(&mut rng);
            }
        }
        rows.push(unit(&v));
    }
    // Shuffle ids so subject membership is not visible in id order.
    let mut names = ids(n);
    for i in (1..n).rev() {
        names.swap(i, rng.random_range(0..=i));
    }
    let subject_ids = names[..n_subject].to_vec();
    PlantedCorpus {
        matrix: Arc::new(matrix_from_rows(names, &rows)),
        subject_ids,
        subject_direction: basis(dim, 0),
        concept_direction: basis(dim, 1),
    }
}

/// Linear delta_c plant: `slope * cos(x, concept) + intercept + N(0, sigma)`.
#[derive(Debug, Clone, Copy)]
pub struct Plant {
    pub slope: f64,
    pub intercept: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl PlantedCorpus {
    /// Baseline scores and percentiles are the real ones; the augmented
    /// side is back-filled from the planted delta_c.
    pub fn profile(&self, ws: &WorkingSet, plant: Plant) -> AffinityProfile {
        let mut rng = rng(plant.seed);
        let noise = Normal::new(0.0, plant.sigma).unwrap();
        let s_b: Vec<f64> = ws
            .rows()
            .iter()
            .map(|&r| oracle::cosine(self.matrix.row(r), &self.subject_direction))
            .collect();
        let p_b = percentile_ranks(&s_b).expect("non-empty working set");
        let delta_c: Vec<f64> = ws
            .rows()
            .iter()
            .map(|&r| {
                let c = oracle::cosine(self.matrix.row(r), &self.concept_direction);
                plant.slope * c + plant.intercept + noise.sample(&mut rng)
            })
            .collect();
        let p_a: Vec<f64> = p_b.iter().zip(&delta_c).map(|(p, d)| p + d).collect();
        AffinityProfile {
            s_b,
            s_a: p_a.clone(),
            p_b,
            p_a,
            delta_c,
        }
    }
}
