//! Annotation tasks derived from a snapshot.
//!
//! Coherency: show up to eight slice images, secretly replacing zero to two
//! of them with outliers taken from the participant's other slices. Outliers
//! are limited to candidates whose similarity to the slice centroid is at
//! most one standard deviation above the candidate mean, so they are never
//! trivially different.
//!
//! Representativeness: rank non-member working-set images by similarity to
//! the slice centroid and show a random 50 of the top 100.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::snapshot::SessionSnapshot;
use crate::analysis::centroid;
use crate::error::{Error, Result};
use crate::store::{self, EmbeddingMatrix};

pub const SHOWN_PER_TASK: usize = 8;
pub const MAX_OUTLIERS: usize = 2;
pub const REPRESENTATIVE_POOL: usize = 100;
pub const REPRESENTATIVE_SAMPLE: usize = 50;

const COHERENCY_STREAM: u64 = 0;
const REPRESENTATIVENESS_STREAM: u64 = 1;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoherencyStatus {
    Ok,
    /// Fewer eligible outliers existed than were drawn; the count was lowered.
    OutliersReduced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoherencyTask {
    /// Index of the slice in the snapshot.
    pub slice_id: usize,
    pub slice_name: String,
    pub shown_ids: Vec<String>,
    pub true_outlier_ids: Vec<String>,
    pub rng_seed: u64,
    pub status: CoherencyStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentativenessTask {
    pub slice_id: usize,
    pub slice_name: String,
    pub candidate_ids: Vec<String>,
    pub rng_seed: u64,
    /// The working set held fewer than 100 non-member images.
    pub insufficient: bool,
}

fn slice_rows<'a>(
    snapshot: &SessionSnapshot,
    matrix: &'a EmbeddingMatrix,
    slice_id: usize,
) -> Result<Vec<&'a [f32]>> {
    let slice = snapshot
        .slices
        .get(slice_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no slice with index {slice_id}")))?;
    slice
        .image_ids
        .iter()
        .map(|id| matrix.get(id).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect()
}

fn similarities(matrix: &EmbeddingMatrix, ids: &[&str], direction: &[f32]) -> Result<Vec<f64>> {
    ids.iter()
        .map(|id| {
            let row = matrix
                .get(id)
                .ok_or_else(|| Error::UnknownId(id.to_string()))?;
            store::cosine_similarity(row, direction)
        })
        .collect()
}

/// Candidate outliers for `slice_id` with their similarity to its centroid:
/// every image of the other slices that is not itself a member, first-seen order.
pub fn outlier_pool(
    snapshot: &SessionSnapshot,
    matrix: &EmbeddingMatrix,
    slice_id: usize,
) -> Result<Vec<(String, f64)>> {
    let rows = slice_rows(snapshot, matrix, slice_id)?;
    if rows.is_empty() {
        return Err(Error::Empty("slice"));
    }
    let center = centroid(&rows);
    let members: HashSet<&str> = snapshot.slices[slice_id]
        .image_ids
        .iter()
        .map(String::as_str)
        .collect();
    let mut seen = HashSet::new();
    let pool: Vec<&str> = snapshot
        .slices
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != slice_id)
        .flat_map(|(_, s)| s.image_ids.iter().map(String::as_str))
        .filter(|id| !members.contains(id) && seen.insert(*id))
        .collect();
    let sims = similarities(matrix, &pool, &center)?;
    Ok(pool.into_iter().map(String::from).zip(sims).collect())
}

/// Largest similarity an outlier may have: mean + one population std of the pool.
pub fn outlier_ceiling(pool: &[(String, f64)]) -> Option<f64> {
    if pool.is_empty() {
        return None;
    }
    let n = pool.len() as f64;
    let mean = pool.iter().map(|p| p.1).sum::<f64>() / n;
    let var = pool.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n;
    Some(mean + var.sqrt())
}

pub fn make_coherency_task(
    snapshot: &SessionSnapshot,
    matrix: &EmbeddingMatrix,
    slice_id: usize,
    seed: u64,
) -> Result<CoherencyTask> {
    let slice = snapshot
        .slices
        .get(slice_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no slice with index {slice_id}")))?;
    if slice.image_ids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "slice {:?} has fewer than two images",
            slice.name
        )));
    }
    let mut rng = rng_for(seed, COHERENCY_STREAM);

    let mut shown: Vec<String> = if slice.image_ids.len() > SHOWN_PER_TASK {
        let mut picks = index::sample(&mut rng, slice.image_ids.len(), SHOWN_PER_TASK).into_vec();
        picks.sort_unstable();
        picks
            .into_iter()
            .map(|i| slice.image_ids[i].clone())
            .collect()
    } else {
        slice.image_ids.clone()
    };

    // At least one real member always stays on screen.
    let drawn = rng.random_range(0..=MAX_OUTLIERS).min(shown.len() - 1);

    let pool = outlier_pool(snapshot, matrix, slice_id)?;
    let eligible: Vec<&str> = match outlier_ceiling(&pool) {
        Some(ceiling) => pool
            .iter()
            .filter(|(_, s)| *s <= ceiling)
            .map(|(id, _)| id.as_str())
            .collect(),
        None => Vec::new(),
    };
    let count = drawn.min(eligible.len());
    let status = if count < drawn {
        CoherencyStatus::OutliersReduced
    } else {
        CoherencyStatus::Ok
    };

    let outliers = index::sample(&mut rng, eligible.len(), count).into_vec();
    let mut slots = index::sample(&mut rng, shown.len(), count).into_vec();
    slots.sort_unstable();
    for (&slot, &o) in slots.iter().zip(&outliers) {
        shown[slot] = eligible[o].to_string();
    }
    let true_outlier_ids = slots.iter().map(|&s| shown[s].clone()).collect();

    Ok(CoherencyTask {
        slice_id,
        slice_name: slice.name.clone(),
        shown_ids: shown,
        true_outlier_ids,
        rng_seed: seed,
        status,
    })
}

/// Non-member working-set images ranked by similarity to the slice centroid
/// (descending, ties by id).
pub fn rank_non_members(
    snapshot: &SessionSnapshot,
    matrix: &EmbeddingMatrix,
    slice_id: usize,
) -> Result<Vec<(String, f64)>> {
    let rows = slice_rows(snapshot, matrix, slice_id)?;
    if rows.is_empty() {
        return Err(Error::Empty("slice"));
    }
    let center = centroid(&rows);
    let members: HashSet<&str> = snapshot.slices[slice_id]
        .image_ids
        .iter()
        .map(String::as_str)
        .collect();
    let others: Vec<&str> = snapshot
        .working_set_ids
        .iter()
        .map(String::as_str)
        .filter(|id| !members.contains(id))
        .collect();
    let sims = similarities(matrix, &others, &center)?;
    let mut ranked: Vec<(String, f64)> = others.into_iter().map(String::from).zip(sims).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

pub fn make_representativeness_task(
    snapshot: &SessionSnapshot,
    matrix: &EmbeddingMatrix,
    slice_id: usize,
    seed: u64,
) -> Result<RepresentativenessTask> {
    let mut ranked = rank_non_members(snapshot, matrix, slice_id)?;
    let insufficient = ranked.len() < REPRESENTATIVE_POOL;
    ranked.truncate(REPRESENTATIVE_POOL);

    let mut rng = rng_for(seed, REPRESENTATIVENESS_STREAM);
    let amount = REPRESENTATIVE_SAMPLE.min(ranked.len());
    let mut picks = index::sample(&mut rng, ranked.len(), amount).into_vec();
    picks.sort_unstable();

    Ok(RepresentativenessTask {
        slice_id,
        slice_name: snapshot.slices[slice_id].name.clone(),
        candidate_ids: picks.into_iter().map(|i| ranked[i].0.clone()).collect(),
        rng_seed: seed,
        insufficient,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSlice {
    pub slice_id: usize,
    pub reason: String,
}

/// All tasks for one snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub seed: u64,
    pub coherency: Vec<CoherencyTask>,
    pub representativeness: Vec<RepresentativenessTask>,
    pub skipped: Vec<SkippedSlice>,
}

/// Builds tasks for every slice. Slice `i` uses seed `seed + i`; slices
/// with fewer than two images get no coherency task.
pub fn make_tasks(
    snapshot: &SessionSnapshot,
    matrix: &EmbeddingMatrix,
    seed: u64,
) -> Result<TaskBundle> {
    let mut bundle = TaskBundle {
        seed,
        coherency: Vec::new(),
        representativeness: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, slice) in snapshot.slices.iter().enumerate() {
        let slice_seed = seed.wrapping_add(i as u64);
        if slice.image_ids.is_empty() {
            bundle.skipped.push(SkippedSlice {
                slice_id: i,
                reason: "empty slice".into(),
            });
            continue;
        }
        if slice.image_ids.len() < 2 {
            bundle.skipped.push(SkippedSlice {
                slice_id: i,
                reason: "fewer than two images; no coherency task".into(),
            });
        } else {
            bundle
                .coherency
                .push(make_coherency_task(snapshot, matrix, i, slice_seed)?);
        }
        bundle.representativeness.push(make_representativeness_task(
            snapshot, matrix, i, slice_seed,
        )?);
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSheet {
    pub annotator: String,
    /// One selection list per coherency task, in task order.
    pub selections: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherencyScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged F1 of outlier selections pooled over all tasks.
///
/// With no true outliers and no selections anywhere the score is 1.
pub fn score_coherency(
    tasks: &[CoherencyTask],
    selections: &[Vec<String>],
) -> Result<CoherencyScore> {
    if tasks.len() != selections.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tasks but {} selections",
            tasks.len(),
            selections.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (task, picked) in tasks.iter().zip(selections) {
        if picked.len() > MAX_OUTLIERS {
            return Err(Error::InvalidArgument(format!(
                "more than {MAX_OUTLIERS} selections for slice {}",
                task.slice_id
            )));
        }
        let mut unique = HashSet::new();
        for id in picked {
            if !task.shown_ids.contains(id) {
                return Err(Error::InvalidArgument(format!(
                    "selection {id:?} was not shown for slice {}",
                    task.slice_id
                )));
            }
            if !unique.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!("selection {id:?} repeated")));
            }
        }
        let truth: HashSet<&str> = task.true_outlier_ids.iter().map(String::as_str).collect();
        let hits = unique.intersection(&truth).count();
        tp += hits;
        fp += unique.len() - hits;
        fn_ += truth.len() - hits;
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(CoherencyScore {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    })
}
