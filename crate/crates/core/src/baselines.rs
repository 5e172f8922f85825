//! Reference pruning scores: loss (EL2N-style), gradient norm (GraNd),
//! prototypicality via k-means, uniform random, and externally computed scores.
//!
//! Every score follows the keep-first convention (higher = selected earlier)
//! and is ranked through the selector with the diversity penalty disabled.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feature_store::FeatureMatrix;
use crate::jsonl;
use crate::math::sq_dist;
use crate::selector::{select, DifficultyTable, SelectOptions, SelectionResult};
use crate::toy_model::{TokenSample, ToyBigramModel};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub metric: String,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(metric: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score at index {i}")));
        }
        Ok(Self {
            metric: metric.into(),
            scores,
        })
    }

    /// Stable top-`m` by score, through the selector's ranking path.
    pub fn rank(&self, m: usize) -> Result<SelectionResult> {
        let mut table = DifficultyTable::new(self.scores.clone())?;
        select(
            &mut table,
            None,
            SelectOptions {
                m,
                gamma: 0.0,
                diversity: false,
            },
        )
    }
}

/// Mean next-token cross-entropy per sample.
pub fn el2n_scores(model: &ToyBigramModel, samples: &[TokenSample]) -> Result<ScoreVector> {
    let scores = samples
        .par_iter()
        .map(|s| model.sample_loss(s))
        .collect::<Result<Vec<f64>>>()?;
    ScoreVector::new("el2n", scores)
}

/// Frobenius norm of each sample's loss gradient at the given parameters.
pub fn grand_scores(model: &ToyBigramModel, samples: &[TokenSample]) -> Result<ScoreVector> {
    let scores = samples
        .par_iter()
        .map(|s| model.sample_grad(s).map(|g| g.frobenius_norm()))
        .collect::<Result<Vec<f64>>>()?;
    ScoreVector::new("grand", scores)
}

/// GraNd averaged over several parameter snapshots (e.g. warm-up runs with
/// different seeds).
pub fn grand_scores_averaged(
    models: &[ToyBigramModel],
    samples: &[TokenSample],
) -> Result<ScoreVector> {
    if models.is_empty() {
        return Err(invalid("need at least one model snapshot"));
    }
    let mut acc = vec![0.0; samples.len()];
    for m in models {
        for (a, s) in acc.iter_mut().zip(grand_scores(m, samples)?.scores) {
            *a += s;
        }
    }
    let k = models.len() as f64;
    ScoreVector::new("grand", acc.into_iter().map(|s| s / k).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k x d`, row-major.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let dist = sq_dist(point, centroid);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

/// Lloyd's algorithm seeded with `k` distinct rows drawn uniformly.
///
/// Stops when assignments stop changing or after `max_iters` updates. An
/// empty cluster is re-seeded at the point farthest from its own centroid.
pub fn kmeans(features: &FeatureMatrix, k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    let n = features.n();
    if k == 0 || k > n {
        return Err(invalid(format!(
            "cluster count must be in 1..={n}, got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| features.row(i).to_vec())
        .collect();

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        features
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| nearest(r, centroids))
            .unzip()
    };

    let (mut assignments, mut dists) = assign(&centroids);
    let mut objective = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let d = features.d();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (row, &c) in features.rows().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(row) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a free point");
                taken[far] = true;
                centroids[c] = features.row(far).to_vec();
            }
        }
        let (next, next_dists) = assign(&centroids);
        objective.push(next_dists.iter().sum());
        let stable = next == assignments;
        assignments = next;
        dists = next_dists;
        if stable {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        objective,
        iterations,
    })
}

/// `round(sqrt(n))`, at least one.
pub fn default_cluster_count(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(1)
}

/// Euclidean distance of each row to its assigned k-means centroid.
pub fn prototypicality_scores(
    features: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ScoreVector> {
    let km = kmeans(features, k, seed, max_iters)?;
    let scores = features
        .rows()
        .zip(&km.assignments)
        .map(|(r, &c)| sq_dist(r, &km.centroids[c]).sqrt())
        .collect();
    ScoreVector::new("prototypicality", scores)
}

/// `m` distinct indices drawn uniformly without replacement.
pub fn random_select(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m > n {
        return Err(invalid(format!("cannot select {m} of {n} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n, m).into_vec())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
}

/// Loads `{"id","score"}` lines and aligns them to `ids` by id.
pub fn ingest_external_scores(path: impl AsRef<Path>, ids: &[String]) -> Result<ScoreVector> {
    let records: Vec<ScoreRecord> = jsonl::read(path)?;
    align_scores("external", records, ids)
}

pub(crate) fn align_scores(
    metric: &str,
    records: Vec<ScoreRecord>,
    ids: &[String],
) -> Result<ScoreVector> {
    let mut by_id: HashMap<String, f64> = HashMap::with_capacity(records.len());
    for r in records {
        if by_id.insert(r.id.clone(), r.score).is_some() {
            return Err(invalid(format!("duplicate score for id {:?}", r.id)));
        }
    }
    let mut scores = Vec::with_capacity(ids.len());
    for id in ids {
        match by_id.remove(id) {
            Some(s) => scores.push(s),
            None => return Err(invalid(format!("no score for id {id:?}"))),
        }
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(invalid(format!("score for unknown id {extra:?}")));
    }
    ScoreVector::new(metric, scores)
}

pub fn save_scores(scores: &ScoreVector, ids: &[String], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<ScoreRecord> = ids
        .iter()
        .zip(&scores.scores)
        .map(|(id, &score)| ScoreRecord {
            id: id.clone(),
            score,
        })
        .collect();
    jsonl::write(path, &records)
}
