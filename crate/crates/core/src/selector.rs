//! Greedy hardest-first selection with a k-nearest-neighbor diversity penalty.
//!
//! Difficulty is the negated score-net weight. Each round picks the alive
//! sample with the highest current difficulty (lowest index on ties), then
//! lowers each still-alive neighbor `j` by `gamma * sim(i, j)^2 * d_i`, where
//! `d_i` is the picked sample's difficulty at the moment it was picked.
//! Neighbor lists are computed once over the full dataset.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feature_store::FeatureMatrix;
use crate::jsonl;
use crate::math::dot;
use crate::score_net::ScoreNetParams;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyTable {
    d: Vec<f64>,
    alive: Vec<bool>,
}

impl DifficultyTable {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if let Some(i) = d.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite difficulty at index {i}"
            )));
        }
        // -0.0 and 0.0 must tie
        let d: Vec<f64> = d.into_iter().map(|v| v + 0.0).collect();
        let alive = vec![true; d.len()];
        Ok(Self { d, alive })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn difficulties(&self) -> &[f64] {
        &self.d
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    /// Flips every difficulty, turning hardest-first into easiest-first.
    pub fn negated(&self) -> Self {
        Self {
            d: self.d.iter().map(|v| -v + 0.0).collect(),
            alive: self.alive.clone(),
        }
    }
}

/// `d_i = -s(S_i)` for every feature row.
pub fn compute_difficulty(
    params: &ScoreNetParams,
    features: &FeatureMatrix,
) -> Result<DifficultyTable> {
    let d = features
        .rows()
        .map(|r| params.forward(r).map(|w| -w))
        .collect::<Result<Vec<f64>>>()?;
    DifficultyTable::new(d)
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "vector dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (dot(a, a), dot(b, b));
    if na == 0.0 || nb == 0.0 {
        return Err(invalid("cosine similarity is undefined for a zero vector"));
    }
    Ok(cosine_from_parts(dot(a, b), na, nb))
}

fn cosine_from_parts(ab: f64, aa: f64, bb: f64) -> f64 {
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sim: f64,
}

/// Exact cosine k-nearest neighbors, self excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    k: usize,
    lists: Vec<Vec<Neighbor>>,
}

impl NeighborIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Neighbors of `i`, most similar first.
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.lists[i]
    }
}

fn by_similarity(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.sim.total_cmp(&a.sim).then(a.index.cmp(&b.index))
}

/// Brute-force neighbor lists; ties on similarity go to the lower index.
pub fn build_knn(features: &FeatureMatrix, k: usize) -> Result<NeighborIndex> {
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    let n = features.n();
    if n < 2 {
        return Err(invalid(format!("neighbor search needs n >= 2, got {n}")));
    }
    let sq_norms: Vec<f64> = features.rows().map(|r| dot(r, r)).collect();
    if let Some(i) = sq_norms.iter().position(|&v| v == 0.0) {
        return Err(invalid(format!("feature row {i} is all zeros")));
    }
    let keep = k.min(n - 1);
    let lists = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cands: Vec<Neighbor> = (0..n)
                .filter(|&j| j != i)
                .map(|j| Neighbor {
                    index: j,
                    sim: cosine_from_parts(
                        dot(features.row(i), features.row(j)),
                        sq_norms[i],
                        sq_norms[j],
                    ),
                })
                .collect();
            if keep < cands.len() {
                cands.select_nth_unstable_by(keep - 1, by_similarity);
                cands.truncate(keep);
            }
            cands.sort_by(by_similarity);
            cands
        })
        .collect();
    Ok(NeighborIndex { k, lists })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub index: usize,
    pub rank: usize,
    pub d_at_selection: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub picks: Vec<Pick>,
    pub gamma: f64,
    pub diversity_enabled: bool,
}

impl SelectionResult {
    pub fn indices(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.index).collect()
    }

    /// Output records keyed by dataset id.
    pub fn records(&self, ids: &[String]) -> Vec<SelectionRecord> {
        self.picks
            .iter()
            .map(|p| SelectionRecord {
                id: ids[p.index].clone(),
                rank: p.rank,
                d_at_selection: p.d_at_selection,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: String,
    pub rank: usize,
    pub d_at_selection: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectOptions {
    pub m: usize,
    pub gamma: f64,
    pub diversity: bool,
}

/// Heap entry ordered so the maximum is the highest difficulty, lowest index.
#[derive(PartialEq)]
struct Entry {
    d: f64,
    index: usize,
    version: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d
            .total_cmp(&other.d)
            .then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs `m` rounds of greedy selection, mutating `table` in place.
///
/// `index` may be `None` only when the penalty is inactive
/// (`diversity == false` or `gamma == 0`).
pub fn select(
    table: &mut DifficultyTable,
    index: Option<&NeighborIndex>,
    opts: SelectOptions,
) -> Result<SelectionResult> {
    let n = table.len();
    if opts.m > n {
        return Err(invalid(format!("cannot select {} of {n} samples", opts.m)));
    }
    if !(opts.gamma >= 0.0 && opts.gamma.is_finite()) {
        return Err(invalid(format!("gamma must be >= 0, got {}", opts.gamma)));
    }
    let penalize = opts.diversity && opts.gamma > 0.0;
    let index = match (penalize, index) {
        (true, Some(ix)) if ix.len() == n => Some(ix),
        (true, Some(ix)) => {
            return Err(invalid(format!(
                "neighbor index covers {} samples, table has {n}",
                ix.len()
            )))
        }
        (true, None) => return Err(invalid("diversity penalty requires a neighbor index")),
        (false, _) => None,
    };

    let mut version = vec![0u32; n];
    let mut heap: BinaryHeap<Entry> = (0..n)
        .filter(|&i| table.alive[i])
        .map(|i| Entry {
            d: table.d[i],
            index: i,
            version: 0,
        })
        .collect();
    let mut picks = Vec::with_capacity(opts.m);

    while picks.len() < opts.m {
        let Entry {
            index: i,
            version: v,
            ..
        } = heap
            .pop()
            .ok_or_else(|| invalid("fewer alive samples than requested"))?;
        if !table.alive[i] || v != version[i] {
            continue;
        }
        let d_i = table.d[i];
        table.alive[i] = false;
        picks.push(Pick {
            index: i,
            rank: picks.len(),
            d_at_selection: d_i,
        });
        let Some(ix) = index else { continue };
        for nb in ix.neighbors(i) {
            let j = nb.index;
            if !table.alive[j] {
                continue;
            }
            let updated = table.d[j] - opts.gamma * nb.sim * nb.sim * d_i + 0.0;
            if !updated.is_finite() {
                return Err(Error::Numeric(format!(
                    "difficulty of sample {j} overflowed during penalty"
                )));
            }
            table.d[j] = updated;
            version[j] += 1;
            heap.push(Entry {
                d: updated,
                index: j,
                version: version[j],
            });
        }
    }

    Ok(SelectionResult {
        picks,
        gamma: opts.gamma,
        diversity_enabled: opts.diversity,
    })
}

/// Stable descending order of `scores`, truncated to `m`.
pub fn stable_top_m(scores: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| (scores[b] + 0.0).total_cmp(&(scores[a] + 0.0)));
    order.truncate(m);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub id: String,
    pub d: f64,
}

pub fn save_difficulties(
    table: &DifficultyTable,
    ids: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    if ids.len() != table.len() {
        return Err(invalid(format!(
            "{} ids for {} difficulties",
            ids.len(),
            table.len()
        )));
    }
    let records: Vec<DifficultyRecord> = ids
        .iter()
        .zip(table.difficulties())
        .map(|(id, &d)| DifficultyRecord { id: id.clone(), d })
        .collect();
    jsonl::write(path, &records)
}

/// Loads a difficulty file; ids are returned in file order.
pub fn load_difficulties(path: impl AsRef<Path>) -> Result<(Vec<String>, DifficultyTable)> {
    let records: Vec<DifficultyRecord> = jsonl::read(path)?;
    crate::feature_store::check_unique_ids(records.iter().map(|r| r.id.as_str()))?;
    let (ids, d) = records.into_iter().map(|r| (r.id, r.d)).unzip();
    Ok((ids, DifficultyTable::new(d)?))
}
