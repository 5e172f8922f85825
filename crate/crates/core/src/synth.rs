//! Synthetic datasets with planted difficulty regimes and feature clusters.
//!
//! All regimes share one base logit table `z ~ N(0, 1)`; a regime's bigram
//! chain has transition rows `softmax(z / temperature)`. Low temperatures give
//! near-deterministic (easy) sequences, high temperatures near-uniform (hard)
//! ones, and expected loss grows strictly with temperature. Each regime owns `clusters_per_regime` feature clusters; a sample's
//! feature row is its cluster center (a random unit vector) plus isotropic
//! Gaussian noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::feature_store::{FeatureMatrix, InstructionMeta};
use crate::jsonl;
use crate::math::{dot, softmax};
use crate::toy_model::{TokenSample, ToyBigramModel};

/// Center pairs may not be more similar than this.
pub const MAX_CENTER_COSINE: f64 = 0.5;
const CENTER_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub fraction: f64,
    pub temperature: f64,
    /// Overrides the dataset-wide sequence length range for this regime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<(usize, usize)>,
}

impl Regime {
    pub fn new(fraction: f64, temperature: f64) -> Self {
        Self {
            fraction,
            temperature,
            seq_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub vocab: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub regimes: Vec<Regime>,
    pub clusters_per_regime: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Two equal regimes (cold 0.1, hot 10), 2 000 samples, `d = 8`, `sigma = 0.1`.
    fn default() -> Self {
        Self {
            n: 2000,
            vocab: 16,
            seq_len_min: 16,
            seq_len_max: 32,
            regimes: vec![Regime::new(0.5, 0.1), Regime::new(0.5, 10.0)],
            clusters_per_regime: 1,
            feature_dim: 8,
            feature_noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        if self.vocab < 2 {
            return Err(invalid("vocab must be >= 2"));
        }
        if self.regimes.is_empty() {
            return Err(invalid("need at least one regime"));
        }
        let total: f64 = self.regimes.iter().map(|r| r.fraction).sum();
        if (total - 1.0).abs() > 1e-9
            || self
                .regimes
                .iter()
                .any(|r| r.fraction.is_nan() || r.fraction < 0.0)
        {
            return Err(invalid(format!(
                "regime fractions must be nonnegative and sum to 1, got {total}"
            )));
        }
        if self
            .regimes
            .iter()
            .any(|r| !(r.temperature > 0.0 && r.temperature.is_finite()))
        {
            return Err(invalid("regime temperatures must be positive"));
        }
        for (lo, hi) in self.length_ranges() {
            if lo < 2 || hi < lo {
                return Err(invalid(format!(
                    "invalid sequence length range {lo}..={hi}"
                )));
            }
        }
        if self.clusters_per_regime == 0 {
            return Err(invalid("clusters_per_regime must be >= 1"));
        }
        if self.feature_dim == 0 {
            return Err(invalid("feature_dim must be >= 1"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(invalid("feature_noise must be >= 0"));
        }
        Ok(())
    }

    fn length_ranges(&self) -> Vec<(usize, usize)> {
        self.regimes
            .iter()
            .map(|r| r.seq_len.unwrap_or((self.seq_len_min, self.seq_len_max)))
            .collect()
    }

    /// Sample counts per regime by largest remainder.
    pub fn regime_counts(&self) -> Vec<usize> {
        let exact: Vec<f64> = self
            .regimes
            .iter()
            .map(|r| r.fraction * self.n as f64)
            .collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut rest: Vec<usize> = (0..counts.len()).collect();
        rest.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let short = self.n - counts.iter().sum::<usize>();
        for &r in rest.iter().take(short) {
            counts[r] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub regime: usize,
    pub cluster: usize,
    /// 0 = easiest regime.
    pub difficulty_rank: usize,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub samples: Vec<TokenSample>,
    pub features: FeatureMatrix,
    pub meta: Vec<InstructionMeta>,
    pub truth: Vec<TruthRecord>,
    /// Generating chain of each regime, as a bigram model.
    pub chains: Vec<ToyBigramModel>,
    /// Cluster centers, indexed by global cluster id.
    pub centers: Vec<Vec<f64>>,
}

impl SynthData {
    pub fn ids(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.id.clone()).collect()
    }

    /// Writes `features.sffm`, `meta.jsonl`, `tokens.jsonl` and `truth.jsonl`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        crate::feature_store::save_features(&self.features, dir.join("features.sffm"))?;
        crate::feature_store::save_metadata(&self.meta, dir.join("meta.jsonl"))?;
        crate::toy_model::save_tokens(&self.samples, dir.join("tokens.jsonl"))?;
        jsonl::write(dir.join("truth.jsonl"), &self.truth)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn draw_centers(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    while centers.len() < count {
        let mut placed = false;
        for _ in 0..CENTER_ATTEMPTS {
            let c = random_unit(rng, d);
            if centers.iter().all(|o| dot(o, &c) <= MAX_CENTER_COSINE) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(invalid(format!(
                "could not place {count} cluster centers in d={d} with pairwise cosine <= {MAX_CENTER_COSINE}"
            )));
        }
    }
    Ok(centers)
}

fn tempered_chain(base: &[f64], vocab: usize, temperature: f64) -> Result<ToyBigramModel> {
    ToyBigramModel::from_logits(vocab, base.iter().map(|z| z / temperature).collect())
}

fn draw_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws a token sequence of length `len` from `chain` with a uniform start.
pub fn sample_sequence(rng: &mut ChaCha8Rng, chain: &ToyBigramModel, len: usize) -> Vec<u32> {
    let v = chain.vocab();
    let mut tokens = Vec::with_capacity(len);
    let mut cur = rng.random_range(0..v);
    tokens.push(cur as u32);
    for _ in 1..len {
        cur = draw_index(rng, &softmax(chain.row(cur)));
        tokens.push(cur as u32);
    }
    tokens
}

/// Mean next-token entropy of a chain with rows weighted uniformly.
pub fn chain_entropy(chain: &ToyBigramModel) -> f64 {
    let v = chain.vocab();
    (0..v)
        .map(|u| {
            softmax(chain.row(u))
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / v as f64
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let regimes = spec.regimes.len();
    let base: Vec<f64> = (0..spec.vocab * spec.vocab)
        .map(|_| normal(&mut rng))
        .collect();
    let chains = spec
        .regimes
        .iter()
        .map(|r| tempered_chain(&base, spec.vocab, r.temperature))
        .collect::<Result<Vec<_>>>()?;
    let centers = draw_centers(
        &mut rng,
        regimes * spec.clusters_per_regime,
        spec.feature_dim,
    )?;

    // regime ordering by expected loss under its own chain
    let entropy: Vec<f64> = chains.iter().map(chain_entropy).collect();
    let mut by_entropy: Vec<usize> = (0..regimes).collect();
    by_entropy.sort_by(|&a, &b| entropy[a].total_cmp(&entropy[b]).then(a.cmp(&b)));
    let mut rank_of = vec![0; regimes];
    for (rank, &r) in by_entropy.iter().enumerate() {
        rank_of[r] = rank;
    }

    // (regime, cluster) slots, balanced over clusters, then shuffled
    let mut slots: Vec<(usize, usize)> = Vec::with_capacity(spec.n);
    for (r, &count) in spec.regime_counts().iter().enumerate() {
        for j in 0..count {
            slots.push((
                r,
                r * spec.clusters_per_regime + j % spec.clusters_per_regime,
            ));
        }
    }
    slots.shuffle(&mut rng);

    let ranges = spec.length_ranges();
    let width = spec.n.to_string().len();
    let mut samples = Vec::with_capacity(spec.n);
    let mut data = Vec::with_capacity(spec.n * spec.feature_dim);
    let mut meta = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    for (i, &(regime, cluster)) in slots.iter().enumerate() {
        let id = format!("s{i:0width$}");
        let (lo, hi) = ranges[regime];
        let len = rng.random_range(lo..=hi);
        let tokens = sample_sequence(&mut rng, &chains[regime], len);
        for &c in &centers[cluster] {
            data.push(c + spec.feature_noise * normal(&mut rng));
        }
        meta.push(InstructionMeta {
            id: id.clone(),
            text_len: len as u64,
            tags: vec![format!("regime:{regime}"), format!("cluster:{cluster}")],
        });
        truth.push(TruthRecord {
            id: id.clone(),
            regime,
            cluster,
            difficulty_rank: rank_of[regime],
        });
        samples.push(TokenSample::new(id, tokens));
    }
    let features = FeatureMatrix::new(spec.n, spec.feature_dim, data)?;
    Ok(SynthData {
        samples,
        features,
        meta,
        truth,
        chains,
        centers,
    })
}

/// Fresh samples from the same chains and regime mix, for held-out evaluation.
pub fn held_out(
    spec: &SynthSpec,
    data: &SynthData,
    n: usize,
    seed: u64,
) -> Result<Vec<TokenSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = spec.length_ranges();
    let fractions: Vec<f64> = spec.regimes.iter().map(|r| r.fraction).collect();
    (0..n)
        .map(|i| {
            let regime = draw_index(&mut rng, &fractions);
            let (lo, hi) = ranges[regime];
            let len = rng.random_range(lo..=hi);
            let tokens = sample_sequence(&mut rng, &data.chains[regime], len);
            Ok(TokenSample::new(format!("h{i}"), tokens))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n: 60,
            vocab: 6,
            seq_len_min: 4,
            seq_len_max: 9,
            clusters_per_regime: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.features, b.features);
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.truth, b.truth);
        let c = generate(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn noiseless_single_cluster_rows_are_identical() {
        let spec = SynthSpec {
            feature_noise: 0.0,
            clusters_per_regime: 1,
            ..small()
        };
        let data = generate(&spec).unwrap();
        for (i, t) in data.truth.iter().enumerate() {
            let center: Vec<f64> = data.centers[t.regime]
                .iter()
                .map(|&c| c as f32 as f64)
                .collect();
            assert_eq!(data.features.row(i), &center[..]);
        }
    }

    #[test]
    fn structure_matches_spec() {
        let data = generate(&small()).unwrap();
        assert_eq!(data.samples.len(), 60);
        assert_eq!(data.features.n(), 60);
        assert_eq!(data.features.d(), 8);
        let hot = data.truth.iter().filter(|t| t.regime == 1).count();
        assert_eq!(hot, 30);
        for (i, t) in data.truth.iter().enumerate() {
            assert_eq!(t.difficulty_rank, t.regime);
            assert_eq!(t.cluster / 2, t.regime);
            assert_eq!(
                data.meta[i].tag("cluster"),
                Some(t.cluster.to_string().as_str())
            );
            let s = &data.samples[i];
            assert!((4..=9).contains(&s.tokens.len()));
            assert_eq!(data.meta[i].text_len as usize, s.tokens.len());
            s.validate(6).unwrap();
        }
        for (a, ca) in data.centers.iter().enumerate() {
            for cb in &data.centers[a + 1..] {
                assert!(dot(ca, cb) <= MAX_CENTER_COSINE);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SynthSpec {
            regimes: vec![Regime::new(0.5, 0.1), Regime::new(0.4, 10.0)],
            ..small()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthSpec {
            regimes: vec![Regime::new(1.0, 0.0)],
            ..small()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthSpec {
            feature_noise: -1.0,
            ..small()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthSpec {
            feature_dim: 1,
            clusters_per_regime: 3,
            ..small()
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn regime_counts_use_largest_remainder() {
        let spec = SynthSpec {
            n: 10,
            regimes: vec![
                Regime::new(1.0 / 3.0, 1.0),
                Regime::new(1.0 / 3.0, 2.0),
                Regime::new(1.0 / 3.0, 3.0),
            ],
            ..small()
        };
        assert_eq!(spec.regime_counts(), vec![4, 3, 3]);
    }
}
