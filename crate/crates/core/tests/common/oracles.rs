//! Reference implementations used as test oracles.
//!
//! Everything here is written directly from the mathematical definitions and
//! shares no code with the library paths it checks.

#![allow(dead_code)]

/// Mean next-token NLL of `tokens` under a row-major `vocab x vocab` logit table.
pub fn bigram_nll(logits: &[f64], vocab: usize, tokens: &[u32]) -> f64 {
    let mut total = 0.0;
    for pair in tokens.windows(2) {
        let row = &logits[pair[0] as usize * vocab..(pair[0] as usize + 1) * vocab];
        let norm: f64 = row.iter().map(|x| x.exp()).sum();
        total += -(row[pair[1] as usize].exp() / norm).ln();
    }
    total / (tokens.len() - 1) as f64
}

/// Central finite differences of [`bigram_nll`] over every logit.
pub fn fd_bigram_grad(logits: &[f64], vocab: usize, tokens: &[u32], h: f64) -> Vec<f64> {
    let mut theta = logits.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = theta[i];
            theta[i] = orig + h;
            let up = bigram_nll(&theta, vocab, tokens);
            theta[i] = orig - h;
            let down = bigram_nll(&theta, vocab, tokens);
            theta[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `sum_i softmax(X w + b)_i * losses_i`, evaluated naively.
pub fn scorenet_objective(w: &[f64], bias: f64, rows: &[Vec<f64>], losses: &[f64]) -> f64 {
    let raw: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + bias)
        .collect();
    let exps: Vec<f64> = raw.iter().map(|v| v.exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().zip(losses).map(|(e, l)| e / z * l).sum()
}

/// Central finite differences of [`scorenet_objective`]; bias derivative last.
pub fn fd_scorenet_grad(
    w: &[f64],
    bias: f64,
    rows: &[Vec<f64>],
    losses: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut params: Vec<f64> = w.to_vec();
    params.push(bias);
    let d = w.len();
    (0..=d)
        .map(|i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = scorenet_objective(&params[..d], params[d], rows, losses);
            params[i] = orig - h;
            let down = scorenet_objective(&params[..d], params[d], rows, losses);
            params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest entry-wise deviation, relative to the largest reference magnitude.
pub fn max_rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    let scale = reference
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// All pairwise similarities sorted by (similarity desc, index asc), self
/// excluded, truncated to `k`.
pub fn brute_knn(rows: &[Vec<f64>], k: usize) -> Vec<Vec<(usize, f64)>> {
    (0..rows.len())
        .map(|i| {
            let mut all: Vec<(usize, f64)> = (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| (j, cosine(&rows[i], &rows[j])))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}

/// Step-by-step greedy selection with the squared-similarity penalty:
/// linear-scan argmax (first index wins ties), then penalize alive neighbors.
pub fn reference_select(
    difficulties: &[f64],
    rows: &[Vec<f64>],
    k: usize,
    m: usize,
    gamma: f64,
) -> Vec<(usize, f64)> {
    let mut d = difficulties.to_vec();
    let mut alive = vec![true; d.len()];
    let knn = if gamma > 0.0 {
        brute_knn(rows, k)
    } else {
        Vec::new()
    };
    let mut picked = Vec::new();
    for _ in 0..m {
        let mut best: Option<usize> = None;
        for i in 0..d.len() {
            if alive[i] && best.is_none_or(|b| d[i] > d[b]) {
                best = Some(i);
            }
        }
        let i = best.unwrap();
        let di = d[i];
        picked.push((i, di));
        alive[i] = false;
        if gamma > 0.0 {
            for &(j, s) in &knn[i] {
                if alive[j] {
                    d[j] -= gamma * s * s * di;
                }
            }
        }
    }
    picked
}

/// Indices sorted by descending score; equal scores keep index order.
pub fn brute_top_m(scores: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // insertion sort: stable by construction
    for a in 1..idx.len() {
        let mut b = a;
        while b > 0 && scores[idx[b]] > scores[idx[b - 1]] {
            idx.swap(b, b - 1);
            b -= 1;
        }
    }
    idx.truncate(m);
    idx
}

/// Ranks with ties averaged, by counting.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}
