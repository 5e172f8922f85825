//! The learnable weight generator.
//!
//! A linear score net maps a feature row `S_i` to a raw weight
//! `w_i = w_vec . S_i + bias`. Within a minibatch the raw weights are turned
//! into a probability vector `p = softmax(w)`; the training objective is the
//! convex combination `L = sum_i p_i * loss_i`.
//!
//! Because `dL/dw_i = p_i * (loss_i - L)`, a descent step lowers the raw weight
//! of every sample whose loss is above the current weighted mean, and raises
//! it for samples below. Negating the learned weight therefore gives a
//! difficulty score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math::{dot, softmax};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetParams {
    pub w_vec: Vec<f64>,
    pub bias: f64,
}

/// Gradient with respect to [`ScoreNetParams`], same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub w_vec: Vec<f64>,
    pub bias: f64,
}

impl ScoreGrad {
    pub fn zeros(d: usize) -> Self {
        Self {
            w_vec: vec![0.0; d],
            bias: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        (dot(&self.w_vec, &self.w_vec) + self.bias * self.bias).sqrt()
    }

    pub(crate) fn add_scaled(&mut self, other: &ScoreGrad, scale: f64) {
        for (a, b) in self.w_vec.iter_mut().zip(&other.w_vec) {
            *a += scale * b;
        }
        self.bias += scale * other.bias;
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    d: usize,
    w_vec: Vec<f64>,
    bias: f64,
}

impl ScoreNetParams {
    /// Zero parameters: every sample starts with the same raw weight.
    pub fn zeros(d: usize) -> Self {
        Self {
            w_vec: vec![0.0; d],
            bias: 0.0,
        }
    }

    pub fn new(w_vec: Vec<f64>, bias: f64) -> Result<Self> {
        if w_vec.is_empty() {
            return Err(invalid("score net needs at least one input dimension"));
        }
        if !bias.is_finite() || w_vec.iter().any(|v| !v.is_finite()) {
            return Err(invalid("score net parameters must be finite"));
        }
        Ok(Self { w_vec, bias })
    }

    pub fn d(&self) -> usize {
        self.w_vec.len()
    }

    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.d() {
            return Err(invalid(format!(
                "feature row has dimension {}, score net expects {}",
                features.len(),
                self.d()
            )));
        }
        Ok(dot(&self.w_vec, features) + self.bias)
    }

    /// `phi - lr * grad`.
    pub fn step(&self, grad: &ScoreGrad, lr: f64) -> Result<Self> {
        if grad.w_vec.len() != self.d() {
            return Err(invalid(format!(
                "gradient dimension {} does not match score net dimension {}",
                grad.w_vec.len(),
                self.d()
            )));
        }
        let w_vec = self
            .w_vec
            .iter()
            .zip(&grad.w_vec)
            .map(|(w, g)| w - lr * g)
            .collect();
        Self::new(w_vec, self.bias - lr * grad.bias)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            d: self.d(),
            w_vec: self.w_vec.clone(),
            bias: self.bias,
        })
        .expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::storage(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if ck.d != ck.w_vec.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!(
                    "declared d={} but w_vec has {} entries",
                    ck.d,
                    ck.w_vec.len()
                ),
            });
        }
        Self::new(ck.w_vec, ck.bias)
    }
}

fn check_batch(raw_weights: &[f64]) -> Result<()> {
    if raw_weights.is_empty() {
        return Err(invalid("batch must contain at least one sample"));
    }
    if raw_weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("non-finite raw weight in batch".into()));
    }
    Ok(())
}

fn check_losses(raw_weights: &[f64], losses: &[f64]) -> Result<()> {
    check_batch(raw_weights)?;
    if raw_weights.len() != losses.len() {
        return Err(invalid(format!(
            "{} raw weights but {} losses",
            raw_weights.len(),
            losses.len()
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("non-finite loss in batch".into()));
    }
    Ok(())
}

/// Softmax coefficients `p_i`, summing to one; the weights with which sample
/// gradients enter the model update.
pub fn softmax_weights(raw_weights: &[f64]) -> Result<Vec<f64>> {
    check_batch(raw_weights)?;
    Ok(softmax(raw_weights))
}

/// Inter-batch normalization: `b * softmax(w)`, summing to the batch size.
pub fn normalize_batch(raw_weights: &[f64]) -> Result<Vec<f64>> {
    let b = raw_weights.len() as f64;
    Ok(softmax_weights(raw_weights)?
        .into_iter()
        .map(|p| p * b)
        .collect())
}

fn weighted_mean(p: &[f64], losses: &[f64]) -> f64 {
    let l: f64 = p.iter().zip(losses).map(|(p, l)| p * l).sum();
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // a convex combination; keep rounding from stepping outside the hull
    l.clamp(lo, hi)
}

/// The softmax-weighted batch loss `sum_i softmax(w)_i * loss_i`.
pub fn weighted_loss(raw_weights: &[f64], losses: &[f64]) -> Result<f64> {
    check_losses(raw_weights, losses)?;
    Ok(weighted_mean(&softmax(raw_weights), losses))
}

/// `dL/dw_i = p_i * (loss_i - L)` for every raw weight in the batch.
pub fn raw_weight_grad(raw_weights: &[f64], losses: &[f64]) -> Result<Vec<f64>> {
    check_losses(raw_weights, losses)?;
    let p = softmax(raw_weights);
    let l = weighted_mean(&p, losses);
    Ok(p.iter().zip(losses).map(|(p, li)| p * (li - l)).collect())
}

/// Gradient of the weighted batch loss with respect to the score-net
/// parameters, by the chain rule through the linear layer.
pub fn grad_wrt_params(
    params: &ScoreNetParams,
    features: &[&[f64]],
    losses: &[f64],
) -> Result<ScoreGrad> {
    if features.len() != losses.len() {
        return Err(invalid(format!(
            "{} feature rows but {} losses",
            features.len(),
            losses.len()
        )));
    }
    let raw: Vec<f64> = features
        .iter()
        .map(|s| params.forward(s))
        .collect::<Result<_>>()?;
    let dw = raw_weight_grad(&raw, losses)?;
    let mut grad = ScoreGrad::zeros(params.d());
    for (row, g) in features.iter().zip(&dw) {
        for (acc, x) in grad.w_vec.iter_mut().zip(row.iter()) {
            *acc += g * x;
        }
        grad.bias += g;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forward_examples() {
        let z = ScoreNetParams::zeros(2);
        assert_eq!(z.forward(&[3.0, -7.0]).unwrap(), 0.0);
        let p = ScoreNetParams::new(vec![1.0, 0.0], 0.0).unwrap();
        assert_eq!(p.forward(&[3.5, -2.0]).unwrap(), 3.5);
        let p = ScoreNetParams::new(vec![0.5, 0.5], 1.0).unwrap();
        assert_eq!(p.forward(&[2.0, 4.0]).unwrap(), 4.0);
        assert!(p.forward(&[1.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_batch(&[0.0; 4]).unwrap(), vec![1.0; 4]);
        for c in [-50.0, 0.3, 12.0] {
            for v in normalize_batch(&[c; 7]).unwrap() {
                assert!((v - 1.0).abs() < 1e-15);
            }
        }
        let v = normalize_batch(&[2f64.ln(), 0.0]).unwrap();
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(normalize_batch(&[]).is_err());
    }

    #[test]
    fn weighted_loss_examples() {
        assert_eq!(weighted_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 2.0);
        let l = weighted_loss(&[100.0, -100.0], &[1.0, 3.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let l = weighted_loss(&[2f64.ln(), 0.0], &[3.0, 6.0]).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        assert!(weighted_loss(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn softmax_weight_examples() {
        assert_eq!(softmax_weights(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax_weights(&[3f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let q = softmax_weights(&[3f64.ln() + 7.0, 7.0]).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(softmax_weights(&[]).is_err());
    }

    #[test]
    fn degenerate_batches_have_zero_gradient() {
        let params = ScoreNetParams::new(vec![0.3, -1.2], 0.4).unwrap();
        let rows: Vec<&[f64]> = vec![&[1.0, 2.0], &[-0.5, 0.1], &[3.0, 3.0]];
        let g = grad_wrt_params(&params, &rows, &[2.5; 3]).unwrap();
        assert!(g.norm() < 1e-12);
        let g = grad_wrt_params(&params, &rows[..1], &[9.0]).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn params_step_rules() {
        let z = ScoreNetParams::zeros(3);
        assert_eq!(z.step(&ScoreGrad::zeros(3), 0.5).unwrap(), z);
        let g = ScoreGrad {
            w_vec: vec![0.0; 3],
            bias: 1.0,
        };
        assert_eq!(z.step(&g, 0.1).unwrap().bias, -0.1);
        let g = ScoreGrad {
            w_vec: vec![1.0, -2.0, 0.5],
            bias: 0.25,
        };
        let a = z.step(&g, 0.3).unwrap();
        let b = z.step(&g, 0.6).unwrap();
        for (x, y) in a.w_vec.iter().zip(&b.w_vec) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
        assert!(z.step(&ScoreGrad::zeros(2), 0.1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scorenet.json");
        let params = ScoreNetParams::new(vec![0.125, -3.0], 0.5).unwrap();
        params.save(&p).unwrap();
        assert_eq!(ScoreNetParams::load(&p).unwrap(), params);
        std::fs::write(&p, r#"{"d":3,"w_vec":[1.0],"bias":0.0}"#).unwrap();
        assert!(ScoreNetParams::load(&p).is_err());
    }

    proptest! {
        #[test]
        fn normalization_sums_to_batch_and_is_shift_invariant(
            w in prop::collection::vec(-20.0f64..20.0, 1..64),
            shift in -30.0f64..30.0,
        ) {
            let a = normalize_batch(&w).unwrap();
            let sum: f64 = a.iter().sum();
            prop_assert!((sum - w.len() as f64).abs() < 1e-9);
            prop_assert!(a.iter().all(|&x| x > 0.0 && x <= w.len() as f64));
            let shifted: Vec<f64> = w.iter().map(|x| x + shift).collect();
            let b = normalize_batch(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn weighted_loss_is_convex_combination(
            pairs in prop::collection::vec((-30.0f64..30.0, 0.0f64..10.0), 1..32),
        ) {
            let (w, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let v = weighted_loss(&w, &l).unwrap();
            let lo = l.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= v && v <= hi);
        }

        #[test]
        fn raw_weight_gradient_sign_follows_loss_vs_mean(
            pairs in prop::collection::vec((-5.0f64..5.0, 0.0f64..10.0), 2..32),
        ) {
            let (w, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mean = weighted_loss(&w, &l).unwrap();
            let g = raw_weight_grad(&w, &l).unwrap();
            for (gi, li) in g.iter().zip(&l) {
                if *li > mean { prop_assert!(*gi > 0.0); }
                if *li < mean { prop_assert!(*gi < 0.0); }
            }
        }
    }
}
