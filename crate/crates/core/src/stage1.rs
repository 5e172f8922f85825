//! Co-training of the target model and the score net under the
//! softmax-weighted loss.
//!
//! Each epoch visits every sample once in a seeded shuffled order. A local
//! batch of `batch_size` samples is the softmax window; `grad_accum_steps`
//! local batches are accumulated before both models take a step.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feature_store::FeatureMatrix;
use crate::score_net::{self, ScoreGrad, ScoreNetParams};
use crate::toy_model::{
    weighted_model_grad, EpochShuffler, LogitGrad, TokenSample, ToyBigramModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_model: f64,
    pub lr_scorenet: f64,
    pub seed: u64,
    pub l2_scorenet: f64,
    pub grad_accum_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 3,
            lr_model: 0.5,
            lr_scorenet: 0.5,
            seed: 0,
            l2_scorenet: 0.0,
            grad_accum_steps: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if self.grad_accum_steps == 0 {
            return Err(invalid("grad_accum_steps must be >= 1"));
        }
        if !(self.lr_model > 0.0 && self.lr_model.is_finite()) {
            return Err(invalid(format!(
                "lr_model must be positive, got {}",
                self.lr_model
            )));
        }
        // zero freezes the score net
        if !(self.lr_scorenet >= 0.0 && self.lr_scorenet.is_finite()) {
            return Err(invalid(format!(
                "lr_scorenet must be nonnegative, got {}",
                self.lr_scorenet
            )));
        }
        if !(self.l2_scorenet >= 0.0 && self.l2_scorenet.is_finite()) {
            return Err(invalid("l2_scorenet must be nonnegative"));
        }
        Ok(())
    }
}

/// One local batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub weighted_loss: f64,
    pub mean_loss: f64,
    pub min_w: f64,
    pub max_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// Raw weights of the trained score net over the full dataset.
    pub final_weights: Vec<f64>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for rec in &self.steps {
            w.serialize(rec)
                .map_err(|e| Error::Validation(format!("csv write failed: {e}")))?;
        }
        w.flush()
            .map_err(|e| Error::Validation(format!("csv write failed: {e}")))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::storage(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub model: ToyBigramModel,
    pub params: ScoreNetParams,
    pub log: TrainLog,
}

/// Trains `model` and a zero-initialized score net jointly.
///
/// Row `i` of `features` must describe `samples[i]`.
pub fn train_stage1(
    model: ToyBigramModel,
    samples: &[TokenSample],
    features: &FeatureMatrix,
    config: &TrainConfig,
) -> Result<Stage1Output> {
    config.validate()?;
    if samples.len() != features.n() {
        return Err(invalid(format!(
            "{} samples but feature matrix has {} rows",
            samples.len(),
            features.n()
        )));
    }
    for s in samples {
        s.validate(model.vocab())?;
    }

    let mut model = model;
    let mut params = ScoreNetParams::zeros(features.d());
    let mut shuffler = EpochShuffler::new(samples.len(), config.seed);
    let mut steps = Vec::new();
    let accum = config.grad_accum_steps;

    for epoch in 0..config.epochs {
        let order = shuffler.next_order();
        let local_batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        let mut step = 0;
        for group in local_batches.chunks(accum) {
            let mut model_grad = LogitGrad::zeros(model.vocab());
            let mut score_grad = ScoreGrad::zeros(params.d());
            for idx in group {
                let batch: Vec<&TokenSample> = idx.iter().map(|&i| &samples[i]).collect();
                let rows: Vec<&[f64]> = idx.iter().map(|&i| features.row(i)).collect();
                let losses = batch
                    .iter()
                    .map(|s| {
                        let l = model.sample_loss(s)?;
                        if l.is_finite() {
                            Ok(l)
                        } else {
                            Err(Error::Numeric(format!(
                                "non-finite loss on sample {:?}",
                                s.id
                            )))
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let raw = rows
                    .iter()
                    .map(|r| params.forward(r))
                    .collect::<Result<Vec<f64>>>()?;
                if let Some(pos) = raw.iter().position(|w| !w.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "score net produced a non-finite weight for sample {:?}",
                        batch[pos].id
                    )));
                }

                let p = score_net::softmax_weights(&raw)?;
                let coeffs: Vec<f64> = p.iter().map(|p| p / accum as f64).collect();
                weighted_model_grad(&model, &batch, &coeffs, &mut model_grad)?;

                let g = score_net::grad_wrt_params(&params, &rows, &losses)?;
                score_grad.add_scaled(&g, 1.0 / accum as f64);

                steps.push(StepRecord {
                    epoch,
                    step,
                    weighted_loss: score_net::weighted_loss(&raw, &losses)?,
                    mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                    min_w: raw.iter().copied().fold(f64::INFINITY, f64::min),
                    max_w: raw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                });
                step += 1;
            }
            if config.l2_scorenet > 0.0 {
                for (g, w) in score_grad.w_vec.iter_mut().zip(&params.w_vec) {
                    *g += config.l2_scorenet * w;
                }
            }
            model = model.step(&model_grad, config.lr_model)?;
            if config.lr_scorenet > 0.0 {
                params = params.step(&score_grad, config.lr_scorenet)?;
            }
        }
    }

    let final_weights = features
        .rows()
        .map(|r| params.forward(r))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Stage1Output {
        model,
        params,
        log: TrainLog {
            steps,
            final_weights,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_model::train_plain;

    fn tiny() -> (Vec<TokenSample>, FeatureMatrix) {
        let samples = vec![
            TokenSample::new("a", vec![0, 1, 0, 1, 0]),
            TokenSample::new("b", vec![2, 0, 1, 2, 2, 1]),
            TokenSample::new("c", vec![1, 1, 1]),
            TokenSample::new("d", vec![0, 2, 1, 0, 2]),
            TokenSample::new("e", vec![2, 2, 0]),
        ];
        let features = FeatureMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![-1.0, 0.2],
            vec![0.3, -0.7],
        ])
        .unwrap();
        (samples, features)
    }

    #[test]
    fn frozen_score_net_matches_plain_training_bitwise() {
        let (samples, features) = tiny();
        let config = TrainConfig {
            batch_size: 2,
            epochs: 4,
            lr_model: 0.3,
            lr_scorenet: 0.0,
            seed: 11,
            ..TrainConfig::default()
        };
        let m0 = ToyBigramModel::uniform(3).unwrap();
        let out = train_stage1(m0.clone(), &samples, &features, &config).unwrap();
        assert!(out.params.w_vec.iter().all(|&w| w == 0.0) && out.params.bias == 0.0);
        let (plain, _) = train_plain(m0, &samples, 4, 2, 0.3, 11).unwrap();
        assert_eq!(out.model, plain);
    }

    #[test]
    fn identical_samples_get_identical_weights() {
        let samples: Vec<TokenSample> = (0..9)
            .map(|i| TokenSample::new(format!("s{i}"), vec![0, 1, 2, 1, 0]))
            .collect();
        let features = FeatureMatrix::from_rows(&vec![vec![0.4, -0.2, 1.0]; 9]).unwrap();
        let config = TrainConfig {
            batch_size: 4,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train_stage1(
            ToyBigramModel::uniform(3).unwrap(),
            &samples,
            &features,
            &config,
        )
        .unwrap();
        let w0 = out.log.final_weights[0];
        assert!(out.log.final_weights.iter().all(|w| (w - w0).abs() < 1e-9));
    }

    #[test]
    fn log_is_complete_and_bounded() {
        let (samples, features) = tiny();
        let config = TrainConfig {
            batch_size: 2,
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train_stage1(
            ToyBigramModel::uniform(3).unwrap(),
            &samples,
            &features,
            &config,
        )
        .unwrap();
        // 5 samples in batches of 2: 3 local batches per epoch, last one partial
        assert_eq!(out.log.steps.len(), 6);
        assert_eq!(out.log.final_weights.len(), 5);
        let mut csv = Vec::new();
        out.log.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,step,weighted_loss,mean_loss,min_w,max_w\n"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn rejects_mismatched_pairing() {
        let (samples, features) = tiny();
        let err = train_stage1(
            ToyBigramModel::uniform(3).unwrap(),
            &samples[..4],
            &features,
            &TrainConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr_model: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 7}"#).unwrap();
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.epochs, 7);
    }
}
