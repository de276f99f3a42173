//! Emotion head: a two-layer SELU network over pooled utterance vectors,
//! trained with class-weighted cross-entropy so rare emotions are not
//! drowned out by the majority class.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassCounts, EmotionLabel};
use crate::encoder::layers::{dropout_backward, dropout_forward, softmax_rows, DropoutMask};
use crate::encoder::params::LinearParams;
use crate::encoder::Phase;
use crate::error::{Error, Result};
use crate::tensors::{NamedTensors, TensorMut, TensorRef};

/// SELU scale, fixed so that activations self-normalize.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// SELU negative-branch saturation constant.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

/// Probabilities below this floor are clamped before taking the log, so a
/// confidently wrong model yields a large but finite loss.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassifierConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub dropout_rate: f64,
}

impl ClassifierConfig {
    /// Hidden width follows the encoder at half its model dimension.
    pub fn for_encoder(d_model: usize, dropout_rate: f64) -> Self {
        ClassifierConfig {
            d_model,
            d_hidden: (d_model / 2).max(1),
            dropout_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_hidden == 0 {
            return Err(Error::Config {
                message: "classifier dimensions must be positive".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config {
                message: format!(
                    "classifier dropout_rate {} outside [0, 1)",
                    self.dropout_rate
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub hidden: LinearParams,
    pub output: LinearParams,
}

impl ClassifierParams {
    pub fn init(cfg: &ClassifierConfig, rng: &mut ChaCha8Rng) -> Self {
        ClassifierParams {
            hidden: LinearParams::init(cfg.d_model, cfg.d_hidden, rng),
            output: LinearParams::init(cfg.d_hidden, EmotionLabel::COUNT, rng),
        }
    }

    pub fn zeros(cfg: &ClassifierConfig) -> Self {
        ClassifierParams {
            hidden: LinearParams::zeros(cfg.d_model, cfg.d_hidden),
            output: LinearParams::zeros(cfg.d_hidden, EmotionLabel::COUNT),
        }
    }
}

impl NamedTensors for ClassifierParams {
    fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        vec![
            ("hidden/weight".into(), TensorRef::Matrix(&self.hidden.weight)),
            ("hidden/bias".into(), TensorRef::Vector(&self.hidden.bias)),
            ("output/weight".into(), TensorRef::Matrix(&self.output.weight)),
            ("output/bias".into(), TensorRef::Vector(&self.output.bias)),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        vec![
            ("hidden/weight".into(), TensorMut::Matrix(&mut self.hidden.weight)),
            ("hidden/bias".into(), TensorMut::Vector(&mut self.hidden.bias)),
            ("output/weight".into(), TensorMut::Matrix(&mut self.output.weight)),
            ("output/bias".into(), TensorMut::Vector(&mut self.output.bias)),
        ]
    }
}

/// Intermediates retained for the backward pass.
#[derive(Debug)]
pub struct ClassifierCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    dropped: Array2<f64>,
    drop_mask: DropoutMask,
    probs: Array2<f64>,
}

impl ClassifierCache {
    pub fn probabilities(&self) -> &Array2<f64> {
        &self.probs
    }
}

/// Map pooled utterance vectors to per-class probabilities.
///
/// `hidden -> SELU -> dropout (train only) -> output -> softmax`. Returns an
/// `n x 5` probability matrix plus the cache for [`classify_backward`].
pub fn classify(
    pooled: &Array2<f64>,
    params: &ClassifierParams,
    cfg: &ClassifierConfig,
    phase: &mut Phase<'_>,
) -> Result<(Array2<f64>, ClassifierCache)> {
    if pooled.ncols() != params.hidden.weight.nrows() {
        return Err(Error::Shape {
            operation: "classify".into(),
            expected: format!("{} input columns", params.hidden.weight.nrows()),
            actual: format!("{}", pooled.ncols()),
        });
    }
    let pre = params.hidden.forward(pooled);
    let act = pre.mapv(selu);
    let (dropped, drop_mask) = dropout_forward(&act, cfg.dropout_rate, phase.rng());
    let mut probs = params.output.forward(&dropped);
    softmax_rows(&mut probs);
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            site: "classifier softmax".into(),
        });
    }
    Ok((
        probs.clone(),
        ClassifierCache {
            x: pooled.clone(),
            pre,
            dropped,
            drop_mask,
            probs,
        },
    ))
}

/// One utterance's predictive distribution and its argmax label (ties go to
/// the lowest class index).
#[derive(Debug, Clone)]
pub struct PredictionDistribution {
    pub probabilities: [f64; EmotionLabel::COUNT],
    pub predicted: EmotionLabel,
}

pub fn predictions(probs: &Array2<f64>) -> Vec<PredictionDistribution> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut probabilities = [0.0; EmotionLabel::COUNT];
            for (slot, &v) in probabilities.iter_mut().zip(row.iter()) {
                *slot = v;
            }
            let mut best = 0;
            for c in 1..EmotionLabel::COUNT {
                if probabilities[c] > probabilities[best] {
                    best = c;
                }
            }
            PredictionDistribution {
                probabilities,
                predicted: EmotionLabel::from_index(best),
            }
        })
        .collect()
}

/// Per-class loss weights. Classes absent from the reference counts carry no
/// weight and may not appear as gold labels during training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: [Option<f64>; EmotionLabel::COUNT],
}

impl ClassWeights {
    /// Inverse-frequency weights `total / count_c` over the classes that
    /// actually occur.
    pub fn inverse_frequency(counts: &ClassCounts) -> Self {
        let total = counts.total() as f64;
        let mut weights = [None; EmotionLabel::COUNT];
        for label in EmotionLabel::ALL {
            let c = counts.get(label);
            if c > 0 {
                weights[label.index()] = Some(total / c as f64);
            }
        }
        ClassWeights { weights }
    }

    /// All classes weighted 1 (plain cross-entropy).
    pub fn uniform() -> Self {
        ClassWeights {
            weights: [Some(1.0); EmotionLabel::COUNT],
        }
    }

    pub fn get(&self, label: EmotionLabel) -> Result<f64> {
        self.weights[label.index()].ok_or(Error::MissingClassWeight {
            class: label.name(),
        })
    }
}

/// Mean over utterances of `w_gold * -ln(max(p_gold, floor))`.
pub fn weighted_cross_entropy(
    probs: &Array2<f64>,
    golds: &[EmotionLabel],
    weights: &ClassWeights,
) -> Result<f64> {
    if golds.is_empty() {
        return Err(Error::Training {
            message: "loss needs at least one labeled utterance".into(),
        });
    }
    if probs.nrows() != golds.len() {
        return Err(Error::Shape {
            operation: "weighted_cross_entropy".into(),
            expected: format!("{} probability rows", golds.len()),
            actual: format!("{}", probs.nrows()),
        });
    }
    let mut loss = 0.0;
    for (row, &gold) in probs.rows().into_iter().zip(golds) {
        let p = row[gold.index()].max(PROBABILITY_FLOOR);
        loss += weights.get(gold)? * -p.ln();
    }
    Ok(loss / golds.len() as f64)
}

/// Backward pass of softmax + weighted cross-entropy + the SELU head.
///
/// The softmax/cross-entropy pair collapses to `(p - y) * w_gold / n` per
/// logit; the probability floor only guards the loss value, never this
/// gradient. Parameter gradients accumulate into `grads`; the return value
/// is the gradient with respect to the pooled inputs.
pub fn classify_backward(
    golds: &[EmotionLabel],
    weights: &ClassWeights,
    cache: &ClassifierCache,
    params: &ClassifierParams,
    grads: &mut ClassifierParams,
) -> Result<Array2<f64>> {
    let n = golds.len();
    if cache.probs.nrows() != n {
        return Err(Error::Shape {
            operation: "classify_backward".into(),
            expected: format!("{} cached probability rows", n),
            actual: format!("{}", cache.probs.nrows()),
        });
    }

    let mut dlogits = cache.probs.clone();
    for (u, &gold) in golds.iter().enumerate() {
        let w = weights.get(gold)? / n as f64;
        let mut row = dlogits.row_mut(u);
        row[gold.index()] -= 1.0;
        row *= w;
    }

    grads.output.weight += &cache.dropped.t().dot(&dlogits);
    grads.output.bias += &dlogits.sum_axis(Axis(0));
    let ddropped = dlogits.dot(&params.output.weight.t());

    let dact = dropout_backward(&ddropped, &cache.drop_mask);
    let dpre = &dact * &cache.pre.mapv(selu_derivative);

    grads.hidden.weight += &cache.x.t().dot(&dpre);
    grads.hidden.bias += &dpre.sum_axis(Axis(0));
    Ok(dpre.dot(&params.hidden.weight.t()))
}
