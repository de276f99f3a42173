//! Scoring: confusion matrix, per-class precision/recall/F1, and the micro
//! averages used to compare models.
//!
//! Utterances whose gold label falls outside the evaluated classes are
//! skipped entirely. A prediction outside the evaluated classes on a scored
//! utterance costs the gold class a false negative but charges no false
//! positive anywhere, since only evaluated classes accumulate positives.

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::corpus::EmotionLabel;
use crate::error::{Error, Result};

/// Which micro-F1 combination rule to apply to micro precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Definition {
    /// The standard harmonic mean `2PR / (P + R)`.
    HarmonicMean,
    /// The plain ratio `PR / (P + R)` — exactly half the harmonic mean.
    /// Off by default; only useful for matching results computed that way.
    ProductOverSum,
}

impl Default for F1Definition {
    fn default() -> Self {
        F1Definition::HarmonicMean
    }
}

// F1 from raw counts: `tp / (2tp + fp + fn)`, doubled for the harmonic mean.
// Algebraically this *is* `2PR / (P + R)`, but skipping the intermediate
// precision/recall divisions keeps identities exact in floating point —
// with every class evaluated, micro-F1 equals accuracy bitwise, which the
// `2.0 * (P*R / (P+R))` form misses by an ulp for values like 0.2.
fn combine(tp: u64, fp: u64, fnn: u64, definition: F1Definition) -> f64 {
    let denominator = 2 * tp + fp + fnn;
    if denominator == 0 {
        return 0.0;
    }
    let ratio = tp as f64 / denominator as f64;
    match definition {
        F1Definition::HarmonicMean => 2.0 * ratio,
        F1Definition::ProductOverSum => ratio,
    }
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Classes that participate in scoring.
    pub evaluated: Vec<EmotionLabel>,
    pub definition: F1Definition,
}

impl Default for EvaluationConfig {
    /// The four in-domain emotions; out-of-domain utterances are skipped.
    fn default() -> Self {
        EvaluationConfig {
            evaluated: vec![
                EmotionLabel::Neutral,
                EmotionLabel::Joy,
                EmotionLabel::Sadness,
                EmotionLabel::Anger,
            ],
            definition: F1Definition::HarmonicMean,
        }
    }
}

/// Gold (rows) by predicted (columns) counts over scored utterances.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; EmotionLabel::COUNT]; EmotionLabel::COUNT],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: EmotionLabel, predicted: EmotionLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn get(&self, gold: EmotionLabel, predicted: EmotionLabel) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn true_positives(&self, class: EmotionLabel) -> u64 {
        self.get(class, class)
    }

    /// Everything gold-`class` predicted as something else.
    pub fn false_negatives(&self, class: EmotionLabel) -> u64 {
        EmotionLabel::ALL
            .iter()
            .filter(|&&p| p != class)
            .map(|&p| self.get(class, p))
            .sum()
    }

    /// Everything predicted `class` whose gold is a different class.
    pub fn false_positives(&self, class: EmotionLabel) -> u64 {
        EmotionLabel::ALL
            .iter()
            .filter(|&&g| g != class)
            .map(|&g| self.get(g, class))
            .sum()
    }
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut outer = serializer.serialize_map(Some(EmotionLabel::COUNT))?;
        for gold in EmotionLabel::ALL {
            let mut row = serde_json::Map::new();
            for pred in EmotionLabel::ALL {
                row.insert(pred.name().into(), self.get(gold, pred).into());
            }
            outer.serialize_entry(gold.name(), &row)?;
        }
        outer.end()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full scoring output; serializes to a readable JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub n_scored: usize,
    pub n_skipped: usize,
    pub evaluated_classes: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

impl MetricsReport {
    /// Fixed-width text rendering for terminal output.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>6} {:>6} {:>6} {:>10} {:>10} {:>10}\n",
            "class", "tp", "fp", "fn", "precision", "recall", "f1"
        ));
        for m in &self.per_class {
            out.push_str(&format!(
                "{:<14} {:>6} {:>6} {:>6} {:>10.4} {:>10.4} {:>10.4}\n",
                m.label,
                m.true_positives,
                m.false_positives,
                m.false_negatives,
                m.precision,
                m.recall,
                m.f1
            ));
        }
        out.push_str(&format!(
            "\nscored {} utterances, skipped {} out-of-scope\n",
            self.n_scored, self.n_skipped
        ));
        out.push_str(&format!(
            "micro precision {:.4}  micro recall {:.4}  micro F1 {:.4}  macro F1 {:.4}\n",
            self.micro_precision, self.micro_recall, self.micro_f1, self.macro_f1
        ));
        out
    }
}

/// Score aligned gold/predicted label sequences.
pub fn evaluate(
    golds: &[EmotionLabel],
    predictions: &[EmotionLabel],
    cfg: &EvaluationConfig,
) -> Result<MetricsReport> {
    if golds.len() != predictions.len() {
        return Err(Error::Evaluation {
            message: format!(
                "{} gold labels but {} predictions",
                golds.len(),
                predictions.len()
            ),
        });
    }
    if cfg.evaluated.is_empty() {
        return Err(Error::Evaluation {
            message: "no classes selected for evaluation".into(),
        });
    }
    let mut in_scope = [false; EmotionLabel::COUNT];
    for &c in &cfg.evaluated {
        in_scope[c.index()] = true;
    }

    let mut confusion = ConfusionMatrix::default();
    let mut n_scored = 0;
    let mut n_skipped = 0;
    for (&gold, &pred) in golds.iter().zip(predictions) {
        if !in_scope[gold.index()] {
            n_skipped += 1;
            continue;
        }
        n_scored += 1;
        confusion.add(gold, pred);
    }

    let mut per_class = Vec::new();
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0u64, 0u64, 0u64);
    for &class in &cfg.evaluated {
        let tp = confusion.true_positives(class);
        let fp = confusion.false_positives(class);
        let fnn = confusion.false_negatives(class);
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fnn;
        let precision = safe_div(tp as f64, (tp + fp) as f64);
        let recall = safe_div(tp as f64, (tp + fnn) as f64);
        per_class.push(ClassMetrics {
            label: class.name().into(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fnn,
            precision,
            recall,
            // Per-class F1 always uses the harmonic mean; the alternative
            // definition only applies to the micro average.
            f1: combine(tp, fp, fnn, F1Definition::HarmonicMean),
        });
    }

    let micro_precision = safe_div(tp_sum as f64, (tp_sum + fp_sum) as f64);
    let micro_recall = safe_div(tp_sum as f64, (tp_sum + fn_sum) as f64);
    let micro_f1 = combine(tp_sum, fp_sum, fn_sum, cfg.definition);
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;

    Ok(MetricsReport {
        n_scored,
        n_skipped,
        evaluated_classes: cfg.evaluated.iter().map(|c| c.name().into()).collect(),
        confusion,
        per_class,
        micro_precision,
        micro_recall,
        micro_f1,
        macro_f1,
    })
}
