//! ADAM, binary cross-entropy, and validation-accuracy bookkeeping.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Predictions are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Probability above which a sample is classified as cracked.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Mean binary cross-entropy over the batch and its gradient w.r.t. `pred`.
///
/// The gradient is taken at the clamped prediction, so it stays finite and
/// keeps pointing toward the label when the sigmoid saturates.
pub fn bce_loss<T: Element>(pred: &Tensor<T>, labels: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != labels.shape() {
        return Err(Error::shape(
            "bce_loss",
            format!("pred {:?} vs labels {:?}", pred.shape(), labels.shape()),
        ));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &x) in pred.data().iter().zip(labels.data()) {
        let x = x.as_f64();
        if x != 0.0 && x != 1.0 {
            return Err(Error::InvalidLabel(x));
        }
        let p = p.as_f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= x * p.ln() + (1.0 - x) * (1.0 - p).ln();
        grad.push(T::of((p - x) / (p * (1.0 - p)) / n));
    }
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// Moment accumulators for every parameter tensor plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<Self> {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected ADAM update applied in place.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "state tracks {} tensors, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "tensor {i}: param {:?}, grad {:?}, state {:?}",
                        p.shape(),
                        g.shape(),
                        self.m[i].shape()
                    ),
                ));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (lr_t, eps_t) = (T::of(lr), T::of(eps));
        let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi * inv_c1;
                let v_hat = *vi * inv_c2;
                *w = *w - lr_t * m_hat / (v_hat.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}

/// Per-class counts behind validation accuracy. Class 1 is cracked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Metrics {
    pub crack_total: u64,
    pub nocrack_total: u64,
    pub crack_correct: u64,
    pub nocrack_correct: u64,
}

/// 2x2 confusion matrix, rows are the true class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub true_positive: u64,
    pub false_negative: u64,
    pub false_positive: u64,
    pub true_negative: u64,
}

pub fn is_crack(prob: f64) -> bool {
    prob > DECISION_THRESHOLD
}

impl Metrics {
    pub fn record(&mut self, prob: f64, label: f64) {
        let predicted = is_crack(prob);
        if label >= 0.5 {
            self.crack_total += 1;
            self.crack_correct += u64::from(predicted);
        } else {
            self.nocrack_total += 1;
            self.nocrack_correct += u64::from(!predicted);
        }
    }

    pub fn from_predictions(probs: &[f64], labels: &[f64]) -> Self {
        let mut m = Self::default();
        for (&p, &l) in probs.iter().zip(labels) {
            m.record(p, l);
        }
        m
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            crack_total: self.crack_total + other.crack_total,
            nocrack_total: self.nocrack_total + other.nocrack_total,
            crack_correct: self.crack_correct + other.crack_correct,
            nocrack_correct: self.nocrack_correct + other.nocrack_correct,
        }
    }

    pub fn total(&self) -> u64 {
        self.crack_total + self.nocrack_total
    }

    pub fn confusion(&self) -> Confusion {
        Confusion {
            true_positive: self.crack_correct,
            false_negative: self.crack_total - self.crack_correct,
            false_positive: self.nocrack_total - self.nocrack_correct,
            true_negative: self.nocrack_correct,
        }
    }

    pub fn validation_accuracy(&self) -> Result<f64> {
        validation_accuracy(self)
    }
}

/// Percentage of correctly classified samples over both classes.
pub fn validation_accuracy(m: &Metrics) -> Result<f64> {
    if m.total() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok((m.crack_correct + m.nocrack_correct) as f64 / m.total() as f64 * 100.0)
}

impl fmt::Display for Confusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "                 pred crack  pred no-crack")?;
        writeln!(f, "true crack     {:>11}  {:>13}", self.true_positive, self.false_negative)?;
        write!(f, "true no-crack  {:>11}  {:>13}", self.false_positive, self.true_negative)
    }
}
