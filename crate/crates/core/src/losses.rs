//! Dice and binary cross-entropy losses over probability grids, with their
//! analytic gradients with respect to the prediction.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Smoothing term added to the Dice numerator and denominator.
    pub epsilon: f64,
    pub dice_weight: f64,
    pub bce_weight: f64,
    /// Predictions are clamped to `[bce_clamp, 1 - bce_clamp]` before logs.
    pub bce_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            dice_weight: 1.0,
            bce_weight: 1.0,
            bce_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.dice_weight >= 0.0 && self.bce_weight >= 0.0) {
            return Err(Error::InvalidConfig(
                "loss weights must be nonnegative".into(),
            ));
        }
        if !(self.bce_clamp > 0.0 && self.bce_clamp < 0.5) {
            return Err(Error::InvalidConfig(
                "bce_clamp must lie in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

fn check_shapes<T>(target: &[T], prediction: &[T]) -> Result<()> {
    if target.len() != prediction.len() {
        return Err(Error::ShapeMismatch {
            expected: (target.len(), 1),
            found: (prediction.len(), 1),
        });
    }
    if target.is_empty() {
        return Err(Error::Empty("loss input"));
    }
    Ok(())
}

#[inline]
fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("float conversion")
}

fn dice_terms<T: Float>(target: &[T], prediction: &[T]) -> (T, T) {
    let mut inter = T::zero();
    let mut sum = T::zero();
    for (&p, &q) in target.iter().zip(prediction) {
        inter = inter + p * q;
        sum = sum + p + q;
    }
    (inter, sum)
}

/// `1 - (2 sum(p q) + eps) / (sum(p) + sum(q) + eps)`.
pub fn dice_loss<T: Float>(target: &[T], prediction: &[T], config: &LossConfig) -> Result<T> {
    check_shapes(target, prediction)?;
    let eps = cast::<T>(config.epsilon);
    let (inter, sum) = dice_terms(target, prediction);
    Ok(T::one() - (cast::<T>(2.0) * inter + eps) / (sum + eps))
}

pub fn dice_loss_grad<T: Float>(
    target: &[T],
    prediction: &[T],
    config: &LossConfig,
) -> Result<(T, Vec<T>)> {
    check_shapes(target, prediction)?;
    let eps = cast::<T>(config.epsilon);
    let two = cast::<T>(2.0);
    let (inter, sum) = dice_terms(target, prediction);
    let num = two * inter + eps;
    let den = sum + eps;
    let den2 = den * den;
    let grad = target
        .iter()
        .map(|&p| (num - two * p * den) / den2)
        .collect();
    Ok((T::one() - num / den, grad))
}

/// Mean pixel-wise binary cross-entropy with natural logarithms.
pub fn bce_loss<T: Float>(target: &[T], prediction: &[T], config: &LossConfig) -> Result<T> {
    check_shapes(target, prediction)?;
    let lo = cast::<T>(config.bce_clamp);
    let hi = T::one() - lo;
    let mut acc = T::zero();
    for (&p, &q) in target.iter().zip(prediction) {
        let q = q.max(lo).min(hi);
        acc = acc - (p * q.ln() + (T::one() - p) * (T::one() - q).ln());
    }
    Ok(acc / cast::<T>(target.len() as f64))
}

pub fn bce_loss_grad<T: Float>(
    target: &[T],
    prediction: &[T],
    config: &LossConfig,
) -> Result<(T, Vec<T>)> {
    check_shapes(target, prediction)?;
    let lo = cast::<T>(config.bce_clamp);
    let hi = T::one() - lo;
    let n = cast::<T>(target.len() as f64);
    let mut acc = T::zero();
    let mut grad = Vec::with_capacity(target.len());
    for (&p, &raw) in target.iter().zip(prediction) {
        let q = raw.max(lo).min(hi);
        acc = acc - (p * q.ln() + (T::one() - p) * (T::one() - q).ln());
        // clamped inputs do not move the loss
        grad.push(if raw < lo || raw > hi {
            T::zero()
        } else {
            ((T::one() - p) / (T::one() - q) - p / q) / n
        });
    }
    Ok((acc / n, grad))
}

pub fn combined_loss<T: Float>(target: &[T], prediction: &[T], config: &LossConfig) -> Result<T> {
    let dice = dice_loss(target, prediction, config)?;
    let bce = bce_loss(target, prediction, config)?;
    Ok(cast::<T>(config.dice_weight) * dice + cast::<T>(config.bce_weight) * bce)
}

/// Combined loss and its gradient with respect to `prediction`.
pub fn combined_loss_grad<T: Float>(
    target: &[T],
    prediction: &[T],
    config: &LossConfig,
) -> Result<(T, Vec<T>)> {
    let wd = cast::<T>(config.dice_weight);
    let wb = cast::<T>(config.bce_weight);
    let (dice, gd) = dice_loss_grad(target, prediction, config)?;
    let (bce, gb) = bce_loss_grad(target, prediction, config)?;
    let grad = gd.iter().zip(&gb).map(|(&a, &b)| wd * a + wb * b).collect();
    Ok((wd * dice + wb * bce, grad))
}

/// Hard 0/1 targets from a soft mask (strictly above 0.5 is target).
pub fn binarize_targets(values: &[f32]) -> Vec<f32> {
    values
        .iter()
        .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
        .collect()
}
