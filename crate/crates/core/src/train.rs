//! Mini-batch training loop shared by every training stage.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use rand::seq::SliceRandom;

use crate::augment::{augment, AugmentationConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::{binarize_targets, LossConfig};
use crate::model::SegmentationModel;
use crate::optim::Adam;
use crate::seed::rng_for;
use crate::types::TrainingConfig;

const SHUFFLE_TAG: u64 = 0x5348_5546;
const AUGMENT_TAG: u64 = 0x4155_474d;

/// One image with its training target (ground truth or pseudo mask).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: Grid,
    pub target: Grid,
}

pub fn loss_config(cfg: &TrainingConfig) -> LossConfig {
    LossConfig {
        dice_weight: cfg.loss_weights.dice,
        bce_weight: cfg.loss_weights.bce,
        ..LossConfig::default()
    }
}

/// Loss value and gradient for one predicted probability grid.
///
/// Single fused pass equivalent to
/// [`combined_loss_grad`](crate::losses::combined_loss_grad); hard 0/1
/// targets need only one logarithm per pixel.
pub fn grid_loss(target: &Grid, probs: &Grid, config: &LossConfig) -> Result<(f64, Grid)> {
    target.ensure_same_dims(probs)?;
    let t = target.as_slice();
    let q = probs.as_slice();
    let lo = config.bce_clamp as f32;
    let hi = 1.0 - lo;
    let mut inter = 0.0f64;
    let mut sum = 0.0f64;
    let mut bce = 0.0f64;
    for (&p, &raw) in t.iter().zip(q) {
        inter += (p * raw) as f64;
        sum += (p + raw) as f64;
        let c = raw.clamp(lo, hi);
        let term = if p == 1.0 {
            Float::ln(c)
        } else if p == 0.0 {
            Float::ln(1.0 - c)
        } else {
            p * Float::ln(c) + (1.0 - p) * Float::ln(1.0 - c)
        };
        bce -= term as f64;
    }
    let n = t.len() as f64;
    let eps = config.epsilon;
    let num = 2.0 * inter + eps;
    let den = sum + eps;
    let dice = 1.0 - num / den;
    let value = config.dice_weight * dice + config.bce_weight * bce / n;

    let d_const = (config.dice_weight * num / (den * den)) as f32;
    let d_slope = (config.dice_weight * 2.0 / den) as f32;
    let b_scale = (config.bce_weight / n) as f32;
    let grad = t
        .iter()
        .zip(q)
        .map(|(&p, &raw)| {
            let dice_g = d_const - d_slope * p;
            let bce_g = if raw < lo || raw > hi {
                0.0
            } else {
                (1.0 - p) / (1.0 - raw) - p / raw
            };
            dice_g + b_scale * bce_g
        })
        .collect();
    Ok((value, Grid::new(target.width(), target.height(), grad)?))
}

/// Trains `model` for `epochs` passes over `examples` with Adam and the
/// weighted Dice + BCE loss. Returns the mean loss of every epoch.
///
/// A batch size larger than the dataset yields one batch per epoch. When
/// `augmentation` is given and `cfg.augment` is set, every example is
/// augmented online with a seed derived from (seed, index, epoch).
pub fn fit(
    model: &mut dyn SegmentationModel,
    examples: &[Example],
    epochs: usize,
    cfg: &TrainingConfig,
    augmentation: Option<&AugmentationConfig>,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if let Some(a) = augmentation {
        a.validate()?;
    }
    let loss_cfg = loss_config(cfg);
    let targets: Vec<Grid> = if cfg.binarize_pseudo_targets {
        examples
            .iter()
            .map(|e| {
                Grid::new(
                    e.target.width(),
                    e.target.height(),
                    binarize_targets(e.target.as_slice()),
                )
            })
            .collect::<Result<_>>()?
    } else {
        examples.iter().map(|e| e.target.clone()).collect()
    };
    let aug = augmentation.filter(|_| cfg.augment);
    let mut opt = Adam::new(cfg.learning_rate, model.parameters());
    let mut grads: Vec<Vec<f32>> = model
        .parameters()
        .iter()
        .map(|p| vec![0.0; p.len()])
        .collect();
    let mut curve = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_TAG, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.fill(0.0);
            }
            for &i in batch {
                let value = match aug {
                    Some(a) => {
                        let mut rng =
                            rng_for(cfg.seed ^ a.seed, &[AUGMENT_TAG, i as u64, epoch as u64]);
                        let (img, tgt, _) = augment(&examples[i].image, &targets[i], a, &mut rng)?;
                        model.accumulate_gradients(
                            &img,
                            &mut |p| grid_loss(&tgt, p, &loss_cfg),
                            &mut grads,
                        )?
                    }
                    None => model.accumulate_gradients(
                        &examples[i].image,
                        &mut |p| grid_loss(&targets[i], p, &loss_cfg),
                        &mut grads,
                    )?,
                };
                total += value;
            }
            let scale = 1.0 / batch.len() as f32;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            opt.step(model.parameters_mut(), &grads);
        }
        let mean = total / examples.len() as f64;
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::combined_loss_grad;
    use crate::model::{build_model, ArchSpec, MINI_DILATED};

    #[test]
    fn fused_loss_matches_reference() {
        let target = Grid::from_fn(16, 16, |x, y| ((x + 2 * y) % 3 == 0) as u8 as f32);
        let soft = Grid::from_fn(16, 16, |x, y| ((x * 7 + y * 3) % 10) as f32 / 10.0);
        let probs = Grid::from_fn(16, 16, |x, y| {
            0.02 + 0.96 * (((x * 5 + y * 11) % 17) as f32 / 16.0)
        });
        let cfg = LossConfig::default();
        for t in [&target, &soft] {
            let (v, g) = grid_loss(t, &probs, &cfg).unwrap();
            let tt: Vec<f64> = t.as_slice().iter().map(|&x| x as f64).collect();
            let pp: Vec<f64> = probs.as_slice().iter().map(|&x| x as f64).collect();
            let (rv, rg) = combined_loss_grad(&tt, &pp, &cfg).unwrap();
            assert!((v - rv).abs() < 1e-5, "{v} vs {rv}");
            for (a, b) in g.as_slice().iter().zip(&rg) {
                assert!((*a as f64 - b).abs() < 1e-4 * b.abs().max(1e-2));
            }
        }
    }

    #[test]
    fn oversized_batch_trains_as_one_batch() {
        let mut model = build_model(
            MINI_DILATED,
            &ArchSpec {
                base_channels: 2,
                stem_pool: 8,
                binary_output: false,
            },
            3,
        )
        .unwrap();
        let examples = vec![
            Example {
                image: Grid::filled(384, 384, 0.2),
                target: Grid::filled(384, 384, 0.0),
            };
            2
        ];
        let cfg = TrainingConfig {
            batch_size: 16,
            epochs: 2,
            ..TrainingConfig::default()
        };
        let curve = fit(model.as_mut(), &examples, 2, &cfg, None, &mut |_, _| {}).unwrap();
        assert_eq!(curve.len(), 2);
    }
}
