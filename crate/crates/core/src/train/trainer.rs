use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape};
use crate::error::{Error, Result};
use crate::matching::{hungarian_loss, LossConfig};
use crate::model::{Detector, StreamInputs};
use crate::scalar::Scalar;
use crate::seed::rng_for;
use crate::train::data::Dataset;
use crate::train::optim::{clip_grad_norm, AdamW};
use crate::train::schedule::{lr_at, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-view loss over the epoch.
    pub loss: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|e| e.loss)
    }
}

/// Loss and parameter gradients for one view.
pub fn view_gradients<T: Scalar>(
    detector: &Detector<T>,
    inputs: &StreamInputs<T>,
    gts: &[crate::geometry::LabeledBox<f64>],
    loss_cfg: &LossConfig,
) -> Result<(f64, Gradients<T>)> {
    let mut t = Tape::new();
    let preds = detector.forward_tokens(&mut t, inputs)?;
    let (loss, _) = hungarian_loss(&mut t, preds, gts, loss_cfg)?;
    let value = t.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss = {value}")));
    }
    Ok((value, t.param_gradients(loss, &detector.params)?))
}

/// Mean loss over all views without updating anything.
pub fn dataset_loss<T: Scalar>(
    detector: &Detector<T>,
    data: &Dataset,
    inputs: &[StreamInputs<T>],
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let losses = (0..data.len())
        .into_par_iter()
        .map(|i| view_gradients(detector, &inputs[i], data.ground_truth(i), loss_cfg).map(|r| r.0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains `detector` in place. Views within a batch are processed in
/// parallel and their gradients summed in batch order, so the result does
/// not depend on thread scheduling.
pub fn train<T: Scalar>(
    detector: &mut Detector<T>,
    data: &Dataset,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set has no views".into()));
    }
    let j = detector.cfg.queries;
    if let Some(s) = data.scenes.iter().find(|s| s.gt.len() > j) {
        return Err(Error::Invalid(format!("scene with {} objects exceeds {j} queries", s.gt.len())));
    }
    let inputs = data.inputs(detector)?;
    let mut opt = AdamW::new(&detector.params, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let batches = data.len().div_ceil(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &format!("shuffle/{epoch}")));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let det: &Detector<T> = detector;
            let results = batch
                .par_iter()
                .map(|&i| {
                    view_gradients(det, &inputs[i], data.ground_truth(i), loss_cfg).map_err(|e| {
                        let v = &data.views[i];
                        Error::NonFinite(format!(
                            "epoch {epoch}, batch {b}, view {i} (scene {}, camera at {:?}): {e}",
                            v.scene, v.pose.translation
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total: Option<Gradients<T>> = None;
            for (loss, g) in &results {
                epoch_loss += loss;
                match total.as_mut() {
                    Some(t) => t.merge(g),
                    None => total = Some(g.clone()),
                }
            }
            let mut grads = total.expect("batches are non-empty");
            grads.scale(T::of(1.0 / batch.len() as f64));

            detector.params.zero_grad();
            grads.accumulate_into(&mut detector.params);
            clip_grad_norm(&mut detector.params, cfg.grad_clip);
            let lr = lr_at(epoch as f64 + b as f64 / batches as f64, cfg)?;
            opt.step(&mut detector.params, lr);
        }
        let log = EpochLog { epoch, loss: epoch_loss / data.len() as f64, lr: lr_at(epoch as f64, cfg)? };
        log::info!("epoch {:>4}  loss {:.6}  lr {:.3e}", log.epoch, log.loss, log.lr);
        history.push(log);
    }
    Ok(TrainReport { history, steps: opt.steps() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{generate_scenes, GeneratorConfig, SamplingConfig};
    use crate::model::{ModelConfig, StreamMode};
    use crate::train::data::ViewConfig;

    fn tiny() -> (Detector<f32>, Dataset) {
        let cfg = ModelConfig {
            d_model: 16,
            heads: 2,
            enc_layers_fine: 1,
            enc_layers_coarse: 1,
            dec_layers: 1,
            queries: 4,
            streams: StreamMode::Fused,
            ..ModelConfig::default()
        };
        let sampling = SamplingConfig { grid: (6, 6), samples_per_ray: 8, ..SamplingConfig::default() };
        let views = ViewConfig { poses_per_scene: 2, focal: 5.0, ..ViewConfig::default() };
        let scenes = generate_scenes(2, 2, &GeneratorConfig::default()).unwrap();
        (Detector::new(cfg, 8, 1).unwrap(), Dataset::new(scenes, &views, sampling).unwrap())
    }

    #[test]
    fn smoke_run_is_finite_and_reproducible() {
        let cfg = TrainConfig { epochs: 3, warmup_epochs: 1, batch_size: 3, ..TrainConfig::default() };
        let (mut a, data) = tiny();
        let mut b = a.clone();
        let ra = train(&mut a, &data, &LossConfig::default(), &cfg).unwrap();
        let rb = train(&mut b, &data, &LossConfig::default(), &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.steps, 6);
        assert!(ra.history.iter().all(|e| e.loss.is_finite()));
        for (p, q) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn loss_decreases_on_a_tiny_problem() {
        let cfg = TrainConfig { epochs: 30, warmup_epochs: 2, batch_size: 4, base_lr: 3e-3, ..TrainConfig::default() };
        let (mut det, data) = tiny();
        let r = train(&mut det, &data, &LossConfig::default(), &cfg).unwrap();
        let first = r.history[0].loss;
        let last = r.final_loss().unwrap();
        assert!(last < 0.8 * first, "{first} -> {last}");
    }
}
