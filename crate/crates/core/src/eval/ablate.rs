use std::fmt::Write;

use crate::error::{Error, Result};
use crate::eval::metrics::{evaluate, MetricsReport, THRESHOLDS};
use crate::field::{ModalitySet, SamplingConfig, SyntheticScene};
use crate::geometry::{Intrinsics, Pose};
use crate::matching::LossConfig;
use crate::model::{DetectionSet, Detector, FusionKind, ModelConfig, StreamMode};
use crate::scalar::Scalar;
use crate::train::{train, Dataset, TrainConfig, TrainReport};

pub const CSV_HEADER: &str = "variant,map_0.1,map_0.5,map_0.9,average";

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub model: ModelConfig,
}

/// One row per non-empty subset of {raw, color, depth}.
pub fn modality_variants(base: &ModelConfig) -> Vec<Variant> {
    ModalitySet::all_combinations()
        .into_iter()
        .map(|m| Variant { label: m.label(), model: ModelConfig { modality: m, ..base.clone() } })
        .collect()
}

pub fn fusion_variants(base: &ModelConfig) -> Vec<Variant> {
    [(FusionKind::Mlp, "mlp"), (FusionKind::Attention, "attention")]
        .into_iter()
        .map(|(fusion, label)| Variant {
            label: label.into(),
            model: ModelConfig { fusion, streams: StreamMode::Fused, ..base.clone() },
        })
        .collect()
}

pub fn stream_variants(base: &ModelConfig) -> Vec<Variant> {
    [StreamMode::FineOnly, StreamMode::CoarseOnly, StreamMode::Fused]
        .into_iter()
        .map(|streams| Variant { label: streams.label().into(), model: ModelConfig { streams, ..base.clone() } })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub report: MetricsReport,
    pub training: TrainReport,
}

/// Trains and evaluates every variant from the same seed and data.
pub fn ablate<T: Scalar>(
    variants: &[Variant],
    train_data: &Dataset,
    eval_data: &Dataset,
    loss: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Invalid("no ablation variants given".into()));
    }
    variants
        .iter()
        .map(|v| {
            log::info!("ablation variant {}", v.label);
            let samples = train_data.sampling.samples_per_ray;
            let mut det = Detector::<T>::new(v.model.clone(), samples, train_cfg.seed)?;
            let training = train(&mut det, train_data, loss, train_cfg)?;
            let mut report = evaluate(&det, eval_data, &THRESHOLDS)?;
            report.loss_curve = training.history.clone();
            Ok(AblationRow { label: v.label.clone(), report, training })
        })
        .collect()
}

/// One CSV line per labelled report, values as fractions.
pub fn table_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label}");
        for v in r.map.iter().chain(std::iter::once(&r.average)) {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

/// Independent per-pose inference over a camera trajectory.
pub fn track<T: Scalar>(
    detector: &Detector<T>,
    scene: &SyntheticScene,
    poses: &[Pose<f64>],
    intrinsics: &Intrinsics,
    sampling: &SamplingConfig,
) -> Result<Vec<DetectionSet<T>>> {
    poses.iter().map(|p| detector.detect(scene, p, intrinsics, sampling)).collect()
}
