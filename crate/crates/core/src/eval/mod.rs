//! Detection metrics, ablation harness and trajectory inference.

mod ablate;
mod metrics;

pub use ablate::{
    ablate, fusion_variants, modality_variants, stream_variants, table_csv, track, AblationRow, Variant, CSV_HEADER,
};
pub use metrics::{average_precision, detect_all, evaluate, evaluate_detections, ClassAp, MetricsReport, THRESHOLDS};
