//! End-to-end finite-difference check of the set-prediction loss.

use radloc::autodiff::{grad_check, GradCheckReport};
use radloc::field::{generate_scenes, GeneratorConfig, SamplingConfig};
use radloc::geometry::Intrinsics;
use radloc::matching::{hungarian_loss, LossConfig};
use radloc::model::{FusionKind, ModelConfig, StreamMode};
use radloc::train::{Dataset, ViewConfig};
use radloc::{Detector64, Error, Result};

/// Miniature end-to-end setting for the gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniConfig {
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    pub objects: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Scales the backward rule of the named op; test fixture only.
    pub corrupt: Option<(String, f64)>,
}

impl Default for MiniConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                d_model: 16,
                heads: 2,
                enc_layers_fine: 1,
                enc_layers_coarse: 1,
                dec_layers: 1,
                queries: 4,
                ffn_mult: 2,
                fusion: FusionKind::Attention,
                streams: StreamMode::Fused,
                ..ModelConfig::default()
            },
            sampling: SamplingConfig { grid: (6, 6), samples_per_ray: 8, ..SamplingConfig::default() },
            objects: 2,
            seed: 0,
            step: 1e-6,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MiniReport {
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl MiniReport {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error < self.tolerance
    }

    /// Verdict line followed by the `top` worst parameters.
    pub fn render(&self, top: usize) -> String {
        let r = &self.report;
        let mut out = format!(
            "{} max relative error {:.3e} (tolerance {:.0e}, {} entries)\n",
            if self.passed() { "PASS" } else { "FAIL" },
            r.max_relative_error,
            self.tolerance,
            r.entries_checked
        );
        for p in r.per_param.iter().take(top) {
            out += &format!(
                "  {:<32} {:.3e}  at [{}] analytic {:+.6e} numeric {:+.6e}\n",
                p.name, p.max_error, p.worst_index, p.analytic, p.numeric
            );
        }
        out
    }
}

/// Builds an fp64 detector, one view of a generated scene with exactly
/// `objects` primitives, and checks every parameter entry.
pub fn run(cfg: &MiniConfig) -> Result<MiniReport> {
    let generator =
        GeneratorConfig { min_objects: cfg.objects, max_objects: cfg.objects, ..GeneratorConfig::default() };
    let scenes = generate_scenes(cfg.seed, 1, &generator)?;
    let data =
        Dataset::new(scenes, &ViewConfig { poses_per_scene: 1, focal: 6.0, ..ViewConfig::default() }, cfg.sampling)?;
    let det = Detector64::new(cfg.model.clone(), cfg.sampling.samples_per_ray, cfg.seed)?;
    let intr: &Intrinsics = &data.intrinsics;
    let view = &data.views[0];
    let inputs = det.inputs(&data.scenes[view.scene], &view.pose, intr, &data.sampling)?;
    let gts = data.ground_truth(0).to_vec();
    let loss = LossConfig::default();
    let report = grad_check(
        &det.params,
        |t, ps| {
            if let Some((op, f)) = &cfg.corrupt {
                t.corrupt_backward(op, *f);
            }
            let preds = det.forward_with(t, ps, &inputs, det.cfg.streams)?;
            Ok(hungarian_loss(t, preds, &gts, &loss)?.0)
        },
        cfg.step,
    )?;
    if !report.max_relative_error.is_finite() {
        return Err(Error::NonFinite("gradient check error".into()));
    }
    Ok(MiniReport { report, tolerance: cfg.tolerance })
}
