//! One function per subcommand. Each writes its artifacts under `out` and
//! returns a short human-readable summary.

use std::path::{Path, PathBuf};

use radloc::eval::{
    ablate, evaluate, fusion_variants, modality_variants, stream_variants, table_csv, track, MetricsReport, Variant,
};
use radloc::field::{generate_scenes, orbit_poses, render_views, GeneratorConfig, ModalitySet, SyntheticScene};
use radloc::geometry::{coarse_intrinsics, Intrinsics, Pose};
use radloc::train::{dataset_loss, split_indices, train, Dataset};
use radloc::{Detector32, Error, Result};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Split};
use crate::formats::{
    load_scene, load_scene_dir, loss_csv, pfm_bytes, pose_detections, ppm_bytes, read_table, save_scene, write_file,
    write_json, write_text, PoseDetections,
};
use crate::gradcheck::{self, MiniConfig};
use crate::plot::{bar_chart, line_chart};

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:04}.json")
}

/// Writes `count` generated scenes as `scene_NNNN.json`.
pub fn gen_scenes(seed: u64, count: usize, generator: &GeneratorConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let scenes = generate_scenes(seed, count, generator).map_err(|e| match e {
        Error::Invalid(m) => Error::Config(m),
        other => other,
    })?;
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = out.join(scene_file_name(i));
            save_scene(&path, s)?;
            Ok(path)
        })
        .collect()
}

/// The configured corpus: scene files from `dir`, or generated from the seed.
pub fn corpus(cfg: &RunConfig, dir: Option<&Path>) -> Result<Vec<SyntheticScene>> {
    match dir {
        Some(d) => load_scene_dir(d),
        None => generate_scenes(cfg.seed(), cfg.data.scenes, &cfg.data.generator),
    }
}

pub fn dataset(cfg: &RunConfig, scenes: &[SyntheticScene], split: Split) -> Result<Dataset> {
    let picked: Vec<SyntheticScene> = match split {
        Split::All => scenes.to_vec(),
        Split::Train | Split::Val => {
            let (tr, va) = split_indices(cfg.seed(), scenes.len());
            let idx = if split == Split::Train { tr } else { va };
            idx.into_iter().map(|i| scenes[i].clone()).collect()
        }
    };
    if picked.is_empty() {
        return Err(Error::Config(format!("{split:?} split of {} scenes is empty", scenes.len())));
    }
    Dataset::new(picked, &cfg.views, cfg.sampling)
}

/// Camera `index` of the configured orbit around the scene centre.
pub fn orbit_pose(cfg: &RunConfig, scene: &SyntheticScene, count: usize, index: usize) -> Result<Pose<f64>> {
    let poses = scene_orbit(cfg, scene, count)?;
    poses.get(index).copied().ok_or_else(|| Error::Config(format!("view {index} outside orbit of {count}")))
}

fn scene_orbit(cfg: &RunConfig, scene: &SyntheticScene, count: usize) -> Result<Vec<Pose<f64>>> {
    let c = [0, 1, 2].map(|k| 0.5 * (scene.bounds.min[k] + scene.bounds.max[k]));
    orbit_poses(c, cfg.views.radius, cfg.views.elevation_deg, count, cfg.views.phase_deg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderModality {
    Color,
    Depth,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderArgs {
    pub scene: PathBuf,
    pub view: usize,
    pub modality: RenderModality,
    /// Focal divisor: values above 1 render the coarse view, below 1 zoom in.
    pub delta: f64,
    pub grid: Option<(usize, usize)>,
}

/// Renders one view to `<stem>_color.ppm` and/or `<stem>_depth.pfm`.
pub fn render(cfg: &RunConfig, args: &RenderArgs, out: &Path) -> Result<Vec<PathBuf>> {
    if !(args.delta > 0.0 && args.delta.is_finite()) {
        return Err(Error::Config(format!("--delta {} must be positive", args.delta)));
    }
    let scene = load_scene(&args.scene)?;
    let mut sampling = cfg.sampling;
    if let Some(g) = args.grid {
        sampling.grid = g;
    }
    let fine = Intrinsics::centered(cfg.views.focal, sampling.grid).map_err(config_err)?;
    let intr =
        if args.delta > 1.0 { coarse_intrinsics(&fine, args.delta) } else { fine.with_focal_scale(1.0 / args.delta) }
            .map_err(config_err)?;
    let pose = orbit_pose(cfg, &scene, cfg.views.poses_per_scene, args.view)?;
    let modalities = ModalitySet {
        raw: false,
        color: args.modality != RenderModality::Depth,
        depth: args.modality != RenderModality::Color,
    };
    let views = render_views::<f64>(&scene, &pose, &intr, &sampling, modalities).map_err(config_err)?;
    let stem = args.scene.file_stem().map_or("render".into(), |s| s.to_string_lossy().into_owned());
    let (w, h) = sampling.grid;
    let mut written = vec![];
    if let Some(c) = &views.color {
        let p = out.join(format!("{stem}_color.ppm"));
        write_file(&p, &ppm_bytes(w, h, c))?;
        written.push(p);
    }
    if let Some(d) = &views.depth {
        let p = out.join(format!("{stem}_depth.pfm"));
        write_file(&p, &pfm_bytes(w, h, d))?;
        written.push(p);
    }
    Ok(written)
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Invalid(m) => Error::Config(m),
        other => other,
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history_csv: String,
}

/// Trains on the configured train split and writes `checkpoint/` and
/// `loss.csv`.
pub fn train_cmd(cfg: &RunConfig, scenes_dir: Option<&Path>, out: &Path) -> Result<TrainOutcome> {
    let scenes = corpus(cfg, scenes_dir)?;
    let data = dataset(cfg, &scenes, cfg.data.train_split)?;
    let mut det = Detector32::new(cfg.model.clone(), cfg.sampling.samples_per_ray, cfg.seed())?;
    let report = train(&mut det, &data, &cfg.loss, &cfg.train)?;
    let inputs = data.inputs(&det)?;
    let final_loss = dataset_loss(&det, &data, &inputs, &cfg.loss)?;
    let ckpt = Checkpoint::new(cfg.clone(), det, report.final_loss(), Some(final_loss));
    ckpt.save(&out.join("checkpoint"))?;
    let history_csv = loss_csv(&report.history)?;
    write_text(&out.join("loss.csv"), &history_csv)?;
    Ok(TrainOutcome { checkpoint: ckpt, history_csv })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub label: String,
    /// Mean loss of the checkpoint over the evaluated views.
    pub loss: f64,
    pub metrics: MetricsReport,
}

/// Evaluates a detector on the configured eval split and writes
/// `metrics.csv` and `metrics.json`.
pub fn eval_cmd(cfg: &RunConfig, det: &Detector32, scenes_dir: Option<&Path>, out: &Path) -> Result<EvalOutput> {
    let scenes = corpus(cfg, scenes_dir)?;
    let data = dataset(cfg, &scenes, cfg.data.eval_split)?;
    let metrics = evaluate(det, &data, &cfg.thresholds)?;
    let inputs = data.inputs(det)?;
    let loss = dataset_loss(det, &data, &inputs, &cfg.loss)?;
    let label = det.cfg.streams.label().to_string();
    write_text(&out.join("metrics.csv"), &table_csv([(label.as_str(), &metrics)]))?;
    let output = EvalOutput { label, loss, metrics };
    write_json(&out.join("metrics.json"), &output)?;
    Ok(output)
}

/// Per-view detections for every configured orbit pose of one scene.
pub fn infer_cmd(cfg: &RunConfig, det: &Detector32, scene_path: &Path, out: &Path) -> Result<Vec<PoseDetections>> {
    let scene = load_scene(scene_path)?;
    let poses = scene_orbit(cfg, &scene, cfg.views.poses_per_scene)?;
    let records = detections_along(cfg, det, &scene, scene_path, &poses)?;
    write_json(&out.join("detections.json"), &records)?;
    Ok(records)
}

/// Independent inference along a `steps`-pose orbit.
pub fn track_cmd(
    cfg: &RunConfig,
    det: &Detector32,
    scene_path: &Path,
    steps: usize,
    out: &Path,
) -> Result<Vec<PoseDetections>> {
    if steps == 0 {
        return Err(Error::Config("--steps must be >= 1".into()));
    }
    let scene = load_scene(scene_path)?;
    let poses = scene_orbit(cfg, &scene, steps)?;
    let records = detections_along(cfg, det, &scene, scene_path, &poses)?;
    write_json(&out.join("track.json"), &records)?;
    Ok(records)
}

fn detections_along(
    cfg: &RunConfig,
    det: &Detector32,
    scene: &SyntheticScene,
    scene_path: &Path,
    poses: &[Pose<f64>],
) -> Result<Vec<PoseDetections>> {
    let intr = Intrinsics::centered(cfg.views.focal, cfg.sampling.grid)?;
    let sets = track(det, scene, poses, &intr, &cfg.sampling)?;
    let name = scene_path.file_name().map_or(String::new(), |s| s.to_string_lossy().into_owned());
    Ok(sets
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(i, (s, p))| pose_detections(&name, i, p, s, &scene.class_table))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    Modality,
    Fusion,
    Stream,
}

impl AblationKind {
    pub fn label(self) -> &'static str {
        match self {
            AblationKind::Modality => "modality",
            AblationKind::Fusion => "fusion",
            AblationKind::Stream => "stream",
        }
    }

    pub fn variants(self, cfg: &RunConfig) -> Vec<Variant> {
        match self {
            AblationKind::Modality => modality_variants(&cfg.model),
            AblationKind::Fusion => fusion_variants(&cfg.model),
            AblationKind::Stream => stream_variants(&cfg.model),
        }
    }
}

/// Trains every variant of `kind` and writes `ablation_<kind>.csv`,
/// `ablation_<kind>.json` and one loss CSV per variant.
pub fn ablate_cmd(cfg: &RunConfig, kind: AblationKind, scenes_dir: Option<&Path>, out: &Path) -> Result<String> {
    let scenes = corpus(cfg, scenes_dir)?;
    let train_data = dataset(cfg, &scenes, cfg.data.train_split)?;
    let eval_data = dataset(cfg, &scenes, cfg.data.eval_split)?;
    let rows = ablate::<f32>(&kind.variants(cfg), &train_data, &eval_data, &cfg.loss, &cfg.train)?;
    let table = table_csv(rows.iter().map(|r| (r.label.as_str(), &r.report)));
    write_text(&out.join(format!("ablation_{}.csv", kind.label())), &table)?;
    let reports: Vec<(&str, &MetricsReport)> = rows.iter().map(|r| (r.label.as_str(), &r.report)).collect();
    write_json(&out.join(format!("ablation_{}.json", kind.label())), &reports)?;
    for r in &rows {
        write_text(&out.join(format!("loss_{}_{}.csv", kind.label(), r.label)), &loss_csv(&r.training.history)?)?;
    }
    Ok(table)
}

/// Runs the miniature end-to-end gradient check and writes `gradcheck.txt`.
pub fn gradcheck_cmd(mini: &MiniConfig, out: &Path) -> Result<gradcheck::MiniReport> {
    let report = gradcheck::run(mini)?;
    write_text(&out.join("gradcheck.txt"), &report.render(usize::MAX))?;
    Ok(report)
}

/// Emits SVG charts for loss CSVs (`epoch,loss,lr`) and metrics CSVs
/// (`variant,map_...`). Returns the written paths.
pub fn plot_cmd(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::Config("plot needs at least one CSV".into()));
    }
    let mut written = vec![];
    for path in inputs {
        let (header, rows) = read_table(path)?;
        let stem = path.file_stem().map_or("plot".into(), |s| s.to_string_lossy().into_owned());
        let malformed = |detail: &str| Error::Format { path: path.clone(), detail: detail.into() };
        if header.first().map(String::as_str) == Some("epoch") {
            if header.len() != 3 || header[1] != "loss" || header[2] != "lr" {
                return Err(malformed("loss CSV header must be epoch,loss,lr"));
            }
            let mut pts_loss = vec![];
            let mut pts_lr = vec![];
            for (epoch, vals) in &rows {
                let e: f64 = epoch.parse().map_err(|_| malformed("bad epoch value"))?;
                if vals.len() != 2 {
                    return Err(malformed("loss CSV rows need 3 fields"));
                }
                pts_loss.push((e, vals[0]));
                pts_lr.push((e, vals[1]));
            }
            for (suffix, pts) in [("loss", pts_loss), ("lr", pts_lr)] {
                let svg = line_chart(&format!("{stem} {suffix}"), &pts).ok_or_else(|| malformed("no finite values"))?;
                let p = out.join(format!("{stem}_{suffix}.svg"));
                write_text(&p, &svg)?;
                written.push(p);
            }
        } else {
            let series: Vec<String> = header[1..].to_vec();
            if rows.iter().any(|r| r.1.len() != series.len()) {
                return Err(malformed("ragged metrics CSV"));
            }
            let svg = bar_chart(&format!("{stem} mAP"), &series, &rows).ok_or_else(|| malformed("no finite values"))?;
            let p = out.join(format!("{stem}_map.svg"));
            write_text(&p, &svg)?;
            written.push(p);
        }
    }
    Ok(written)
}
