//! On-disk formats: scene JSON, PPM/PFM images, loss CSV, detection JSON.

use std::fs;
use std::path::{Path, PathBuf};

use radloc::field::{Primitive, PrimitiveKind, SyntheticScene};
use radloc::geometry::{Aabb, Mat3, Pose};
use radloc::model::DetectionSet;
use radloc::train::EpochLog;
use radloc::{Error, Result, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveFile {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    pub size: [f64; 3],
    /// Row-major.
    pub rotation: [[f64; 3]; 3],
    pub color: [f64; 3],
    pub density_amp: f64,
    pub class_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub class_table: Vec<String>,
    pub bounds: BoundsFile,
    pub primitives: Vec<PrimitiveFile>,
}

impl SceneFile {
    pub fn from_scene(s: &SyntheticScene) -> Self {
        Self {
            class_table: s.class_table.clone(),
            bounds: BoundsFile { min: s.bounds.min, max: s.bounds.max },
            primitives: s
                .primitives
                .iter()
                .map(|p| PrimitiveFile {
                    kind: p.kind,
                    center: p.pose.translation,
                    size: p.size,
                    rotation: p.pose.rotation.rows,
                    color: p.color,
                    density_amp: p.density_amp,
                    class_id: p.class_id,
                })
                .collect(),
        }
    }

    pub fn into_scene(self) -> Result<SyntheticScene> {
        let primitives = self
            .primitives
            .into_iter()
            .map(|p| {
                Ok(Primitive {
                    kind: p.kind,
                    pose: Pose::new(Mat3::from_rows(p.rotation), p.center)?,
                    size: p.size,
                    color: p.color,
                    density_amp: p.density_amp,
                    class_id: p.class_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bounds = Aabb { min: self.bounds.min, max: self.bounds.max };
        SyntheticScene::new(primitives, bounds, self.class_table)
    }
}

fn format_err(path: &Path, detail: impl ToString) -> Error {
    Error::Format { path: path.to_path_buf(), detail: detail.to_string() }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn save_scene(path: &Path, scene: &SyntheticScene) -> Result<()> {
    write_json(path, &SceneFile::from_scene(scene))
}

pub fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let file: SceneFile = read_json(path)?;
    file.into_scene().map_err(|e| format_err(path, e))
}

/// Every `*.json` scene in `dir`, sorted by file name.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<SyntheticScene>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format_err(dir, "no scene files"));
    }
    paths.iter().map(|p| load_scene(p)).collect()
}

/// A labelled CSV row: first column, then the numeric fields.
pub type TableRow = (String, Vec<f64>);

/// Binary 8-bit PPM; channel values are clamped to `[0, 1]` and rounded.
pub fn ppm_bytes(width: usize, height: usize, rgb: &[[f64; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for px in rgb {
        for c in px {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Little-endian greyscale PFM. Rows are stored bottom to top as the format
/// prescribes.
pub fn pfm_bytes(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for row in (0..height).rev() {
        for v in &values[row * width..(row + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Parses a PFM written by [`pfm_bytes`] back to top-to-bottom rows.
pub fn parse_pfm(bytes: &[u8]) -> Option<(usize, usize, Vec<f32>)> {
    let mut lines = 0;
    let mut header_end = 0;
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            lines += 1;
            if lines == 3 {
                header_end = i + 1;
                break;
            }
        }
    }
    let header = std::str::from_utf8(&bytes[..header_end]).ok()?;
    let mut parts = header.split_whitespace();
    if parts.next()? != "Pf" {
        return None;
    }
    let w: usize = parts.next()?.parse().ok()?;
    let h: usize = parts.next()?.parse().ok()?;
    let scale: f64 = parts.next()?.parse().ok()?;
    if scale >= 0.0 {
        return None;
    }
    let body = &bytes[header_end..];
    if body.len() != w * h * 4 {
        return None;
    }
    let mut vals = vec![0.0f32; w * h];
    for (k, chunk) in body.chunks(4).enumerate() {
        let (r, c) = (h - 1 - k / w, k % w);
        vals[r * w + c] = f32::from_le_bytes(chunk.try_into().ok()?);
    }
    Some((w, h, vals))
}

pub fn loss_csv(history: &[EpochLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["epoch", "loss", "lr"]).map_err(csv_err)?;
    for e in history {
        w.write_record([e.epoch.to_string(), format!("{:e}", e.loss), format!("{:e}", e.lr)]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(e.to_string())
}

/// Reads a numeric CSV with a header row into `(header, rows)`; the first
/// column may be a text label.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<TableRow>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| format_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = vec![];
    for rec in r.records() {
        let rec = rec.map_err(|e| format_err(path, e))?;
        let label = rec.get(0).unwrap_or_default().to_string();
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| format_err(path, format!("bad number {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((label, vals));
    }
    if header.is_empty() || rows.is_empty() {
        return Err(format_err(path, "CSV has no data rows"));
    }
    Ok((header, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub corners: [[f64; 3]; 8],
    /// Most probable real class.
    pub class_id: usize,
    pub class: String,
    /// Softmax probability of `class`.
    pub score: f64,
    pub no_object: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseDetections {
    pub scene: String,
    pub step: usize,
    pub camera_position: [f64; 3],
    /// Camera-to-world rotation, row-major.
    pub camera_rotation: [[f64; 3]; 3],
    pub detections: Vec<DetectionRecord>,
}

pub fn detection_records<T: Scalar>(set: &DetectionSet<T>, class_table: &[String]) -> Vec<DetectionRecord> {
    (0..set.len())
        .map(|j| {
            let p = set.probabilities(j);
            let c = set.num_classes();
            let (best, score) =
                p[..c]
                    .iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            DetectionRecord {
                corners: set.boxes[j].cast::<f64>().corners,
                class_id: best,
                class: class_table.get(best).cloned().unwrap_or_else(|| best.to_string()),
                score: score.as_f64(),
                no_object: p[c].as_f64(),
            }
        })
        .collect()
}

pub fn pose_detections<T: Scalar>(
    scene: &str,
    step: usize,
    pose: &Pose<f64>,
    set: &DetectionSet<T>,
    class_table: &[String],
) -> PoseDetections {
    PoseDetections {
        scene: scene.to_string(),
        step,
        camera_position: pose.translation,
        camera_rotation: pose.rotation.rows,
        detections: detection_records(set, class_table),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use radloc::field::{generate_scenes, GeneratorConfig};

    #[test]
    fn scene_json_round_trip() {
        let scenes = generate_scenes(5, 3, &GeneratorConfig::default()).unwrap();
        for s in scenes {
            let text = serde_json::to_string(&SceneFile::from_scene(&s)).unwrap();
            let back: SceneFile = serde_json::from_str(&text).unwrap();
            assert_eq!(back.into_scene().unwrap(), s);
        }
    }

    #[test]
    fn ppm_header_and_size() {
        let b = ppm_bytes(3, 2, &[[0.0, 0.5, 1.0]; 6]);
        assert!(b.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(b.len(), 11 + 18);
        assert_eq!(&b[11..14], &[0, 128, 255]);
    }

    #[test]
    fn pfm_round_trip() {
        let vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        let (w, h, back) = parse_pfm(&pfm_bytes(4, 3, &vals)).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, vals.iter().map(|&v| v as f32).collect::<Vec<_>>());
    }

    #[test]
    fn loss_csv_layout() {
        let h = [EpochLog { epoch: 0, loss: 2.5, lr: 1e-6 }];
        assert_eq!(loss_csv(&h).unwrap(), "epoch,loss,lr\n0,2.5e0,1e-6\n");
    }
}
