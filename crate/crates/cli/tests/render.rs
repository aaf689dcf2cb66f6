use std::path::{Path, PathBuf};

use radloc::field::{default_bounds, default_class_table, Primitive, PrimitiveKind, SyntheticScene};
use radloc::geometry::{Mat3, Pose};
use radloc_cli::commands::{render, RenderArgs, RenderModality};
use radloc_cli::config::RunConfig;
use radloc_cli::formats::{parse_pfm, save_scene};

fn cube_scene() -> SyntheticScene {
    let cube = Primitive {
        kind: PrimitiveKind::Box,
        pose: Pose::new(Mat3::identity(), [0.0; 3]).unwrap(),
        size: [0.4; 3],
        color: [0.9, 0.6, 0.2],
        density_amp: 50.0,
        class_id: 0,
    };
    SyntheticScene::new(vec![cube], default_bounds(), default_class_table()).unwrap()
}

fn write_scene(dir: &Path, name: &str, scene: &SyntheticScene) -> PathBuf {
    let p = dir.join(name);
    save_scene(&p, scene).unwrap();
    p
}

fn config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.views.focal = 60.0;
    cfg.sampling.samples_per_ray = 64;
    cfg
}

fn args(scene: PathBuf, modality: RenderModality, delta: f64) -> RenderArgs {
    RenderArgs { scene, view: 0, modality, delta, grid: Some((64, 48)) }
}

/// Pixel payload after the `P6\n<W> <H>\n255\n` header.
fn ppm_pixels(bytes: &[u8], w: usize, h: usize) -> &[u8] {
    let header = format!("P6\n{w} {h}\n255\n");
    assert!(bytes.starts_with(header.as_bytes()), "bad header");
    let body = &bytes[header.len()..];
    assert_eq!(body.len(), w * h * 3);
    body
}

#[test]
fn ppm_header_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), "cube.json", &cube_scene());
    let out = render(&config(), &args(scene, RenderModality::Color, 1.0), dir.path()).unwrap();
    assert_eq!(out.len(), 1);
    let bytes = std::fs::read(&out[0]).unwrap();
    assert!(bytes.starts_with(b"P6\n64 48\n255\n"));
    ppm_pixels(&bytes, 64, 48);
}

#[test]
fn empty_scene_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let empty = SyntheticScene::new(vec![], default_bounds(), default_class_table()).unwrap();
    let scene = write_scene(dir.path(), "empty.json", &empty);
    let out = render(&config(), &args(scene, RenderModality::Both, 1.0), dir.path()).unwrap();
    let bytes = std::fs::read(&out[0]).unwrap();
    assert!(ppm_pixels(&bytes, 64, 48).iter().all(|&b| b == 0));
    let (w, h, depth) = parse_pfm(&std::fs::read(&out[1]).unwrap()).unwrap();
    assert_eq!((w, h), (64, 48));
    assert!(depth.iter().all(|&d| d == 0.0));
}

#[test]
fn silhouette_shrinks_as_focal_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), "cube.json", &cube_scene());
    let areas: Vec<usize> = [0.67, 1.0, 1.5, 2.0]
        .iter()
        .map(|&delta| {
            let sub = dir.path().join(format!("d{delta}"));
            let out = render(&config(), &args(scene.clone(), RenderModality::Color, delta), &sub).unwrap();
            let bytes = std::fs::read(&out[0]).unwrap();
            ppm_pixels(&bytes, 64, 48).chunks(3).filter(|p| p.iter().any(|&c| c > 0)).count()
        })
        .collect();
    assert!(areas[0] > 0, "{areas:?}");
    assert!(areas.windows(2).all(|w| w[0] > w[1]), "{areas:?}");
}

#[test]
fn depth_pfm_matches_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), "cube.json", &cube_scene());
    let out = render(&config(), &args(scene, RenderModality::Depth, 1.0), dir.path()).unwrap();
    assert_eq!(out.len(), 1);
    let (_, _, depth) = parse_pfm(&std::fs::read(&out[0]).unwrap()).unwrap();
    // the camera orbits at radius 4 around the cube centre
    let hit: Vec<f32> = depth.into_iter().filter(|&d| d > 0.0).collect();
    assert!(!hit.is_empty());
    assert!(hit.iter().all(|&d| d > 3.0 && d < 4.5), "{hit:?}");
}

#[test]
fn bad_flags_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), "cube.json", &cube_scene());
    let err = render(&config(), &args(scene.clone(), RenderModality::Color, 0.0), dir.path()).unwrap_err();
    assert!(matches!(err, radloc::Error::Config(_)));
    let mut a = args(scene, RenderModality::Color, 1.0);
    a.view = 5;
    assert!(matches!(render(&config(), &a, dir.path()), Err(radloc::Error::Config(_))));
    let missing = args(dir.path().join("nope.json"), RenderModality::Color, 1.0);
    assert!(matches!(render(&config(), &missing, dir.path()), Err(radloc::Error::Io { .. })));
}
