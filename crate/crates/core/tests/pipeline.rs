mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use marf::config::PipelineConfig;
use marf::pipeline::{read_run_manifest, Pipeline, StageName, StageStatus, Workspace};
use marf::synthetic::{write_dataset, BoxScene, Orbit};
use marf::Error;

fn dataset(dir: &Path) -> PathBuf {
    let mut orbit = Orbit::default();
    orbit.intrinsics = orbit.intrinsics.resized(16, 16);
    write_dataset(&BoxScene::default(), &orbit, &orbit.circle(8), dir).unwrap();
    dir.join("scene.json")
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.log" {
                out.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn config(scene: PathBuf) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.inputs.scene = Some(scene);
    c.train = common::small_config(20);
    c.evaluation.holdout_fraction = 0.25;
    c.bootstrap.replicas = 2;
    c.bootstrap.flythrough_frames = 3;
    c
}

#[test]
fn full_run_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dataset(&dir.path().join("data"));
    let ws = Workspace::open(dir.path().join("ws")).unwrap();
    let pipeline = Pipeline::new(config(scene), ws.clone(), "test").unwrap();
    let stages = [
        StageName::Flythrough,
        StageName::ImportPoses,
        StageName::Train,
        StageName::Render,
        StageName::Bootstrap,
    ];
    let first = pipeline.run(&stages).unwrap();
    let order: Vec<StageName> = first.iter().map(|r| r.stage).collect();
    assert_eq!(
        order,
        [
            StageName::ImportPoses,
            StageName::Train,
            StageName::Render,
            StageName::Bootstrap,
            StageName::Flythrough
        ]
    );
    assert!(first.iter().all(|r| r.status == StageStatus::Ran));
    assert!(ws.checkpoint_path().exists());
    let table = std::fs::read_to_string(ws.psnr_table_path()).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 + 1, "{table}");
    assert_eq!(std::fs::read_to_string(ws.replica_list_path()).unwrap().lines().count(), 2);
    assert!(ws.flythrough_dir().read_dir().unwrap().count() >= 6);

    let before = snapshot(ws.root());
    let second = pipeline.run(&stages).unwrap();
    assert!(second.iter().all(|r| r.status == StageStatus::Skipped));
    assert_eq!(snapshot(ws.root()), before);

    let log = read_run_manifest(ws.manifest_path()).unwrap();
    assert_eq!(log.len(), 10);
    assert!(log[..5].iter().all(|r| r.status == StageStatus::Ran));
    assert!(log[5..].iter().all(|r| r.status == StageStatus::Skipped));
    assert!(log.iter().all(|r| r.command == "test"));
}

#[test]
fn missing_prerequisites_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path().join("ws")).unwrap();
    let pipeline = Pipeline::new(PipelineConfig::default(), ws, "test").unwrap();
    assert!(matches!(pipeline.render(), Err(Error::Prerequisite { .. })));
    assert!(matches!(pipeline.train(), Err(Error::Prerequisite { .. })));
    assert!(matches!(pipeline.flythrough(), Err(Error::Prerequisite { .. })));
    assert!(matches!(pipeline.import_poses(), Err(Error::Config(_))));
}

fn marf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_marf"))
        .args(args)
        .env_remove("MARF_WORKSPACE")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_synth_psnr_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = marf(&["synth", data.to_str().unwrap(), "--views", "3", "--size", "8"]);
    assert!(out.status.success());
    let a = data.join("images").join("view_000.png");
    let b = data.join("images").join("view_001.png");

    let same = marf(&["psnr", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(String::from_utf8_lossy(&same.stdout).trim(), "inf");
    let diff = marf(&["psnr", a.to_str().unwrap(), b.to_str().unwrap()]);
    let db: f64 = String::from_utf8_lossy(&diff.stdout).trim().parse().unwrap();
    assert!(db.is_finite() && db > 0.0);

    assert_eq!(marf(&["train"]).status.code(), Some(1));
    let ws = dir.path().join("ws");
    assert_eq!(marf(&["render", "--workspace", ws.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(marf(&["train", "--budget", "soon"]).status.code(), Some(2));

    let corrupt = ws.join("train");
    std::fs::create_dir_all(&corrupt).unwrap();
    std::fs::write(corrupt.join("final.marf"), b"junk").unwrap();
    let scene = data.join("scene.json");
    assert!(marf(&["import-poses", "--scene", scene.to_str().unwrap(), "--workspace", ws.to_str().unwrap()])
        .status
        .success());
    std::fs::write(corrupt.join("split.txt"), "train\t0 1\nheldout\t2\n").unwrap();
    let out = marf(&["render", "--workspace", ws.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
