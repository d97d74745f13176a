mod common;

use marf::camera::Aabb;
use marf::field::RadianceField;
use marf::train::{
    evaluate_views, load_checkpoint, render_views, save_checkpoint, train, Checkpoint, TrainingSet,
};

use common::{small_config, small_scene};

#[test]
fn training_beats_the_untrained_field() {
    let views = small_scene(8, 32);
    let aabb = Aabb::unit();
    let config = small_config(2000);
    let data = TrainingSet::from_views(&views, &aabb).unwrap();
    let untrained = RadianceField::<f32>::new(config.field, config.seed).unwrap();
    let (_, before) = evaluate_views(&untrained, &views, &aabb, &config.render).unwrap();
    let out = train(&data, &config, &mut |_| Ok(())).unwrap();
    assert_eq!(out.steps, 2000);
    let (_, after) = evaluate_views(&out.field, &views, &aabb, &config.render).unwrap();
    assert!(after >= before + 5.0, "PSNR {before:.2} -> {after:.2} dB");
}

#[test]
fn deterministic_runs_repeat_exactly() {
    let views = small_scene(4, 16);
    let aabb = Aabb::unit();
    let config = small_config(30);
    let data = TrainingSet::from_views(&views, &aabb).unwrap();
    let a = train(&data, &config, &mut |_| Ok(())).unwrap();
    let b = train(&data, &config, &mut |_| Ok(())).unwrap();
    assert_eq!(a.field, b.field);
    let c = train(&data, &marf::train::TrainConfig { seed: 1, ..config }, &mut |_| Ok(())).unwrap();
    assert_ne!(a.field, c.field);
}

#[test]
fn checkpoint_round_trip_renders_identically() {
    let views = small_scene(4, 16);
    let aabb = Aabb::unit();
    let config = small_config(20);
    let data = TrainingSet::from_views(&views, &aabb).unwrap();
    let out = train(&data, &config, &mut |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.marf");
    let ckpt = Checkpoint {
        config: config.clone(),
        step: out.steps,
        psnr: out.running_psnr,
        field: out.field,
    };
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.to_bytes(), ckpt.to_bytes());
    let cams: Vec<_> = views.iter().map(|v| (v.0, v.1)).collect();
    let a = render_views(&ckpt.field, &cams, &aabb, &config.render).unwrap();
    let b = render_views(&loaded.field, &cams, &aabb, &config.render).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(1);
    let field = RadianceField::<f32>::new(config.field, 0).unwrap();
    let ckpt = Checkpoint {
        config,
        step: 0,
        psnr: f64::NAN,
        field,
    };
    let mut bytes = ckpt.to_bytes();
    let path = dir.path().join("bad.marf");
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn snapshots_fire_in_order() {
    let views = small_scene(4, 16);
    let aabb = Aabb::unit();
    let config = marf::train::TrainConfig {
        deterministic: false,
        max_seconds: 1.5,
        max_steps: u64::MAX / 2,
        snapshot_seconds: vec![0.2, 1.0],
        ..small_config(0)
    };
    let data = TrainingSet::from_views(&views, &aabb).unwrap();
    let mut seen = Vec::new();
    train(&data, &config, &mut |s| {
        seen.push((s.at_seconds, s.step));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0.2, 1.0]);
    assert!(seen[0].1 <= seen[1].1);
}
