//! Fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod corpus;

use marf::camera::{Aabb, Intrinsics, Pose};
use marf::image::ImageBuffer;
use marf::synthetic::{BoxScene, Orbit, REFERENCE_SAMPLES};

pub type View = (Intrinsics, Pose, ImageBuffer);

/// Reference renders of the box scene from `poses`.
pub fn reference_views(scene: &BoxScene, orbit: &Orbit, poses: &[Pose]) -> Vec<View> {
    poses
        .iter()
        .map(|p| {
            let img = scene.render(&orbit.intrinsics, p, &Aabb::unit(), REFERENCE_SAMPLES, [0.0; 3]);
            (orbit.intrinsics, *p, img)
        })
        .collect()
}

/// 24 training views on the orbit circle and 4 held-out views halfway
/// between circle positions.
pub fn circle_scene() -> (Vec<View>, Vec<View>) {
    let scene = BoxScene::default();
    let orbit = Orbit::default();
    let train = reference_views(&scene, &orbit, &orbit.circle(24));
    let held = reference_views(&scene, &orbit, &orbit.between(24, &[0, 6, 12, 18]));
    (train, held)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// A field and schedule small enough for tests that train in seconds.
pub fn small_config(steps: u64) -> marf::train::TrainConfig {
    use marf::field::FieldConfig;
    use marf::hashgrid::HashGridConfig;
    use marf::render::RenderOptions;
    marf::train::TrainConfig {
        max_steps: steps,
        max_seconds: f64::INFINITY,
        deterministic: true,
        threads: 1,
        batch_rays: 256,
        snapshot_seconds: Vec::new(),
        render: RenderOptions {
            samples: 32,
            ..RenderOptions::default()
        },
        field: FieldConfig {
            grid: HashGridConfig {
                levels: 8,
                max_resolution: 128,
                table_size: 1 << 12,
                ..HashGridConfig::default()
            },
            hidden_width: 32,
            ..FieldConfig::default()
        },
        ..marf::train::TrainConfig::default()
    }
}

/// `count` views of the box scene at `size` x `size` pixels.
pub fn small_scene(count: usize, size: u32) -> Vec<View> {
    let scene = BoxScene::default();
    let mut orbit = Orbit::default();
    orbit.intrinsics = orbit.intrinsics.resized(size, size);
    reference_views(&scene, &orbit, &orbit.circle(count))
}
