//! Procedural test scene: an opaque axis-aligned box inside the unit cube
//! whose faces carry a three-colour checker texture, with a dense-quadrature
//! reference renderer that does not share code with the learned renderer.

use std::f64::consts::PI;
use std::path::Path;

use crate::camera::{save_scene, Aabb, Intrinsics, Pose, SceneManifest, Vec3, ViewEntry};
use crate::error::Result;
use crate::image::{save_image, ImageBuffer};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxScene {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub density: f64,
    pub tiles: u32,
    pub palette: [[f64; 3]; 3],
}

impl Default for BoxScene {
    fn default() -> Self {
        BoxScene {
            lo: [0.25; 3],
            hi: [0.75; 3],
            density: 400.0,
            tiles: 3,
            palette: [[0.9, 0.25, 0.2], [0.2, 0.75, 0.3], [0.25, 0.35, 0.9]],
        }
    }
}

/// Face identifiers: `2 * axis + (1 if on the max side)`.
pub type Face = usize;

impl BoxScene {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    pub fn sigma(&self, p: &Vec3) -> f64 {
        if self.contains(p) {
            self.density
        } else {
            0.0
        }
    }

    /// Face nearest to `p`.
    pub fn nearest_face(&self, p: &Vec3) -> Face {
        let mut best = (f64::INFINITY, 0);
        for axis in 0..3 {
            for (side, plane) in [self.lo[axis], self.hi[axis]].into_iter().enumerate() {
                let d = (p[axis] - plane).abs();
                if d < best.0 {
                    best = (d, 2 * axis + side);
                }
            }
        }
        best.1
    }

    /// Texture colour of the nearest face at `p`.
    pub fn color(&self, p: &Vec3) -> [f64; 3] {
        let face = self.nearest_face(p);
        let axis = face / 2;
        let mut idx = face as u32;
        for other in (0..3).filter(|&a| a != axis) {
            let u = ((p[other] - self.lo[other]) / (self.hi[other] - self.lo[other])).clamp(0.0, 1.0 - 1e-12);
            idx += (u * self.tiles as f64) as u32;
        }
        self.palette[(idx % 3) as usize]
    }

    /// First face hit by a ray, if any.
    pub fn first_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<Face> {
        let b = Aabb {
            min: self.lo,
            max: self.hi,
        };
        let (t0, _) = b.intersect(origin, dir)?;
        Some(self.nearest_face(&(origin + dir * t0)))
    }

    /// Midpoint-rule integration of the emission-absorption model with
    /// `samples` points over the ray's chord through `aabb`.
    pub fn render_pixel(&self, origin: &Vec3, dir: &Vec3, aabb: &Aabb, samples: usize, background: [f64; 3]) -> [f64; 3] {
        let Some((t0, t1)) = aabb.intersect(origin, dir) else {
            return background;
        };
        let h = (t1 - t0) / samples as f64;
        let mut trans = 1.0;
        let mut out = [0.0; 3];
        for s in 0..samples {
            let p = origin + dir * (t0 + (s as f64 + 0.5) * h);
            let sigma = self.sigma(&p);
            if sigma == 0.0 {
                continue;
            }
            let alpha = 1.0 - (-sigma * h).exp();
            let c = self.color(&p);
            for k in 0..3 {
                out[k] += trans * alpha * c[k];
            }
            trans *= 1.0 - alpha;
        }
        [0, 1, 2].map(|k| out[k] + trans * background[k])
    }

    pub fn render(&self, k: &Intrinsics, pose: &Pose, aabb: &Aabb, samples: usize, background: [f64; 3]) -> ImageBuffer {
        let mut data = Vec::with_capacity(k.width as usize * k.height as usize * 3);
        for y in 0..k.height {
            for x in 0..k.width {
                let d_cam = Vec3::new((x as f64 + 0.5 - k.cx) / k.fx, (y as f64 + 0.5 - k.cy) / k.fy, 1.0);
                let d = (pose.rotation * d_cam).normalize();
                data.extend(self.render_pixel(&pose.translation, &d, aabb, samples, background).map(|v| v as f32));
            }
        }
        ImageBuffer::from_clamped(k.width as usize, k.height as usize, 3, data).expect("valid shape")
    }

    /// Per-pixel face id of the first surface hit (`None` for background).
    pub fn face_mask(&self, k: &Intrinsics, pose: &Pose) -> Vec<Option<Face>> {
        let mut out = Vec::with_capacity(k.width as usize * k.height as usize);
        for y in 0..k.height {
            for x in 0..k.width {
                let d_cam = Vec3::new((x as f64 + 0.5 - k.cx) / k.fx, (y as f64 + 0.5 - k.cy) / k.fy, 1.0);
                out.push(self.first_hit(&pose.translation, &(pose.rotation * d_cam).normalize()));
            }
        }
        out
    }
}

/// Camera layout shared by the synthetic datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orbit {
    pub radius: f64,
    pub elevation_deg: f64,
    pub intrinsics: Intrinsics,
}

impl Default for Orbit {
    fn default() -> Self {
        Orbit {
            radius: 1.5,
            elevation_deg: 25.0,
            intrinsics: Intrinsics {
                fx: 80.0,
                fy: 80.0,
                cx: 32.0,
                cy: 32.0,
                width: 64,
                height: 64,
            },
        }
    }
}

impl Orbit {
    /// Camera at azimuth `az` (radians, from `+x` towards `+y`) looking at
    /// the cube centre.
    pub fn pose(&self, az: f64) -> Pose {
        let el = self.elevation_deg.to_radians();
        let c = Vec3::repeat(0.5);
        let eye = c + Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * self.radius;
        Pose::look_at(eye, c, Vec3::z()).expect("orbit never looks along the up axis")
    }

    /// `count` poses evenly spaced around the full circle.
    pub fn circle(&self, count: usize) -> Vec<Pose> {
        (0..count).map(|i| self.pose(2.0 * PI * i as f64 / count as f64)).collect()
    }

    /// Poses halfway between circle positions `indices` of a `count` circle.
    pub fn between(&self, count: usize, indices: &[usize]) -> Vec<Pose> {
        indices
            .iter()
            .map(|&i| self.pose(2.0 * PI * (i as f64 + 0.5) / count as f64))
            .collect()
    }

    /// `count` poses spread over azimuths within `±half_span_deg` of `+x`.
    pub fn arc(&self, count: usize, half_span_deg: f64) -> Vec<Pose> {
        let h = half_span_deg.to_radians();
        (0..count)
            .map(|i| {
                let f = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
                self.pose(-h + 2.0 * h * f)
            })
            .collect()
    }
}

pub const REFERENCE_SAMPLES: usize = 1024;

/// Renders `poses` with the reference renderer, writes the images under
/// `dir/images` and a scene manifest at `dir/scene.json`.
pub fn write_dataset(scene: &BoxScene, orbit: &Orbit, poses: &[Pose], dir: impl AsRef<Path>) -> Result<SceneManifest> {
    let dir = dir.as_ref();
    let aabb = Aabb::unit();
    let mut entries = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let img = scene.render(&orbit.intrinsics, pose, &aabb, REFERENCE_SAMPLES, [0.0; 3]);
        let path = dir.join("images").join(format!("view_{i:03}.png"));
        save_image(&img, &path)?;
        entries.push(ViewEntry {
            path,
            intrinsics: orbit.intrinsics,
            pose: *pose,
        });
    }
    let manifest = SceneManifest {
        entries,
        aabb,
        normalization: None,
    };
    save_scene(&manifest, dir.join("scene.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_uses_all_colours_per_face() {
        let s = BoxScene::default();
        for face in 0..6 {
            let axis = face / 2;
            let plane = if face % 2 == 0 { s.lo[axis] } else { s.hi[axis] };
            let mut seen = std::collections::BTreeSet::new();
            for a in 0..3 {
                for b in 0..3 {
                    let mut p = Vec3::repeat(0.0);
                    p[axis] = plane;
                    let others: Vec<usize> = (0..3).filter(|&x| x != axis).collect();
                    p[others[0]] = 0.25 + (a as f64 + 0.5) / 6.0;
                    p[others[1]] = 0.25 + (b as f64 + 0.5) / 6.0;
                    assert_eq!(s.nearest_face(&p), face);
                    seen.insert(format!("{:?}", s.color(&p)));
                }
            }
            assert_eq!(seen.len(), 3);
        }
    }

    #[test]
    fn reference_render_is_opaque_on_box_and_black_elsewhere() {
        let s = BoxScene::default();
        let o = Orbit::default();
        let pose = o.pose(0.0);
        let img = s.render(&o.intrinsics, &pose, &Aabb::unit(), 256, [0.0; 3]);
        let mask = s.face_mask(&o.intrinsics, &pose);
        for (px, m) in img.data().chunks(3).zip(&mask) {
            match m {
                None => assert_eq!(px, &[0.0, 0.0, 0.0]),
                Some(_) => assert!(px.iter().sum::<f32>() > 0.5),
            }
        }
        let hits = mask.iter().filter(|m| m.is_some()).count();
        assert!(hits > 400 && hits < 3500, "{hits}");
    }

    #[test]
    fn arc_stays_in_front_hemisphere() {
        let o = Orbit::default();
        for p in o.arc(24, 80.0) {
            assert!(p.translation.x > 0.5);
        }
        let held = o.between(24, &[0, 6, 12, 18]);
        assert_eq!(held.len(), 4);
    }
}
