//! Pinhole cameras, ray casting, COLMAP text-model ingestion and scene
//! normalization.
//!
//! Camera frame convention: `+z` looks forward, `+x` right, `+y` down (the
//! COLMAP/OpenCV convention). [`Pose`] always stores the camera-to-world
//! transform; the world-to-camera form is derived on demand.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Argument(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::Argument(format!(
                "principal point ({}, {}) outside {}x{} sensor",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Same camera at a different resolution; focal lengths and principal
    /// point scale with the size.
    pub fn resized(&self, width: u32, height: u32) -> Intrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    /// Camera centre in world coordinates.
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let p = Pose {
            rotation,
            translation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= ORTHO_TOL) || !((r.determinant() - 1.0).abs() <= ORTHO_TOL) {
            return Err(Error::Argument(format!(
                "rotation is not orthonormal with det +1 (|RtR - I| = {err:.3e}, det = {:.6})",
                r.determinant()
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("non-finite camera translation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image `y`
    /// points against it).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::Argument("look_at target coincides with eye".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Argument("look_at up vector parallel to view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Pose::new(Matrix3::from_columns(&[right, down, forward]), eye)
    }

    /// World-to-camera rotation and translation: `x_cam = R x_world + t`.
    pub fn world_to_camera(&self) -> (Matrix3<f64>, Vec3) {
        let r = self.rotation.transpose();
        let t = -(r * self.translation);
        (r, t)
    }

    pub fn from_world_to_camera(r_wc: Matrix3<f64>, t_wc: Vec3) -> Result<Self> {
        let r = r_wc.transpose();
        Pose::new(r, -(r * t_wc))
    }

    pub fn matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Argument(format!(
                "camera-to-world bottom row must be 0 0 0 1, got {bottom:?}"
            )));
        }
        Pose::new(m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Linear position blend with normalized quaternion interpolation of the
    /// orientation along the shorter arc. `t = 0` and `t = 1` return the
    /// inputs unchanged, as does any `t` when `a == b`.
    pub fn interpolate(a: &Pose, b: &Pose, t: f64) -> Pose {
        if t <= 0.0 || a == b {
            return *a;
        }
        if t >= 1.0 {
            return *b;
        }
        let qa = UnitQuaternion::from_matrix(&a.rotation).into_inner();
        let mut qb = UnitQuaternion::from_matrix(&b.rotation).into_inner();
        if qa.dot(&qb) < 0.0 {
            qb = -qb;
        }
        let q = UnitQuaternion::from_quaternion(qa * (1.0 - t) + qb * t);
        Pose {
            rotation: q.to_rotation_matrix().into_inner(),
            translation: a.translation * (1.0 - t) + b.translation * t,
        }
    }
}

/// `P = K R [I | -c]` with `R` the world-to-camera rotation and `c` the
/// camera centre. Points at the centre have depth 0 and must be excluded by
/// callers.
pub fn projection_matrix(k: &Intrinsics, pose: &Pose) -> Matrix3x4<f64> {
    let (r_wc, _) = pose.world_to_camera();
    let mut ext = Matrix3x4::zeros();
    ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    ext.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-pose.translation));
    k.matrix() * r_wc * ext
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64, depth: f64 },
    BehindCamera { depth: f64 },
}

pub fn project(k: &Intrinsics, pose: &Pose, point: &Vec3) -> Projection {
    let (r, t) = pose.world_to_camera();
    let pc = r * point + t;
    if pc.z <= 0.0 {
        return Projection::BehindCamera { depth: pc.z };
    }
    Projection::Pixel {
        u: k.fx * pc.x / pc.z + k.cx,
        v: k.fy * pc.y / pc.z + k.cy,
        depth: pc.z,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn unit() -> Self {
        Aabb {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).all(|i| self.min[i] < self.max[i]) {
            Ok(())
        } else {
            Err(Error::Argument(format!("degenerate bounding box {:?}..{:?}", self.min, self.max)))
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Maps a world point to `[0, 1]^3` box coordinates.
    pub fn normalize(&self, p: &Vec3) -> [f64; 3] {
        std::array::from_fn(|i| (p[i] - self.min[i]) / (self.max[i] - self.min[i]))
    }

    /// Slab test; returns the parametric entry and exit distances with the
    /// entry clamped to zero for origins inside the box.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (mut a, mut b) = ((self.min[i] - origin[i]) * inv, (self.max[i] - origin[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Unit world-space direction through image coordinates `(u, v)`.
pub fn pixel_direction(k: &Intrinsics, pose: &Pose, u: f64, v: f64) -> Vec3 {
    let d_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    (pose.rotation * d_cam).normalize()
}

/// Ray through image coordinates `(u, v)` clipped to `aabb`; `None` when it
/// misses the box.
pub fn generate_ray(k: &Intrinsics, pose: &Pose, u: f64, v: f64, aabb: &Aabb) -> Option<Ray> {
    let origin = pose.translation;
    let direction = pixel_direction(k, pose, u, v);
    let (t_near, t_far) = aabb.intersect(&origin, &direction)?;
    Some(Ray {
        origin,
        direction,
        t_near,
        t_far,
    })
}

/// Ray through the centre of integer pixel `(x, y)`.
pub fn pixel_ray(k: &Intrinsics, pose: &Pose, x: u32, y: u32, aabb: &Aabb) -> Option<Ray> {
    generate_ray(k, pose, x as f64 + 0.5, y as f64 + 0.5, aabb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub path: PathBuf,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// `p' = scale * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + Vec3::from(self.translation)
    }

    pub fn inverse(&self) -> Similarity {
        let t = Vec3::from(self.translation) * (-1.0 / self.scale);
        Similarity {
            scale: 1.0 / self.scale,
            translation: [t.x, t.y, t.z],
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Similarity) -> Similarity {
        let t = self.apply(&Vec3::from(first.translation));
        Similarity {
            scale: self.scale * first.scale,
            translation: [t.x, t.y, t.z],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub entries: Vec<ViewEntry>,
    pub aabb: Aabb,
    /// Transform from the original reconstruction frame, when normalized.
    pub normalization: Option<Similarity>,
}

impl SceneManifest {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("scene manifest has no views".into()));
        }
        self.aabb.validate()?;
        for e in &self.entries {
            e.intrinsics.validate()?;
            e.pose.validate()?;
        }
        Ok(())
    }

    pub fn camera_centers(&self) -> Vec<Vec3> {
        self.entries.iter().map(|e| e.pose.translation).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> SceneManifest {
        SceneManifest {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            aabb: self.aabb,
            normalization: self.normalization,
        }
    }
}

/// Maps the camera-centre centroid to the cube centre and scales so every
/// camera lies inside `[0.25, 0.75]^3`. The box becomes `[0, 1]^3` and the
/// applied transform is recorded (composed with any earlier one).
pub fn normalize_scene(manifest: &SceneManifest) -> Result<SceneManifest> {
    let centers = manifest.camera_centers();
    if centers.len() < 2 {
        return Err(Error::DegenerateScene(
            "normalization needs at least two cameras".into(),
        ));
    }
    let centroid = centers.iter().fold(Vec3::zeros(), |a, c| a + c) / centers.len() as f64;
    let extent = centers
        .iter()
        .map(|c| (c - centroid).amax())
        .fold(0.0f64, f64::max);
    if !(extent > 1e-12) {
        return Err(Error::DegenerateScene("all cameras are coincident".into()));
    }
    let scale = 0.25 / extent;
    let t = Vec3::repeat(0.5) - centroid * scale;
    let sim = Similarity {
        scale,
        translation: [t.x, t.y, t.z],
    };
    let entries = manifest
        .entries
        .iter()
        .map(|e| ViewEntry {
            path: e.path.clone(),
            intrinsics: e.intrinsics,
            pose: Pose {
                rotation: e.pose.rotation,
                translation: sim.apply(&e.pose.translation),
            },
        })
        .collect();
    Ok(SceneManifest {
        entries,
        aabb: Aabb::unit(),
        normalization: Some(match manifest.normalization {
            Some(prev) => sim.compose(&prev),
            None => sim,
        }),
    })
}

// ---------------------------------------------------------------------------
// COLMAP text models

#[derive(Debug, Clone, Copy)]
struct ColmapCamera {
    intrinsics: Intrinsics,
}

fn parse_cameras(text: &str) -> Result<HashMap<u32, ColmapCamera>> {
    let mut out = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::Format(format!("cameras.txt line {}: {what}", lineno + 1));
        if tok.len() < 4 {
            return Err(bad("expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS"));
        }
        let id: u32 = tok[0].parse().map_err(|_| bad("bad camera id"))?;
        let model = tok[1];
        let width: u32 = tok[2].parse().map_err(|_| bad("bad width"))?;
        let height: u32 = tok[3].parse().map_err(|_| bad("bad height"))?;
        let params = tok[4..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad parameter"))?;
        let (fx, fy, cx, cy) = match (model, params.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => (*fx, *fy, *cx, *cy),
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (*f, *f, *cx, *cy),
            ("PINHOLE" | "SIMPLE_PINHOLE", _) => return Err(bad("wrong parameter count")),
            (other, _) => {
                return Err(Error::Format(format!(
                    "unsupported camera model {other}: only PINHOLE and SIMPLE_PINHOLE are \
                     accepted; lens distortion is not modelled, undistort the images first"
                )))
            }
        };
        out.insert(
            id,
            ColmapCamera {
                intrinsics: Intrinsics::new(fx, fy, cx, cy, width, height)?,
            },
        );
    }
    Ok(out)
}

struct ColmapImage {
    qvec: [f64; 4],
    tvec: [f64; 3],
    camera_id: u32,
    name: String,
}

fn parse_images(text: &str) -> Result<Vec<ColmapImage>> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim_start().starts_with('#')).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() {
            i += 1;
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::Format(format!("images.txt record {}: {what}", out.len() + 1));
        if tok.len() < 10 {
            return Err(bad("expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"));
        }
        let nums = tok[1..8]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad pose value"))?;
        out.push(ColmapImage {
            qvec: [nums[0], nums[1], nums[2], nums[3]],
            tvec: [nums[4], nums[5], nums[6]],
            camera_id: tok[8].parse().map_err(|_| bad("bad camera id"))?,
            name: tok[9..].join(" "),
        });
        // the following line lists 2-D points and may be empty
        i += 2;
    }
    Ok(out)
}

fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    uq.to_rotation_matrix().into_inner()
}

/// Reads `cameras.txt` and `images.txt` from `model_dir`. Image names are
/// resolved against `images_dir`; views whose file is missing are skipped
/// with a warning.
pub fn import_colmap(model_dir: impl AsRef<Path>, images_dir: impl AsRef<Path>) -> Result<SceneManifest> {
    let model_dir = model_dir.as_ref();
    let images_dir = images_dir.as_ref();
    let read = |name: &str| {
        let p = model_dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    };
    let cameras = parse_cameras(&read("cameras.txt")?)?;
    let images = parse_images(&read("images.txt")?)?;
    let mut entries = Vec::new();
    for img in images {
        let cam = cameras.get(&img.camera_id).ok_or_else(|| {
            Error::Format(format!("image {} references unknown camera {}", img.name, img.camera_id))
        })?;
        let path = images_dir.join(&img.name);
        if !path.exists() {
            log::warn!("skipping {}: image file not found", path.display());
            continue;
        }
        let pose = Pose::from_world_to_camera(quat_to_matrix(img.qvec), Vec3::from(img.tvec))?;
        entries.push(ViewEntry {
            path,
            intrinsics: cam.intrinsics,
            pose,
        });
    }
    if entries.is_empty() {
        return Err(Error::Config("COLMAP model has no usable images".into()));
    }
    let aabb = camera_bounds(&entries);
    Ok(SceneManifest {
        entries,
        aabb,
        normalization: None,
    })
}

/// Box around the camera centres, padded by half its largest extent.
fn camera_bounds(entries: &[ViewEntry]) -> Aabb {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for e in entries {
        for i in 0..3 {
            min[i] = min[i].min(e.pose.translation[i]);
            max[i] = max[i].max(e.pose.translation[i]);
        }
    }
    let pad = (0..3).map(|i| max[i] - min[i]).fold(0.0f64, f64::max).max(1.0) * 0.5;
    Aabb {
        min: min.map(|v| v - pad),
        max: max.map(|v| v + pad),
    }
}

/// Writes a COLMAP text model (one PINHOLE camera per view). Image names are
/// the file names of the entry paths.
pub fn write_colmap_text(manifest: &SceneManifest, model_dir: impl AsRef<Path>) -> Result<()> {
    let model_dir = model_dir.as_ref();
    std::fs::create_dir_all(model_dir).map_err(|e| Error::io(model_dir, e))?;
    let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let mut imgs = String::from("# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for (i, e) in manifest.entries.iter().enumerate() {
        let id = i + 1;
        let k = &e.intrinsics;
        let _ = writeln!(
            cams,
            "{id} PINHOLE {} {} {:?} {:?} {:?} {:?}",
            k.width, k.height, k.fx, k.fy, k.cx, k.cy
        );
        let (r, t) = e.pose.world_to_camera();
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        let name = e
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{id}.png"));
        let _ = writeln!(
            imgs,
            "{id} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {id} {name}\n",
            q.w, q.i, q.j, q.k, t.x, t.y, t.z
        );
    }
    let write = |name: &str, body: &str| {
        let p = model_dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write("cameras.txt", &cams)?;
    write("images.txt", &imgs)
}

// ---------------------------------------------------------------------------
// Native scene manifest (JSON)

pub const SCENE_FORMAT: &str = "marf-scene";
pub const SCENE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SceneFile {
    format: String,
    version: u32,
    aabb: Aabb,
    #[serde(default)]
    normalization: Option<Similarity>,
    views: Vec<ViewFile>,
}

#[derive(Serialize, Deserialize)]
struct ViewFile {
    path: PathBuf,
    intrinsics: Intrinsics,
    /// Row-major 4x4 camera-to-world matrix.
    camera_to_world: [[f64; 4]; 4],
}

/// Writes the manifest as JSON. Paths under the manifest's directory are
/// stored relative to it.
pub fn save_scene(manifest: &SceneManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let views = manifest
        .entries
        .iter()
        .map(|e| {
            let m = e.pose.matrix4();
            ViewFile {
                path: e.path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| e.path.clone()),
                intrinsics: e.intrinsics,
                camera_to_world: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            }
        })
        .collect();
    let file = SceneFile {
        format: SCENE_FORMAT.into(),
        version: SCENE_VERSION,
        aabb: manifest.aabb,
        normalization: manifest.normalization,
        views,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SceneFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.format != SCENE_FORMAT || file.version != SCENE_VERSION {
        return Err(Error::Format(format!(
            "{}: expected {SCENE_FORMAT} v{SCENE_VERSION}, found {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let entries = file
        .views
        .into_iter()
        .map(|v| {
            let m = Matrix4::from_fn(|r, c| v.camera_to_world[r][c]);
            Ok(ViewEntry {
                path: if v.path.is_absolute() { v.path } else { base.join(v.path) },
                intrinsics: v.intrinsics,
                pose: Pose::from_matrix4(&m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = SceneManifest {
        entries,
        aabb: file.aabb,
        normalization: file.normalization,
    };
    manifest.validate()?;
    Ok(manifest)
}
