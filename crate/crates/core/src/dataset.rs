//! Procedural synthetic drone dataset.
//!
//! Each frame shows a schematic drone (four coloured propeller disks, arms and a
//! class-coloured body plate) over a seeded procedural background, together with the
//! full annotation: ordered 2D/3D propeller keypoints, pose, class, bounding box and
//! intrinsics.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/manifest
//! <root>/<scene>/<class>/<background>/frame_00000.img   binary PPM
//! <root>/<scene>/<class>/<background>/frame_00000.ann   one JSON record
//! ```
//!
//! All annotation floats are written with six fractional digits and are quantized to
//! that grid before writing, so a write/read cycle is bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    matrix_to_euler_norm, project_point, CameraIntrinsics,
    NormalizedEuler, RigidPose, Vec2, Vec3,
};
use crate::image::Image;

pub const FORMAT_VERSION: u32 = 1;
pub const NUM_CLASSES: usize = 7;
pub const NUM_KEYPOINTS: usize = 4;
pub const MANIFEST_FILE: &str = "manifest";

pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["mini3", "mini2", "air3", "air2", "mav2", "mav3", "tello"];

/// Keypoint order shared by layouts, annotations and network outputs.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] =
    ["front-left", "front-right", "rear-left", "rear-right"];

/// Propeller disk radius as a fraction of the propeller half-spacing.
const PROPELLER_RADIUS_RATIO: f64 = 0.35;
/// Drone depth range in multiples of the body extent; keeps apparent size class-independent.
const DEPTH_RANGE: (f64, f64) = (3.0, 6.0);
/// Bound on the two tilt angles around [`VIEW_ATTITUDE`], in turns (≈ 25°).
const MAX_TILT: f64 = 0.07;
/// Centre of the second and third Euler components, in turns: an oblique (36°) view
/// of the underside, as from a ground camera. Keeps both components clear of the 0/1
/// seam, which the sigmoid rotation head cannot cross smoothly.
const VIEW_ATTITUDE: [f64; 2] = [0.1, 0.5];
/// Fraction of the half field of view available to the drone centre.
const VIEW_MARGIN: f64 = 0.4;
/// Default focal length in multiples of the image width (≈ 34° horizontal field of view).
pub const FOCAL_RATIO: f64 = 1.6;

const PROPELLER_COLORS: [[u8; 3]; NUM_KEYPOINTS] =
    [[220, 30, 30], [30, 200, 30], [30, 60, 230], [240, 220, 20]];
const CLASS_COLORS: [[u8; 3]; NUM_CLASSES] = [
    [235, 235, 235],
    [255, 128, 0],
    [140, 0, 255],
    [0, 200, 200],
    [255, 0, 255],
    [128, 64, 0],
    [10, 10, 10],
];
const ARM_COLOR: [u8; 3] = [70, 70, 70];

#[derive(Debug, Clone, PartialEq)]
pub struct DroneClassSpec {
    pub class_id: usize,
    pub name: String,
    /// Body frame (x forward, y right, z down), ordered as [`KEYPOINT_NAMES`].
    pub propeller_layout: [Vec3; NUM_KEYPOINTS],
    /// Diagonal propeller-to-propeller distance in metres.
    pub body_extent: f64,
}

impl DroneClassSpec {
    /// Planar square layout whose diagonal equals `body_extent`.
    pub fn square(class_id: usize, name: &str, body_extent: f64) -> Self {
        let h = body_extent * FRAC_1_SQRT_2 / 2.0;
        Self {
            class_id,
            name: name.to_string(),
            propeller_layout: [
                Vec3::new(h, -h, 0.0),
                Vec3::new(h, h, 0.0),
                Vec3::new(-h, -h, 0.0),
                Vec3::new(-h, h, 0.0),
            ],
            body_extent,
        }
    }

    pub fn propeller_radius(&self) -> f64 {
        PROPELLER_RADIUS_RATIO * self.body_extent * FRAC_1_SQRT_2 / 2.0
    }
}

/// Seven classes with body extents from 0.20 m to 0.50 m in 0.05 m steps.
///
/// The extents are configuration defaults chosen so that size is identifiable from
/// the class; they are not measurements of the real aircraft.
pub fn default_class_specs() -> Vec<DroneClassSpec> {
    CLASS_NAMES
        .iter()
        .enumerate()
        .map(|(id, name)| DroneClassSpec::square(id, name, 0.20 + 0.05 * id as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    Linear,
    NonLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "val" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Unknown {
                kind: "split",
                value: other.to_string(),
            }),
        }
    }
}

/// Scenario-wise split: 06–07 test, 03/09/13 validation, everything else train.
pub fn default_split(scene_id: u32) -> Split {
    match scene_id {
        6 | 7 => Split::Test,
        3 | 9 | 13 => Split::Valid,
        _ => Split::Train,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub scene_id: u32,
    pub motion: MotionKind,
    /// Seconds.
    pub duration: f64,
    pub fps: f64,
    pub backgrounds: Vec<u32>,
    pub camera: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    pub rng_seed: u64,
    pub split: Split,
}

impl SceneConfig {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if !(self.duration > 0.0) || !(self.fps > 0.0) {
            return Err(Error::Config(format!(
                "scene {:02}: duration and fps must be positive",
                self.scene_id
            )));
        }
        if self.backgrounds.is_empty() {
            return Err(Error::Config(format!(
                "scene {:02}: at least one background is required",
                self.scene_id
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image resolution must be non-zero".into()));
        }
        Ok(())
    }
}

/// Everything needed to plan and render a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub camera: CameraIntrinsics,
    pub classes: Vec<DroneClassSpec>,
    pub scenes: Vec<SceneConfig>,
}

/// Intrinsics with a horizontal field of view of ≈ 44° centred on the image.
pub fn default_intrinsics(width: usize, height: usize) -> CameraIntrinsics {
    let f = FOCAL_RATIO * width as f64;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
    }
}

impl DatasetConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "table2" => Ok(Self::table2()),
            "desk" => Ok(Self::desk()),
            "overfit" => Ok(Self::overfit()),
            other => Err(Error::Unknown {
                kind: "dataset preset",
                value: other.to_string(),
            }),
        }
    }

    fn build(
        seed: u64,
        width: usize,
        height: usize,
        class_ids: &[usize],
        scenes: &[(u32, MotionKind, f64)],
        fps: f64,
        backgrounds_per_scene: u32,
    ) -> Self {
        let camera = default_intrinsics(width, height);
        let all = default_class_specs();
        let scenes = scenes
            .iter()
            .map(|&(scene_id, motion, duration)| SceneConfig {
                scene_id,
                motion,
                duration,
                fps,
                backgrounds: (0..backgrounds_per_scene)
                    .map(|j| (scene_id - 1) * backgrounds_per_scene + j)
                    .collect(),
                camera,
                width,
                height,
                rng_seed: seed,
                split: default_split(scene_id),
            })
            .collect();
        Self {
            seed,
            width,
            height,
            camera,
            classes: class_ids.iter().map(|&i| all[i].clone()).collect(),
            scenes,
        }
    }

    /// Full composition: 13 scenes × 7 classes × 3 backgrounds at 30 fps, 1920×1080.
    pub fn table2() -> Self {
        let scenes: Vec<_> = (1..=13)
            .map(|id| match id {
                1..=3 | 7..=9 => (id, MotionKind::Linear, 4.0),
                4..=6 => (id, MotionKind::NonLinear, 4.0),
                _ => (id, MotionKind::NonLinear, 12.0),
            })
            .collect();
        Self::build(0, 1920, 1080, &(0..NUM_CLASSES).collect::<Vec<_>>(), &scenes, 30.0, 3)
    }

    /// Small train/valid/test dataset at 128×128: 160 frames.
    pub fn desk() -> Self {
        let scenes = [
            (1, MotionKind::Linear, 2.0),
            (4, MotionKind::NonLinear, 2.0),
            (3, MotionKind::Linear, 2.0),
            (6, MotionKind::NonLinear, 2.0),
        ];
        Self::build(0, 128, 128, &[0, 6], &scenes, 10.0, 1)
    }

    /// 200 training frames over two classes, for memorization checks.
    pub fn overfit() -> Self {
        let scenes = [(1, MotionKind::Linear, 5.0), (4, MotionKind::NonLinear, 5.0)];
        Self::build(0, 128, 128, &[0, 6], &scenes, 10.0, 1)
    }

    /// Changes resolution and resets intrinsics to the default for that size.
    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self.camera = default_intrinsics(width, height);
        for s in &mut self.scenes {
            s.width = width;
            s.height = height;
            s.camera = self.camera;
        }
        self
    }

    pub fn with_camera(mut self, camera: CameraIntrinsics) -> Self {
        self.camera = camera;
        for s in &mut self.scenes {
            s.camera = camera;
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        for s in &mut self.scenes {
            s.rng_seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.classes.is_empty() || self.scenes.is_empty() {
            return Err(Error::Config("dataset needs at least one class and one scene".into()));
        }
        let mut ids = BTreeSet::new();
        for c in &self.classes {
            if c.class_id >= NUM_CLASSES || !ids.insert(c.class_id) {
                return Err(Error::Config(format!("invalid or duplicate class id {}", c.class_id)));
            }
        }
        let mut scene_ids = BTreeSet::new();
        for s in &self.scenes {
            s.validate()?;
            if !scene_ids.insert(s.scene_id) {
                return Err(Error::Config(format!("duplicate scene id {}", s.scene_id)));
            }
            if s.camera != self.camera || s.width != self.width || s.height != self.height {
                return Err(Error::Config(format!(
                    "scene {:02} camera differs from the dataset camera",
                    s.scene_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: usize,
    pub name: String,
    pub body_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub scene_id: u32,
    pub class_id: usize,
    pub background_id: u32,
    pub motion: MotionKind,
    pub duration: f64,
    pub fps: f64,
    pub frames: usize,
    pub split: Split,
    /// Relative to the dataset root.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub classes: Vec<ClassEntry>,
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames).sum()
    }

    /// Distinct (scene, class) pairs; each is subdivided per background.
    pub fn sequence_count(&self) -> usize {
        self.sequences
            .iter()
            .map(|s| (s.scene_id, s.class_id))
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn frames_by_split(&self) -> BTreeMap<Split, usize> {
        let mut out = BTreeMap::new();
        for s in &self.sequences {
            *out.entry(s.split).or_insert(0) += s.frames;
        }
        out
    }

    pub fn scenes_by_split(&self) -> BTreeMap<Split, BTreeSet<u32>> {
        let mut out: BTreeMap<Split, BTreeSet<u32>> = BTreeMap::new();
        for s in &self.sequences {
            out.entry(s.split).or_default().insert(s.scene_id);
        }
        out
    }

    /// Maps a global frame index to `(sequence index, frame within sequence)`.
    pub fn locate(&self, index: usize) -> Result<(usize, usize)> {
        let mut rest = index;
        for (i, s) in self.sequences.iter().enumerate() {
            if rest < s.frames {
                return Ok((i, rest));
            }
            rest -= s.frames;
        }
        Err(Error::IndexOutOfRange {
            index,
            len: self.total_frames(),
        })
    }

    pub fn class_spec(&self, class_id: usize) -> Result<DroneClassSpec> {
        let entry = self
            .classes
            .iter()
            .find(|c| c.class_id == class_id)
            .ok_or(Error::Label {
                label: class_id,
                classes: NUM_CLASSES,
            })?;
        Ok(DroneClassSpec::square(entry.class_id, &entry.name, entry.body_extent))
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::load(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::load(&path, e))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::load(
                &path,
                format!("unsupported format version {}", m.format_version),
            ));
        }
        Ok(m)
    }
}

pub fn sequence_dir(scene_id: u32, class_name: &str, background_id: u32) -> String {
    format!("{scene_id:02}/{class_name}/bg{background_id:02}")
}

/// Closed-form manifest for a config, without rendering anything.
pub fn plan_manifest(cfg: &DatasetConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut sequences = Vec::new();
    for scene in &cfg.scenes {
        for class in &cfg.classes {
            for &bg in &scene.backgrounds {
                sequences.push(SequenceEntry {
                    scene_id: scene.scene_id,
                    class_id: class.class_id,
                    background_id: bg,
                    motion: scene.motion,
                    duration: scene.duration,
                    fps: scene.fps,
                    frames: scene.frame_count(),
                    split: scene.split,
                    dir: sequence_dir(scene.scene_id, &class.name, bg),
                });
            }
        }
    }
    Ok(DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: cfg.seed,
        width: cfg.width,
        height: cfg.height,
        intrinsics: cfg.camera,
        classes: cfg
            .classes
            .iter()
            .map(|c| ClassEntry {
                class_id: c.class_id,
                name: c.name.clone(),
                body_extent: c.body_extent,
            })
            .collect(),
        sequences,
    })
}

/// Independent RNG stream per (seed, scene, class, background), so parallel and serial
/// generation agree.
pub fn stream_seed(seed: u64, scene_id: u32, class_id: usize, background_id: u32) -> u64 {
    let mut x = seed;
    for part in [u64::from(scene_id), class_id as u64, u64::from(background_id)] {
        x = splitmix64(x ^ part.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    x
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Poses for one subsequence: `duration · fps` frames.
///
/// The drone centre moves inside a view cone with depth in [`DEPTH_RANGE`] multiples of
/// the body extent. Linear motion is constant velocity with constant angular rates;
/// non-linear motion follows a Lissajous curve with oscillating tilts and a modulated
/// spin.
pub fn synth_trajectory(
    cfg: &SceneConfig,
    spec: &DroneClassSpec,
    background_id: u32,
) -> Vec<RigidPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
        cfg.rng_seed,
        cfg.scene_id,
        spec.class_id,
        background_id,
    ));
    let n = cfg.frame_count();
    let u_max = VIEW_MARGIN * cfg.camera.cx.min(cfg.width as f64 - cfg.camera.cx) / cfg.camera.fx;
    let v_max = VIEW_MARGIN * cfg.camera.cy.min(cfg.height as f64 - cfg.camera.cy) / cfg.camera.fy;
    let (d_lo, d_hi) = DEPTH_RANGE;
    let to_point = |u: f64, v: f64, depth: f64| {
        let z = depth * spec.body_extent;
        Vec3::new(u * z, v * z, z)
    };

    let poses: Vec<(NormalizedEuler, Vec3)> = match cfg.motion {
        MotionKind::Linear => {
            let endpoint = |rng: &mut ChaCha8Rng| {
                to_point(
                    rng.random_range(-u_max..=u_max),
                    rng.random_range(-v_max..=v_max),
                    rng.random_range(d_lo..=d_hi),
                )
            };
            let start = endpoint(&mut rng);
            let end = endpoint(&mut rng);
            let yaw0: f64 = rng.random();
            let yaw_turns = rng.random_range(-0.5..=0.5);
            let tilt = |rng: &mut ChaCha8Rng| rng.random_range(-MAX_TILT..=MAX_TILT);
            let [c1, c2] = VIEW_ATTITUDE;
            let (p0, p1, q0, q1) = (tilt(&mut rng), tilt(&mut rng), tilt(&mut rng), tilt(&mut rng));
            (0..n)
                .map(|i| {
                    let s = i as f64 / n.max(2).saturating_sub(1) as f64;
                    let r = NormalizedEuler::wrapped([
                        yaw0 + yaw_turns * s,
                        c1 + p0 + (p1 - p0) * s,
                        c2 + q0 + (q1 - q0) * s,
                    ]);
                    (r, start + (end - start) * s)
                })
                .collect()
        }
        MotionKind::NonLinear => {
            let freq = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(1u32..=3));
            let (fu, fv, fd) = (freq(&mut rng), freq(&mut rng), freq(&mut rng));
            let (fp, fr) = (freq(&mut rng), freq(&mut rng));
            let phase: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
            let yaw0: f64 = rng.random();
            let yaw_turns = rng.random_range(-1.0..=1.0);
            let d_mid = 0.5 * (d_lo + d_hi);
            let d_amp = 0.5 * (d_hi - d_lo);
            (0..n)
                .map(|i| {
                    let s = i as f64 / n as f64;
                    let w = TAU * s;
                    let pos = to_point(
                        u_max * (fu * w + phase[0]).sin(),
                        v_max * (fv * w + phase[1]).sin(),
                        d_mid + d_amp * (fd * w + phase[2]).sin(),
                    );
                    let r = NormalizedEuler::wrapped([
                        yaw0 + yaw_turns * s + 0.05 * (w + phase[3]).sin(),
                        VIEW_ATTITUDE[0] + MAX_TILT * (fp * w + phase[4]).sin(),
                        VIEW_ATTITUDE[1] + MAX_TILT * (fr * w + phase[5]).sin(),
                    ]);
                    (r, pos)
                })
                .collect()
        }
    };
    poses
        .into_iter()
        .map(|(r, t)| RigidPose::from_euler(&r, t))
        .collect()
}

/// Rounds to the six-fractional-digit grid used by the annotation files.
pub fn quantize(v: f64) -> f64 {
    let q = (v * 1e6).round() / 1e6;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: usize,
    pub class_id: usize,
    pub keypoints_2d: [[f64; 2]; NUM_KEYPOINTS],
    pub keypoints_3d: [[f64; 3]; NUM_KEYPOINTS],
    /// Normalized Euler angles of the body-to-camera rotation.
    pub rotation: [f64; 3],
    /// Body origin in the camera frame, metres.
    pub translation: [f64; 3],
    /// `[xmin, ymin, xmax, ymax]` in pixels.
    pub bbox: [f64; 4],
    pub intrinsics: CameraIntrinsics,
}

impl Annotation {
    pub fn pose(&self) -> RigidPose {
        RigidPose::from_euler(
            &NormalizedEuler::wrapped(self.rotation),
            Vec3::from(self.translation),
        )
    }

    /// Largest pixel distance between stored 2D keypoints and the projection of the
    /// stored 3D keypoints.
    pub fn max_reprojection_error(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for (p2, p3) in self.keypoints_2d.iter().zip(&self.keypoints_3d) {
            let proj = project_point(&self.intrinsics, &Vec3::from(*p3))?;
            worst = worst.max((proj - Vec2::from(*p2)).norm());
        }
        Ok(worst)
    }

    pub fn to_record(&self) -> String {
        fn list(v: &[f64]) -> String {
            let items: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
            format!("[{}]", items.join(","))
        }
        let kp2: Vec<String> = self.keypoints_2d.iter().map(|p| list(p)).collect();
        let kp3: Vec<String> = self.keypoints_3d.iter().map(|p| list(p)).collect();
        let k = &self.intrinsics;
        format!(
            "{{\"frame\":{},\"class_id\":{},\"keypoints_2d\":[{}],\"keypoints_3d\":[{}],\
             \"rotation\":{},\"translation\":{},\"bbox\":{},\
             \"intrinsics\":{{\"fx\":{:.6},\"fy\":{:.6},\"cx\":{:.6},\"cy\":{:.6}}}}}",
            self.frame,
            self.class_id,
            kp2.join(","),
            kp3.join(","),
            list(&self.rotation),
            list(&self.translation),
            list(&self.bbox),
            k.fx,
            k.fy,
            k.cx,
            k.cy,
        )
    }

    pub fn from_record(line: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub annotation: Annotation,
    pub scene_id: u32,
    pub background_id: u32,
    pub split: Split,
}

/// Seeded sky/horizon/ground texture with soft blobs and per-pixel grain.
pub fn render_background(background_id: u32, seed: u64, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xB6 ^ (u64::from(background_id) << 32)));
    let color = |rng: &mut ChaCha8Rng, lo: u8, hi: u8| -> [f64; 3] {
        std::array::from_fn(|_| f64::from(rng.random_range(lo..=hi)))
    };
    let sky_top = color(&mut rng, 60, 160);
    let sky_low = color(&mut rng, 150, 230);
    let ground = color(&mut rng, 40, 140);
    let horizon = rng.random_range(0.55..0.85);
    let ripple = (rng.random_range(4.0..14.0), rng.random_range(0.0..TAU), rng.random_range(0.0..25.0));
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                rng.random_range(0.05..0.25),
                color(&mut rng, 50, 220),
            )
        })
        .collect();
    let grain_seed = rng.random::<u64>();

    let mut img = Image::new(width, height);
    for y in 0..height {
        let v = (y as f64 + 0.5) / height as f64;
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64;
            let mut c = if v < horizon {
                let t = v / horizon;
                std::array::from_fn(|i| sky_top[i] + (sky_low[i] - sky_top[i]) * t)
            } else {
                let wave = ripple.2 * (ripple.0 * TAU * u + ripple.1).sin() * (v - horizon);
                ground.map(|g| g + wave)
            };
            for (center, radius, bc) in &blobs {
                let d2 = (u - center[0]).powi(2) + (v - center[1]).powi(2);
                let w = 0.6 * (-d2 / (radius * radius)).exp();
                for i in 0..3 {
                    c[i] += w * (bc[i] - c[i]);
                }
            }
            let grain = (splitmix64(grain_seed ^ ((y * width + x) as u64)) % 13) as f64 - 6.0;
            img.put(x, y, c.map(|ch| (ch + grain).clamp(0.0, 255.0) as u8));
        }
    }
    img
}

fn visible_keypoints(
    pose: &RigidPose,
    spec: &DroneClassSpec,
    frame_idx: usize,
) -> Result<[Vec3; NUM_KEYPOINTS]> {
    let pts = spec.propeller_layout.map(|p| pose.transform(&p));
    for (k, p) in pts.iter().enumerate() {
        if !(p.z > 0.0) {
            return Err(Error::Visibility {
                frame: frame_idx,
                keypoint: k,
                z: p.z,
            });
        }
    }
    Ok(pts)
}

/// Builds the annotation for a pose, quantized to the file grid.
pub fn annotate(
    camera: &CameraIntrinsics,
    pose: &RigidPose,
    spec: &DroneClassSpec,
    frame_idx: usize,
) -> Result<Annotation> {
    let r = matrix_to_euler_norm(&pose.rotation).0.map(quantize);
    let t = [pose.translation.x, pose.translation.y, pose.translation.z].map(quantize);
    let exact = RigidPose::from_euler(&NormalizedEuler::wrapped(r), Vec3::from(t));
    let pts = visible_keypoints(&exact, spec, frame_idx)?;

    let mut keypoints_3d = [[0.0; 3]; NUM_KEYPOINTS];
    let mut keypoints_2d = [[0.0; 2]; NUM_KEYPOINTS];
    let mut radius = 0.0f64;
    for (k, p) in pts.iter().enumerate() {
        keypoints_3d[k] = [p.x, p.y, p.z].map(quantize);
        let px = project_point(camera, p)?;
        keypoints_2d[k] = [quantize(px.x), quantize(px.y)];
        radius = radius.max(camera.fx.max(camera.fy) * spec.propeller_radius() / p.z);
    }
    let xs = keypoints_2d.map(|p| p[0]);
    let ys = keypoints_2d.map(|p| p[1]);
    let bbox = [
        xs.iter().copied().fold(f64::INFINITY, f64::min) - radius,
        ys.iter().copied().fold(f64::INFINITY, f64::min) - radius,
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + radius,
        ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) + radius,
    ]
    .map(quantize);

    Ok(Annotation {
        frame: frame_idx,
        class_id: spec.class_id,
        keypoints_2d,
        keypoints_3d,
        rotation: r,
        translation: t,
        bbox,
        intrinsics: *camera,
    })
}

/// Draws one frame over `background` (or a fresh one when `None`).
pub fn render_frame(
    cfg: &SceneConfig,
    pose: &RigidPose,
    spec: &DroneClassSpec,
    frame_idx: usize,
    background: Option<&Image>,
) -> Result<(Image, Annotation)> {
    let ann = annotate(&cfg.camera, pose, spec, frame_idx)?;
    let mut img = match background {
        Some(bg) => bg.clone(),
        None => render_background(cfg.backgrounds[0], cfg.rng_seed, cfg.width, cfg.height),
    };
    let k = &cfg.camera;
    let pose = ann.pose();
    let centre = project_point(k, &pose.translation)?;
    let centre = [centre.x, centre.y];
    let kp = ann.keypoints_2d;
    let radii: Vec<f64> = ann
        .keypoints_3d
        .iter()
        .map(|p| k.fx.max(k.fy) * spec.propeller_radius() / p[2])
        .collect();
    let arm = (0.25 * radii.iter().copied().fold(f64::INFINITY, f64::min)).max(0.6);
    for p in &kp {
        img.draw_segment(centre, *p, arm, ARM_COLOR);
    }
    // Body plate: propeller quad shrunk towards the centre, in perimeter order.
    let plate: Vec<[f64; 2]> = [0, 1, 3, 2]
        .iter()
        .map(|&i| {
            [
                centre[0] + 0.45 * (kp[i][0] - centre[0]),
                centre[1] + 0.45 * (kp[i][1] - centre[1]),
            ]
        })
        .collect();
    img.fill_convex(&plate, CLASS_COLORS[spec.class_id % NUM_CLASSES]);
    for (i, p) in kp.iter().enumerate() {
        img.fill_disk(p[0], p[1], radii[i], PROPELLER_COLORS[i]);
    }
    Ok((img, ann))
}

fn frame_stem(frame: usize) -> String {
    format!("frame_{frame:05}")
}

fn prepare_root(root: &Path, overwrite: bool) -> Result<()> {
    if root.exists() {
        let occupied = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .next()
            .is_some();
        if occupied {
            if !overwrite {
                return Err(Error::OutputExists(root.to_path_buf()));
            }
            std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))
}

fn write_sequence(
    cfg: &DatasetConfig,
    scene: &SceneConfig,
    spec: &DroneClassSpec,
    background_id: u32,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bg = render_background(background_id, cfg.seed, cfg.width, cfg.height);
    for (i, pose) in synth_trajectory(scene, spec, background_id).iter().enumerate() {
        let (img, ann) = render_frame(scene, pose, spec, i, Some(&bg))?;
        img.write_ppm(&dir.join(format!("{}.img", frame_stem(i))))?;
        let ann_path = dir.join(format!("{}.ann", frame_stem(i)));
        std::fs::write(&ann_path, ann.to_record() + "\n").map_err(|e| Error::io(&ann_path, e))?;
    }
    Ok(())
}

/// Renders every subsequence under `root` and writes the manifest last.
///
/// Refuses a non-empty `root` unless `overwrite` is set, in which case it is replaced.
pub fn generate_dataset(cfg: &DatasetConfig, root: &Path, overwrite: bool) -> Result<DatasetManifest> {
    let manifest = plan_manifest(cfg)?;
    prepare_root(root, overwrite)?;

    let jobs: Vec<(&SceneConfig, &DroneClassSpec, u32, PathBuf)> = cfg
        .scenes
        .iter()
        .flat_map(|scene| {
            cfg.classes.iter().flat_map(move |class| {
                scene.backgrounds.iter().map(move |&bg| {
                    (scene, class, bg, root.join(sequence_dir(scene.scene_id, &class.name, bg)))
                })
            })
        })
        .collect();

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    if workers <= 1 {
        for (scene, class, bg, dir) in &jobs {
            write_sequence(cfg, scene, class, *bg, dir)?;
        }
    } else {
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .try_for_each(|(scene, class, bg, dir)| write_sequence(cfg, scene, class, *bg, dir))
                    })
                })
                .collect();
            handles
                .into_iter()
                .try_for_each(|h| h.join().expect("generation worker panicked"))
        })?;
    }

    manifest.write(root)?;
    Ok(manifest)
}

/// A generated dataset opened from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = DatasetManifest::read(&root)?;
        Ok(Self { root, manifest })
    }

    pub fn len(&self) -> usize {
        self.manifest.total_frames()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global indices of all frames in `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        let mut out = Vec::new();
        let mut base = 0;
        for s in &self.manifest.sequences {
            if s.split == split {
                out.extend(base..base + s.frames);
            }
            base += s.frames;
        }
        out
    }

    pub fn frame_paths(&self, index: usize) -> Result<(PathBuf, PathBuf)> {
        let (seq, frame) = self.manifest.locate(index)?;
        let dir = self.root.join(&self.manifest.sequences[seq].dir);
        let stem = frame_stem(frame);
        Ok((dir.join(format!("{stem}.img")), dir.join(format!("{stem}.ann"))))
    }

    pub fn load_annotation(&self, index: usize) -> Result<Annotation> {
        let (_, ann_path) = self.frame_paths(index)?;
        let text = std::fs::read_to_string(&ann_path).map_err(|e| Error::load(&ann_path, e))?;
        Annotation::from_record(text.trim()).map_err(|e| Error::load(&ann_path, e))
    }

    pub fn load_sample(&self, index: usize) -> Result<Sample> {
        let (seq, _) = self.manifest.locate(index)?;
        let entry = &self.manifest.sequences[seq];
        let (img_path, _) = self.frame_paths(index)?;
        let image = Image::read_ppm(&img_path)?;
        if image.width != self.manifest.width || image.height != self.manifest.height {
            return Err(Error::load(
                &img_path,
                format!(
                    "image is {}x{}, manifest says {}x{}",
                    image.width, image.height, self.manifest.width, self.manifest.height
                ),
            ));
        }
        Ok(Sample {
            image,
            annotation: self.load_annotation(index)?,
            scene_id: entry.scene_id,
            background_id: entry.background_id,
            split: entry.split,
        })
    }
}

pub fn load_sample(dataset: &Dataset, index: usize) -> Result<Sample> {
    dataset.load_sample(index)
}
