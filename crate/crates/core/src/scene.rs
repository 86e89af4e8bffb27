//! Scene model: class vocabulary, sample scenes, 2D label maps, rigid
//! transforms, and the on-disk formats shared by every pipeline stage.
//!
//! A scene directory holds:
//!
//! ```text
//! <id>/points.bin       N x 3 little-endian f32 (x, y, z)
//! <id>/noisy.labels     N little-endian u16
//! <id>/clean.labels     optional, N little-endian u16
//! <id>/features.bin     optional, N x F little-endian f32
//! <id>/meta.json        id, classes, pose, num_points, feature_dim
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label value reserved for points without a semantic annotation.
pub const UNLABELED: u16 = u16::MAX;

/// Tolerance for the orthonormality check on pose rotation blocks.
pub const RIGID_TOL: f64 = 1e-6;

pub type Point3 = [f32; 3];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("length mismatch in {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("label {label} at index {index} is outside [0, {num_classes}) and is not the unlabeled sentinel")]
    LabelOutOfRange {
        index: usize,
        label: u16,
        num_classes: usize,
    },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("transform is not rigid: {0}")]
    NotRigid(String),
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Ordered list of semantic class names. Class `i` is `names[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl ClassVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(SceneError::InvalidVocabulary(format!(
                "need at least 2 classes, got {}",
                names.len()
            )));
        }
        if names.len() >= UNLABELED as usize {
            return Err(SceneError::InvalidVocabulary(format!(
                "{} classes collide with the unlabeled sentinel",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SceneError::InvalidVocabulary(format!(
                    "duplicate class name {n:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<u16> {
        self.names.iter().position(|n| n == name).map(|i| i as u16)
    }

    pub fn unlabeled_id(&self) -> u16 {
        UNLABELED
    }

    /// Vocabulary of `k` classes: `ground` followed by generic object names.
    pub fn synthetic(k: usize) -> Result<Self> {
        const BASE: [&str; 8] = [
            "ground", "car", "vegetation", "pole", "building", "fence", "trunk", "sign",
        ];
        let names = (0..k).map(|i| match BASE.get(i) {
            Some(n) => (*n).to_string(),
            None => format!("class{i}"),
        });
        Self::new(names)
    }
}

impl TryFrom<Vec<String>> for ClassVocabulary {
    type Error = SceneError;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<ClassVocabulary> for Vec<String> {
    fn from(v: ClassVocabulary) -> Self {
        v.names
    }
}

/// Check every label is a class index or the sentinel.
pub fn validate_labels(labels: &[u16], num_classes: usize) -> Result<()> {
    match labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l != UNLABELED && l as usize >= num_classes)
    {
        Some((index, &label)) => Err(SceneError::LabelOutOfRange {
            index,
            label,
            num_classes,
        }),
        None => Ok(()),
    }
}

/// A rigid transform stored as a row-major 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RigidTransform {
    m: [[f64; 4]; 4],
}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SceneError::NotRigid("non-finite entry".into()));
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(SceneError::NotRigid(format!("bottom row {:?}", m[3])));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > RIGID_TOL {
                    return Err(SceneError::NotRigid(format!(
                        "rotation columns {i},{j} dot = {dot}"
                    )));
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det < 0.0 {
            return Err(SceneError::NotRigid("reflection".into()));
        }
        Ok(Self { m })
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(SceneError::NotRigid(format!("expected 16 values, got {}", v.len())));
        }
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row.copy_from_slice(&v[i * 4..i * 4 + 4]);
        }
        Self::from_matrix(m)
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut m = Self::IDENTITY.m;
        for i in 0..3 {
            m[i][3] = t[i];
        }
        Self { m }
    }

    /// Rotation about +z by `angle` radians, then translation `t`.
    pub fn from_yaw(angle: f64, t: [f64; 3]) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            m: [
                [c, -s, 0.0, t[0]],
                [s, c, 0.0, t[1]],
                [0.0, 0.0, 1.0, t[2]],
                [0.0, 0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.m.iter().flatten().copied().collect()
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    pub fn inverse(&self) -> Self {
        let m = &self.m;
        let mut out = Self::IDENTITY.m;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = m[j][i];
            }
        }
        for i in 0..3 {
            out[i][3] = -(0..3).map(|k| out[i][k] * m[k][3]).sum::<f64>();
        }
        Self { m: out }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self { m: out }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TryFrom<Vec<f64>> for RigidTransform {
    type Error = SceneError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_row_major(&v)
    }
}

impl From<RigidTransform> for Vec<f64> {
    fn from(t: RigidTransform) -> Self {
        t.to_row_major()
    }
}

/// Apply `transform` to every point.
pub fn transform_points(points: &[[f64; 3]], transform: &RigidTransform) -> Result<Vec<[f64; 3]>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.iter().all(|v| v.is_finite()) {
                Ok(transform.apply(*p))
            } else {
                Err(SceneError::NonFinite(i))
            }
        })
        .collect()
}

#[inline]
pub fn to_f64(p: &Point3) -> [f64; 3] {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

/// Row-major N x F feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Features {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One LiDAR-style sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScene {
    pub id: String,
    pub points: Vec<Point3>,
    pub clean_labels: Option<Vec<u16>>,
    pub noisy_labels: Vec<u16>,
    pub pose: RigidTransform,
    pub features: Option<Features>,
    pub num_classes: usize,
}

impl SampleScene {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points_f64(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(to_f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        let check_len = |what: &str, found: usize| {
            if found == n {
                Ok(())
            } else {
                Err(SceneError::LengthMismatch {
                    what: format!("{} of scene {}", what, self.id),
                    expected: n,
                    found,
                })
            }
        };
        check_len("noisy labels", self.noisy_labels.len())?;
        validate_labels(&self.noisy_labels, self.num_classes)?;
        if let Some(clean) = &self.clean_labels {
            check_len("clean labels", clean.len())?;
            validate_labels(clean, self.num_classes)?;
        }
        if let Some(f) = &self.features {
            if f.dim == 0 || f.data.len() != n * f.dim {
                return Err(SceneError::LengthMismatch {
                    what: format!("features of scene {}", self.id),
                    expected: n * f.dim,
                    found: f.data.len(),
                });
            }
        }
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(SceneError::NonFinite(i));
        }
        Ok(())
    }
}

/// Axis-aligned crop applied at load time; points outside are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropBox {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl CropBox {
    pub const SEMANTIC_KITTI: Self = Self {
        min: [-50.0, -50.0, -4.0],
        max: [50.0, 50.0, 2.0],
    };
    pub const NUSCENES: Self = Self {
        min: [-100.0, -100.0, -4.0],
        max: [100.0, 100.0, 17.0],
    };

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub id: String,
    pub num_points: usize,
    pub classes: ClassVocabulary,
    pub pose: RigidTransform,
    #[serde(default)]
    pub feature_dim: usize,
}

pub const POINTS_FILE: &str = "points.bin";
pub const NOISY_FILE: &str = "noisy.labels";
pub const CLEAN_FILE: &str = "clean.labels";
pub const FEATURES_FILE: &str = "features.bin";
pub const META_FILE: &str = "meta.json";

pub fn encode_points(points: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 12);
    for p in points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_points(bytes: &[u8]) -> Result<Vec<Point3>> {
    if bytes.len() % 12 != 0 {
        return Err(SceneError::LengthMismatch {
            what: "points file bytes (multiple of 12)".into(),
            expected: bytes.len() - bytes.len() % 12,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| {
            [
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                f32::from_le_bytes([c[8], c[9], c[10], c[11]]),
            ]
        })
        .collect())
}

pub fn encode_labels(labels: &[u16]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.to_le_bytes()).collect()
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u16>> {
    if bytes.len() % 2 != 0 {
        return Err(SceneError::LengthMismatch {
            what: "labels file bytes (multiple of 2)".into(),
            expected: bytes.len() - 1,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

fn encode_f32s(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn write_labels(path: &Path, labels: &[u16]) -> Result<()> {
    fs::write(path, encode_labels(labels)).map_err(io_err(path))
}

pub fn read_labels(path: &Path) -> Result<Vec<u16>> {
    decode_labels(&fs::read(path).map_err(io_err(path))?)
}

pub fn read_meta(dir: &Path) -> Result<SceneMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| SceneError::MalformedHeader {
        path,
        reason: e.to_string(),
    })
}

/// Read a scene directory. Returns the scene and its class vocabulary.
pub fn read_scene(dir: &Path) -> Result<(SampleScene, ClassVocabulary)> {
    read_scene_cropped(dir, None)
}

pub fn read_scene_cropped(
    dir: &Path,
    crop: Option<&CropBox>,
) -> Result<(SampleScene, ClassVocabulary)> {
    let meta = read_meta(dir)?;
    let points_path = dir.join(POINTS_FILE);
    let points = decode_points(&fs::read(&points_path).map_err(io_err(&points_path))?)?;
    if points.len() != meta.num_points {
        return Err(SceneError::LengthMismatch {
            what: format!("points of {}", dir.display()),
            expected: meta.num_points,
            found: points.len(),
        });
    }
    let noisy_labels = read_labels(&dir.join(NOISY_FILE))?;
    let clean_path = dir.join(CLEAN_FILE);
    let clean_labels = if clean_path.exists() {
        Some(read_labels(&clean_path)?)
    } else {
        None
    };
    let features = if meta.feature_dim > 0 {
        let path = dir.join(FEATURES_FILE);
        Some(Features {
            dim: meta.feature_dim,
            data: decode_f32s(&fs::read(&path).map_err(io_err(&path))?),
        })
    } else {
        None
    };
    let mut scene = SampleScene {
        id: meta.id,
        points,
        clean_labels,
        noisy_labels,
        pose: meta.pose,
        features,
        num_classes: meta.classes.len(),
    };
    scene.validate()?;
    if let Some(crop) = crop {
        scene = crop_scene(&scene, crop);
    }
    Ok((scene, meta.classes))
}

/// Keep only the points inside `crop`.
pub fn crop_scene(scene: &SampleScene, crop: &CropBox) -> SampleScene {
    let keep: Vec<usize> = (0..scene.len())
        .filter(|&i| crop.contains(&scene.points[i]))
        .collect();
    let pick = |v: &[u16]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
    SampleScene {
        id: scene.id.clone(),
        points: keep.iter().map(|&i| scene.points[i]).collect(),
        clean_labels: scene.clean_labels.as_deref().map(pick),
        noisy_labels: pick(&scene.noisy_labels),
        pose: scene.pose,
        features: scene.features.as_ref().map(|f| Features {
            dim: f.dim,
            data: keep.iter().flat_map(|&i| f.row(i).iter().copied()).collect(),
        }),
        num_classes: scene.num_classes,
    }
}

pub fn write_scene(scene: &SampleScene, vocab: &ClassVocabulary, dir: &Path) -> Result<()> {
    scene.validate()?;
    if scene.num_classes != vocab.len() {
        return Err(SceneError::InvalidVocabulary(format!(
            "scene has {} classes, vocabulary {}",
            scene.num_classes,
            vocab.len()
        )));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = SceneMeta {
        id: scene.id.clone(),
        num_points: scene.len(),
        classes: vocab.clone(),
        pose: scene.pose,
        feature_dim: scene.features.as_ref().map_or(0, |f| f.dim),
    };
    let meta_path = dir.join(META_FILE);
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    fs::write(&meta_path, text).map_err(io_err(&meta_path))?;
    let points_path = dir.join(POINTS_FILE);
    fs::write(&points_path, encode_points(&scene.points)).map_err(io_err(&points_path))?;
    write_labels(&dir.join(NOISY_FILE), &scene.noisy_labels)?;
    if let Some(clean) = &scene.clean_labels {
        write_labels(&dir.join(CLEAN_FILE), clean)?;
    }
    if let Some(f) = &scene.features {
        let path = dir.join(FEATURES_FILE);
        fs::write(&path, encode_f32s(&f.data)).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Read every scene directory under `root` in lexicographic order.
pub fn read_dataset(
    root: &Path,
    crop: Option<&CropBox>,
) -> Result<(ClassVocabulary, Vec<SampleScene>)> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    let mut vocab: Option<ClassVocabulary> = None;
    let mut scenes = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let (scene, v) = read_scene_cropped(&dir, crop)?;
        match &vocab {
            Some(existing) if existing != &v => {
                return Err(SceneError::InvalidVocabulary(format!(
                    "{} disagrees with earlier scenes",
                    dir.display()
                )))
            }
            Some(_) => {}
            None => vocab = Some(v),
        }
        scenes.push(scene);
    }
    let vocab = vocab.ok_or_else(|| SceneError::MalformedHeader {
        path: root.to_path_buf(),
        reason: "no scene directories found".into(),
    })?;
    Ok((vocab, scenes))
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Camera model: intrinsics plus the sample-frame to camera-frame extrinsic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    intrinsics: Intrinsics,
    extrinsic: RigidTransform,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsic: RigidTransform) -> Result<Self> {
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(SceneError::InvalidCamera("non-finite intrinsics".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(SceneError::InvalidCamera(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self {
            intrinsics,
            extrinsic,
        })
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn extrinsic(&self) -> &RigidTransform {
        &self.extrinsic
    }

    /// Project a camera-frame point. `None` when behind or on the image plane.
    #[inline]
    pub fn project_camera_point(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy))
    }
}

/// Calibration JSON stored next to each label map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<RigidTransform>,
    pub intrinsics: Intrinsics,
    pub extrinsic: RigidTransform,
}

/// Per-pixel class labels for one camera view.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap2D {
    pub width: usize,
    pub height: usize,
    /// Row-major, `height * width` entries.
    pub labels: Vec<u16>,
    pub camera: Camera,
}

impl LabelMap2D {
    pub fn new(width: usize, height: usize, labels: Vec<u16>, camera: Camera) -> Result<Self> {
        if labels.len() != width * height {
            return Err(SceneError::LengthMismatch {
                what: "label map pixels".into(),
                expected: width * height,
                found: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
            camera,
        })
    }

    pub fn filled(width: usize, height: usize, label: u16, camera: Camera) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
            camera,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, label: u16) {
        self.labels[row * self.width + col] = label;
    }
}

/// Encode a label grid: ASCII `"W H\n"` followed by `W*H` little-endian u16.
pub fn encode_label_grid(width: usize, height: usize, labels: &[u16]) -> Vec<u8> {
    let mut out = format!("{width} {height}\n").into_bytes();
    out.extend(encode_labels(labels));
    out
}

pub fn decode_label_grid(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let bad = |reason: &str| SceneError::MalformedHeader {
        path: PathBuf::from("<label map>"),
        reason: reason.to_string(),
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header newline"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII"))?;
    let mut parts = header.split_ascii_whitespace();
    let mut dim = || -> Result<usize> {
        parts
            .next()
            .ok_or_else(|| bad("header needs `W H`"))?
            .parse()
            .map_err(|_| bad("header dimensions are not integers"))
    };
    let (width, height) = (dim()?, dim()?);
    if parts.next().is_some() {
        return Err(bad("trailing header tokens"));
    }
    let labels = decode_labels(&bytes[nl + 1..])?;
    if labels.len() != width * height {
        return Err(SceneError::LengthMismatch {
            what: "label map pixels".into(),
            expected: width * height,
            found: labels.len(),
        });
    }
    Ok((width, height, labels))
}

/// Read `<stem>.pgm` and `<stem>.json` into a label map.
pub fn read_label_map(grid_path: &Path, num_classes: usize) -> Result<LabelMap2D> {
    let bytes = fs::read(grid_path).map_err(io_err(grid_path))?;
    let (width, height, labels) = decode_label_grid(&bytes).map_err(|e| match e {
        SceneError::MalformedHeader { reason, .. } => SceneError::MalformedHeader {
            path: grid_path.to_path_buf(),
            reason,
        },
        other => other,
    })?;
    validate_labels(&labels, num_classes)?;
    let calib_path = grid_path.with_extension("json");
    let text = fs::read_to_string(&calib_path).map_err(io_err(&calib_path))?;
    let calib: CalibrationFile =
        serde_json::from_str(&text).map_err(|e| SceneError::MalformedHeader {
            path: calib_path.clone(),
            reason: e.to_string(),
        })?;
    let camera = Camera::new(calib.intrinsics, calib.extrinsic)?;
    LabelMap2D::new(width, height, labels, camera)
}

pub fn write_label_map(grid_path: &Path, map: &LabelMap2D) -> Result<()> {
    fs::write(grid_path, encode_label_grid(map.width, map.height, &map.labels))
        .map_err(io_err(grid_path))?;
    let calib = CalibrationFile {
        pose: None,
        intrinsics: map.camera.intrinsics,
        extrinsic: map.camera.extrinsic,
    };
    let calib_path = grid_path.with_extension("json");
    fs::write(
        &calib_path,
        serde_json::to_string_pretty(&calib).expect("calibration serializes"),
    )
    .map_err(io_err(&calib_path))
}
