//! Pseudo-label generation from 2D label maps.
//!
//! Free-text class descriptions map to class ids through a synonym
//! dictionary; per-view label maps are unprojected onto points through the
//! pinhole model; labels are then refined by majority voting inside voxels
//! shared by temporally adjacent frames.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scene::{ClassVocabulary, LabelMap2D, SampleScene, SceneError, UNLABELED};

/// Dictionary shipped for the SemanticKITTI 19-class vocabulary.
pub const SEMANTIC_KITTI_DICT: &str = include_str!("../data/semantickitti_dict.json");
/// Dictionary shipped for the nuScenes 16-class vocabulary.
pub const NUSCENES_DICT: &str = include_str!("../data/nuscenes_dict.json");

#[derive(Debug, Error)]
pub enum LabelGenError {
    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("frame {frame}: {reason}")]
    InvalidFrame { frame: usize, reason: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Synonym {
    tokens: Vec<String>,
    class: u16,
}

/// Lowercase synonym phrases mapped to class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDictionary {
    vocab: ClassVocabulary,
    /// Longest phrase first (by token count, then characters), then file order.
    synonyms: Vec<Synonym>,
}

impl LabelDictionary {
    /// Build from `(class name, synonyms)` pairs. Class indices follow the
    /// pair order.
    pub fn new<S: AsRef<str>>(entries: &[(S, Vec<S>)]) -> Result<Self, LabelGenError> {
        let vocab = ClassVocabulary::new(entries.iter().map(|(c, _)| c.as_ref().to_string()))
            .map_err(|e| LabelGenError::InvalidDictionary(e.to_string()))?;
        let mut seen = HashMap::new();
        let mut synonyms = Vec::new();
        for (class, (_, syns)) in entries.iter().enumerate() {
            for s in syns {
                let tokens = tokenize(s.as_ref());
                if tokens.is_empty() {
                    return Err(LabelGenError::InvalidDictionary(format!(
                        "empty synonym for class {}",
                        vocab.names()[class]
                    )));
                }
                let key = tokens.join(" ");
                if let Some(prev) = seen.insert(key.clone(), class) {
                    return Err(LabelGenError::InvalidDictionary(format!(
                        "synonym {key:?} listed for both {} and {}",
                        vocab.names()[prev],
                        vocab.names()[class]
                    )));
                }
                synonyms.push(Synonym {
                    tokens,
                    class: class as u16,
                });
            }
        }
        synonyms.sort_by(|a, b| {
            let chars = |s: &Synonym| s.tokens.iter().map(String::len).sum::<usize>();
            b.tokens
                .len()
                .cmp(&a.tokens.len())
                .then(chars(b).cmp(&chars(a)))
        });
        Ok(Self { vocab, synonyms })
    }

    /// Parse a JSON object mapping class name to a synonym list.
    pub fn from_json(text: &str) -> Result<Self, LabelGenError> {
        let bad = |m: String| LabelGenError::InvalidDictionary(m);
        let value: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| bad("top level must be an object".into()))?;
        let mut entries = Vec::with_capacity(obj.len());
        for (class, syns) in obj {
            let list = syns
                .as_array()
                .ok_or_else(|| bad(format!("{class}: synonyms must be an array")))?
                .iter()
                .map(|s| {
                    s.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| bad(format!("{class}: synonyms must be strings")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            entries.push((class.clone(), list));
        }
        Self::new(&entries)
    }

    pub fn read(path: &Path) -> Result<Self, LabelGenError> {
        let text = fs::read_to_string(path).map_err(|source| LabelGenError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn semantic_kitti() -> Self {
        Self::from_json(SEMANTIC_KITTI_DICT).expect("bundled dictionary is valid")
    }

    pub fn nuscenes() -> Self {
        Self::from_json(NUSCENES_DICT).expect("bundled dictionary is valid")
    }

    pub fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn num_synonyms(&self) -> usize {
        self.synonyms.len()
    }

    /// Synonym phrase to class index, in match priority order.
    pub fn entries(&self) -> impl Iterator<Item = (String, u16)> + '_ {
        self.synonyms.iter().map(|s| (s.tokens.join(" "), s.class))
    }
}

/// Class of the longest synonym phrase occurring as whole tokens in
/// `text`, or [`UNLABELED`].
pub fn map_description(text: &str, dict: &LabelDictionary) -> u16 {
    let tokens = tokenize(text);
    for syn in &dict.synonyms {
        let n = syn.tokens.len();
        if n <= tokens.len() && tokens.windows(n).any(|w| w == syn.tokens.as_slice()) {
            return syn.class;
        }
    }
    dict.vocab.unlabeled_id()
}

/// How points compete for a pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnprojectMode {
    /// Every in-frustum point takes the pixel label.
    #[default]
    AllInFrustum,
    /// Only the nearest point per pixel takes the pixel label.
    NearestDepth,
}

fn pixel_of(map: &LabelMap2D, p: [f64; 3]) -> Option<(usize, f64)> {
    let q = map.camera.extrinsic().apply(p);
    let (u, v) = map.camera.project_camera_point(q)?;
    if !(u >= 0.0 && v >= 0.0 && u < map.width as f64 && v < map.height as f64) {
        return None;
    }
    Some((v as usize * map.width + u as usize, q[2]))
}

/// Per-point labels from all views, resolved by majority then view order.
pub fn unproject_labels(scene: &SampleScene, maps: &[LabelMap2D]) -> Vec<u16> {
    unproject_labels_with(scene, maps, UnprojectMode::AllInFrustum)
}

pub fn unproject_labels_with(scene: &SampleScene, maps: &[LabelMap2D], mode: UnprojectMode) -> Vec<u16> {
    let pts = scene.points_f64();
    // candidates[view][point]
    let candidates: Vec<Vec<u16>> = maps
        .par_iter()
        .map(|map| {
            let hits: Vec<Option<(usize, f64)>> = pts.iter().map(|&p| pixel_of(map, p)).collect();
            let mut owner: Option<Vec<Option<(f64, usize)>>> = None;
            if mode == UnprojectMode::NearestDepth {
                let mut best = vec![None::<(f64, usize)>; map.labels.len()];
                for (i, h) in hits.iter().enumerate() {
                    if let Some((px, z)) = *h {
                        if best[px].is_none_or(|(bz, _)| z < bz) {
                            best[px] = Some((z, i));
                        }
                    }
                }
                owner = Some(best);
            }
            hits.iter()
                .enumerate()
                .map(|(i, h)| match *h {
                    Some((px, _)) => {
                        let wins = owner
                            .as_ref()
                            .is_none_or(|o| o[px].is_some_and(|(_, j)| j == i));
                        if wins {
                            map.labels[px]
                        } else {
                            UNLABELED
                        }
                    }
                    None => UNLABELED,
                })
                .collect()
        })
        .collect();
    (0..pts.len())
        .map(|i| resolve_views(candidates.iter().map(|c| c[i])))
        .collect()
}

/// Majority over labeled candidates; ties go to the class seen in the
/// earliest view.
fn resolve_views(candidates: impl Iterator<Item = u16>) -> u16 {
    let mut tally: Vec<(u16, usize)> = Vec::new();
    for l in candidates.filter(|&l| l != UNLABELED) {
        match tally.iter_mut().find(|(c, _)| *c == l) {
            Some(e) => e.1 += 1,
            None => tally.push((l, 1)),
        }
    }
    let mut best: Option<(u16, usize)> = None;
    for &(c, n) in &tally {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((c, n));
        }
    }
    best.map_or(UNLABELED, |(c, _)| c)
}

/// One frame: a scene whose `noisy_labels` hold unprojected labels, and the
/// views it was labeled from.
#[derive(Debug, Clone)]
pub struct Frame {
    pub scene: SampleScene,
    pub maps: Vec<LabelMap2D>,
}

/// Temporally ordered frames. Poses map each frame into a shared world
/// frame.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    /// Neighbor frames per side used in voting.
    pub adjacency: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, adjacency: usize) -> Self {
        Self { frames, adjacency }
    }

    /// Overwrite each frame's labels with its unprojection.
    pub fn unproject(&mut self, mode: UnprojectMode) {
        for f in &mut self.frames {
            f.scene.noisy_labels = unproject_labels_with(&f.scene, &f.maps, mode);
        }
    }
}

pub type VoxelKey = [i64; 3];

pub fn voxel_key(p: [f64; 3], size: f64) -> VoxelKey {
    [
        (p[0] / size).floor() as i64,
        (p[1] / size).floor() as i64,
        (p[2] / size).floor() as i64,
    ]
}

/// Votes inside one voxel: `(class, count, nearest frame distance)`.
#[derive(Debug, Clone, Default)]
struct VoxelVotes(Vec<(u16, u32, usize)>);

impl VoxelVotes {
    fn add(&mut self, class: u16, distance: usize) {
        match self.0.iter_mut().find(|(c, _, _)| *c == class) {
            Some(e) => {
                e.1 += 1;
                e.2 = e.2.min(distance);
            }
            None => self.0.push((class, 1, distance)),
        }
    }

    /// Highest count; ties to the smallest frame distance, then lowest class.
    fn winner(&self) -> Option<u16> {
        self.0
            .iter()
            .min_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)))
            .map(|e| e.0)
    }
}

/// Refine every frame's labels by voxel majority over the frame and its
/// neighbors, expressed in the frame's own coordinates.
pub fn voxel_vote(seq: &FrameSequence, voxel_size: f64) -> Result<Vec<Vec<u16>>, LabelGenError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(LabelGenError::InvalidVoxelSize(voxel_size));
    }
    for (i, f) in seq.frames.iter().enumerate() {
        if f.scene.noisy_labels.len() != f.scene.points.len() {
            return Err(LabelGenError::InvalidFrame {
                frame: i,
                reason: format!(
                    "{} labels for {} points",
                    f.scene.noisy_labels.len(),
                    f.scene.points.len()
                ),
            });
        }
    }
    let n = seq.frames.len();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let current = &seq.frames[i].scene;
            let to_local = current.pose.inverse();
            let lo = i.saturating_sub(seq.adjacency);
            let hi = (i + seq.adjacency).min(n - 1);
            let mut votes: HashMap<VoxelKey, VoxelVotes> = HashMap::new();
            for j in lo..=hi {
                let other = &seq.frames[j].scene;
                let t = to_local.compose(&other.pose);
                for (p, &l) in other.points.iter().zip(&other.noisy_labels) {
                    if l == UNLABELED {
                        continue;
                    }
                    let q = t.apply([p[0] as f64, p[1] as f64, p[2] as f64]);
                    votes.entry(voxel_key(q, voxel_size)).or_default().add(l, i.abs_diff(j));
                }
            }
            current
                .points
                .iter()
                .zip(&current.noisy_labels)
                .map(|(p, &l)| {
                    let key = voxel_key([p[0] as f64, p[1] as f64, p[2] as f64], voxel_size);
                    votes.get(&key).and_then(VoxelVotes::winner).unwrap_or(l)
                })
                .collect()
        })
        .collect())
}

/// Read every `*.pgm` label map in `dir` (sorted by name) with its
/// calibration sidecar.
pub fn read_label_maps(dir: &Path, num_classes: usize) -> Result<Vec<LabelMap2D>, LabelGenError> {
    let io = |source| LabelGenError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(crate::scene::read_label_map(p, num_classes)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, Intrinsics, RigidTransform};

    fn camera() -> Camera {
        Camera::new(
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 320.0,
                cy: 240.0,
            },
            RigidTransform::IDENTITY,
        )
        .unwrap()
    }

    fn scene(points: Vec<[f32; 3]>, labels: Vec<u16>, pose: RigidTransform) -> SampleScene {
        SampleScene {
            id: "f".into(),
            points,
            clean_labels: None,
            noisy_labels: labels,
            pose,
            features: None,
            num_classes: 4,
        }
    }

    #[test]
    fn dictionary_lookup() {
        let kitti = LabelDictionary::semantic_kitti();
        assert_eq!(kitti.vocabulary().len(), 19);
        let id = |name| kitti.vocabulary().index_of(name).unwrap();
        assert_eq!(map_description("tree trunk", &kitti), id("trunk"));
        assert_eq!(map_description("a tall tree", &kitti), id("vegetation"));
        assert_eq!(map_description("Bicycle", &kitti), id("bicycle"));
        assert_eq!(map_description("spaceship", &kitti), UNLABELED);
        assert_eq!(map_description("a dump truck, parked", &kitti), id("other-vehicle"));
        assert_eq!(map_description("semi-trailer", &kitti), id("other-vehicle"));
        // whole tokens only
        assert_eq!(map_description("scar", &kitti), UNLABELED);
        let nu = LabelDictionary::nuscenes();
        assert_eq!(nu.vocabulary().len(), 16);
        assert_eq!(
            map_description("tree trunk", &nu),
            nu.vocabulary().index_of("vegetation").unwrap()
        );
    }

    #[test]
    fn dictionary_rejects_duplicates() {
        let entries = vec![("a", vec!["x"]), ("b", vec!["X"])];
        assert!(LabelDictionary::new(&entries).is_err());
        assert!(LabelDictionary::from_json("[1]").is_err());
    }

    #[test]
    fn pinhole_unprojection() {
        let mut map = LabelMap2D::filled(640, 480, UNLABELED, camera());
        map.set(320, 240, 1);
        map.set(330, 240, 2);
        let s = scene(
            vec![[0.0, 0.0, 10.0], [1.0, 0.0, 10.0], [0.0, 0.0, -5.0], [50.0, 0.0, 1.0]],
            vec![UNLABELED; 4],
            RigidTransform::IDENTITY,
        );
        assert_eq!(unproject_labels(&s, &[map]), vec![1, 2, UNLABELED, UNLABELED]);
    }

    #[test]
    fn views_majority_then_order() {
        let maps: Vec<_> = [3u16, 1, 1, 2]
            .iter()
            .map(|&l| LabelMap2D::filled(640, 480, l, camera()))
            .collect();
        let s = scene(vec![[0.0, 0.0, 10.0]], vec![UNLABELED], RigidTransform::IDENTITY);
        assert_eq!(unproject_labels(&s, &maps), vec![1]);
        assert_eq!(unproject_labels(&s, &maps[2..]), vec![1]);
        assert_eq!(unproject_labels(&s, &[maps[3].clone(), maps[0].clone()]), vec![2]);
    }

    #[test]
    fn nearest_depth_occludes() {
        let map = LabelMap2D::filled(640, 480, 2, camera());
        let s = scene(
            vec![[0.0, 0.0, 10.0], [0.0, 0.0, 5.0]],
            vec![UNLABELED; 2],
            RigidTransform::IDENTITY,
        );
        let maps = [map];
        assert_eq!(unproject_labels(&s, &maps), vec![2, 2]);
        assert_eq!(
            unproject_labels_with(&s, &maps, UnprojectMode::NearestDepth),
            vec![UNLABELED, 2]
        );
    }

    fn frame(points: Vec<[f32; 3]>, labels: Vec<u16>, pose: RigidTransform) -> Frame {
        Frame {
            scene: scene(points, labels, pose),
            maps: Vec::new(),
        }
    }

    #[test]
    fn vote_majority() {
        let f = frame(
            vec![[0.01, 0.01, 0.01], [0.02, 0.02, 0.02], [0.03, 0.03, 0.03], [0.04; 3]],
            vec![2, 2, 3, UNLABELED],
            RigidTransform::IDENTITY,
        );
        let out = voxel_vote(&FrameSequence::new(vec![f], 0), 0.05).unwrap();
        assert_eq!(out, vec![vec![2, 2, 2, 2]]);
    }

    #[test]
    fn vote_tie_nearest_frame() {
        let a = frame(vec![[0.01; 3]], vec![3], RigidTransform::IDENTITY);
        let b = frame(vec![[0.02; 3]], vec![2], RigidTransform::IDENTITY);
        let seq = FrameSequence::new(vec![a, b], 1);
        let out = voxel_vote(&seq, 0.05).unwrap();
        assert_eq!(out, vec![vec![3], vec![2]]);
        assert!(voxel_vote(&seq, 0.0).is_err());
    }

    #[test]
    fn vote_uses_poses() {
        // frame 1 sits 1 m further along x in the world
        let a = frame(vec![[1.01, 0.01, 0.01]], vec![UNLABELED], RigidTransform::IDENTITY);
        let b = frame(
            vec![[0.02, 0.02, 0.02]],
            vec![1],
            RigidTransform::translation([1.0, 0.0, 0.0]),
        );
        let out = voxel_vote(&FrameSequence::new(vec![a, b], 1), 0.05).unwrap();
        assert_eq!(out, vec![vec![1], vec![1]]);
    }
}
