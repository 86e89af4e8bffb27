//! Deterministic synthetic scenes with clean labels and controlled label
//! noise.
//!
//! A scene is a jittered ground plane (class 0) carrying separated objects.
//! Each non-ground class has a fixed shape archetype so that class identity
//! is recoverable from local geometry:
//!
//! | class % 4 | archetype                     | point count scale |
//! |-----------|-------------------------------|-------------------|
//! | 1         | low box (car-like)            | 0.6               |
//! | 2         | raised wide cylinder (crown)  | 1.2               |
//! | 3         | thin tall cylinder (pole)     | 0.3               |
//! | 0         | tall thin box (wall/building) | 4.8               |
//!
//! The scale multiplies the count drawn from `points_per_object`.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SpatialGrid;
use crate::scene::{self, ClassVocabulary, RigidTransform, SampleScene, SceneError, UNLABELED};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth configuration: {0}")]
    InvalidConfig(String),
    #[error("scene {0} has no clean labels")]
    MissingCleanLabels(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Label-noise processes applied on top of clean labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Probability of flipping to a uniformly random different class.
    pub symmetric_rate: f64,
    /// Distance to a differently-labeled neighbor under which boundary
    /// noise applies, in meters.
    pub boundary_band: f64,
    pub boundary_rate: f64,
    pub unlabeled_rate: f64,
    /// Row-stochastic `K x K` transition matrix. When set it replaces the
    /// symmetric process: each point draws its noisy label from the row of
    /// its clean class.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<f64>>>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            symmetric_rate: 0.0,
            boundary_band: 0.0,
            boundary_rate: 0.0,
            unlabeled_rate: 0.0,
            confusion: None,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self, num_classes: usize) -> Result<(), SynthError> {
        for (name, p) in [
            ("symmetric_rate", self.symmetric_rate),
            ("boundary_rate", self.boundary_rate),
            ("unlabeled_rate", self.unlabeled_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidConfig(format!("{name} = {p} not in [0, 1]")));
            }
        }
        if !(self.boundary_band >= 0.0) {
            return Err(SynthError::InvalidConfig(format!(
                "boundary_band = {} is negative",
                self.boundary_band
            )));
        }
        if let Some(m) = &self.confusion {
            if m.len() != num_classes || m.iter().any(|r| r.len() != num_classes) {
                return Err(SynthError::InvalidConfig(format!(
                    "confusion matrix must be {num_classes} x {num_classes}"
                )));
            }
            for (i, row) in m.iter().enumerate() {
                let s: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return Err(SynthError::InvalidConfig(format!(
                        "confusion row {i} is not a probability distribution"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub num_classes: usize,
    /// Inclusive range.
    pub objects_per_scene: [usize; 2],
    /// Inclusive range, before the per-class scale.
    pub points_per_object: [usize; 2],
    pub ground_points: usize,
    /// Side of the square ground patch in meters.
    pub ground_extent: f64,
    /// Objects are placed wholly inside one square cell of this side, on a
    /// grid anchored at the ground patch corner. Matching the clustering
    /// block size keeps every object in a single block.
    pub placement_cell: f64,
    pub noise: NoiseSpec,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_scenes: 30,
            num_classes: 5,
            objects_per_scene: [6, 10],
            points_per_object: [250, 350],
            ground_points: 1500,
            ground_extent: 40.0,
            placement_cell: 10.0,
            noise: NoiseSpec {
                symmetric_rate: 0.3,
                boundary_band: 0.5,
                boundary_rate: 0.5,
                unlabeled_rate: 0.0,
                confusion: None,
            },
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes = {} < 2", self.num_classes));
        }
        if self.objects_per_scene[0] > self.objects_per_scene[1] {
            return bad("objects_per_scene range is empty".into());
        }
        let [lo, hi] = self.points_per_object;
        if lo > hi || (hi == 0 && self.objects_per_scene[1] > 0) {
            return bad("points_per_object range is empty".into());
        }
        if !(self.ground_extent > 0.0) {
            return bad(format!("ground_extent = {}", self.ground_extent));
        }
        if !(self.placement_cell > 0.0) {
            return bad(format!("placement_cell = {}", self.placement_cell));
        }
        self.noise.validate(self.num_classes)
    }

    pub fn vocabulary(&self) -> Result<ClassVocabulary, SynthError> {
        Ok(ClassVocabulary::synthetic(self.num_classes)?)
    }
}

/// Seeded generator for one `(seed, index)` pair.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Lowest sampled height of walls standing on the ground.
const BASE: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Box { half_l: f64, half_w: f64, h: f64 },
    /// Side wall from `base` to `h`, plus the top disk.
    Cylinder { radius: f64, base: f64, h: f64 },
}

impl Shape {
    fn for_class(class: usize, rng: &mut ChaCha8Rng) -> Self {
        match class % 4 {
            1 => Shape::Box {
                half_l: rng.random_range(1.8..2.3),
                half_w: rng.random_range(0.8..1.0),
                h: rng.random_range(1.3..1.7),
            },
            2 => Shape::Cylinder {
                radius: rng.random_range(1.0..1.6),
                base: 1.8,
                h: rng.random_range(2.8..3.8),
            },
            3 => Shape::Cylinder {
                radius: rng.random_range(0.1..0.15),
                base: BASE,
                h: rng.random_range(4.0..6.0),
            },
            _ => Shape::Box {
                half_l: rng.random_range(2.5..3.5),
                half_w: rng.random_range(0.15..0.25),
                h: rng.random_range(3.5..5.0),
            },
        }
    }

    fn count_scale(class: usize) -> f64 {
        match class % 4 {
            1 => 0.6,
            2 => 1.2,
            3 => 0.3,
            _ => 4.8,
        }
    }

    fn footprint_radius(&self) -> f64 {
        match *self {
            Shape::Box { half_l, half_w, .. } => half_l.hypot(half_w),
            Shape::Cylinder { radius, .. } => radius,
        }
    }

    /// Surface sample (sides and top) in object coordinates.
    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            Shape::Box { half_l, half_w, h } => {
                let side_h = h - BASE;
                let areas = [
                    2.0 * half_l * side_h,
                    2.0 * half_w * side_h,
                    4.0 * half_l * half_w,
                ];
                let total: f64 = areas.iter().sum();
                let u = rng.random_range(0.0..total);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                if u < areas[0] {
                    [
                        rng.random_range(-half_l..half_l),
                        sign * half_w,
                        rng.random_range(BASE..h),
                    ]
                } else if u < areas[0] + areas[1] {
                    [
                        sign * half_l,
                        rng.random_range(-half_w..half_w),
                        rng.random_range(BASE..h),
                    ]
                } else {
                    [
                        rng.random_range(-half_l..half_l),
                        rng.random_range(-half_w..half_w),
                        h,
                    ]
                }
            }
            Shape::Cylinder { radius, base, h } => {
                let side = TAU * radius * (h - base);
                let top = std::f64::consts::PI * radius * radius;
                let theta = rng.random_range(0.0..TAU);
                if rng.random_range(0.0..side + top) < side {
                    [
                        radius * theta.cos(),
                        radius * theta.sin(),
                        rng.random_range(base..h),
                    ]
                } else {
                    let rr = radius * rng.random_range(0.0f64..1.0).sqrt();
                    [rr * theta.cos(), rr * theta.sin(), h]
                }
            }
        }
    }
}

/// Generate scene `index`. Deterministic in `(cfg.rng_seed, index)`.
///
/// Only clean labels are populated; `noisy_labels` starts as a copy.
pub fn generate_scene(cfg: &SynthConfig, index: u64) -> SampleScene {
    let mut rng = scene_rng(cfg.rng_seed, index);
    let half = cfg.ground_extent / 2.0;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..cfg.ground_points {
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        let z = rng.random_range(-0.03..0.03);
        points.push([x as f32, y as f32, z as f32]);
        labels.push(0u16);
    }
    let [omin, omax] = cfg.objects_per_scene;
    let n_objects = rng.random_range(omin..=omax);
    let cell = cfg.placement_cell.min(cfg.ground_extent);
    let cells = ((cfg.ground_extent / cell).floor() as usize).max(1);
    let mut placed: Vec<([f64; 2], f64)> = Vec::new();
    for _ in 0..n_objects {
        let class = rng.random_range(1..cfg.num_classes);
        let shape = Shape::for_class(class, &mut rng);
        let radius = shape.footprint_radius();
        let margin = cell / 2.0 - radius - 0.5;
        if margin <= 0.0 {
            continue;
        }
        let mut center = None;
        for _ in 0..100 {
            let ix = rng.random_range(0..cells) as f64;
            let iy = rng.random_range(0..cells) as f64;
            let c = [
                -half + (ix + 0.5) * cell + rng.random_range(-margin..margin),
                -half + (iy + 0.5) * cell + rng.random_range(-margin..margin),
            ];
            if placed
                .iter()
                .all(|(o, r)| (c[0] - o[0]).hypot(c[1] - o[1]) > radius + r + 1.5)
            {
                center = Some(c);
                break;
            }
        }
        let Some(center) = center else { continue };
        placed.push((center, radius));
        let yaw = rng.random_range(0.0..TAU);
        let place = RigidTransform::from_yaw(yaw, [center[0], center[1], 0.0]);
        let [pmin, pmax] = cfg.points_per_object;
        let count = (rng.random_range(pmin..=pmax) as f64 * Shape::count_scale(class)).round() as usize;
        for _ in 0..count {
            let p = place.apply(shape.sample(&mut rng));
            points.push([p[0] as f32, p[1] as f32, p[2] as f32]);
            labels.push(class as u16);
        }
    }
    SampleScene {
        id: format!("{index:06}"),
        points,
        noisy_labels: labels.clone(),
        clean_labels: Some(labels),
        pose: RigidTransform::IDENTITY,
        features: None,
        num_classes: cfg.num_classes,
    }
}

/// Replace `noisy_labels` with a noisy copy of the clean labels.
///
/// Per point, in order: boundary noise (if a differently-labeled point lies
/// within the band, flip to the nearest one's class with `boundary_rate`),
/// otherwise symmetric or confusion-matrix noise, then unlabeled noise.
pub fn inject_noise(scene: &SampleScene, spec: &NoiseSpec, seed: u64) -> Result<SampleScene, SynthError> {
    let clean = scene
        .clean_labels
        .as_ref()
        .ok_or_else(|| SynthError::MissingCleanLabels(scene.id.clone()))?;
    let k = scene.num_classes;
    spec.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let neighbors = boundary_neighbors(scene, clean, spec.boundary_band);
    let mut noisy = Vec::with_capacity(clean.len());
    for (i, &c) in clean.iter().enumerate() {
        let u_boundary: f64 = rng.random();
        let u_flip: f64 = rng.random();
        let u_class: f64 = rng.random();
        let u_unlabeled: f64 = rng.random();
        let mut label = c;
        if c == UNLABELED {
            noisy.push(c);
            continue;
        }
        let boundary_hit = neighbors[i].filter(|_| u_boundary < spec.boundary_rate);
        if let Some(other) = boundary_hit {
            label = other;
        } else if let Some(m) = &spec.confusion {
            let row = &m[c as usize];
            let mut acc = 0.0;
            label = (k - 1) as u16;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u_flip < acc {
                    label = j as u16;
                    break;
                }
            }
        } else if u_flip < spec.symmetric_rate {
            let mut j = ((u_class * (k - 1) as f64) as usize).min(k - 2) as u16;
            if j >= c {
                j += 1;
            }
            label = j;
        }
        if u_unlabeled < spec.unlabeled_rate {
            label = UNLABELED;
        }
        noisy.push(label);
    }
    Ok(SampleScene {
        noisy_labels: noisy,
        ..scene.clone()
    })
}

/// For each point, the clean label of its nearest differently-labeled
/// neighbor within `band`, if any.
pub fn boundary_neighbors(scene: &SampleScene, clean: &[u16], band: f64) -> Vec<Option<u16>> {
    if !(band > 0.0) {
        return vec![None; clean.len()];
    }
    let pts = scene.points_f64();
    let grid = SpatialGrid::new(&pts, band);
    let mut buf = Vec::new();
    pts.iter()
        .enumerate()
        .map(|(i, &p)| {
            grid.within(p, band, &mut buf);
            buf.iter()
                .filter(|&&j| clean[j] != clean[i] && clean[j] != UNLABELED)
                .map(|&j| {
                    let d: f64 = (0..3).map(|a| (pts[j][a] - p[a]).powi(2)).sum();
                    (d, j)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, j)| clean[j])
        })
        .collect()
}

/// Generate a noisy scene: clean scene plus noise seeded from the scene
/// index.
pub fn generate_noisy_scene(cfg: &SynthConfig, index: u64) -> Result<SampleScene, SynthError> {
    let scene = generate_scene(cfg, index);
    let seed = cfg.rng_seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index + 1);
    inject_noise(&scene, &cfg.noise, seed)
}

/// Generate `cfg.n_scenes` noisy scenes starting at `first_index`.
pub fn generate_dataset(cfg: &SynthConfig, first_index: u64) -> Result<Vec<SampleScene>, SynthError> {
    cfg.validate()?;
    (0..cfg.n_scenes as u64)
        .map(|i| generate_noisy_scene(cfg, first_index + i))
        .collect()
}

/// Write scenes as `<out>/scenes/<id>/...`.
pub fn write_dataset(
    out: &Path,
    vocab: &ClassVocabulary,
    scenes: &[SampleScene],
) -> Result<(), SynthError> {
    let root = out.join("scenes");
    for s in scenes {
        scene::write_scene(s, vocab, &root.join(&s.id))?;
    }
    Ok(())
}

/// Per-class point counts of `labels` (unlabeled excluded).
pub fn class_histogram(labels: &[u16], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for &l in labels {
        if l != UNLABELED {
            h[l as usize] += 1;
        }
    }
    h
}
