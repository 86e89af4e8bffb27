//! Brute-force oracles shared by the property and acceptance suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use adaco::geometry::NOISE;
use adaco::labelgen::voxel_key;
use adaco::scene::{RigidTransform, SampleScene, UNLABELED};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// O(N^2) DBSCAN with the same scan order and border rule.
pub fn reference_dbscan(pts: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = pts.len();
    let nbrs: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist2(pts[i], pts[j]) <= eps * eps).collect())
        .collect();
    let core: Vec<bool> = nbrs.iter().map(|v| v.len() >= min_pts).collect();
    let mut label = vec![NOISE; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || label[s] != NOISE {
            continue;
        }
        label[s] = next;
        let mut q = VecDeque::from([s]);
        while let Some(i) = q.pop_front() {
            for &j in &nbrs[i] {
                if label[j] == NOISE {
                    label[j] = next;
                    if core[j] {
                        q.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    label
}

/// Canonical partition: sets of member indices, noise separate.
pub fn partition(assign: &[i64]) -> (BTreeSet<BTreeSet<usize>>, BTreeSet<usize>) {
    let mut groups: BTreeMap<i64, BTreeSet<usize>> = BTreeMap::new();
    let mut noise = BTreeSet::new();
    for (i, &c) in assign.iter().enumerate() {
        if c >= 0 {
            groups.entry(c).or_default().insert(i);
        } else {
            noise.insert(i);
        }
    }
    (groups.into_values().collect(), noise)
}

/// Blobs plus uniform clutter, up to 300 points.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = rng.random_range(1..=300);
    let blobs = rng.random_range(1..6);
    let centers: Vec<[f64; 3]> = (0..blobs)
        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..2.0)])
        .collect();
    (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-1.0..3.0)]
            } else {
                let c = centers[rng.random_range(0..blobs)];
                let s = rng.random_range(0.2..1.5);
                [
                    c[0] + rng.random_range(-s..s),
                    c[1] + rng.random_range(-s..s),
                    c[2] + rng.random_range(-s..s),
                ]
            }
        })
        .collect()
}

/// Brute-force winner candidates with an integer divisor.
pub fn oracle_candidates(counts: &[u32], omega: u32) -> Vec<u16> {
    let max = *counts.iter().max().unwrap();
    (0..counts.len())
        .filter(|&k| counts[k] > 0 && counts[k] * omega >= max)
        .map(|k| k as u16)
        .collect()
}

pub fn frame(points: Vec<[f32; 3]>, labels: Vec<u16>, pose: RigidTransform, k: usize) -> SampleScene {
    SampleScene {
        id: "f".into(),
        points,
        clean_labels: None,
        noisy_labels: labels,
        pose,
        features: None,
        num_classes: k,
    }
}

/// Quadratic voxel vote: every point of every window frame, no hashing.
pub fn brute_vote(frames: &[SampleScene], adjacency: usize, size: f64) -> Vec<Vec<u16>> {
    let n = frames.len();
    (0..n)
        .map(|i| {
            let local = frames[i].pose.inverse();
            let lo = i.saturating_sub(adjacency);
            let hi = (i + adjacency).min(n - 1);
            let mut world: Vec<([i64; 3], u16, usize)> = Vec::new();
            for (j, f) in frames.iter().enumerate().take(hi + 1).skip(lo) {
                for (p, &l) in f.points.iter().zip(&f.noisy_labels) {
                    if l != UNLABELED {
                        let w = f.pose.apply([p[0] as f64, p[1] as f64, p[2] as f64]);
                        world.push((voxel_key(local.apply(w), size), l, i.abs_diff(j)));
                    }
                }
            }
            frames[i]
                .points
                .iter()
                .zip(&frames[i].noisy_labels)
                .map(|(p, &l)| {
                    let key = voxel_key([p[0] as f64, p[1] as f64, p[2] as f64], size);
                    let mut best: Option<(u16, usize, usize)> = None;
                    for c in 0..16u16 {
                        let votes: Vec<usize> =
                            world.iter().filter(|v| v.0 == key && v.1 == c).map(|v| v.2).collect();
                        if votes.is_empty() {
                            continue;
                        }
                        let cand = (c, votes.len(), *votes.iter().min().unwrap());
                        let better = best.is_none_or(|b| cand.1 > b.1 || (cand.1 == b.1 && cand.2 < b.2));
                        if better {
                            best = Some(cand);
                        }
                    }
                    best.map_or(l, |b| b.0)
                })
                .collect()
        })
        .collect()
}

/// Short posed sequences on a coarse grid so voxels collect several votes.
pub fn random_frames(rng: &mut ChaCha8Rng) -> Vec<SampleScene> {
    let n = rng.random_range(1..6);
    (0..n)
        .map(|f| {
            let pose = RigidTransform::from_yaw(0.05 * f as f64, [0.3 * f as f64, 0.0, 0.0]);
            let m = rng.random_range(0..60);
            // kept off voxel edges so rounding in the pose chain cannot move a point
            let c = |rng: &mut ChaCha8Rng| rng.random_range(0..8) as f32 * 0.25 + 0.037;
            let pts = (0..m).map(|_| [c(rng), c(rng), 0.1]).collect();
            let labels = (0..m)
                .map(|_| if rng.random_bool(0.2) { UNLABELED } else { rng.random_range(0..4) })
                .collect();
            frame(pts, labels, pose, 4)
        })
        .collect()
}
