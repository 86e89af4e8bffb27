//! Ground removal, block partitioning and DBSCAN clustering.

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("need at least 3 points to fit a plane, got {0}")]
    TooFewPoints(usize),
    #[error("every sampled triplet was degenerate; no plane found")]
    NoPlane,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Cluster id for points that are density noise.
pub const NOISE: i64 = -1;
/// Cluster id for points removed as ground before clustering.
pub const GROUND: i64 = -2;

/// Plane `normal . p + offset = 0` with a unit normal pointing to +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundModel {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_tol: f64,
}

impl GroundModel {
    /// Signed distance from the plane, positive above the ground.
    #[inline]
    pub fn height(&self, p: [f64; 3]) -> f64 {
        dot(self.normal, p) + self.offset
    }

    /// Model for the z = 0 plane.
    pub fn flat(inlier_tol: f64) -> Self {
        Self {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
            inlier_tol,
        }
    }
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// RANSAC plane fit. Returns the best-consensus plane and its inlier mask.
///
/// Triplets whose cross product is (near) zero are skipped. Ties in inlier
/// count keep the earliest plane.
pub fn fit_ground(
    points: &[[f64; 3]],
    iterations: usize,
    tol: f64,
    seed: u64,
) -> Result<(GroundModel, Vec<bool>), GeometryError> {
    let n = points.len();
    if n < 3 {
        return Err(GeometryError::TooFewPoints(n));
    }
    if !(tol > 0.0) {
        return Err(GeometryError::InvalidParameter(format!("tol = {tol}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, GroundModel)> = None;
    for _ in 0..iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let (a, b, c) = (points[i], points[j], points[k]);
        let e1 = sub(b, a);
        let e2 = sub(c, a);
        let nrm = cross(e1, e2);
        let len = dot(nrm, nrm).sqrt();
        let scale = dot(e1, e1).sqrt() * dot(e2, e2).sqrt();
        if !(len > 1e-9 * scale) || !len.is_finite() {
            continue;
        }
        let mut normal = [nrm[0] / len, nrm[1] / len, nrm[2] / len];
        if normal[2] < 0.0 {
            normal = [-normal[0], -normal[1], -normal[2]];
        }
        let model = GroundModel {
            normal,
            offset: -dot(normal, a),
            inlier_tol: tol,
        };
        let count = points
            .iter()
            .filter(|&&p| model.height(p).abs() <= tol)
            .count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, model));
        }
    }
    let (_, model) = best.ok_or(GeometryError::NoPlane)?;
    let mask = points
        .iter()
        .map(|&p| model.height(p).abs() <= tol)
        .collect();
    Ok((model, mask))
}

/// Split points into x/y windows of side `block`, stepping by `stride`.
///
/// Windows start at the bounding-box minimum and are half-open, except the
/// last window on each axis which also takes points on the maximum edge.
/// With `stride == block` each point lands in exactly one window. Only
/// non-empty windows are returned, ordered by (y window, x window).
pub fn partition_blocks(
    points: &[[f64; 3]],
    block: f64,
    stride: f64,
) -> Result<Vec<Vec<usize>>, GeometryError> {
    if !(block > 0.0 && stride > 0.0) {
        return Err(GeometryError::InvalidParameter(format!(
            "block = {block}, stride = {stride}"
        )));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let windows = |a: usize| -> usize {
        let extent = hi[a] - lo[a];
        if extent <= block {
            1
        } else {
            ((extent - block) / stride).ceil() as usize + 1
        }
    };
    let (nx, ny) = (windows(0), windows(1));
    // window i on an axis covers [i*stride, i*stride + block) relative to the
    // minimum; the last one is closed so the maximum edge is covered
    let hits = |a: usize, count: usize, v: f64| {
        let rel = v - lo[a];
        let first = ((rel - block).max(0.0) / stride).floor() as usize;
        let last = ((rel / stride).floor() as usize + 1).min(count - 1);
        (first.min(count - 1)..=last).filter(move |&i| {
            let start = i as f64 * stride;
            start <= rel && (rel < start + block || i == count - 1)
        })
    };
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    for (i, p) in points.iter().enumerate() {
        for iy in hits(1, ny, p[1]) {
            for ix in hits(0, nx, p[0]) {
                cells[iy * nx + ix].push(i);
            }
        }
    }
    Ok(cells.into_iter().filter(|c| !c.is_empty()).collect())
}

/// DBSCAN output over the points of one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    /// Cluster id per point, [`NOISE`] or [`GROUND`] otherwise.
    pub assignment: Vec<i64>,
    pub num_clusters: usize,
}

impl ClusterSet {
    /// Member indices of each cluster, in point order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &c) in self.assignment.iter().enumerate() {
            if c >= 0 {
                out[c as usize].push(i);
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_clusters];
        for &c in &self.assignment {
            if c >= 0 {
                out[c as usize] += 1;
            }
        }
        out
    }
}

type CellKey = (i64, i64, i64);

/// Uniform hash grid for fixed-radius neighbor queries.
pub struct SpatialGrid<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl<'a> SpatialGrid<'a> {
    pub fn new(points: &'a [[f64; 3]], cell: f64) -> Self {
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, &p) in points.iter().enumerate() {
            cells.entry(Self::key_of(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            cells,
        }
    }

    #[inline]
    fn key_of(p: [f64; 3], cell: f64) -> CellKey {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    /// Indices within `radius` (inclusive) of `q`, ascending. Requires
    /// `radius <= cell`.
    pub fn within(&self, q: [f64; 3], radius: f64, out: &mut Vec<usize>) {
        debug_assert!(radius <= self.cell);
        out.clear();
        let r2 = radius * radius;
        let (kx, ky, kz) = Self::key_of(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        out.extend(
                            ids.iter()
                                .copied()
                                .filter(|&j| dist2(self.points[j], q) <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// Count of points within `radius` of `q` (inclusive).
    pub fn count_within(&self, q: [f64; 3], radius: f64) -> usize {
        let r2 = radius * radius;
        let (kx, ky, kz) = Self::key_of(q, self.cell);
        let mut n = 0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        n += ids
                            .iter()
                            .filter(|&&j| dist2(self.points[j], q) <= r2)
                            .count();
                    }
                }
            }
        }
        n
    }
}

/// Grid-accelerated DBSCAN.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Points are scanned in index order; each unvisited core
/// point seeds a cluster that is grown breadth-first. A border point joins
/// the first cluster that reaches it.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Result<ClusterSet, GeometryError> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(GeometryError::InvalidParameter(format!(
            "eps = {eps}, min_pts = {min_pts}"
        )));
    }
    let n = points.len();
    let grid = SpatialGrid::new(points, eps);
    let core: Vec<bool> = points
        .iter()
        .map(|&p| grid.count_within(p, eps) >= min_pts)
        .collect();
    let mut assignment = vec![NOISE; n];
    let mut num_clusters = 0usize;
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for start in 0..n {
        if !core[start] || assignment[start] != NOISE {
            continue;
        }
        let id = num_clusters as i64;
        num_clusters += 1;
        assignment[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            grid.within(points[i], eps, &mut nbrs);
            for &j in &nbrs {
                if assignment[j] == NOISE {
                    assignment[j] = id;
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    Ok(ClusterSet {
        assignment,
        num_clusters,
    })
}

/// Clustering parameters for whole scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
    pub block: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 0.6,
            min_pts: 5,
            block: 10.0,
        }
    }
}

/// Cluster the non-ground points block by block.
///
/// Blocks tile x/y of the whole scene, ground included, starting at its
/// bounding-box minimum with stride equal to the block size; clusters are never
/// merged across block borders. Cluster ids are renumbered densely in block
/// order.
pub fn cluster_non_ground(
    points: &[[f64; 3]],
    ground_mask: &[bool],
    params: ClusterParams,
) -> Result<ClusterSet, GeometryError> {
    assert_eq!(points.len(), ground_mask.len());
    let blocks: Vec<Vec<usize>> = partition_blocks(points, params.block, params.block)?
        .into_iter()
        .map(|b| b.into_iter().filter(|&i| !ground_mask[i]).collect::<Vec<_>>())
        .filter(|b| !b.is_empty())
        .collect();
    let per_block: Vec<(Vec<usize>, ClusterSet)> = blocks
        .into_par_iter()
        .map(|members| {
            let pts: Vec<[f64; 3]> = members.iter().map(|&i| points[i]).collect();
            dbscan(&pts, params.eps, params.min_pts).map(|c| (members, c))
        })
        .collect::<Result<_, _>>()?;
    let mut assignment: Vec<i64> = ground_mask
        .iter()
        .map(|&g| if g { GROUND } else { NOISE })
        .collect();
    let mut offset = 0usize;
    for (members, clusters) in per_block {
        for (local, &c) in clusters.assignment.iter().enumerate() {
            if c >= 0 {
                assignment[members[local]] = offset as i64 + c;
            }
        }
        offset += clusters.num_clusters;
    }
    Ok(ClusterSet {
        assignment,
        num_clusters: offset,
    })
}
