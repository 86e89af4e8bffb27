//! Label refurbishment: cluster-level voting over reliable labels.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvefit::CorrectionSchedule;
use crate::geometry::{ClusterSet, GROUND};
use crate::history::ReliableSet;
use crate::scene::UNLABELED;

#[derive(Debug, Error, PartialEq)]
pub enum CorrectorError {
    #[error("length mismatch: {what} has {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid corrector configuration: {0}")]
    InvalidConfig(String),
}

/// Knobs for trigger timing, reliability and cluster voting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectorConfig {
    /// Relative derivative drop that triggers correction.
    pub r: f64,
    /// Confidence threshold for reliable points.
    pub gamma: f64,
    /// History capacity in epochs.
    pub t_m: usize,
    /// Winner-fraction divisor.
    pub omega: f64,
    pub correct_once: bool,
    /// DBSCAN radius in meters.
    pub eps: f64,
    pub min_pts: usize,
    /// Clustering block side in meters (x and y; z unbounded).
    pub block: f64,
    /// Keep labels of ground points untouched during refurbishment.
    pub freeze_ground: bool,
    pub rng_seed: u64,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            r: 0.9,
            gamma: 0.9,
            t_m: 5,
            omega: 3.0,
            correct_once: true,
            eps: 0.6,
            min_pts: 5,
            block: 10.0,
            freeze_ground: false,
            rng_seed: 0,
        }
    }
}

impl CorrectorConfig {
    pub fn validate(&self) -> Result<(), CorrectorError> {
        let bad = |m: String| Err(CorrectorError::InvalidConfig(m));
        if !(self.r > 0.0 && self.r <= 1.0) {
            return bad(format!("r = {} not in (0, 1]", self.r));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} not in [0, 1]", self.gamma));
        }
        if self.t_m < 1 {
            return bad("t_m must be at least 1".into());
        }
        if !(self.omega >= 1.0) {
            return bad(format!("omega = {} < 1", self.omega));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if self.min_pts < 1 {
            return bad("min_pts must be at least 1".into());
        }
        if !(self.block > 0.0) {
            return bad(format!("block = {} must be positive", self.block));
        }
        Ok(())
    }

    pub fn schedule(&self) -> CorrectionSchedule {
        if self.correct_once {
            CorrectionSchedule::Once
        } else {
            CorrectionSchedule::EachDown
        }
    }
}

/// Reliable-label counts inside one cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyVector {
    pub counts: Vec<u32>,
}

impl FrequencyVector {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Count reliable labels among `cluster` members. `reliable_dense` is the
/// per-point view from [`ReliableSet::dense`].
pub fn cluster_frequency(
    cluster: &[usize],
    reliable_dense: &[Option<u16>],
    num_classes: usize,
) -> FrequencyVector {
    let mut counts = vec![0u32; num_classes];
    for &i in cluster {
        if let Some(l) = reliable_dense[i] {
            counts[l as usize] += 1;
        }
    }
    FrequencyVector { counts }
}

/// Classes whose count is at least `max / omega` (and non-zero), ascending.
pub fn winner_candidates(freq: &FrequencyVector, omega: f64) -> Vec<u16> {
    let max = freq.max();
    if max == 0 {
        return Vec::new();
    }
    let threshold = max as f64 / omega;
    freq.counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0 && c as f64 >= threshold)
        .map(|(k, _)| k as u16)
        .collect()
}

/// Draw the winner label uniformly from the candidates.
pub fn winner_label<R: Rng + ?Sized>(freq: &FrequencyVector, omega: f64, rng: &mut R) -> Option<u16> {
    let candidates = winner_candidates(freq, omega);
    match candidates.len() {
        0 => None,
        1 => Some(candidates[0]),
        n => Some(candidates[rng.random_range(0..n)]),
    }
}

/// Observability record for one correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub sample_id: String,
    pub t_c: usize,
    pub n_reliable: usize,
    pub n_clusters_touched: usize,
    pub n_points_relabeled: usize,
    /// `(K+1) x (K+1)`, rows old label, columns new label; index `K` is
    /// the unlabeled sentinel.
    pub flips: Vec<Vec<u64>>,
}

impl CorrectionReport {
    pub fn off_diagonal(&self) -> u64 {
        self.flips
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i))
            .map(|(_, &c)| c)
            .sum()
    }
}

fn flip_index(label: u16, num_classes: usize) -> usize {
    if label == UNLABELED {
        num_classes
    } else {
        label as usize
    }
}

/// Refurbish one sample's labels.
///
/// Every cluster that contains at least one reliable point is relabeled to
/// its winner label. Reliable points outside any cluster take their own
/// reliable label (ground points only when `freeze_ground` is off). Every
/// other point keeps its current label.
#[allow(clippy::too_many_arguments)]
pub fn refurbish_sample<R: Rng + ?Sized>(
    sample_id: &str,
    epoch: usize,
    labels: &[u16],
    num_classes: usize,
    clusters: &ClusterSet,
    reliable: &ReliableSet,
    cfg: &CorrectorConfig,
    rng: &mut R,
) -> Result<(Vec<u16>, CorrectionReport), CorrectorError> {
    let n = labels.len();
    if clusters.assignment.len() != n {
        return Err(CorrectorError::LengthMismatch {
            what: "cluster assignment",
            expected: n,
            found: clusters.assignment.len(),
        });
    }
    if reliable.indices.len() != reliable.labels.len() {
        return Err(CorrectorError::LengthMismatch {
            what: "reliable labels",
            expected: reliable.indices.len(),
            found: reliable.labels.len(),
        });
    }
    if let Some(&bad) = reliable.indices.iter().find(|&&i| i >= n) {
        return Err(CorrectorError::LengthMismatch {
            what: "reliable index",
            expected: n,
            found: bad,
        });
    }
    let dense = reliable.dense(n);
    let mut out = labels.to_vec();
    let mut touched = 0;
    for members in clusters.members() {
        let freq = cluster_frequency(&members, &dense, num_classes);
        if let Some(winner) = winner_label(&freq, cfg.omega, rng) {
            touched += 1;
            for &i in &members {
                out[i] = winner;
            }
        }
    }
    for (&i, &l) in reliable.indices.iter().zip(&reliable.labels) {
        let c = clusters.assignment[i];
        if c >= 0 || (c == GROUND && cfg.freeze_ground) {
            continue;
        }
        out[i] = l;
    }
    let mut flips = vec![vec![0u64; num_classes + 1]; num_classes + 1];
    for (&old, &new) in labels.iter().zip(&out) {
        flips[flip_index(old, num_classes)][flip_index(new, num_classes)] += 1;
    }
    let relabeled = labels.iter().zip(&out).filter(|(a, b)| a != b).count();
    Ok((
        out,
        CorrectionReport {
            sample_id: sample_id.to_string(),
            t_c: epoch,
            n_reliable: reliable.len(),
            n_clusters_touched: touched,
            n_points_relabeled: relabeled,
            flips,
        },
    ))
}

/// Labels used for the loss: the full current array, nothing masked.
/// Unlabeled points are dropped by the loss itself.
pub fn apply_full_supervision(current_labels: &[u16]) -> &[u16] {
    current_labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::NOISE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fv(counts: &[u32]) -> FrequencyVector {
        FrequencyVector {
            counts: counts.to_vec(),
        }
    }

    #[test]
    fn frequency_counts() {
        let dense: Vec<Option<u16>> = (0..30)
            .map(|i| match i {
                0..10 => Some(0),
                10..14 => Some(1),
                14..17 => Some(2),
                _ => None,
            })
            .collect();
        let cluster: Vec<usize> = (0..20).collect();
        assert_eq!(cluster_frequency(&cluster, &dense, 3).counts, vec![10, 4, 3]);
        let outside: Vec<usize> = (20..30).collect();
        assert_eq!(cluster_frequency(&outside, &dense, 3).counts, vec![0, 0, 0]);
        assert_eq!(cluster_frequency(&[], &dense, 3).total(), 0);
    }

    #[test]
    fn winner_rules() {
        assert_eq!(winner_candidates(&fv(&[10, 4, 3]), 3.0), vec![0, 1]);
        assert_eq!(winner_candidates(&fv(&[0, 7, 0]), 3.0), vec![1]);
        assert_eq!(winner_candidates(&fv(&[5, 2, 5]), 1.0), vec![0, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(winner_label(&fv(&[0, 0, 0]), 3.0, &mut rng), None);
        assert_eq!(winner_label(&fv(&[0, 9]), 3.0, &mut rng), Some(1));
        for _ in 0..20 {
            let w = winner_label(&fv(&[10, 4, 3]), 3.0, &mut rng).unwrap();
            assert!(w == 0 || w == 1);
        }
    }

    #[test]
    fn no_reliable_points_is_identity() {
        let labels = vec![0, 1, 1, UNLABELED];
        let clusters = ClusterSet {
            assignment: vec![0, 0, NOISE, GROUND],
            num_clusters: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, rep) = refurbish_sample(
            "s",
            3,
            &labels,
            2,
            &clusters,
            &ReliableSet::default(),
            &CorrectorConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, labels);
        assert_eq!(rep.n_points_relabeled, 0);
        assert_eq!(rep.n_clusters_touched, 0);
        assert_eq!(rep.off_diagonal(), 0);
    }

    #[test]
    fn unanimous_cluster_flips() {
        let n = 12;
        let labels = vec![1u16; n];
        let clusters = ClusterSet {
            assignment: (0..n).map(|i| if i < 8 { 0 } else { NOISE }).collect(),
            num_clusters: 1,
        };
        let reliable = ReliableSet {
            indices: (0..8).collect(),
            labels: vec![2; 8],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, rep) = refurbish_sample(
            "s",
            9,
            &labels,
            3,
            &clusters,
            &reliable,
            &CorrectorConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(out[..8].iter().all(|&l| l == 2));
        assert!(out[8..].iter().all(|&l| l == 1));
        assert_eq!(rep.flips[1][2], 8);
        assert_eq!(rep.n_points_relabeled as u64, rep.off_diagonal());
    }

    #[test]
    fn outside_cluster_and_ground_rules() {
        // point 0 in a cluster with one reliable member, point 2 unlabeled
        // member, point 3 noise reliable, point 4 ground reliable
        let labels = vec![0, 0, UNLABELED, 0, 0];
        let clusters = ClusterSet {
            assignment: vec![0, 0, 0, NOISE, GROUND],
            num_clusters: 1,
        };
        let reliable = ReliableSet {
            indices: vec![1, 3, 4],
            labels: vec![1, 1, 1],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = CorrectorConfig::default();
        let (out, _) =
            refurbish_sample("s", 1, &labels, 2, &clusters, &reliable, &cfg, &mut rng).unwrap();
        assert_eq!(out, vec![1, 1, 1, 1, 1]);
        let frozen = CorrectorConfig {
            freeze_ground: true,
            ..cfg
        };
        let (out, rep) =
            refurbish_sample("s", 1, &labels, 2, &clusters, &reliable, &frozen, &mut rng).unwrap();
        assert_eq!(out, vec![1, 1, 1, 1, 0]);
        assert_eq!(rep.flips[2][1], 1);
    }

    #[test]
    fn length_checks() {
        let clusters = ClusterSet {
            assignment: vec![0],
            num_clusters: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = refurbish_sample(
            "s",
            1,
            &[0, 1],
            2,
            &clusters,
            &ReliableSet::default(),
            &CorrectorConfig::default(),
            &mut rng,
        );
        assert!(matches!(r, Err(CorrectorError::LengthMismatch { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(CorrectorConfig::default().validate().is_ok());
        assert!(CorrectorConfig { r: 0.0, ..Default::default() }.validate().is_err());
        assert!(CorrectorConfig { omega: 0.5, ..Default::default() }.validate().is_err());
        assert!(CorrectorConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
    }
}
