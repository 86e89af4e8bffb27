//! Per-point prediction histories, history confidence and reliable labels.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HistoryError {
    #[error("prediction length {found} does not match point count {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("history is empty")]
    Empty,
    #[error("prediction {label} at point {point} is not a class index below {num_classes}")]
    InvalidClass {
        point: usize,
        label: u16,
        num_classes: usize,
    },
    #[error("point index {index} out of range for {len} points")]
    PointOutOfRange { index: usize, len: usize },
    #[error("invalid history configuration: {0}")]
    InvalidConfig(String),
}

/// Ring buffer of the last `capacity` hard predictions of one sample.
///
/// Storage is `capacity * num_points` class indices; rounds are stored
/// contiguously so one round is a single slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHistory {
    num_points: usize,
    num_classes: usize,
    capacity: usize,
    /// Slot of the oldest stored round.
    head: usize,
    len: usize,
    data: Vec<u16>,
}

impl PredictionHistory {
    pub fn new(num_points: usize, num_classes: usize, capacity: usize) -> Result<Self, HistoryError> {
        if capacity == 0 {
            return Err(HistoryError::InvalidConfig("capacity must be at least 1".into()));
        }
        if num_classes < 2 {
            return Err(HistoryError::InvalidConfig(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            num_points,
            num_classes,
            capacity,
            head: 0,
            len: 0,
            data: vec![0; capacity * num_points],
        })
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of stored rounds, `q` in the confidence formula.
    pub fn q_valid(&self) -> usize {
        self.len
    }

    pub fn storage_len(&self) -> usize {
        self.data.len()
    }

    /// Append one round of predictions, evicting the oldest when full.
    pub fn record(&mut self, predictions: &[u16]) -> Result<(), HistoryError> {
        if predictions.len() != self.num_points {
            return Err(HistoryError::LengthMismatch {
                expected: self.num_points,
                found: predictions.len(),
            });
        }
        if let Some((point, &label)) = predictions
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= self.num_classes)
        {
            return Err(HistoryError::InvalidClass {
                point,
                label,
                num_classes: self.num_classes,
            });
        }
        let slot = (self.head + self.len) % self.capacity;
        self.data[slot * self.num_points..(slot + 1) * self.num_points].copy_from_slice(predictions);
        if self.len == self.capacity {
            self.head = (self.head + 1) % self.capacity;
        } else {
            self.len += 1;
        }
        Ok(())
    }

    /// Stored rounds, oldest first.
    pub fn rounds(&self) -> impl Iterator<Item = &[u16]> + '_ {
        (0..self.len).map(move |i| {
            let slot = (self.head + i) % self.capacity;
            &self.data[slot * self.num_points..(slot + 1) * self.num_points]
        })
    }

    fn check_point(&self, point: usize) -> Result<(), HistoryError> {
        if self.len == 0 {
            return Err(HistoryError::Empty);
        }
        if point >= self.num_points {
            return Err(HistoryError::PointOutOfRange {
                index: point,
                len: self.num_points,
            });
        }
        Ok(())
    }

    fn counts(&self, point: usize) -> Vec<u32> {
        let mut counts = vec![0u32; self.num_classes];
        for round in self.rounds() {
            counts[round[point] as usize] += 1;
        }
        counts
    }

    /// Empirical class distribution over the stored predictions of `point`.
    pub fn class_distribution(&self, point: usize) -> Result<Vec<f64>, HistoryError> {
        self.check_point(point)?;
        let q = self.len as f64;
        Ok(self.counts(point).into_iter().map(|c| c as f64 / q).collect())
    }

    /// One minus the normalized entropy of the point's history.
    pub fn confidence(&self, point: usize) -> Result<f64, HistoryError> {
        Ok(confidence_of(&self.class_distribution(point)?))
    }

    /// Points whose confidence is at least `gamma`, with their modal label.
    pub fn reliable_set(&self, gamma: f64) -> Result<ReliableSet, HistoryError> {
        if self.len == 0 {
            return Err(HistoryError::Empty);
        }
        let mut set = ReliableSet::default();
        for point in 0..self.num_points {
            let p = self.class_distribution(point)?;
            if confidence_of(&p) >= gamma {
                set.indices.push(point);
                set.labels.push(argmax_lowest(&p) as u16);
            }
        }
        Ok(set)
    }

    /// Dump stored rounds (oldest first) as `q_valid * N` little-endian u16.
    pub fn dump(&self, path: &Path) -> io::Result<()> {
        let bytes: Vec<u8> = self
            .rounds()
            .flat_map(|r| r.iter().flat_map(|l| l.to_le_bytes()))
            .collect();
        fs::write(path, bytes)
    }
}

/// `1 - H(P) / ln K` with natural-log entropy and `0 ln 0 = 0`.
pub fn confidence_of(distribution: &[f64]) -> f64 {
    let k = distribution.len() as f64;
    let entropy: f64 = distribution
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    (1.0 - entropy / k.ln()).clamp(0.0, 1.0)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Reliable points of one sample and their modal labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReliableSet {
    /// Sorted, unique.
    pub indices: Vec<usize>,
    pub labels: Vec<u16>,
}

impl ReliableSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Dense per-point view: `Some(label)` for reliable points.
    pub fn dense(&self, num_points: usize) -> Vec<Option<u16>> {
        let mut out = vec![None; num_points];
        for (&i, &l) in self.indices.iter().zip(&self.labels) {
            out[i] = Some(l);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_point(k: usize, rounds: &[u16]) -> PredictionHistory {
        let mut h = PredictionHistory::new(1, k, rounds.len().max(1)).unwrap();
        for &r in rounds {
            h.record(&[r]).unwrap();
        }
        h
    }

    #[test]
    fn record_counts_and_eviction() {
        let mut h = PredictionHistory::new(2, 10, 5).unwrap();
        h.record(&[0, 0]).unwrap();
        assert_eq!(h.q_valid(), 1);
        for r in 2..=7u16 {
            h.record(&[r, r]).unwrap();
        }
        assert_eq!(h.q_valid(), 5);
        let firsts: Vec<u16> = h.rounds().map(|r| r[0]).collect();
        assert_eq!(firsts, vec![3, 4, 5, 6, 7]);
        assert_eq!(
            h.record(&[1]).unwrap_err(),
            HistoryError::LengthMismatch { expected: 2, found: 1 }
        );
        assert!(matches!(h.record(&[1, 10]), Err(HistoryError::InvalidClass { .. })));
        assert_eq!(h.storage_len(), 10);
    }

    #[test]
    fn distributions() {
        let h = single_point(4, &[2, 2, 2, 2, 2]);
        assert_eq!(h.class_distribution(0).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        let h = single_point(4, &[1, 1, 1, 2, 2]);
        assert_eq!(h.class_distribution(0).unwrap(), vec![0.0, 0.6, 0.4, 0.0]);
        let empty = PredictionHistory::new(1, 4, 5).unwrap();
        assert_eq!(empty.class_distribution(0).unwrap_err(), HistoryError::Empty);
        assert_eq!(empty.confidence(0).unwrap_err(), HistoryError::Empty);
    }

    #[test]
    fn confidence_values() {
        assert_abs_diff_eq!(single_point(4, &[2; 5]).confidence(0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            single_point(4, &[0, 1, 2, 3]).confidence(0).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // H = -(0.6 ln 0.6 + 0.4 ln 0.4) = 0.6730117, 1 - H / ln 4 = 0.5145247
        let c = single_point(4, &[1, 1, 1, 2, 2]).confidence(0).unwrap();
        assert_abs_diff_eq!(c, 0.514_524_702_772_665_6, epsilon = 1e-12);
    }

    #[test]
    fn reliable_thresholds() {
        let mut h = PredictionHistory::new(3, 4, 5).unwrap();
        for r in [[1, 0, 3], [1, 2, 3], [1, 2, 3], [2, 0, 3], [2, 0, 3]] {
            h.record(&r).unwrap();
        }
        let all = h.reliable_set(0.0).unwrap();
        assert_eq!(all.indices, vec![0, 1, 2]);
        assert_eq!(all.labels, vec![1, 0, 3]);
        let strict = h.reliable_set(1.0).unwrap();
        assert_eq!(strict.indices, vec![2]);
        let mid = h.reliable_set(0.6).unwrap();
        assert!(!mid.indices.contains(&0));
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax_lowest(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
    }
}
