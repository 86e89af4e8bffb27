//! Saturating-exponential learning curves and the correction-epoch trigger.
//!
//! Each sample's training mIoU series is fitted with
//! `f(t) = a * (1 - exp(-t^b / c))` over 1-indexed epochs, and a sample is
//! due for correction once `|f'(1) - f'(t)| / f'(1)` exceeds a threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("series needs at least 3 epochs, got {0}")]
    TooShort(usize),
    #[error("series value {value} at epoch {epoch} is outside [0, 1]")]
    OutOfRange { epoch: usize, value: f64 },
    #[error("every multi-start diverged")]
    FitFailed,
    #[error("initial slope f'(1) is zero; trigger ratio undefined")]
    FlatCurve,
    #[error("no fit available")]
    NotFitted,
}

/// Lower bound for `c`; the curve is singular at zero.
pub const C_MIN: f64 = 1e-6;

const START_A: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
const START_B: [f64; 3] = [0.5, 1.0, 2.0];
const START_C: [f64; 3] = [1.0, 5.0, 20.0];
const MAX_ITERS: usize = 200;
const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFitParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Sum of squared errors over the fitted series.
    pub residual: f64,
}

impl CurveFitParams {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self {
            a,
            b,
            c,
            residual: 0.0,
        }
    }

    fn clamped(mut self) -> Self {
        self.a = self.a.clamp(0.0, 1.0);
        self.b = self.b.max(0.0);
        self.c = self.c.max(C_MIN);
        self
    }
}

/// `a * (1 - exp(-t^b / c))`.
pub fn eval_curve(p: &CurveFitParams, t: f64) -> f64 {
    p.a * -(-t.powf(p.b) / p.c).exp_m1()
}

/// Closed-form `df/dt = a * (b / c) * t^(b-1) * exp(-t^b / c)`.
pub fn eval_derivative(p: &CurveFitParams, t: f64) -> f64 {
    p.a * (p.b / p.c) * t.powf(p.b - 1.0) * (-t.powf(p.b) / p.c).exp()
}

fn sse(p: &CurveFitParams, series: &[f64]) -> f64 {
    series
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let r = eval_curve(p, (i + 1) as f64) - y;
            r * r
        })
        .sum()
}

/// Solve a symmetric 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Levenberg-Marquardt from one start. Returns `None` if it never produced
/// a finite residual.
fn lm_from(start: CurveFitParams, series: &[f64]) -> Option<CurveFitParams> {
    let mut p = start.clamped();
    let mut cost = sse(&p, series);
    if !cost.is_finite() {
        return None;
    }
    let mut mu = 1e-3;
    for _ in 0..MAX_ITERS {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (i, &y) in series.iter().enumerate() {
            let t = (i + 1) as f64;
            let g = t.powf(p.b) / p.c;
            let e = (-g).exp();
            let f = p.a * (1.0 - e);
            let r = f - y;
            let j = [1.0 - e, p.a * e * g * t.ln(), -p.a * e * g / p.c];
            for u in 0..3 {
                jtr[u] += j[u] * r;
                for v in 0..3 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        let mut lhs = jtj;
        for (u, row) in lhs.iter_mut().enumerate() {
            row[u] += mu * (jtj[u][u] + 1e-12);
        }
        let step = solve3(lhs, [-jtr[0], -jtr[1], -jtr[2]]);
        let Some(step) = step else {
            mu *= 10.0;
            if mu > 1e20 {
                break;
            }
            continue;
        };
        let trial = CurveFitParams {
            a: p.a + step[0],
            b: p.b + step[1],
            c: p.c + step[2],
            residual: 0.0,
        }
        .clamped();
        let trial_cost = sse(&trial, series);
        if trial_cost.is_finite() && trial_cost <= cost {
            let moved = ((trial.a - p.a).powi(2) + (trial.b - p.b).powi(2) + (trial.c - p.c).powi(2))
                .sqrt();
            p = trial;
            cost = trial_cost;
            mu = (mu / 10.0).max(1e-15);
            if moved < STEP_TOL {
                break;
            }
        } else {
            mu *= 10.0;
            if mu > 1e20 {
                break;
            }
        }
    }
    // f is linear in a: finish with the exact box-constrained optimum over a
    let (num, den) = series.iter().enumerate().fold((0.0, 0.0), |(n, d), (i, &y)| {
        let g = -(-((i + 1) as f64).powf(p.b) / p.c).exp_m1();
        (n + g * y, d + g * g)
    });
    if den > 0.0 {
        let polished = CurveFitParams {
            a: (num / den).clamp(0.0, 1.0),
            ..p
        };
        let polished_cost = sse(&polished, series);
        if polished_cost <= cost {
            p = polished;
            cost = polished_cost;
        }
    }
    p.residual = cost;
    Some(p)
}

fn check_series(series: &[f64]) -> Result<(), FitError> {
    if series.len() < 3 {
        return Err(FitError::TooShort(series.len()));
    }
    if let Some((i, &v)) = series
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(FitError::OutOfRange {
            epoch: i + 1,
            value: v,
        });
    }
    Ok(())
}

/// The multi-start grid of initial guesses, in evaluation order.
pub fn start_grid() -> impl Iterator<Item = CurveFitParams> {
    START_A.into_iter().flat_map(|a| {
        START_B
            .into_iter()
            .flat_map(move |b| START_C.into_iter().map(move |c| CurveFitParams::new(a, b, c)))
    })
}

/// Least-squares fit of the learning curve to `series[t-1]` for
/// `t = 1..=len`. Returns the lowest-residual start (earliest on ties).
pub fn fit_curve(series: &[f64]) -> Result<CurveFitParams, FitError> {
    check_series(series)?;
    let mut best: Option<CurveFitParams> = None;
    for start in start_grid() {
        if let Some(p) = lm_from(start, series) {
            if best.is_none_or(|b| p.residual < b.residual) {
                best = Some(p);
            }
        }
    }
    best.ok_or(FitError::FitFailed)
}

/// Residual of a parameter triple on a series, for comparisons.
pub fn residual(p: &CurveFitParams, series: &[f64]) -> f64 {
    sse(p, series)
}

/// `|f'(1) - f'(t)| / f'(1)`.
pub fn trigger_ratio(p: &CurveFitParams, t: f64) -> Result<f64, FitError> {
    let d1 = eval_derivative(p, 1.0);
    if !(d1 > 0.0) {
        return Err(FitError::FlatCurve);
    }
    Ok((d1 - eval_derivative(p, t)).abs() / d1)
}

/// How often a sample may be corrected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionSchedule {
    /// First trigger only.
    #[default]
    Once,
    /// After the first trigger, fire again at every epoch where the
    /// observed training mIoU went down.
    EachDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub sample_id: String,
    /// Training mIoU for epochs 1, 2, ...
    pub miou_series: Vec<f64>,
    pub fit: Option<CurveFitParams>,
    /// First correction epoch.
    pub t_c: Option<usize>,
    pub corrected: bool,
    /// Every epoch at which a correction fired.
    #[serde(default)]
    pub corrections: Vec<usize>,
}

impl LearningCurve {
    pub fn new(sample_id: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            miou_series: Vec::new(),
            fit: None,
            t_c: None,
            corrected: false,
            corrections: Vec::new(),
        }
    }

    /// Current epoch (length of the series).
    pub fn epoch(&self) -> usize {
        self.miou_series.len()
    }

    pub fn push(&mut self, miou: f64) {
        self.miou_series.push(miou);
    }

    /// Refit from the full series. No-op below 3 epochs.
    pub fn refit(&mut self) -> Result<(), FitError> {
        if self.miou_series.len() >= 3 {
            self.fit = Some(fit_curve(&self.miou_series)?);
        }
        Ok(())
    }

    pub fn mark_corrected(&mut self, epoch: usize) {
        if self.t_c.is_none() {
            self.t_c = Some(epoch);
        }
        self.corrected = true;
        self.corrections.push(epoch);
    }
}

/// Decide whether `curve` should be corrected at its current epoch.
///
/// Returns the epoch when the ratio trigger holds and the schedule allows
/// it. A curve with no fit yet never fires.
pub fn detect_correction(
    curve: &LearningCurve,
    r: f64,
    schedule: CorrectionSchedule,
) -> Result<Option<usize>, FitError> {
    let t = curve.epoch();
    let Some(fit) = curve.fit else {
        return Ok(None);
    };
    if curve.corrected {
        match schedule {
            CorrectionSchedule::Once => return Ok(None),
            CorrectionSchedule::EachDown => {
                let s = &curve.miou_series;
                let went_down = t >= 2 && s[t - 1] < s[t - 2];
                if !went_down || curve.corrections.last() == Some(&t) {
                    return Ok(None);
                }
            }
        }
    }
    let ratio = trigger_ratio(&fit, t as f64)?;
    Ok((ratio > r).then_some(t))
}

/// First epoch in `1..=max_epoch` at which the trigger fires for fixed
/// parameters.
pub fn first_trigger_epoch(
    p: &CurveFitParams,
    r: f64,
    max_epoch: usize,
) -> Result<Option<usize>, FitError> {
    for t in 1..=max_epoch {
        if trigger_ratio(p, t as f64)? > r {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn series(p: &CurveFitParams, n: usize) -> Vec<f64> {
        (1..=n).map(|t| eval_curve(p, t as f64)).collect()
    }

    #[test]
    fn curve_values() {
        let p = CurveFitParams::new(0.8, 1.0, 5.0);
        assert_abs_diff_eq!(eval_curve(&p, 5.0), 0.8 * (1.0 - (-1.0f64).exp()), epsilon = 1e-12);
        assert_abs_diff_eq!(eval_curve(&p, 5.0), 0.50569, epsilon = 1e-5);
        assert_abs_diff_eq!(eval_curve(&p, 1e6), 0.8, epsilon = 1e-12);
        let zero = CurveFitParams::new(0.0, 1.3, 2.0);
        assert!((1..50).all(|t| eval_curve(&zero, t as f64) == 0.0));
    }

    #[test]
    fn derivative_values() {
        let p = CurveFitParams::new(0.8, 1.0, 5.0);
        assert_abs_diff_eq!(eval_derivative(&p, 1.0), 0.16 * (-0.2f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(eval_derivative(&p, 1.0), 0.13100, epsilon = 1e-5);
        let d: Vec<f64> = (1..30).map(|t| eval_derivative(&p, t as f64)).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn noiseless_recovery() {
        let truth = CurveFitParams::new(0.8, 1.2, 4.0);
        let fit = fit_curve(&series(&truth, 40)).unwrap();
        assert!((fit.a - 0.8).abs() <= 1e-3, "{fit:?}");
        assert!((fit.b - 1.2).abs() <= 1e-3, "{fit:?}");
        assert!((fit.c - 4.0).abs() <= 1e-3, "{fit:?}");
        assert!(fit.residual <= 1e-8);
    }

    #[test]
    fn constant_zero_series() {
        let fit = fit_curve(&[0.0; 10]).unwrap();
        assert_eq!(fit.a, 0.0);
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_curve(&[0.1, 0.2]).unwrap_err(), FitError::TooShort(2));
        assert!(matches!(
            fit_curve(&[0.1, 1.2, 0.3]).unwrap_err(),
            FitError::OutOfRange { epoch: 2, .. }
        ));
    }

    #[test]
    fn trigger_at_thirteen() {
        let p = CurveFitParams::new(0.8, 1.0, 5.0);
        assert_eq!(first_trigger_epoch(&p, 0.9, 100).unwrap(), Some(13));
        assert_eq!(first_trigger_epoch(&p, 1.0, 1000).unwrap(), None);
    }

    #[test]
    fn detect_uses_current_epoch_and_once() {
        let p = CurveFitParams::new(0.8, 1.0, 5.0);
        let mut curve = LearningCurve::new("s");
        curve.miou_series = series(&p, 12);
        curve.fit = Some(p);
        assert_eq!(detect_correction(&curve, 0.9, CorrectionSchedule::Once).unwrap(), None);
        curve.push(eval_curve(&p, 13.0));
        assert_eq!(detect_correction(&curve, 0.9, CorrectionSchedule::Once).unwrap(), Some(13));
        curve.mark_corrected(13);
        curve.push(eval_curve(&p, 14.0));
        assert_eq!(detect_correction(&curve, 0.9, CorrectionSchedule::Once).unwrap(), None);
        // rising series: each-down does not refire
        assert_eq!(detect_correction(&curve, 0.9, CorrectionSchedule::EachDown).unwrap(), None);
        curve.push(0.1);
        assert_eq!(
            detect_correction(&curve, 0.9, CorrectionSchedule::EachDown).unwrap(),
            Some(15)
        );
    }

    #[test]
    fn flat_curve_errors() {
        let mut curve = LearningCurve::new("flat");
        curve.miou_series = vec![0.0; 8];
        curve.refit().unwrap();
        assert_eq!(
            detect_correction(&curve, 0.9, CorrectionSchedule::Once).unwrap_err(),
            FitError::FlatCurve
        );
    }
}
