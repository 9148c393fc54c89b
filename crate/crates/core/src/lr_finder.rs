//! Learning-rate range test.
//!
//! Train for a fixed number of steps while the learning rate grows
//! exponentially from `lr_lo` to `lr_hi`, smooth the loss with a
//! bias-corrected EMA and suggest the rate at the steepest descent of the
//! smoothed loss (slope taken against `ln lr`). The sweep stops once the
//! smoothed loss exceeds `diverge_factor` times the best seen so far.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangeTestConfig {
    pub lr_lo: f64,
    pub lr_hi: f64,
    pub steps: usize,
    pub smoothing: f64,
    pub diverge_factor: f64,
}

impl Default for RangeTestConfig {
    fn default() -> Self {
        Self {
            lr_lo: 1e-6,
            lr_hi: 1.0,
            steps: 100,
            smoothing: 0.98,
            diverge_factor: 4.0,
        }
    }
}

impl RangeTestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_lo > 0.0 && self.lr_lo.is_finite() && self.lr_hi.is_finite()) {
            return Err(Error::invalid("learning-rate bounds must be finite and positive"));
        }
        if self.lr_lo >= self.lr_hi {
            return Err(Error::invalid(format!(
                "lr_lo ({}) must be below lr_hi ({})",
                self.lr_lo, self.lr_hi
            )));
        }
        if self.steps < 10 {
            return Err(Error::invalid("range test needs at least 10 steps"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::OutOfRange {
                what: "smoothing",
                value: self.smoothing,
            });
        }
        Ok(())
    }

    /// Exponentially spaced rates from `lr_lo` to `lr_hi`, inclusive.
    pub fn sweep(&self) -> Vec<f64> {
        let ratio = self.lr_hi / self.lr_lo;
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| self.lr_lo * ratio.powf(i as f64 / last))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeTestResult {
    pub lrs: Vec<f64>,
    pub losses: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// `None` when the smoothed loss never decreases.
    pub suggestion: Option<f64>,
    pub suggestion_index: Option<usize>,
    /// Index of the step at which divergence stopped the sweep.
    pub diverged_at: Option<usize>,
}

/// Bias-corrected exponential moving average.
pub fn smooth_losses(losses: &[f64], beta: f64) -> Vec<f64> {
    let mut avg = 0.0;
    losses
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            avg = beta * avg + (1.0 - beta) * l;
            avg / (1.0 - beta.powi(i as i32 + 1))
        })
        .collect()
}

/// Analyse a recorded (lr, loss) curve.
pub fn analyze_curve(lrs: &[f64], losses: &[f64], cfg: &RangeTestConfig) -> Result<RangeTestResult> {
    if lrs.len() != losses.len() {
        return Err(Error::LengthMismatch {
            what: "range-test curve",
            expected: lrs.len(),
            actual: losses.len(),
        });
    }
    let mut smoothed = Vec::with_capacity(losses.len());
    let mut best = f64::INFINITY;
    let mut diverged_at = None;
    let mut avg = 0.0;
    for (i, &l) in losses.iter().enumerate() {
        if !l.is_finite() {
            diverged_at = Some(i);
            break;
        }
        avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * l;
        let s = avg / (1.0 - cfg.smoothing.powi(i as i32 + 1));
        if i > 0 && s > cfg.diverge_factor * best {
            diverged_at = Some(i);
            break;
        }
        best = best.min(s);
        smoothed.push(s);
    }
    if smoothed.len() < 2 {
        return Err(Error::Diverged {
            step: diverged_at.unwrap_or(0),
        });
    }
    let mut steepest: Option<(usize, f64)> = None;
    for i in 0..smoothed.len() - 1 {
        let drop = smoothed[i + 1] - smoothed[i];
        // ignore rounding-level wiggles on a flat curve
        if drop >= -1e-12 * smoothed[i].abs() {
            continue;
        }
        let slope = drop / (lrs[i + 1].ln() - lrs[i].ln());
        if steepest.is_none_or(|(_, s)| slope < s) {
            steepest = Some((i, slope));
        }
    }
    Ok(RangeTestResult {
        lrs: lrs[..smoothed.len()].to_vec(),
        losses: losses[..smoothed.len()].to_vec(),
        suggestion: steepest.map(|(i, _)| lrs[i]),
        suggestion_index: steepest.map(|(i, _)| i),
        smoothed,
        diverged_at,
    })
}

/// Run the sweep. `train_step(lr)` performs one optimisation step at `lr`
/// and returns the loss it observed.
pub fn lr_range_test<F>(mut train_step: F, cfg: &RangeTestConfig) -> Result<RangeTestResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    cfg.validate()?;
    let lrs = cfg.sweep();
    let mut losses = Vec::with_capacity(lrs.len());
    let mut best = f64::INFINITY;
    let mut avg = 0.0;
    for (i, &lr) in lrs.iter().enumerate() {
        let l = train_step(lr)?;
        losses.push(l);
        if !l.is_finite() {
            break;
        }
        avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * l;
        let s = avg / (1.0 - cfg.smoothing.powi(i as i32 + 1));
        if i > 0 && s > cfg.diverge_factor * best {
            break;
        }
        best = best.min(s);
    }
    analyze_curve(&lrs[..losses.len()], &losses, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sweep_is_exponential() {
        let cfg = RangeTestConfig {
            lr_lo: 1e-4,
            lr_hi: 1.0,
            steps: 5,
            ..Default::default()
        };
        let s = cfg.sweep();
        for (a, b) in s.iter().zip([1e-4, 1e-3, 1e-2, 1e-1, 1.0]) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn ema_matches_hand_computation() {
        let s = smooth_losses(&[1.0, 2.0], 0.5);
        assert_relative_eq!(s[0], 1.0);
        // avg = 0.25 + 1.0 = 1.25 over 1 - 0.25
        assert_relative_eq!(s[1], 1.25 / 0.75);
    }

    #[test]
    fn constructed_curve_recovers_steepest_index() {
        let cfg = RangeTestConfig {
            steps: 40,
            lr_lo: 1e-5,
            lr_hi: 1e-1,
            ..Default::default()
        };
        let lrs = cfg.sweep();
        // plateau, one sharp drop between 24 and 25, then flat
        let losses: Vec<f64> = (0..40).map(|i| if i <= 24 { 2.0 } else { 1.0 }).collect();
        // independent oracle: EMA and slope recomputed here
        let mut avg = 0.0;
        let mut sm = Vec::new();
        for (i, l) in losses.iter().enumerate() {
            avg = 0.98 * avg + 0.02 * l;
            sm.push(avg / (1.0 - 0.98f64.powi(i as i32 + 1)));
        }
        let oracle = (0..39)
            .min_by(|&a, &b| (sm[a + 1] - sm[a]).partial_cmp(&(sm[b + 1] - sm[b])).unwrap())
            .unwrap();
        assert_eq!(oracle, 24);
        let r = analyze_curve(&lrs, &losses, &cfg).unwrap();
        assert_eq!(r.suggestion_index, Some(24));
        assert_eq!(r.suggestion, Some(lrs[24]));
        assert_eq!(r.diverged_at, None);
    }

    #[test]
    fn flat_curve_has_no_suggestion() {
        let cfg = RangeTestConfig::default();
        let lrs = cfg.sweep();
        let r = analyze_curve(&lrs, &vec![0.7; lrs.len()], &cfg).unwrap();
        assert_eq!(r.suggestion, None);
        let rising: Vec<f64> = (0..lrs.len()).map(|i| 1.0 + i as f64 * 1e-3).collect();
        assert_eq!(analyze_curve(&lrs, &rising, &cfg).unwrap().suggestion, None);
    }

    #[test]
    fn immediate_divergence_is_an_error() {
        let cfg = RangeTestConfig::default();
        let r = lr_range_test(|_| Ok(f64::NAN), &cfg);
        assert!(matches!(r, Err(Error::Diverged { step: 0 })));
        let mut n = 0;
        let r = lr_range_test(
            |_| {
                n += 1;
                Ok(if n == 1 { 1.0 } else { 1e6 })
            },
            &cfg,
        );
        assert!(matches!(r, Err(Error::Diverged { step: 1 })));
    }

    #[test]
    fn bad_configs() {
        let base = RangeTestConfig::default();
        for cfg in [
            RangeTestConfig {
                lr_lo: 1.0,
                lr_hi: 0.1,
                ..base
            },
            RangeTestConfig { steps: 9, ..base },
            RangeTestConfig { lr_lo: 0.0, ..base },
        ] {
            assert!(lr_range_test(|_| Ok(1.0), &cfg).is_err());
        }
    }

    #[test]
    fn quadratic_suggestion_below_divergence() {
        // loss = a w^2 / 2 with plain gradient descent diverges for lr > 2 / a
        let a = 50.0;
        let mut w = 1.0f64;
        let cfg = RangeTestConfig {
            lr_lo: 1e-5,
            lr_hi: 10.0,
            steps: 120,
            ..Default::default()
        };
        let r = lr_range_test(
            |lr| {
                let loss = 0.5 * a * w * w;
                w -= lr * a * w;
                Ok(loss)
            },
            &cfg,
        )
        .unwrap();
        let s = r.suggestion.expect("descent happens");
        assert!(s < 2.0 / a, "suggested {s}");
        assert!(r.diverged_at.is_some());
    }
}
