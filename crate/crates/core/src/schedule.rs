//! 1cycle learning-rate schedule with cosine warmup and cosine annealing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneCycle {
    pub total_steps: usize,
    pub max_lr: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub pct_start: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            max_lr: 4e-3,
            div_factor: 25.0,
            final_div_factor: 100.0,
            pct_start: 0.3,
        }
    }
}

/// Cosine interpolation from `from` (t = 0) to `to` (t = 1).
///
/// Written as a weighted sum so both endpoints come out bit-exact.
fn cosine(from: f64, to: f64, t: f64) -> f64 {
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    from * w + to * (1.0 - w)
}

impl OneCycle {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 2 {
            return Err(Error::invalid("1cycle schedule needs at least 2 steps"));
        }
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return Err(Error::OutOfRange {
                what: "max_lr",
                value: self.max_lr,
            });
        }
        for (what, value) in [
            ("div_factor", self.div_factor),
            ("final_div_factor", self.final_div_factor),
        ] {
            if !(value.is_finite() && value > 1.0) {
                return Err(Error::OutOfRange { what, value });
            }
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::OutOfRange {
                what: "pct_start",
                value: self.pct_start,
            });
        }
        Ok(())
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.initial_lr() / self.final_div_factor
    }

    /// Step at which the peak is reached: `round(pct_start * total)`, kept
    /// strictly inside the schedule.
    pub fn warmup_steps(&self) -> usize {
        ((self.pct_start * self.total_steps as f64).round() as usize).clamp(1, self.total_steps - 1)
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        self.validate()?;
        if step > self.total_steps {
            return Err(Error::ScheduleOverrun {
                step,
                total: self.total_steps,
            });
        }
        let warm = self.warmup_steps();
        Ok(if step <= warm {
            cosine(self.initial_lr(), self.max_lr, step as f64 / warm as f64)
        } else {
            let t = (step - warm) as f64 / (self.total_steps - warm) as f64;
            cosine(self.max_lr, self.final_lr(), t)
        })
    }

    /// Largest change one step can make on either cosine segment:
    /// `(pi / 2) * amplitude / segment length`.
    pub fn max_step_change(&self) -> f64 {
        let warm = self.warmup_steps() as f64;
        let anneal = (self.total_steps - self.warmup_steps()) as f64;
        let half_pi = std::f64::consts::FRAC_PI_2;
        (half_pi * (self.max_lr - self.initial_lr()) / warm)
            .max(half_pi * (self.max_lr - self.final_lr()) / anneal)
    }
}

/// Stateful cursor over a [`OneCycle`] schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub schedule: OneCycle,
    pub step: usize,
}

impl ScheduleState {
    pub fn new(schedule: OneCycle) -> Result<Self> {
        schedule.validate()?;
        Ok(Self { schedule, step: 0 })
    }

    pub fn lr(&self) -> Result<f64> {
        self.schedule.lr(self.step)
    }

    pub fn advance(&mut self) -> Result<f64> {
        let lr = self.lr()?;
        self.step += 1;
        Ok(lr)
    }
}

pub fn onecycle_lr(s: &ScheduleState) -> Result<f64> {
    s.lr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn endpoints() {
        let s = OneCycle::default();
        assert_eq!(s.lr(0).unwrap(), 4e-3 / 25.0);
        assert_relative_eq!(s.lr(0).unwrap(), 1.6e-4, max_relative = 1e-15);
        assert_eq!(s.lr(300).unwrap(), 4e-3);
        assert_eq!(s.lr(1000).unwrap(), s.final_lr());
        assert_relative_eq!(s.lr(1000).unwrap(), 1.6e-6, max_relative = 1e-12);
        assert!(matches!(s.lr(1001), Err(Error::ScheduleOverrun { .. })));
    }

    #[test]
    fn rises_then_falls() {
        let s = OneCycle::default();
        let lrs: Vec<f64> = (0..=1000).map(|i| s.lr(i).unwrap()).collect();
        assert!(lrs[..=300].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[300..].windows(2).all(|w| w[1] <= w[0]));
        let peak = lrs.iter().cloned().fold(0.0, f64::max);
        assert_eq!(peak, 4e-3);
    }

    #[test]
    fn step_change_bounded_by_cosine_increment() {
        for total in [10, 97, 1000, 3000] {
            for pct in [0.1, 0.3, 0.5, 0.9] {
                let s = OneCycle {
                    total_steps: total,
                    pct_start: pct,
                    ..Default::default()
                };
                let bound = s.max_step_change();
                for i in 0..total {
                    let d = (s.lr(i + 1).unwrap() - s.lr(i).unwrap()).abs();
                    assert!(d <= bound * (1.0 + 1e-12), "total {total} pct {pct} step {i}");
                }
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            OneCycle {
                pct_start: 0.0,
                ..Default::default()
            },
            OneCycle {
                pct_start: 1.0,
                ..Default::default()
            },
            OneCycle {
                div_factor: 1.0,
                ..Default::default()
            },
            OneCycle {
                final_div_factor: 0.5,
                ..Default::default()
            },
            OneCycle {
                total_steps: 1,
                ..Default::default()
            },
            OneCycle {
                max_lr: -1.0,
                ..Default::default()
            },
        ];
        for s in bad {
            assert!(s.lr(0).is_err(), "{s:?}");
        }
    }

    #[test]
    fn state_advances() {
        let mut st = ScheduleState::new(OneCycle {
            total_steps: 4,
            ..Default::default()
        })
        .unwrap();
        let first = st.advance().unwrap();
        assert_eq!(first, 1.6e-4);
        for _ in 0..4 {
            st.advance().unwrap();
        }
        assert!(st.advance().is_err());
        assert!(onecycle_lr(&st).is_err());
    }
}
