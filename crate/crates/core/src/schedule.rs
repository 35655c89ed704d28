//! Learning rate schedules: Multistep decay and a single-cycle triangular
//! Cyclic policy, both optionally multiplied by a gradual warmup factor.
//!
//! The warmup factor follows the recurrence
//! `κ₁ = 0.001, κ_{i+1} = κ_i·(1 − i/I) + i/I` for `1 ≤ i ≤ I`, which lands
//! on `κ_{I+1} = 1` exactly; epochs past the horizon use factor 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Multistep,
    Cyclic,
}

/// A complete learning-rate policy for a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub total_epochs: usize,
    /// Multistep initial rate; Cyclic peak rate.
    pub max_lr: f64,
    /// Cyclic floor (Multistep ignores it).
    pub min_lr: f64,
    /// Multistep drop points as fractions of the total epochs.
    pub milestones: Vec<f64>,
    /// Multistep decay factor per milestone.
    pub factor: f64,
    /// Warmup horizon `I` in epochs; 0 disables warmup.
    pub warmup_epochs: usize,
}

impl LrSchedule {
    pub fn multistep(init_lr: f64, total_epochs: usize, milestones: Vec<f64>, factor: f64) -> Self {
        Self {
            kind: ScheduleKind::Multistep,
            total_epochs,
            max_lr: init_lr,
            min_lr: 0.0,
            milestones,
            factor,
            warmup_epochs: 0,
        }
    }

    pub fn cyclic(min_lr: f64, max_lr: f64, total_epochs: usize) -> Self {
        Self {
            kind: ScheduleKind::Cyclic,
            total_epochs,
            max_lr,
            min_lr,
            milestones: Vec::new(),
            factor: 0.1,
            warmup_epochs: 0,
        }
    }

    pub fn with_warmup(mut self, horizon: usize) -> Self {
        self.warmup_epochs = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::Param("schedule: zero epochs".into()));
        }
        if !(self.max_lr > 0.0) || self.min_lr < 0.0 || self.min_lr > self.max_lr {
            return Err(Error::Param(format!(
                "schedule: lr bounds min {} max {} invalid",
                self.min_lr, self.max_lr
            )));
        }
        if self.milestones.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::Param("schedule: milestones must be fractions in [0,1]".into()));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::Param(format!("schedule: factor {} outside (0,1]", self.factor)));
        }
        Ok(())
    }

    /// Warmup factor κ for a 0-based epoch: epoch 0 gets κ₁ = 0.001, epoch
    /// `e < I` gets κ_{e+1} via the recurrence, later epochs get exactly 1.
    pub fn warmup_factor(&self, epoch: usize) -> f64 {
        let horizon = self.warmup_epochs;
        if horizon == 0 || epoch >= horizon {
            return 1.0;
        }
        let mut kappa = 0.001;
        for i in 1..=epoch {
            let t = i as f64 / horizon as f64;
            kappa = kappa * (1.0 - t) + t;
        }
        kappa
    }

    fn base_lr(&self, epoch: usize) -> f64 {
        match self.kind {
            ScheduleKind::Multistep => {
                let mut lr = self.max_lr;
                for &m in &self.milestones {
                    let at = (m * self.total_epochs as f64).floor() as usize;
                    if epoch >= at {
                        lr *= self.factor;
                    }
                }
                lr
            }
            ScheduleKind::Cyclic => {
                // single triangle peaking at the midpoint of training
                if self.total_epochs == 1 {
                    return self.max_lr;
                }
                let t = epoch as f64 / (self.total_epochs - 1) as f64;
                self.min_lr + (self.max_lr - self.min_lr) * (1.0 - (2.0 * t - 1.0).abs())
            }
        }
    }

    /// The learning rate applied at a 0-based epoch: the base schedule value
    /// times the warmup factor.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr(epoch) * self.warmup_factor(epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multistep_half_and_three_quarter_drops() {
        let s = LrSchedule::multistep(0.01, 200, vec![0.5, 0.75], 0.1);
        assert_eq!(s.lr_at(0), 0.01);
        assert_eq!(s.lr_at(99), 0.01);
        assert!((s.lr_at(100) - 0.001).abs() < 1e-15);
        assert!((s.lr_at(120) - 0.001).abs() < 1e-15);
        assert!((s.lr_at(150) - 0.0001).abs() < 1e-15);
        assert!((s.lr_at(199) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn warmup_recurrence_direct_values() {
        let s = LrSchedule::multistep(0.1, 50, vec![], 0.1).with_warmup(5);
        // κ₁ = 0.001; κ₂ = 0.001·(1 − 1/5) + 1/5 = 0.2008
        assert_eq!(s.warmup_factor(0), 0.001);
        assert!((s.warmup_factor(1) - 0.2008).abs() < 1e-15);
        // κ₃ = 0.2008·0.6 + 0.4
        assert!((s.warmup_factor(2) - (0.2008 * 0.6 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn warmup_reaches_one_exactly_at_horizon() {
        for horizon in [1usize, 3, 5, 20] {
            let s = LrSchedule::multistep(0.1, 100, vec![], 0.1).with_warmup(horizon);
            assert_eq!(s.warmup_factor(horizon), 1.0);
            assert_eq!(s.warmup_factor(horizon + 7), 1.0);
            // the recurrence itself lands on 1 when run one step past I
            let mut kappa = 0.001_f64;
            for i in 1..=horizon {
                let t = i as f64 / horizon as f64;
                kappa = kappa * (1.0 - t) + t;
            }
            assert_eq!(kappa, 1.0);
        }
    }

    #[test]
    fn cyclic_triangle_peaks_at_midpoint() {
        let s = LrSchedule::cyclic(0.0, 0.2, 11);
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(5) - 0.2).abs() < 1e-15);
        assert_eq!(s.lr_at(10), 0.0);
        assert!(s.lr_at(3) < s.lr_at(4));
        assert!(s.lr_at(7) > s.lr_at(8));
    }

    #[test]
    fn warmup_multiplies_base_rate() {
        let s = LrSchedule::multistep(0.1, 40, vec![0.5], 0.1).with_warmup(4);
        assert!((s.lr_at(0) - 0.1 * 0.001).abs() < 1e-18);
        assert_eq!(s.lr_at(10), 0.1);
        assert!((s.lr_at(25) - 0.01).abs() < 1e-15);
    }
}
