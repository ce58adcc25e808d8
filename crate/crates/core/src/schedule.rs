//! Per-step cosine curves for learning rate, weight decay and EMA decay.

use crate::error::{bail, Result};

/// Optional linear warmup from 0 to `start`, then a half-cosine from `start`
/// to `end` reached at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub start: f64,
    pub end: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(start: f64, end: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if warmup_steps > total_steps {
            bail!(Config, "warmup of {warmup_steps} steps exceeds the {total_steps} total steps");
        }
        if !start.is_finite() || !end.is_finite() {
            bail!(Config, "schedule endpoints must be finite, got {start} and {end}");
        }
        Ok(Self { start, end, warmup_steps, total_steps })
    }

    pub fn value(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            bail!(Input, "step {step} is past the schedule end {}", self.total_steps);
        }
        if step < self.warmup_steps {
            return Ok(self.start * step as f64 / self.warmup_steps as f64);
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return Ok(self.end);
        }
        let tau = (step - self.warmup_steps) as f64 / span as f64;
        Ok(self.end + (self.start - self.end) * (1.0 + libm::cos(core::f64::consts::PI * tau)) / 2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleValues {
    pub lr: f64,
    pub wd: f64,
    pub m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSet {
    pub lr: CosineSchedule,
    pub wd: CosineSchedule,
    pub ema: CosineSchedule,
}

impl ScheduleSet {
    pub fn at(&self, step: u64) -> Result<ScheduleValues> {
        Ok(ScheduleValues { lr: self.lr.value(step)?, wd: self.wd.value(step)?, m: self.ema.value(step)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let lr = CosineSchedule::new(5e-4, 1e-6, 10, 100).unwrap();
        assert_eq!(lr.value(0).unwrap(), 0.0);
        assert!((lr.value(5).unwrap() - 2.5e-4).abs() < 1e-18);
        assert_eq!(lr.value(10).unwrap(), 5e-4);
        assert_eq!(lr.value(100).unwrap(), 1e-6);
        assert!(lr.value(101).is_err());
        let m = CosineSchedule::new(0.99, 1.0, 0, 100).unwrap();
        assert!((m.value(0).unwrap() - 0.99).abs() < 1e-12);
        assert_eq!(m.value(100).unwrap(), 1.0);
        assert!((m.value(50).unwrap() - 0.995).abs() < 1e-12);
        let wd = CosineSchedule::new(0.04, 0.4, 0, 7).unwrap();
        assert!((wd.value(0).unwrap() - 0.04).abs() < 1e-12);
        assert_eq!(wd.value(7).unwrap(), 0.4);
        assert!(CosineSchedule::new(1.0, 0.0, 11, 10).is_err());
    }

    proptest! {
        #[test]
        fn monotone_between_endpoints(start in 0.0f64..1.0, end in 0.0f64..1.0, total in 1u64..500) {
            let s = CosineSchedule::new(start, end, 0, total).unwrap();
            let vals: Vec<f64> = (0..=total).map(|t| s.value(t).unwrap()).collect();
            let inc = end >= start;
            for w in vals.windows(2) {
                let ok = if inc { w[1] >= w[0] - 1e-15 } else { w[1] <= w[0] + 1e-15 };
                prop_assert!(ok);
            }
        }
    }
}
