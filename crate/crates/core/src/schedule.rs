//! Neighborhood weights and annealing of the neighborhood range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `h_σ(t) = exp(-t/σ)`.
pub fn neighborhood_weight(t: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("neighborhood range must be positive, got {sigma}")));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("neighborhood argument must be nonnegative, got {t}")));
    }
    Ok(h(t, sigma))
}

#[inline]
pub(crate) fn h(t: f64, sigma: f64) -> f64 {
    (-t / sigma).exp()
}

/// Exponentially decaying neighborhood range over a fixed number of epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub epochs: usize,
}

impl AnnealingSchedule {
    pub fn new(sigma_start: f64, sigma_end: f64, epochs: usize) -> Result<Self> {
        if !(sigma_end > 0.0) || !(sigma_start >= sigma_end) || !sigma_start.is_finite() {
            return Err(Error::config(format!(
                "schedule needs sigma_start >= sigma_end > 0, got {sigma_start} -> {sigma_end}"
            )));
        }
        if epochs == 0 {
            return Err(Error::config("schedule needs at least one epoch"));
        }
        Ok(Self { sigma_start, sigma_end, epochs })
    }

    pub fn constant(sigma: f64, epochs: usize) -> Result<Self> {
        Self::new(sigma, sigma, epochs)
    }

    /// `σ(t) = σ_start·(σ_end/σ_start)^{t/(T-1)}`.
    pub fn sigma_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::Range(format!("epoch {epoch} outside schedule of {} epochs", self.epochs)));
        }
        Ok(self.sigma_clamped(epoch))
    }

    /// Like [`sigma_at`](Self::sigma_at) but holds `sigma_end` past the last epoch.
    pub fn sigma_clamped(&self, epoch: usize) -> f64 {
        if self.epochs == 1 || self.sigma_start == self.sigma_end {
            return self.sigma_start;
        }
        if epoch + 1 >= self.epochs {
            return self.sigma_end;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.sigma_start * (self.sigma_end / self.sigma_start).powf(frac)
    }

    pub fn is_final(&self, epoch: usize) -> bool {
        epoch + 1 >= self.epochs || self.sigma_start == self.sigma_end
    }
}

/// Precomputed `h_σ(k)` for `k = 0..len`.
pub(crate) fn rank_weights(len: usize, sigma: f64) -> Vec<f64> {
    (0..len).map(|k| h(k as f64, sigma)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        assert_eq!(neighborhood_weight(0.0, 2.0).unwrap(), 1.0);
        assert!((neighborhood_weight(1.0, 1.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((neighborhood_weight(3.0, 1.5).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!((neighborhood_weight(3.0, 1.5).unwrap() - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert!(matches!(neighborhood_weight(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(neighborhood_weight(1.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn sigma_examples() {
        let c = AnnealingSchedule::new(4.0, 4.0, 10).unwrap();
        assert_eq!(c.sigma_at(5).unwrap(), 4.0);
        let s = AnnealingSchedule::new(8.0, 0.5, 5).unwrap();
        assert_eq!(s.sigma_at(4).unwrap(), 0.5);
        assert_eq!(s.sigma_at(0).unwrap(), 8.0);
        assert!((s.sigma_at(2).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(s.sigma_at(5), Err(Error::Range(_))));
        let one = AnnealingSchedule::new(3.0, 1.0, 1).unwrap();
        assert_eq!(one.sigma_at(0).unwrap(), 3.0);
    }

    #[test]
    fn schedule_is_monotone() {
        let s = AnnealingSchedule::new(20.0, 0.01, 100).unwrap();
        let v: Vec<f64> = (0..100).map(|t| s.sigma_at(t).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(AnnealingSchedule::new(0.5, 1.0, 3).is_err());
        assert!(AnnealingSchedule::new(1.0, 0.0, 3).is_err());
        assert!(AnnealingSchedule::new(1.0, 0.5, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn weight_strictly_decreasing(sigma in 0.01f64..50.0, a in 0.0f64..20.0, d in 0.01f64..5.0) {
            let w0 = neighborhood_weight(0.0, sigma).unwrap();
            proptest::prop_assert_eq!(w0, 1.0);
            let wa = neighborhood_weight(a, sigma).unwrap();
            let wb = neighborhood_weight(a + d, sigma).unwrap();
            proptest::prop_assert!(wb < wa || wa == 0.0);
        }
    }
}
