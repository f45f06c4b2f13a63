use crate::error::{Error, Result};
use crate::simplex::Temperature;

/// Geometric temperature growth: `β_k = β₀ · ρ^⌊k / period⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub beta0: f64,
    pub rho: f64,
    pub period: u64,
}

impl AnnealSchedule {
    pub fn new(beta0: f64, rho: f64, period: u64) -> Result<Self> {
        if !(beta0 > 0.0 && beta0.is_finite()) {
            return Err(Error::Domain(format!("beta0 must be positive and finite, got {beta0}")));
        }
        if !(rho > 1.0 && rho.is_finite()) {
            return Err(Error::Domain(format!("rho must be > 1, got {rho}")));
        }
        if period == 0 {
            return Err(Error::Domain("annealing period must be at least 1".into()));
        }
        Ok(AnnealSchedule { beta0, rho, period })
    }

    /// Temperature in effect at iteration `iter`, saturating at `f64::MAX`.
    pub fn beta_at(&self, iter: u64) -> Temperature {
        let exponent = (iter / self.period).min(i32::MAX as u64) as i32;
        let beta = self.beta0 * self.rho.powi(exponent);
        Temperature::new(beta.min(f64::MAX)).expect("schedule parameters are validated")
    }
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            beta0: 1.0,
            rho: 1.2,
            period: 100,
        }
    }
}

/// Stateless form of "multiply β by ρ once per period".
pub fn anneal_update(iter: u64, schedule: &AnnealSchedule) -> Temperature {
    schedule.beta_at(iter)
}

/// Step decay: `lr · lr_scale^⌊iter / lr_interval⌋`.
pub fn step_decay(lr: f64, lr_scale: f64, lr_interval: u64, iter: u64) -> f64 {
    let exponent = (iter / lr_interval.max(1)).min(i32::MAX as u64) as i32;
    lr * lr_scale.powi(exponent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annealing_examples() {
        let s = AnnealSchedule::new(1.0, 1.2, 100).unwrap();
        assert!((anneal_update(250, &s).get() - 1.44).abs() < 1e-15);
        assert_eq!(anneal_update(0, &s).get(), 1.0);
        assert_eq!(anneal_update(99, &s).get(), 1.0);
        assert_eq!(anneal_update(100, &s).get(), 1.2);
    }

    #[test]
    fn annealing_saturates() {
        let s = AnnealSchedule::new(1.0, 1.2, 1).unwrap();
        assert_eq!(s.beta_at(1_000_000).get(), f64::MAX);
    }

    #[test]
    fn annealing_matches_repeated_multiplication() {
        let s = AnnealSchedule::new(0.5, 1.05, 7).unwrap();
        let mut beta = 0.5;
        for k in 0..700u64 {
            if k > 0 && k % 7 == 0 {
                beta *= 1.05;
            }
            let stateless = s.beta_at(k).get();
            assert!((stateless - beta).abs() <= 1e-12 * beta);
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(AnnealSchedule::new(0.0, 1.2, 100).is_err());
        assert!(AnnealSchedule::new(1.0, 1.0, 100).is_err());
        assert!(AnnealSchedule::new(1.0, 1.2, 0).is_err());
    }

    #[test]
    fn step_decay_examples() {
        assert_eq!(step_decay(0.001, 0.2, 7000, 6999), 0.001);
        assert!((step_decay(0.001, 0.2, 7000, 7000) - 0.0002).abs() < 1e-18);
        assert!((step_decay(0.001, 0.2, 7000, 14000) - 0.00004).abs() < 1e-18);
    }
}
