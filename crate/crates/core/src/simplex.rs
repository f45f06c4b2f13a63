//! Projections from unconstrained logits onto the probability simplex.
//!
//! Three maps are provided, all taking a logit vector `ũ ∈ R^d`:
//!
//! - `softmax_project`: `exp(β ũ) / Σ exp(β ũ)`, a strictly interior point.
//!   It is the maximizer of `⟨ũ, z⟩ + H(z)/β` over the simplex.
//! - `sparsemax_project`: the Euclidean projection of `β ũ` onto the simplex.
//! - `hardmax_project`: the vertex at the argmax (lowest index on ties).
//!
//! Both smooth maps also expose their Jacobians, and a vector-Jacobian product
//! that skips materializing the `d × d` matrix (used on the training hot path).

use std::ops::Deref;

use crate::error::{Error, Result};

/// Tolerance used when validating that a vector lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Annealing scalar multiplying the logits before projection.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::InvalidInput(format!("temperature {beta} is not finite")));
        }
        if beta <= 0.0 {
            return Err(Error::Domain(format!("temperature must be > 0, got {beta}")));
        }
        Ok(Temperature(beta))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

/// A point of the probability simplex: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "probability entry {v} is negative or not finite"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(values))
    }

    /// The uniform distribution over `d` labels.
    pub fn uniform(d: usize) -> Self {
        assert!(d > 0);
        ProbVector(vec![1.0 / d as f64; d])
    }

    /// The vertex with all mass on `index`.
    pub fn vertex(d: usize, index: usize) -> Self {
        assert!(index < d);
        let mut v = vec![0.0; d];
        v[index] = 1.0;
        ProbVector(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "logit vector needs at least 2 entries, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("logit vector contains NaN or Inf".into()));
    }
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
#[inline]
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Rounds subnormal values to zero. Saturated softmax rows and decaying
/// optimizer moments otherwise pass through the subnormal range, where
/// arithmetic is roughly 30x slower on common hardware.
#[inline]
pub fn flush_subnormal(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Softmax of `β · logits` written into `out`. No validation.
#[inline]
pub fn softmax_into(logits: &[f64], beta: f64, out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        let e = (beta * (x - max)).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o = flush_subnormal(*o * inv);
    }
}

/// Euclidean projection of `β · logits` onto the simplex, written into `out`.
///
/// `scratch` is reused between calls to avoid allocating on every row.
pub fn sparsemax_into(logits: &[f64], beta: f64, out: &mut [f64], scratch: &mut Vec<f64>) {
    let tau = sparsemax_threshold(logits, beta, scratch);
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (beta * x - tau).max(0.0);
    }
}

/// Threshold `τ` such that `max(β ũ − τ, 0)` sums to one.
pub fn sparsemax_threshold(logits: &[f64], beta: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(logits.iter().map(|&x| beta * x));
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = scratch[0] - 1.0;
    for (k, &v) in scratch.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if v > candidate {
            tau = candidate;
        } else {
            break;
        }
    }
    tau
}

pub fn softmax_project(logits: &[f64], beta: Temperature) -> Result<ProbVector> {
    check_logits(logits)?;
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, beta.get(), &mut out);
    Ok(ProbVector(out))
}

pub fn sparsemax_project(logits: &[f64], beta: Temperature) -> Result<ProbVector> {
    check_logits(logits)?;
    let mut out = vec![0.0; logits.len()];
    sparsemax_into(logits, beta.get(), &mut out, &mut Vec::with_capacity(logits.len()));
    Ok(ProbVector(out))
}

pub fn hardmax_project(logits: &[f64]) -> Result<ProbVector> {
    check_logits(logits)?;
    Ok(ProbVector::vertex(logits.len(), argmax(logits)))
}

/// Shannon entropy in nats, with `0 · log 0 = 0`.
pub fn entropy(z: &[f64]) -> f64 {
    -z.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `⟨ũ, z⟩ + H(z) / β`; softmax of `β ũ` is its unique maximizer over the simplex.
pub fn entropic_objective(logits: &[f64], z: &[f64], beta: Temperature) -> f64 {
    let inner: f64 = logits.iter().zip(z).map(|(a, b)| a * b).sum();
    inner + entropy(z) / beta.get()
}

/// `β (diag(u) − u uᵀ)` with `u = softmax(β ũ)`.
pub fn softmax_jacobian(logits: &[f64], beta: Temperature) -> Result<Vec<Vec<f64>>> {
    let u = softmax_project(logits, beta)?;
    let b = beta.get();
    let d = u.len();
    Ok((0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let diag = if i == j { u[i] } else { 0.0 };
                    b * (diag - u[i] * u[j])
                })
                .collect()
        })
        .collect())
}

/// `β (diag(s) − s sᵀ / |S|)` where `s` flags the support of the sparsemax output.
///
/// At support boundaries this picks the generalized Jacobian associated with the
/// support of the computed output.
pub fn sparsemax_jacobian(logits: &[f64], beta: Temperature) -> Result<Vec<Vec<f64>>> {
    let u = sparsemax_project(logits, beta)?;
    let b = beta.get();
    let support: Vec<f64> = u.iter().map(|&p| if p > 0.0 { 1.0 } else { 0.0 }).collect();
    let size: f64 = support.iter().sum();
    let d = u.len();
    Ok((0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let diag = if i == j { support[i] } else { 0.0 };
                    b * (diag - support[i] * support[j] / size)
                })
                .collect()
        })
        .collect())
}

/// `g · J` for the softmax Jacobian at the already projected point `u`.
#[inline]
pub fn softmax_vjp(u: &[f64], beta: f64, g: &[f64], out: &mut [f64]) {
    let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &p), &gi) in out.iter_mut().zip(u).zip(g) {
        *o = flush_subnormal(beta * p * (gi - dot));
    }
}

/// `g · J` for the sparsemax Jacobian at the already projected point `u`.
#[inline]
pub fn sparsemax_vjp(u: &[f64], beta: f64, g: &[f64], out: &mut [f64]) {
    let mut size = 0usize;
    let mut sum = 0.0;
    for (&p, &gi) in u.iter().zip(g) {
        if p > 0.0 {
            size += 1;
            sum += gi;
        }
    }
    let mean = sum / size as f64;
    for ((o, &p), &gi) in out.iter_mut().zip(u).zip(g) {
        *o = if p > 0.0 { beta * (gi - mean) } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(beta: f64) -> Temperature {
        Temperature::new(beta).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        assert!(close(&softmax_project(&[0.0, 0.0], t(1.0)).unwrap(), &[0.5, 0.5], 1e-15));
        let p = softmax_project(&[1.0, 0.0], t(3f64.ln())).unwrap();
        assert!(close(&p, &[0.75, 0.25], 1e-15), "{p:?}");
        let p = softmax_project(&[10.0, 0.0], t(100.0)).unwrap();
        assert!(close(&p, &[1.0, 0.0], 1e-10));
    }

    #[test]
    fn softmax_survives_huge_temperature() {
        let p = softmax_project(&[0.3, 0.2, -5.0], t(1e300)).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_errors() {
        assert!(matches!(
            softmax_project(&[f64::NAN, 0.0], t(1.0)),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            sparsemax_project(&[0.0, f64::INFINITY], t(1.0)),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(hardmax_project(&[1.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(Temperature::new(0.0), Err(Error::Domain(_))));
        assert!(matches!(Temperature::new(-2.0), Err(Error::Domain(_))));
        assert!(matches!(Temperature::new(f64::NAN), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sparsemax_examples() {
        let p = sparsemax_project(&[0.3, 0.7], t(1.0)).unwrap();
        assert!(close(&p, &[0.3, 0.7], 1e-15));
        let p = sparsemax_project(&[0.8, 0.3], t(1.0)).unwrap();
        assert!(close(&p, &[0.75, 0.25], 1e-15));
        let p = sparsemax_project(&[2.0, 0.0, -1.0], t(1.0)).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn hardmax_examples() {
        assert_eq!(hardmax_project(&[0.2, 0.9, 0.1]).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(hardmax_project(&[0.5, 0.5]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(hardmax_project(&[-3.0, -1.0]).unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&ProbVector::uniform(4)) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&ProbVector::vertex(3, 1)), 0.0);
        assert!((entropy(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn entropic_objective_examples() {
        let v = entropic_objective(&[0.0, 0.0], &[0.5, 0.5], t(1.0));
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert_eq!(entropic_objective(&[1.0, 0.0], &[1.0, 0.0], t(1.0)), 1.0);
    }

    #[test]
    fn softmax_jacobian_examples() {
        let j = softmax_jacobian(&[0.0, 0.0], t(1.0)).unwrap();
        assert!(close(&j[0], &[0.25, -0.25], 1e-15));
        assert!(close(&j[1], &[-0.25, 0.25], 1e-15));
        let j = softmax_jacobian(&[10.0, 0.0], t(100.0)).unwrap();
        assert!(j.iter().flatten().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn sparsemax_jacobian_examples() {
        let j = sparsemax_jacobian(&[0.3, 0.7], t(1.0)).unwrap();
        assert!(close(&j[0], &[0.5, -0.5], 1e-15));
        assert!(close(&j[1], &[-0.5, 0.5], 1e-15));
        let j = sparsemax_jacobian(&[2.0, 0.0, -1.0], t(1.0)).unwrap();
        assert!(j.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn vjp_matches_explicit_jacobian() {
        let logits = [0.4, -1.2, 0.9, 0.1];
        let g = [1.5, -0.3, 0.2, 2.0];
        for beta in [0.5, 2.0, 7.0] {
            let mut out = [0.0; 4];
            let u = softmax_project(&logits, t(beta)).unwrap();
            softmax_vjp(&u, beta, &g, &mut out);
            let jac = softmax_jacobian(&logits, t(beta)).unwrap();
            let expected: Vec<f64> = (0..4).map(|c| (0..4).map(|r| g[r] * jac[r][c]).sum()).collect();
            assert!(close(&out, &expected, 1e-12));

            let u = sparsemax_project(&logits, t(beta)).unwrap();
            sparsemax_vjp(&u, beta, &g, &mut out);
            let jac = sparsemax_jacobian(&logits, t(beta)).unwrap();
            let expected: Vec<f64> = (0..4).map(|c| (0..4).map(|r| g[r] * jac[r][c]).sum()).collect();
            assert!(close(&out, &expected, 1e-12));
        }
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 2..=8)
    }

    proptest! {
        #[test]
        fn softmax_is_interior_and_order_preserving(x in logits_strategy(), beta in 0.1f64..50.0) {
            let p = softmax_project(&x, t(beta)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for i in 0..x.len() {
                for j in 0..x.len() {
                    if x[i] >= x[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }

        #[test]
        fn sparsemax_satisfies_kkt(x in logits_strategy(), beta in 0.1f64..50.0) {
            let p = sparsemax_project(&x, t(beta)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let tau = sparsemax_threshold(&x, beta, &mut Vec::new());
            for (i, &pi) in p.iter().enumerate() {
                let v = beta * x[i];
                if pi > 0.0 {
                    prop_assert!((v - pi - tau).abs() <= 1e-10);
                } else {
                    prop_assert!(v <= tau + 1e-10);
                }
                for j in 0..x.len() {
                    if x[i] >= x[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }

        #[test]
        fn jacobians_are_symmetric_with_zero_row_sums(x in logits_strategy(), beta in 0.1f64..50.0) {
            for jac in [softmax_jacobian(&x, t(beta)).unwrap(), sparsemax_jacobian(&x, t(beta)).unwrap()] {
                let d = x.len();
                for i in 0..d {
                    let row: f64 = jac[i].iter().sum();
                    let col: f64 = (0..d).map(|r| jac[r][i]).sum();
                    prop_assert!(row.abs() <= 1e-12 * beta.max(1.0));
                    prop_assert!(col.abs() <= 1e-12 * beta.max(1.0));
                    for j in 0..d {
                        prop_assert_eq!(jac[i][j], jac[j][i]);
                    }
                }
            }
        }

        #[test]
        fn softmax_approaches_hardmax(x in logits_strategy()) {
            let mut sorted = x.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let gap = sorted[0] - sorted[1];
            prop_assume!(gap >= 1e-3);
            let hard = hardmax_project(&x).unwrap();
            for beta in [10.0, 100.0, 1000.0] {
                let soft = softmax_project(&x, t(beta)).unwrap();
                let l1: f64 = soft.iter().zip(hard.iter()).map(|(a, b)| (a - b).abs()).sum();
                let bound = 2.0 * (x.len() - 1) as f64 * (-beta * gap).exp();
                prop_assert!(l1 <= bound + 1e-15, "l1={} bound={}", l1, bound);
            }
        }
    }
}
