//! Brute-force mean-field machinery on small explicit energies, and grid
//! oracles for the proximal objectives on the simplex.
//!
//! Everything here enumerates exhaustively. Problems with more than
//! [`MAX_CONFIGURATIONS`] configurations are refused rather than sampled.

use crate::error::{Error, Result};
use crate::quantization::SimplexField;
use crate::simplex::{entropy, softmax_into, ProbVector, Temperature};

pub const MAX_CONFIGURATIONS: usize = 1_000_000;
pub const MAX_VARIABLES: usize = 12;

fn configuration_count(m: usize, d: usize) -> Result<usize> {
    if m > MAX_VARIABLES {
        return Err(Error::Size(format!("{m} variables exceeds the limit of {MAX_VARIABLES}")));
    }
    let mut n = 1usize;
    for _ in 0..m {
        n = n.saturating_mul(d);
        if n > MAX_CONFIGURATIONS {
            return Err(Error::Size(format!(
                "{d}^{m} configurations exceeds the enumeration limit of {MAX_CONFIGURATIONS}"
            )));
        }
    }
    Ok(n)
}

/// Loss table `L(w)` over all label tuples, row-major with the first
/// variable most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteEnergy {
    m: usize,
    d: usize,
    table: Vec<f64>,
}

impl DiscreteEnergy {
    pub fn new(m: usize, d: usize, table: Vec<f64>) -> Result<Self> {
        if m == 0 || d < 2 {
            return Err(Error::InvalidInput(format!("need m ≥ 1 and d ≥ 2, got m = {m}, d = {d}")));
        }
        let n = configuration_count(m, d)?;
        if table.len() != n {
            return Err(Error::Shape(format!("table needs {n} entries, got {}", table.len())));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("energy table must be finite".into()));
        }
        Ok(DiscreteEnergy { m, d, table })
    }

    /// Tabulates `f` over every configuration.
    pub fn from_fn(m: usize, d: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = configuration_count(m, d)?;
        let mut config = vec![0usize; m];
        let mut table = Vec::with_capacity(n);
        for idx in 0..n {
            decode(idx, d, &mut config);
            table.push(f(&config));
        }
        DiscreteEnergy::new(m, d, table)
    }

    /// `L(w) = Σ_j θ_j[w_j]`.
    pub fn separable(theta: &[Vec<f64>]) -> Result<Self> {
        let d = theta.first().map_or(0, Vec::len);
        if theta.iter().any(|t| t.len() != d) {
            return Err(Error::Shape("all unary tables must have the same length".into()));
        }
        DiscreteEnergy::from_fn(theta.len(), d, |w| {
            w.iter().enumerate().map(|(j, &l)| theta[j][l]).sum()
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn value(&self, config: &[usize]) -> f64 {
        self.table[config.iter().fold(0, |acc, &l| acc * self.d + l)]
    }

    fn check_field(&self, u: &SimplexField) -> Result<()> {
        if u.m() != self.m || u.d() != self.d {
            return Err(Error::Shape(format!(
                "field is {}×{} but the energy has {} variables with {} labels",
                u.m(),
                u.d(),
                self.m,
                self.d
            )));
        }
        Ok(())
    }
}

fn decode(mut idx: usize, d: usize, config: &mut [usize]) {
    for slot in config.iter_mut().rev() {
        *slot = idx % d;
        idx /= d;
    }
}

/// `P(w) ∝ exp(−L(w))` with its log partition function.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDistribution {
    energy: DiscreteEnergy,
    log_z: f64,
}

impl GibbsDistribution {
    pub fn new(energy: DiscreteEnergy) -> Self {
        let shift = energy.table.iter().copied().fold(f64::INFINITY, f64::min);
        let sum: f64 = energy.table.iter().map(|&l| (shift - l).exp()).sum();
        let log_z = sum.ln() - shift;
        GibbsDistribution { energy, log_z }
    }

    pub fn energy(&self) -> &DiscreteEnergy {
        &self.energy
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn probability(&self, config: &[usize]) -> f64 {
        (-self.energy.value(config) - self.log_z).exp()
    }

    /// `KL(U ‖ P)` for the product distribution `U` given by the rows of `u`.
    pub fn kl(&self, u: &SimplexField) -> Result<f64> {
        let expected = exact_expectation(&self.energy, u)?;
        let h: f64 = u.rows().map(entropy).sum();
        Ok(expected - h + self.log_z)
    }
}

/// `Σ_w Π_j u_{j:w_j} · L(w)` over all configurations, optionally pinning
/// variable `pinned` and skipping its factor.
fn expectation_with(energy: &DiscreteEnergy, u: &SimplexField, pinned: Option<usize>) -> Vec<f64> {
    let (m, d) = (energy.m, energy.d);
    let mut config = vec![0usize; m];
    let mut out = vec![0.0; if pinned.is_some() { d } else { 1 }];
    for (idx, &l) in energy.table.iter().enumerate() {
        decode(idx, d, &mut config);
        let mut p = 1.0;
        for (j, &label) in config.iter().enumerate() {
            if Some(j) != pinned {
                p *= u.row(j)[label];
            }
        }
        let slot = pinned.map_or(0, |j| config[j]);
        out[slot] += p * l;
    }
    out
}

/// Expected loss `E(u)` under the product distribution with marginals `u`.
pub fn exact_expectation(energy: &DiscreteEnergy, u: &SimplexField) -> Result<f64> {
    energy.check_field(u)?;
    Ok(expectation_with(energy, u, None)[0])
}

/// `KL(U ‖ P) = E(u) − Σ_j H(u_j) + log Z`.
pub fn kl_to_gibbs(energy: &DiscreteEnergy, u: &SimplexField) -> Result<f64> {
    energy.check_field(u)?;
    GibbsDistribution::new(energy.clone()).kl(u)
}

/// Mean-field free energy `F(u) = E(u) − Σ_j H(u_j)`.
pub fn mean_field_objective(energy: &DiscreteEnergy, u: &SimplexField) -> Result<f64> {
    let expected = exact_expectation(energy, u)?;
    Ok(expected - u.rows().map(entropy).sum::<f64>())
}

/// Replaces row `j` with `softmax(−∂E/∂u_j)`, the exact minimizer of `F`
/// over that row with the others held fixed.
pub fn mean_field_fixed_point_update(
    energy: &DiscreteEnergy,
    u: &SimplexField,
    j: usize,
) -> Result<SimplexField> {
    energy.check_field(u)?;
    if j >= energy.m {
        return Err(Error::Index(format!("variable {j} of {}", energy.m)));
    }
    let d = energy.d;
    let partial = expectation_with(energy, u, Some(j));
    let neg: Vec<f64> = partial.iter().map(|v| -v).collect();
    let mut data = u.as_slice().to_vec();
    softmax_into(&neg, 1.0, &mut data[j * d..(j + 1) * d]);
    SimplexField::new(d, data)
}

/// One sequential sweep of fixed-point updates over all variables.
pub fn mean_field_sweep(energy: &DiscreteEnergy, u: &SimplexField) -> Result<SimplexField> {
    let mut cur = u.clone();
    for j in 0..energy.m {
        cur = mean_field_fixed_point_update(energy, &cur, j)?;
    }
    Ok(cur)
}

/// Exhaustive minimizer of `L`; ties go to the lexicographically first tuple.
pub fn brute_force_min(energy: &DiscreteEnergy) -> (Vec<usize>, f64) {
    let mut best = 0usize;
    for (idx, &l) in energy.table.iter().enumerate() {
        if l < energy.table[best] {
            best = idx;
        }
    }
    let mut config = vec![0usize; energy.m];
    decode(best, energy.d, &mut config);
    (config, energy.table[best])
}

/// `η⟨g, u⟩ − ⟨uᵏ, u⟩ − H(u)/β`.
pub fn proximal_objective(u: &[f64], u_k: &[f64], g: &[f64], eta: f64, inv_beta: f64) -> f64 {
    let mut linear = 0.0;
    for ((&a, &b), &c) in u.iter().zip(u_k).zip(g) {
        linear += eta * c * a - b * a;
    }
    if inv_beta == 0.0 {
        linear
    } else {
        linear - inv_beta * entropy(u)
    }
}

fn grid_search(u_k: &[f64], g: &[f64], eta: f64, inv_beta: f64, grid_step: f64) -> Result<(ProbVector, f64)> {
    let d = u_k.len();
    if !(2..=3).contains(&d) {
        return Err(Error::Size(format!("grid search supports d = 2 or 3, got {d}")));
    }
    if g.len() != d {
        return Err(Error::Shape(format!("gradient has {} entries for d = {d}", g.len())));
    }
    if !(grid_step > 0.0 && grid_step <= 1e-2) {
        return Err(Error::Domain(format!("grid step must lie in (0, 0.01], got {grid_step}")));
    }
    let n = (1.0 / grid_step).round() as usize;
    let mut best = (vec![0.0; d], f64::INFINITY);
    let mut consider = |point: Vec<f64>| {
        let v = proximal_objective(&point, u_k, g, eta, inv_beta);
        if v < best.1 {
            best = (point, v);
        }
    };
    for i in 0..=n {
        let x = i as f64 / n as f64;
        if d == 2 {
            consider(vec![x, (n - i) as f64 / n as f64]);
        } else {
            for j in 0..=(n - i) {
                consider(vec![x, j as f64 / n as f64, (n - i - j) as f64 / n as f64]);
            }
        }
    }
    Ok((ProbVector::new(best.0)?, best.1))
}

/// Minimizes `η⟨g, u⟩ − ⟨uᵏ, u⟩ − H(u)/β` over the barycentric lattice of
/// spacing `grid_step` on the simplex, for `d ∈ {2, 3}`.
pub fn grid_argmin_proximal_objective(
    u_k: &ProbVector,
    g: &[f64],
    eta: f64,
    beta: Temperature,
    grid_step: f64,
) -> Result<(ProbVector, f64)> {
    grid_search(u_k, g, eta, 1.0 / beta.get(), grid_step)
}

/// As [`grid_argmin_proximal_objective`] without the entropy term: the
/// proximal ICM objective.
pub fn grid_argmin_icm_objective(
    u_k: &ProbVector,
    g: &[f64],
    eta: f64,
    grid_step: f64,
) -> Result<(ProbVector, f64)> {
    grid_search(u_k, g, eta, 0.0, grid_step)
}

/// Minimum of the proximal ICM objective over the vertices of the simplex,
/// with ties going to the lowest index.
pub fn vertex_argmin_icm_objective(u_k: &[f64], g: &[f64], eta: f64) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, (&a, &b)) in u_k.iter().zip(g).enumerate() {
        let v = eta * b - a;
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::{hardmax_project, softmax_project};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(d: usize, rows: &[&[f64]]) -> SimplexField {
        SimplexField::new(d, rows.concat()).unwrap()
    }

    fn random_field<R: Rng>(m: usize, d: usize, rng: &mut R) -> SimplexField {
        let mut data = Vec::with_capacity(m * d);
        for _ in 0..m {
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(1e-3..1.0)).collect();
            let s: f64 = row.iter().sum();
            data.extend(row.iter().map(|x| x / s));
        }
        SimplexField::new(d, data).unwrap()
    }

    fn random_energy<R: Rng>(m: usize, d: usize, rng: &mut R) -> DiscreteEnergy {
        let n = d.pow(m as u32);
        DiscreteEnergy::new(m, d, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn energy_validation() {
        assert!(matches!(DiscreteEnergy::new(2, 2, vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(DiscreteEnergy::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(matches!(DiscreteEnergy::from_fn(13, 2, |_| 0.0), Err(Error::Size(_))));
        assert!(matches!(DiscreteEnergy::from_fn(7, 8, |_| 0.0), Err(Error::Size(_))));
        assert!(DiscreteEnergy::from_fn(6, 10, |_| 0.0).is_ok());
    }

    #[test]
    fn table_order_is_first_variable_most_significant() {
        let e = DiscreteEnergy::new(2, 3, (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(e.value(&[1, 2]), 5.0);
        let from = DiscreteEnergy::from_fn(2, 3, |w| (w[0] * 3 + w[1]) as f64).unwrap();
        assert_eq!(from, e);
    }

    #[test]
    fn log_partition_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let e = random_energy(3, 3, &mut rng);
            let direct: f64 = e.table().iter().map(|l| (-l).exp()).sum::<f64>().ln();
            let g = GibbsDistribution::new(e);
            assert!((g.log_z() - direct).abs() <= 1e-10);
            let total: f64 = (0..27)
                .map(|i| g.probability(&[i / 9, (i / 3) % 3, i % 3]))
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_examples() {
        let e = DiscreteEnergy::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let u = field(2, &[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!((exact_expectation(&e, &u).unwrap() - 1.5).abs() < 1e-15);
        let vertex = field(2, &[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(exact_expectation(&e, &vertex).unwrap(), 2.0);
        let c = DiscreteEnergy::new(3, 3, vec![4.25; 27]).unwrap();
        let uniform = SimplexField::uniform(3, 3);
        assert!((exact_expectation(&c, &uniform).unwrap() - 4.25).abs() < 1e-13);
        assert!(exact_expectation(&c, &u).is_err());
    }

    #[test]
    fn kl_examples() {
        let e = DiscreteEnergy::separable(&[vec![0.0, 2f64.ln()]]).unwrap();
        let u = field(2, &[&[2.0 / 3.0, 1.0 / 3.0]]);
        assert!(kl_to_gibbs(&e, &u).unwrap().abs() <= 1e-10);

        let theta = vec![vec![0.3, -1.0, 2.0], vec![0.0, 0.5, 0.1], vec![1.0, 1.0, -0.2]];
        let e = DiscreteEnergy::separable(&theta).unwrap();
        let mut data = Vec::new();
        for t in &theta {
            let neg: Vec<f64> = t.iter().map(|x| -x).collect();
            data.extend(softmax_project(&neg, Temperature::new(1.0).unwrap()).unwrap().into_inner());
        }
        let u = SimplexField::new(3, data).unwrap();
        assert!(kl_to_gibbs(&e, &u).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let m = rng.random_range(1..=4);
            let d = rng.random_range(2..=3);
            let e = random_energy(m, d, &mut rng);
            let u = random_field(m, d, &mut rng);
            assert!(kl_to_gibbs(&e, &u).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn fixed_point_examples() {
        let e = DiscreteEnergy::separable(&[vec![0.0, 2f64.ln()], vec![1.0, 0.0]]).unwrap();
        let u = SimplexField::uniform(2, 2);
        let next = mean_field_fixed_point_update(&e, &u, 0).unwrap();
        assert!((next.row(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(next.row(1), u.row(1));

        let c = DiscreteEnergy::new(2, 3, vec![1.5; 9]).unwrap();
        let skewed = field(3, &[&[0.7, 0.2, 0.1], &[0.1, 0.1, 0.8]]);
        let next = mean_field_fixed_point_update(&c, &skewed, 1).unwrap();
        for &p in next.row(1) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(matches!(
            mean_field_fixed_point_update(&c, &skewed, 2),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn one_sweep_solves_separable_energies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let e = DiscreteEnergy::separable(&theta).unwrap();
        let u = mean_field_sweep(&e, &random_field(4, 3, &mut rng)).unwrap();
        assert!(kl_to_gibbs(&e, &u).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn sweeps_never_increase_the_free_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let m = rng.random_range(1..=4);
            let d = rng.random_range(2..=3);
            let e = random_energy(m, d, &mut rng);
            let mut u = random_field(m, d, &mut rng);
            let mut f = mean_field_objective(&e, &u).unwrap();
            for _ in 0..5 {
                u = mean_field_sweep(&e, &u).unwrap();
                let next = mean_field_objective(&e, &u).unwrap();
                assert!(next <= f + 1e-12);
                f = next;
            }
        }
    }

    #[test]
    fn attractive_pair_converges_below_random_points() {
        // agreement is rewarded, label 0 slightly preferred
        let e = DiscreteEnergy::from_fn(2, 2, |w| {
            let agree = if w[0] == w[1] { -2.0 } else { 0.0 };
            agree + 0.3 * (w[0] + w[1]) as f64
        })
        .unwrap();
        let mut u = SimplexField::uniform(2, 2);
        let mut delta = f64::INFINITY;
        for _ in 0..200 {
            let next = mean_field_sweep(&e, &u).unwrap();
            delta = next
                .as_slice()
                .iter()
                .zip(u.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            u = next;
        }
        assert!(delta < 1e-12);
        let f = mean_field_objective(&e, &u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let r = random_field(2, 2, &mut rng);
            assert!(f <= mean_field_objective(&e, &r).unwrap() + 1e-12);
        }
    }

    #[test]
    fn brute_force_examples() {
        let e = DiscreteEnergy::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(brute_force_min(&e), (vec![0, 0], 0.0));
        let c = DiscreteEnergy::new(3, 2, vec![1.0; 8]).unwrap();
        assert_eq!(brute_force_min(&c), (vec![0, 0, 0], 1.0));
        let tie = DiscreteEnergy::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(brute_force_min(&tie).0, vec![0, 1]);
    }

    #[test]
    fn brute_force_beats_every_vertex_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = random_energy(3, 3, &mut rng);
        let (_, best) = brute_force_min(&e);
        for idx in 0..27 {
            let mut config = [0usize; 3];
            decode(idx, 3, &mut config);
            let mut data = vec![0.0; 9];
            for (j, &l) in config.iter().enumerate() {
                data[3 * j + l] = 1.0;
            }
            let u = SimplexField::new(3, data).unwrap();
            assert!(best <= exact_expectation(&e, &u).unwrap());
        }
    }

    #[test]
    fn grid_pure_entropy_is_uniform() {
        let uk = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let eta = 0.4;
        let g: Vec<f64> = uk.iter().map(|x| x / eta).collect();
        let (best, _) = grid_argmin_proximal_objective(&uk, &g, eta, Temperature::new(1.0).unwrap(), 1e-3).unwrap();
        // the lattice cannot hit 1/3 exactly; the nearest points are within one step
        for &p in best.iter() {
            assert!((p - 1.0 / 3.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn grid_agrees_with_the_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = rng.random_range(0.05..0.95);
            let uk = ProbVector::new(vec![a, 1.0 - a]).unwrap();
            let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let eta = rng.random_range(0.1..1.0);
            let beta = Temperature::new(rng.random_range(0.5..5.0)).unwrap();
            let logits: Vec<f64> = uk.iter().zip(&g).map(|(u, gi)| u - eta * gi).collect();
            let closed = softmax_project(&logits, beta).unwrap();
            let closed_value = proximal_objective(&closed, &uk, &g, eta, 1.0 / beta.get());
            let (_, grid_value) = grid_argmin_proximal_objective(&uk, &g, eta, beta, 1e-3).unwrap();
            assert!(closed_value <= grid_value + 1e-12);
            assert!(grid_value - closed_value <= 1e-5);
        }
    }

    #[test]
    fn grid_at_huge_beta_picks_the_linear_vertex() {
        let uk = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        let g = [0.9, -0.4, 0.1];
        let (best, _) =
            grid_argmin_proximal_objective(&uk, &g, 1.0, Temperature::new(1e6).unwrap(), 1e-2).unwrap();
        let (vertex, _) = vertex_argmin_icm_objective(&uk, &g, 1.0);
        assert_eq!(vertex, 1);
        assert!((best[vertex] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn icm_fixed_point_is_the_hardmax_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let d = rng.random_range(2..=3);
            let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let uk = ProbVector::new(raw.iter().map(|x| x / s).collect()).unwrap();
            let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eta = rng.random_range(0.01..2.0);
            let logits: Vec<f64> = uk.iter().zip(&g).map(|(u, gi)| u - eta * gi).collect();
            let h = hardmax_project(&logits).unwrap();
            let value = proximal_objective(&h, &uk, &g, eta, 0.0);
            let (_, vertex_value) = vertex_argmin_icm_objective(&uk, &g, eta);
            assert!((value - vertex_value).abs() < 1e-15);
            // the linear objective has no interior minimizer below the best vertex
            let (_, grid_value) = grid_argmin_icm_objective(&uk, &g, eta, 1e-2).unwrap();
            assert!(value <= grid_value + 1e-12);
        }
    }

    #[test]
    fn grid_rejects_unsupported_dimensions() {
        let uk = ProbVector::uniform(4);
        assert!(matches!(
            grid_argmin_proximal_objective(&uk, &[0.0; 4], 1.0, Temperature::new(1.0).unwrap(), 1e-2),
            Err(Error::Size(_))
        ));
        let uk = ProbVector::uniform(2);
        assert!(grid_argmin_icm_objective(&uk, &[0.0; 2], 1.0, 0.1).is_err());
    }
}
