//! Lifting between scalar weights `w ∈ R^m` and per-weight distributions over the
//! quantization levels, `u ∈ Δ^m` with `w_j = ⟨u_j, q⟩`.

mod packed;

pub use packed::{
    bits_per_index, pack_quantized, packed_payload_len, read_pqw, unpack_quantized, write_pqw,
    PQW_HEADER_FIXED_LEN, PQW_MAGIC,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::simplex::{argmax, SIMPLEX_TOL};

/// The ordered set of allowed weight values.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLevels {
    q: Vec<f64>,
}

impl QuantLevels {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 quantization levels, got {}",
                q.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("quantization levels must be finite".into()));
        }
        if q.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "quantization levels must be strictly ascending: {q:?}"
            )));
        }
        Ok(QuantLevels { q })
    }

    /// `{-1, 1}`.
    pub fn binary() -> Self {
        QuantLevels { q: vec![-1.0, 1.0] }
    }

    pub fn d(&self) -> usize {
        self.q.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn min(&self) -> f64 {
        self.q[0]
    }

    pub fn max(&self) -> f64 {
        self.q[self.q.len() - 1]
    }

    pub fn is_binary_sign(&self) -> bool {
        self.q == [-1.0, 1.0]
    }

    pub fn value(&self, index: usize) -> f64 {
        self.q[index]
    }
}

/// One probability row per learnable parameter, stored row-major as `m × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexField {
    d: usize,
    data: Vec<f64>,
}

impl SimplexField {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d < 2 || data.is_empty() || !data.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "simplex field of {} values cannot have rows of width {d}",
                data.len()
            )));
        }
        for (j, row) in data.chunks_exact(d).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| v.is_nan() || *v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidInput(format!("row {j} is not on the simplex: {row:?}")));
            }
        }
        Ok(SimplexField { d, data })
    }

    /// Wraps rows produced by one of the simplex projections.
    pub(crate) fn from_projection(d: usize, data: Vec<f64>) -> Self {
        debug_assert!(data.len().is_multiple_of(d));
        SimplexField { d, data }
    }

    pub fn uniform(m: usize, d: usize) -> Self {
        SimplexField {
            d,
            data: vec![1.0 / d as f64; m * d],
        }
    }

    /// Inverse of `collapse` for two levels: the unique row with `⟨u, q⟩ = w`.
    pub fn from_binary_weights(w: &[f64], levels: &QuantLevels) -> Result<Self> {
        if levels.d() != 2 {
            return Err(Error::UnsupportedDimension(format!(
                "binary inverse needs d = 2, got {}",
                levels.d()
            )));
        }
        let (lo, hi) = (levels.min(), levels.max());
        let mut data = Vec::with_capacity(w.len() * 2);
        for &x in w {
            if !(lo..=hi).contains(&x) {
                return Err(Error::Domain(format!("weight {x} outside [{lo}, {hi}]")));
            }
            data.push((hi - x) / (hi - lo));
            data.push((x - lo) / (hi - lo));
        }
        SimplexField::new(2, data)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Unconstrained auxiliary logits `ũ`, row-major `m × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxField {
    d: usize,
    data: Vec<f64>,
}

impl AuxField {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d < 2 || !data.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "auxiliary field of {} values cannot have rows of width {d}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("auxiliary field contains NaN or Inf".into()));
        }
        Ok(AuxField { d, data })
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        AuxField {
            d,
            data: vec![0.0; m * d],
        }
    }

    /// I.i.d. uniform entries on `[-half_width, half_width]`.
    pub fn uniform<R: Rng + ?Sized>(m: usize, d: usize, half_width: f64, rng: &mut R) -> Self {
        let data = (0..m * d)
            .map(|_| rng.random_range(-half_width..=half_width))
            .collect();
        AuxField { d, data }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `ũ q` row-wise.
    pub fn collapse(&self, levels: &QuantLevels) -> Result<Vec<f64>> {
        collapse_rows(&self.data, self.d, levels)
    }
}

/// Level indices per weight together with the level set they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    level_index: Vec<u16>,
    levels: QuantLevels,
}

impl QuantizedWeights {
    pub fn new(level_index: Vec<u16>, levels: QuantLevels) -> Result<Self> {
        let d = levels.d();
        if let Some((j, &i)) = level_index.iter().enumerate().find(|(_, &i)| i as usize >= d) {
            return Err(Error::Index(format!("weight {j} has level index {i}, but d = {d}")));
        }
        Ok(QuantizedWeights { level_index, levels })
    }

    pub fn m(&self) -> usize {
        self.level_index.len()
    }

    pub fn indices(&self) -> &[u16] {
        &self.level_index
    }

    pub fn levels(&self) -> &QuantLevels {
        &self.levels
    }

    /// Decoded weights `w_j = q[index_j]`.
    pub fn values(&self) -> Vec<f64> {
        self.level_index
            .iter()
            .map(|&i| self.levels.value(i as usize))
            .collect()
    }

    /// Row-wise hardmax of `field` as level indices.
    pub fn from_argmax(field: &[f64], levels: &QuantLevels) -> Result<Self> {
        let d = levels.d();
        if !field.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {d}",
                field.len()
            )));
        }
        let level_index = field.chunks_exact(d).map(|row| argmax(row) as u16).collect();
        Ok(QuantizedWeights {
            level_index,
            levels: levels.clone(),
        })
    }
}

fn collapse_rows(data: &[f64], d: usize, levels: &QuantLevels) -> Result<Vec<f64>> {
    if d != levels.d() {
        return Err(Error::Shape(format!(
            "rows have {d} entries but there are {} quantization levels",
            levels.d()
        )));
    }
    let q = levels.values();
    Ok(data
        .chunks_exact(d)
        .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
        .collect())
}

/// `w_j = ⟨u_j, q⟩`, the expected weight under each row's distribution.
pub fn collapse(u: &SimplexField, levels: &QuantLevels) -> Result<Vec<f64>> {
    collapse_rows(&u.data, u.d, levels)
}

/// Chain rule from `w`-space to `u`-space: row `j` of the result is `g_w[j] · qᵀ`.
pub fn lift_gradient(g_w: &[f64], levels: &QuantLevels) -> Vec<f64> {
    let q = levels.values();
    let mut out = Vec::with_capacity(g_w.len() * q.len());
    for &g in g_w {
        out.extend(q.iter().map(|&qv| g * qv));
    }
    out
}

/// Straight-through derivative of `sign`: `1[|w̃| ≤ 1]`.
#[inline]
pub fn ste_sign_jacobian(w_tilde: f64) -> f64 {
    if w_tilde.abs() <= 1.0 {
        1.0
    } else {
        0.0
    }
}

/// Straight-through Jacobian of the binary hardmax, obtained by writing it
/// through `sign(ũ_0 − ũ_1)`.
pub fn ste_hardmax_jacobian_binary(row: &[f64]) -> Result<[[f64; 2]; 2]> {
    if row.len() != 2 {
        return Err(Error::UnsupportedDimension(format!(
            "hardmax straight-through estimator is defined for d = 2 only, got d = {}",
            row.len()
        )));
    }
    let i = 0.5 * ste_sign_jacobian(row[0] - row[1]);
    Ok([[i, -i], [-i, i]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(d: usize, rows: &[&[f64]]) -> SimplexField {
        SimplexField::new(d, rows.concat()).unwrap()
    }

    #[test]
    fn level_validation() {
        assert!(QuantLevels::new(vec![1.0]).is_err());
        assert!(QuantLevels::new(vec![1.0, -1.0]).is_err());
        assert!(QuantLevels::new(vec![-1.0, -1.0]).is_err());
        assert!(QuantLevels::new(vec![-1.0, f64::NAN]).is_err());
        let q = QuantLevels::new(vec![-2.0, -1.0, 1.0, 2.0]).unwrap();
        assert_eq!((q.min(), q.max(), q.d()), (-2.0, 2.0, 4));
    }

    #[test]
    fn collapse_examples() {
        let q = QuantLevels::binary();
        assert_eq!(collapse(&field(2, &[&[1.0, 0.0]]), &q).unwrap(), vec![-1.0]);
        assert_eq!(collapse(&field(2, &[&[0.5, 0.5]]), &q).unwrap(), vec![0.0]);
        assert_eq!(collapse(&field(2, &[&[0.25, 0.75]]), &q).unwrap(), vec![0.5]);
        let q3 = QuantLevels::new(vec![-1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(collapse(&field(2, &[&[0.5, 0.5]]), &q3), Err(Error::Shape(_))));
    }

    #[test]
    fn lift_examples() {
        let q = QuantLevels::binary();
        assert_eq!(lift_gradient(&[2.0], &q), vec![-2.0, 2.0]);
        assert!(lift_gradient(&[0.0, 0.0], &q).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ste_examples() {
        assert_eq!(ste_sign_jacobian(0.4), 1.0);
        assert_eq!(ste_sign_jacobian(2.0), 0.0);
        assert_eq!(ste_sign_jacobian(-1.0), 1.0);

        let on = [[0.5, -0.5], [-0.5, 0.5]];
        assert_eq!(ste_hardmax_jacobian_binary(&[0.3, -0.1]).unwrap(), on);
        assert_eq!(ste_hardmax_jacobian_binary(&[1.5, -1.5]).unwrap(), [[0.0, -0.0], [-0.0, 0.0]]);
        assert_eq!(ste_hardmax_jacobian_binary(&[0.0, 1.0]).unwrap(), on);
        assert!(matches!(
            ste_hardmax_jacobian_binary(&[0.0, 1.0, 2.0]),
            Err(Error::UnsupportedDimension(_))
        ));
    }

    #[test]
    fn quantized_weights_reject_bad_index() {
        assert!(matches!(
            QuantizedWeights::new(vec![0, 2], QuantLevels::binary()),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn argmax_quantization_ties_go_low() {
        let qw = QuantizedWeights::from_argmax(&[2.0, -1.0, 0.0, 0.0, -1.0, 3.0], &QuantLevels::binary())
            .unwrap();
        assert_eq!(qw.indices(), &[0, 0, 1]);
        assert_eq!(qw.values(), vec![-1.0, -1.0, 1.0]);
    }

    #[test]
    fn random_simplex_fields_collapse_into_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = QuantLevels::new(vec![-2.0, -1.0, 1.0, 2.0]).unwrap();
        for _ in 0..100 {
            let m = rng.random_range(1..20);
            let aux = AuxField::uniform(m, 4, 3.0, &mut rng);
            let mut data = vec![0.0; m * 4];
            for (row, out) in aux.rows().zip(data.chunks_exact_mut(4)) {
                crate::simplex::softmax_into(row, 1.0, out);
            }
            let u = SimplexField::new(4, data).unwrap();
            for w in collapse(&u, &q).unwrap() {
                assert!((q.min()..=q.max()).contains(&w));
            }
        }
    }

    proptest! {
        #[test]
        fn binary_inverse_is_exact(w in prop::collection::vec(-1.0f64..=1.0, 1..50)) {
            let q = QuantLevels::binary();
            let u = SimplexField::from_binary_weights(&w, &q).unwrap();
            let back = collapse(&u, &q).unwrap();
            for (a, b) in w.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn lift_satisfies_chain_rule(
            g in prop::collection::vec(-10.0f64..10.0, 1..20),
            seed in any::<u64>(),
        ) {
            let q = QuantLevels::new(vec![-1.5, -0.5, 0.5, 1.5]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lifted = lift_gradient(&g, &q);
            for (j, &gj) in g.iter().enumerate() {
                let delta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let lhs: f64 = lifted[j * 4..(j + 1) * 4].iter().zip(&delta).map(|(a, b)| a * b).sum();
                let rhs = gj * q.values().iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
