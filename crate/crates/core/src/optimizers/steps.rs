use super::{MethodConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::quantization::{
    ste_hardmax_jacobian_binary, ste_sign_jacobian, AuxField, QuantLevels, QuantizedWeights,
    SimplexField,
};
use crate::simplex::{argmax, softmax_into, softmax_vjp, sparsemax_into, sparsemax_vjp, Temperature};

/// Loss and gradient returned by a training callback.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Projection {
    Softmax(f64),
    Sparsemax(f64),
    Hardmax,
}

fn project(aux: &AuxField, projection: Projection) -> SimplexField {
    let d = aux.d();
    let mut out = vec![0.0; aux.as_slice().len()];
    let mut scratch = Vec::with_capacity(d);
    for (row, dst) in aux.rows().zip(out.chunks_exact_mut(d)) {
        match projection {
            Projection::Softmax(beta) => softmax_into(row, beta, dst),
            Projection::Sparsemax(beta) => sparsemax_into(row, beta, dst, &mut scratch),
            Projection::Hardmax => dst[argmax(row)] = 1.0,
        }
    }
    SimplexField::from_projection(d, out)
}

fn check_grad_len(grad: &[f64], expected: usize) -> Result<()> {
    if grad.len() != expected {
        return Err(Error::Shape(format!(
            "callback returned {} gradient entries for {expected} variables",
            grad.len()
        )));
    }
    Ok(())
}

fn simplex_step<F>(
    aux: &mut AuxField,
    projection: Projection,
    mut grad_fn: F,
    cfg: &MethodConfig,
    state: &mut OptimizerState,
) -> Result<(f64, SimplexField)>
where
    F: FnMut(&SimplexField) -> Result<LossGrad>,
{
    let d = aux.d();
    let u = project(aux, projection);
    let LossGrad { loss, grad } = grad_fn(&u)?;
    check_grad_len(&grad, u.as_slice().len())?;
    state.accept(loss, &grad)?;

    let mut g_aux = vec![0.0; grad.len()];
    for ((ur, gr), (out, ar)) in u
        .rows()
        .zip(grad.chunks_exact(d))
        .zip(g_aux.chunks_exact_mut(d).zip(aux.rows()))
    {
        match projection {
            Projection::Softmax(beta) => softmax_vjp(ur, beta, gr, out),
            Projection::Sparsemax(beta) => sparsemax_vjp(ur, beta, gr, out),
            Projection::Hardmax => {
                let j = ste_hardmax_jacobian_binary(ar)?;
                // the Jacobian is symmetric, so g·J = J·g
                out[0] = j[0][0] * gr[0] + j[0][1] * gr[1];
                out[1] = j[1][0] * gr[0] + j[1][1] * gr[1];
            }
        }
    }
    state.apply(aux.as_mut_slice(), &mut g_aux, cfg)?;
    Ok((loss, u))
}

/// One PMF iteration: project `u = softmax(βũ)` row-wise, evaluate the loss
/// gradient at `u`, pull it back through the softmax and update `ũ`.
///
/// Returns the loss and the `u` at which it was evaluated. `β` is read, not
/// modified.
pub fn pmf_step<F>(
    aux: &mut AuxField,
    beta: Temperature,
    grad_fn: F,
    cfg: &MethodConfig,
    state: &mut OptimizerState,
) -> Result<(f64, SimplexField)>
where
    F: FnMut(&SimplexField) -> Result<LossGrad>,
{
    simplex_step(aux, Projection::Softmax(beta.get()), grad_fn, cfg, state)
}

/// As [`pmf_step`] with the sparsemax projection.
pub fn pgd_sparsemax_step<F>(
    aux: &mut AuxField,
    beta: Temperature,
    grad_fn: F,
    cfg: &MethodConfig,
    state: &mut OptimizerState,
) -> Result<(f64, SimplexField)>
where
    F: FnMut(&SimplexField) -> Result<LossGrad>,
{
    simplex_step(aux, Projection::Sparsemax(beta.get()), grad_fn, cfg, state)
}

/// Proximal ICM for binary levels: hardmax projection with the
/// straight-through backward pass. With `cfg.clip_aux`, each row is shifted
/// along `q` so that `⟨ũ_j, q⟩` stays inside `[min q, max q]`.
pub fn picm_step<F>(
    aux: &mut AuxField,
    levels: &QuantLevels,
    grad_fn: F,
    cfg: &MethodConfig,
    state: &mut OptimizerState,
) -> Result<(f64, SimplexField)>
where
    F: FnMut(&SimplexField) -> Result<LossGrad>,
{
    if aux.d() != 2 || levels.d() != 2 {
        return Err(Error::UnsupportedDimension(format!(
            "proximal ICM needs binary levels, got d = {}",
            aux.d()
        )));
    }
    let out = simplex_step(aux, Projection::Hardmax, grad_fn, cfg, state)?;
    if cfg.clip_aux {
        let q = levels.values();
        let norm2 = q[0] * q[0] + q[1] * q[1];
        let (lo, hi) = (levels.min(), levels.max());
        for row in aux.as_mut_slice().chunks_exact_mut(2) {
            let w = row[0] * q[0] + row[1] * q[1];
            let shift = (w.clamp(lo, hi) - w) / norm2;
            if shift != 0.0 {
                row[0] += shift * q[0];
                row[1] += shift * q[1];
            }
        }
    }
    Ok(out)
}

/// `sign` with `sign(0) = +1`.
#[inline]
fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// One BinaryConnect iteration: evaluate at `w = sign(w̃)`, pass the gradient
/// straight through (zeroed where `|w̃| > 1`), update `w̃`, then clip it to
/// `[−1, 1]` when `cfg.clip_aux` is set.
pub fn bc_step<F>(
    w_tilde: &mut [f64],
    levels: &QuantLevels,
    mut grad_fn: F,
    cfg: &MethodConfig,
    state: &mut OptimizerState,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<LossGrad>,
{
    if !levels.is_binary_sign() {
        return Err(Error::UnsupportedDimension(format!(
            "BinaryConnect needs levels {{-1, 1}}, got {:?}",
            levels.values()
        )));
    }
    let w: Vec<f64> = w_tilde.iter().map(|&x| sign(x)).collect();
    let LossGrad { loss, mut grad } = grad_fn(&w)?;
    check_grad_len(&grad, w.len())?;
    state.accept(loss, &grad)?;
    for (g, &x) in grad.iter_mut().zip(w_tilde.iter()) {
        *g *= ste_sign_jacobian(x);
    }
    state.apply(w_tilde, &mut grad, cfg)?;
    if cfg.clip_aux {
        for x in w_tilde.iter_mut() {
            *x = x.clamp(-1.0, 1.0);
        }
    }
    Ok((loss, w))
}

/// Full-precision reference step on `w`.
pub fn ref_step<F>(
    w: &mut [f64],
    mut grad_fn: F,
    cfg: &MethodConfig,
    state: &mut OptimizerState,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<LossGrad>,
{
    let LossGrad { loss, mut grad } = grad_fn(w)?;
    check_grad_len(&grad, w.len())?;
    state.accept(loss, &grad)?;
    state.apply(w, &mut grad, cfg)?;
    Ok(loss)
}

/// `softmax(β(uᵏ − η·g))` row-wise: the exact minimizer over the simplex of
/// `η⟨g, u⟩ − ⟨uᵏ, u⟩ − H(u)/β`.
pub fn pgd_softmax_update(
    u: &SimplexField,
    g_u: &[f64],
    eta: f64,
    beta: Temperature,
) -> Result<SimplexField> {
    check_grad_len(g_u, u.as_slice().len())?;
    if !eta.is_finite() || g_u.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidInput("step size and gradient must be finite".into()));
    }
    let d = u.d();
    let mut out = vec![0.0; g_u.len()];
    let mut logits = vec![0.0; d];
    for ((ur, gr), dst) in u.rows().zip(g_u.chunks_exact(d)).zip(out.chunks_exact_mut(d)) {
        for ((l, &a), &g) in logits.iter_mut().zip(ur).zip(gr) {
            *l = a - eta * g;
        }
        softmax_into(&logits, beta.get(), dst);
    }
    Ok(SimplexField::from_projection(d, out))
}

/// PMF without the stored auxiliary: the inner optimizer moves `u` itself
/// and the result is mapped back with `softmax(β·)`. With plain SGD this is
/// exactly [`pgd_softmax_update`].
pub fn pmf_direct_step<F>(
    u: &mut SimplexField,
    beta: Temperature,
    mut grad_fn: F,
    cfg: &MethodConfig,
    state: &mut OptimizerState,
) -> Result<f64>
where
    F: FnMut(&SimplexField) -> Result<LossGrad>,
{
    let LossGrad { loss, mut grad } = grad_fn(u)?;
    check_grad_len(&grad, u.as_slice().len())?;
    state.accept(loss, &grad)?;
    let d = u.d();
    let mut logits = u.as_slice().to_vec();
    state.apply(&mut logits, &mut grad, cfg)?;
    let dst = u.as_mut_slice();
    for (row, out) in logits.chunks_exact(d).zip(dst.chunks_exact_mut(d)) {
        softmax_into(row, beta.get(), out);
    }
    Ok(loss)
}

/// `w* = hardmax(ũ)·q` as level indices, ties to the lowest index.
pub fn final_quantize(aux: &AuxField, levels: &QuantLevels) -> Result<QuantizedWeights> {
    if aux.d() != levels.d() {
        return Err(Error::Shape(format!(
            "auxiliary rows have {} entries but there are {} levels",
            aux.d(),
            levels.d()
        )));
    }
    QuantizedWeights::from_argmax(aux.as_slice(), levels)
}
