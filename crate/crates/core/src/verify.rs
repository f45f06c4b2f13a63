//! Fast self-checks of the numerical core against brute-force oracles.
//! Each check is small enough that the whole set runs in seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::synthetic_blobs;
use crate::error::Result;
use crate::meanfield::{
    grid_argmin_proximal_objective, kl_to_gibbs, mean_field_objective, mean_field_sweep, proximal_objective,
    DiscreteEnergy,
};
use crate::nn::{central_difference_error, finite_diff_check, Mode, Network, NetworkSpec, cross_entropy};
use crate::optimizers::{bc_step, pgd_softmax_update, picm_step, InnerOptimizer, LossGrad, Method, MethodConfig, OptimizerState};
use crate::quantization::{
    collapse, lift_gradient, pack_quantized, packed_payload_len, unpack_quantized, AuxField, QuantLevels,
    QuantizedWeights, SimplexField, PQW_HEADER_FIXED_LEN,
};
use crate::simplex::{entropic_objective, softmax_project, sparsemax_project, ProbVector, Temperature};

/// Outcome of one check: the worst observed error against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &'static str, worst: f64, tolerance: f64) -> Self {
        Check {
            name,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

fn random_simplex_point<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    // normalized exponentials are uniform on the simplex
    let mut v: Vec<f64> = (0..d).map(|_| -rng.random_range(f64::MIN_POSITIVE..1.0f64).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// The softmax point maximizes `⟨ũ, z⟩ + H(z)/β`: worst shortfall against
/// random simplex points.
pub fn check_softmax_optimality(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(2..=8);
        let logits: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let beta = Temperature::new(rng.random_range(0.1..10.0))?;
        let best = entropic_objective(&logits, &softmax_project(&logits, beta)?, beta);
        for _ in 0..500 {
            let z = random_simplex_point(d, &mut rng);
            worst = worst.max(entropic_objective(&logits, &z, beta) - best);
        }
        let sparse = sparsemax_project(&logits, beta)?;
        worst = worst.max(entropic_objective(&logits, &sparse, beta) - best);
    }
    Ok(Check::new("softmax maximizes the entropic objective", worst, 1e-12))
}

/// The closed-form softmax PGD step against a fine grid on the simplex.
pub fn check_softmax_pgd_grid(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..20 {
        let d = 2 + trial % 2;
        let uk = random_simplex_point(d, &mut rng);
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eta = rng.random_range(0.01..1.0);
        let beta = Temperature::new(rng.random_range(0.5..10.0))?;
        let field = SimplexField::new(d, uk.clone())?;
        let next = pgd_softmax_update(&field, &g, eta, beta)?;
        let value = proximal_objective(next.as_slice(), &uk, &g, eta, 1.0 / beta.get());
        let (_, grid) = grid_argmin_proximal_objective(&ProbVector::new(uk)?, &g, eta, beta, 1e-3)?;
        worst = worst.max(value - grid);
    }
    Ok(Check::new("softmax PGD step beats the simplex grid", worst, 1e-5))
}

/// Sparsemax against the best point over every candidate support set.
pub fn check_sparsemax_support_enumeration(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(2..=5);
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = sparsemax_project(&v, Temperature::new(1.0)?)?;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << d) {
            let support: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
            let tau = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
            if support.iter().any(|&i| v[i] - tau < 0.0) {
                continue;
            }
            let mut p = vec![0.0; d];
            support.iter().for_each(|&i| p[i] = v[i] - tau);
            let dist: f64 = p.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
                best = Some((dist, p));
            }
        }
        let (_, p) = best.expect("a singleton support is always feasible");
        for (a, b) in got.iter().zip(&p) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Check::new("sparsemax matches support enumeration", worst, 1e-10))
}

/// Exact mean-field identities: one sweep solves a separable energy, and
/// sweeps never increase the free energy.
pub fn check_mean_field(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = rng.random_range(1..=4);
        let d = rng.random_range(2..=3);
        let theta: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let sep = DiscreteEnergy::separable(&theta)?;
        let u = mean_field_sweep(&sep, &SimplexField::uniform(m, d))?;
        worst = worst.max(kl_to_gibbs(&sep, &u)?.abs());

        let table: Vec<f64> = (0..d.pow(m as u32)).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e = DiscreteEnergy::new(m, d, table)?;
        let mut u = SimplexField::uniform(m, d);
        let mut f = mean_field_objective(&e, &u)?;
        for _ in 0..5 {
            u = mean_field_sweep(&e, &u)?;
            let next = mean_field_objective(&e, &u)?;
            worst = worst.max(next - f);
            f = next;
        }
    }
    Ok(Check::new("mean-field sweeps are exact and monotone", worst, 1e-10))
}

/// Central differences against back-propagation on a small network and
/// through the softmax lifting.
pub fn check_gradients(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = synthetic_blobs(3, 8, 6, seed)?;
    let net = Network::new(NetworkSpec::mlp(&[6, 7, 5, 3]))?;
    let params: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let coords: Vec<usize> = (0..20).map(|_| rng.random_range(0..net.param_count())).collect();
    let mut worst = finite_diff_check(&net, &params, &split.images, &split.labels, &coords, 1e-6)?;

    let levels = QuantLevels::binary();
    let beta = 1.5;
    let composed = |aux: &[f64]| -> Result<f64> {
        let a = AuxField::new(2, aux.to_vec())?;
        let u = project_softmax(&a, beta)?;
        let w = collapse(&u, &levels)?;
        let (logits, _) = net.forward(&w, &split.images, Mode::Train)?;
        Ok(cross_entropy(&logits, &split.labels)?.0)
    };
    let aux: Vec<f64> = (0..2 * net.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let a = AuxField::new(2, aux.clone())?;
    let u = project_softmax(&a, beta)?;
    let w = collapse(&u, &levels)?;
    let (logits, cache) = net.forward(&w, &split.images, Mode::Train)?;
    let (_, dlogits) = cross_entropy(&logits, &split.labels)?;
    let g_u = lift_gradient(&cache.backward(&dlogits)?, &levels);
    let mut g_aux = vec![0.0; g_u.len()];
    for ((ur, gr), out) in u.rows().zip(g_u.chunks_exact(2)).zip(g_aux.chunks_exact_mut(2)) {
        crate::simplex::softmax_vjp(ur, beta, gr, out);
    }
    let coords: Vec<usize> = (0..20).map(|_| rng.random_range(0..aux.len())).collect();
    worst = worst.max(central_difference_error(composed, &aux, &g_aux, &coords, 1e-6)?);
    Ok(Check::new("back-propagation matches central differences", worst, 1e-4))
}

fn project_softmax(aux: &AuxField, beta: f64) -> Result<SimplexField> {
    let t = Temperature::new(beta)?;
    let mut data = Vec::with_capacity(aux.as_slice().len());
    for row in aux.rows() {
        data.extend(softmax_project(row, t)?.into_inner());
    }
    SimplexField::new(aux.d(), data)
}

/// Full-batch BinaryConnect and proximal ICM at half the step size move in
/// lockstep: `w̃ = ũq` and identical signs at every iteration.
pub fn check_bc_picm_lockstep(seed: u64, iters: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = synthetic_blobs(2, 25, 10, seed)?;
    let net = Network::new(NetworkSpec::mlp(&[10, 16, 2]))?;
    let levels = QuantLevels::binary();
    let m = net.param_count();
    let mut aux = AuxField::uniform(m, 2, 0.5, &mut rng);
    let mut w_tilde = aux.collapse(&levels)?;

    let eta_w = 0.05;
    let mut bc = MethodConfig::new(Method::Bc);
    bc.optimizer = InnerOptimizer::Sgd;
    bc.lr = eta_w;
    bc.lr_interval = u64::MAX;
    let mut picm = bc.clone();
    picm.method = Method::Picm;
    picm.lr = eta_w / 2.0;
    let mut bc_state = OptimizerState::new(m, InnerOptimizer::Sgd);
    let mut picm_state = OptimizerState::new(2 * m, InnerOptimizer::Sgd);

    let loss_grad = |w: &[f64]| -> Result<LossGrad> {
        let (logits, cache) = net.forward(w, &split.images, Mode::Train)?;
        let (loss, dlogits) = cross_entropy(&logits, &split.labels)?;
        Ok(LossGrad {
            loss,
            grad: cache.backward(&dlogits)?,
        })
    };
    let mut worst: f64 = 0.0;
    for _ in 0..iters {
        let (_, w_bc) = bc_step(&mut w_tilde, &levels, loss_grad, &bc, &mut bc_state)?;
        let (_, u) = picm_step(
            &mut aux,
            &levels,
            |u: &SimplexField| {
                let LossGrad { loss, grad } = loss_grad(&collapse(u, &levels)?)?;
                Ok(LossGrad {
                    loss,
                    grad: lift_gradient(&grad, &levels),
                })
            },
            &picm,
            &mut picm_state,
        )?;
        if collapse(&u, &levels)? != w_bc {
            return Ok(Check::new("BinaryConnect and proximal ICM move in lockstep", f64::INFINITY, 1e-9));
        }
        for (a, b) in w_tilde.iter().zip(aux.collapse(&levels)?) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Check::new("BinaryConnect and proximal ICM move in lockstep", worst, 1e-9))
}

/// Binary LeNet-300 weights pack into one bit each and unpack losslessly.
pub fn check_packed_size(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Network::new(NetworkSpec::lenet300())?.param_count();
    let idx: Vec<u16> = (0..m).map(|_| rng.random_range(0..2)).collect();
    let q = QuantizedWeights::new(idx, QuantLevels::binary())?;
    let bytes = pack_quantized(&q);
    let payload = packed_payload_len(m, 2);
    let header = bytes.len() - payload;
    let lossless = unpack_quantized(&bytes)? == q;
    let ok = payload == m.div_ceil(8) && header >= PQW_HEADER_FIXED_LEN && bytes.len() as f64 <= m as f64 / 8.0 + 64.0;
    Ok(Check::new(
        "binary LeNet-300 packs to one bit per weight",
        if ok && lossless { 0.0 } else { 1.0 },
        0.0,
    ))
}

/// Every check with a fixed seed.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        check_softmax_optimality(seed)?,
        check_softmax_pgd_grid(seed)?,
        check_sparsemax_support_enumeration(seed)?,
        check_mean_field(seed)?,
        check_gradients(seed)?,
        check_bc_picm_lockstep(seed, 200)?,
        check_packed_size(seed)?,
    ])
}
