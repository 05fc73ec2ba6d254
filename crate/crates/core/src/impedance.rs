//! The impedance boundary operator `B(z)` on `BD(grad) ⊕ BD(curl) ⊕ BD(Grad)`, its
//! closed-form inverse `K(z)` and the positivity bounds attached to both.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bdspace::{bd_map, MeshBdSpaces};
use crate::blockform::{permute_congruence, positivity_constant_blockwise, BlockOp};
use crate::error::{Error, Result};
use crate::linspace::{
    adjoint, inverse_named, operator_norm, positivity_constant, same_space, skew_part, HSpace,
    LinOp, Space, C64, ONE,
};
use crate::mesh::SpatialComplex;
use crate::random::{random_linop, random_real_linop, random_real_positive, seeded};

/// Boundary operators `Q`, `α_b`, `β` and the exactly skew `S`.
#[derive(Clone, Debug)]
pub struct BoundaryTriple {
    bd_grad: Space,
    bd_curl: Space,
    bd_sgrad: Space,
    q: LinOp,
    alpha_b: LinOp,
    beta: LinOp,
    s: LinOp,
}

/// Scaling factors applied to the generated boundary operators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripleScales {
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TripleScales {
    fn default() -> Self {
        TripleScales {
            q: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

fn expect_shape(op: &LinOp, src: &Space, dst: &Space, name: &str) -> Result<()> {
    if same_space(op.src(), src) && same_space(op.dst(), dst) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{name} must map {} -> {}, got {:?}",
            src.label(),
            dst.label(),
            op
        )))
    }
}

impl BoundaryTriple {
    /// `q: BD(curl) → BD(Grad)`, `alpha_b` on `BD(Grad)`, `beta: BD(grad) → BD(curl)`,
    /// `s` on `BD(curl)`; `s` is replaced by its skew part.
    pub fn new(q: LinOp, alpha_b: LinOp, beta: LinOp, s: LinOp) -> Result<Self> {
        let bd_curl = q.src().clone();
        let bd_sgrad = q.dst().clone();
        let bd_grad = beta.src().clone();
        expect_shape(&alpha_b, &bd_sgrad, &bd_sgrad, "alpha_b")?;
        expect_shape(&beta, &bd_grad, &bd_curl, "beta")?;
        expect_shape(&s, &bd_curl, &bd_curl, "S")?;
        let s = skew_part(&s)?;
        Ok(BoundaryTriple {
            bd_grad,
            bd_curl,
            bd_sgrad,
            q,
            alpha_b,
            beta,
            s,
        })
    }

    /// `Q = β = α_b = S = 0`.
    pub fn trivial(bd_grad: &Space, bd_curl: &Space, bd_sgrad: &Space) -> Self {
        BoundaryTriple {
            bd_grad: bd_grad.clone(),
            bd_curl: bd_curl.clone(),
            bd_sgrad: bd_sgrad.clone(),
            q: LinOp::zero(bd_curl, bd_sgrad),
            alpha_b: LinOp::zero(bd_sgrad, bd_sgrad),
            beta: LinOp::zero(bd_grad, bd_curl),
            s: LinOp::zero(bd_curl, bd_curl),
        }
    }

    /// Seeded random operators on euclidean spaces of dimensions
    /// `(dim BD(grad), dim BD(curl), dim BD(Grad))`.
    pub fn synthetic(dims: [usize; 3], seed: u64, scales: TripleScales) -> Self {
        let spaces = [
            HSpace::euclidean(dims[0], "BD(grad)"),
            HSpace::euclidean(dims[1], "BD(curl)"),
            HSpace::euclidean(dims[2], "BD(Grad)"),
        ];
        Self::synthetic_on(&spaces[0], &spaces[1], &spaces[2], &mut seeded(seed), scales)
    }

    /// Random `Q`, `β`, `S` with entries of size `scale/√dim`; `α_b` random with
    /// operator norm exactly `scales.alpha`.
    pub fn synthetic_on(
        bd_grad: &Space,
        bd_curl: &Space,
        bd_sgrad: &Space,
        rng: &mut impl Rng,
        scales: TripleScales,
    ) -> Self {
        let norm_scale = |op: LinOp, s: f64| {
            let n = op.src().dim().max(op.dst().dim()).max(1) as f64;
            op.scale_real(s / n.sqrt())
        };
        let q = norm_scale(random_linop(bd_curl, bd_sgrad, rng), scales.q);
        let beta = norm_scale(random_linop(bd_grad, bd_curl, rng), scales.beta);
        let s = skew_part(&random_linop(bd_curl, bd_curl, rng)).expect("square");
        let a = random_linop(bd_sgrad, bd_sgrad, rng);
        let an = operator_norm(&a);
        let alpha_b = if an > 0.0 {
            a.scale_real(scales.alpha / an)
        } else {
            a
        };
        BoundaryTriple {
            bd_grad: bd_grad.clone(),
            bd_curl: bd_curl.clone(),
            bd_sgrad: bd_sgrad.clone(),
            q,
            alpha_b,
            beta,
            s,
        }
    }

    /// Real-coefficient variant of [`BoundaryTriple::synthetic_on`]; with `alpha_psd`
    /// the memory operator is selfadjoint positive semidefinite.
    pub fn synthetic_real_on(
        bd_grad: &Space,
        bd_curl: &Space,
        bd_sgrad: &Space,
        rng: &mut impl Rng,
        scales: TripleScales,
        alpha_psd: bool,
    ) -> Self {
        let norm_scale = |op: LinOp, s: f64| {
            let n = op.src().dim().max(op.dst().dim()).max(1) as f64;
            op.scale_real(s / n.sqrt())
        };
        let q = norm_scale(random_real_linop(bd_curl, bd_sgrad, rng), scales.q);
        let beta = norm_scale(random_real_linop(bd_grad, bd_curl, rng), scales.beta);
        let s = skew_part(&random_real_linop(bd_curl, bd_curl, rng)).expect("square");
        let a = if alpha_psd {
            random_real_positive(bd_sgrad, 0.0, rng)
        } else {
            random_real_linop(bd_sgrad, bd_sgrad, rng)
        };
        let an = operator_norm(&a);
        let alpha_b = if an > 0.0 { a.scale_real(scales.alpha / an) } else { a };
        BoundaryTriple {
            bd_grad: bd_grad.clone(),
            bd_curl: bd_curl.clone(),
            bd_sgrad: bd_sgrad.clone(),
            q,
            alpha_b,
            beta,
            s,
        }
    }

    /// Operators induced by the mesh: `Q = ι*_{BD(Grad)} ι_{BD(curl)}`,
    /// `β = ι*_{BD(curl)} grad ι_{BD(grad)}`, `α_b = I` (each scaled), and `S` the skew
    /// part of the induced curl map.
    pub fn from_mesh(complex: &SpatialComplex, bd: &MeshBdSpaces, scales: TripleScales) -> Result<Self> {
        let q = bd.sgrad.trace_op().compose(&bd.curl.inject_op())?.scale_real(scales.q);
        let grad = complex.linop(crate::mesh::OpName::Grad);
        let beta = bd
            .curl
            .trace_op()
            .compose(&grad)?
            .compose(&bd.grad.inject_op())?
            .scale_real(scales.beta);
        let alpha_b = LinOp::scaled_identity(bd.sgrad.space(), C64::from(scales.alpha));
        let s = bd_map(&bd.curl, &bd.curl, complex)?.op;
        BoundaryTriple::new(q, alpha_b, beta, s)
    }

    pub fn bd_grad(&self) -> &Space {
        &self.bd_grad
    }

    pub fn bd_curl(&self) -> &Space {
        &self.bd_curl
    }

    pub fn bd_sgrad(&self) -> &Space {
        &self.bd_sgrad
    }

    pub fn q(&self) -> &LinOp {
        &self.q
    }

    pub fn alpha_b(&self) -> &LinOp {
        &self.alpha_b
    }

    pub fn beta(&self) -> &LinOp {
        &self.beta
    }

    pub fn s(&self) -> &LinOp {
        &self.s
    }

    pub fn alpha_norm(&self) -> f64 {
        operator_norm(&self.alpha_b)
    }

    /// Same triple with `α_b` rescaled to operator norm `target`.
    pub fn with_alpha_norm(&self, target: f64) -> Self {
        let n = self.alpha_norm();
        let mut out = self.clone();
        if n > 0.0 {
            out.alpha_b = self.alpha_b.scale_real(target / n);
        } else {
            out.alpha_b = LinOp::scaled_identity(&self.bd_sgrad, C64::from(target));
        }
        out
    }

    pub fn with_alpha(&self, alpha_b: LinOp) -> Result<Self> {
        expect_shape(&alpha_b, &self.bd_sgrad, &self.bd_sgrad, "alpha_b")?;
        let mut out = self.clone();
        out.alpha_b = alpha_b;
        Ok(out)
    }

    /// Whether `α_b` is the zero operator, making `K` independent of `z`.
    pub fn is_memoryless(&self) -> bool {
        self.alpha_b.is_zero()
    }

    /// Whether every boundary operator has real coefficients.
    pub fn is_real(&self) -> bool {
        self.q.is_real() && self.alpha_b.is_real() && self.beta.is_real() && self.s.is_real()
    }
}

/// A point `z` of the right half plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPoint {
    re: f64,
    im: f64,
}

impl FrequencyPoint {
    pub fn new(z: C64) -> Result<Self> {
        if !(z.re > 0.0) || !z.im.is_finite() {
            return Err(Error::Precondition(format!("frequency point needs Re z > 0, got {z}")));
        }
        Ok(FrequencyPoint { re: z.re, im: z.im })
    }

    pub fn from_parts(nu: f64, xi: f64) -> Result<Self> {
        Self::new(C64::new(nu, xi))
    }

    pub fn z(&self) -> C64 {
        C64::new(self.re, self.im)
    }

    pub fn nu(&self) -> f64 {
        self.re
    }
}

/// The declared sample grid: `Re z = ν`, `Im z ∈ {0, ±1, ±10, ±100, ±1000}·(1 + ‖α_b‖)`.
pub fn z_samples(nu: f64, alpha_norm: f64) -> Result<Vec<FrequencyPoint>> {
    let base = 1.0 + alpha_norm;
    let mut out = vec![FrequencyPoint::from_parts(nu, 0.0)?];
    for m in [1.0, 10.0, 100.0, 1000.0] {
        out.push(FrequencyPoint::from_parts(nu, m * base)?);
        out.push(FrequencyPoint::from_parts(nu, -m * base)?);
    }
    Ok(out)
}

/// `B(z)` on `BD(grad) ⊕ BD(curl) ⊕ BD(Grad)`.
pub fn assemble_b(t: &BoundaryTriple, z: FrequencyPoint) -> Result<BlockOp> {
    let bs = adjoint(&t.beta);
    let qs = adjoint(&t.q);
    let qb = t.q.compose(&t.beta)?;
    let a33 = LinOp::identity(&t.bd_sgrad).add(&t.alpha_b.scale(ONE / z.z()))?;
    BlockOp::assemble(
        vec![t.bd_grad.clone(), t.bd_curl.clone(), t.bd_sgrad.clone()],
        vec![t.bd_grad.clone(), t.bd_curl.clone(), t.bd_sgrad.clone()],
        vec![
            vec![Some(LinOp::identity(&t.bd_grad)), Some(bs.neg()), Some(bs.compose(&qs)?.neg())],
            vec![Some(t.beta.clone()), Some(LinOp::identity(&t.bd_curl)), Some(t.s.compose(&qs)?.neg())],
            vec![Some(qb), Some(t.q.compose(&t.s)?.neg()), Some(a33)],
        ],
    )
}

/// Reorders a `BD(grad) ⊕ BD(curl) ⊕ BD(Grad)` operator into the `(τ_T, τ_H, τ_q)`
/// order used by `K`: `J B J` with `J` the order flip.
pub fn arrange(b: &BlockOp) -> Result<BlockOp> {
    permute_congruence(b, &[2, 1, 0])
}

fn check_frequency(t: &BoundaryTriple, z: FrequencyPoint) -> Result<f64> {
    let an = t.alpha_norm();
    let nu = z.nu();
    if nu <= an {
        return Err(Error::FrequencyTooSmall {
            nu,
            alpha_norm: an,
            bound: 1.0 - an / nu,
        });
    }
    Ok(an)
}

/// The closed-form inverse `K(z)` stored in the `(τ_T, τ_H, τ_q)` layout.
pub fn k_matrix_formulas(t: &BoundaryTriple, z: FrequencyPoint) -> Result<BlockOp> {
    check_frequency(t, z)?;
    let beta = &t.beta;
    let bs = adjoint(beta);
    let qb = t.q.compose(beta)?;
    let qbs = adjoint(&qb);
    let qs = adjoint(&t.q);
    let id_curl = LinOp::identity(&t.bd_curl);
    let id_sgrad = LinOp::identity(&t.bd_sgrad);
    let id_grad = LinOp::identity(&t.bd_grad);

    let x = inverse_named(&id_curl.add(&beta.compose(&bs)?)?, "1 + beta beta*")?;
    // P = Qββ* − QS,  R = β(Qβ)* − SQ*
    let p = qb.compose(&bs)?.sub(&t.q.compose(&t.s)?)?;
    let r = beta.compose(&qbs)?.sub(&t.s.compose(&qs)?)?;
    let k33_inv = id_sgrad
        .add(&t.alpha_b.scale(ONE / z.z()))?
        .add(&qb.compose(&qbs)?)?
        .sub(&p.compose(&x)?.compose(&r)?)?;
    let k33 = inverse_named(&k33_inv, "K33 Schur factor")?;

    let px = p.compose(&x)?;
    let xr = x.compose(&r)?;
    let c1 = qb.sub(&px.compose(beta)?)?;
    let bsx = bs.compose(&x)?;
    let d1 = bsx.compose(&r)?.sub(&qbs)?;

    let k36 = k33.compose(&px)?.neg();
    let k39 = k33.compose(&c1)?.neg();
    let k63 = xr.compose(&k33)?.neg();
    let k66 = x.add(&xr.compose(&k33)?.compose(&px)?)?;
    let k69 = xr.compose(&k33)?.compose(&c1)?.sub(&x.compose(beta)?)?;
    let k93 = d1.compose(&k33)?.neg();
    let k96 = bsx.add(&d1.compose(&k33)?.compose(&px)?)?;
    let k99 = id_grad.sub(&bsx.compose(beta)?)?.add(&d1.compose(&k33)?.compose(&c1)?)?;

    let spaces = vec![t.bd_sgrad.clone(), t.bd_curl.clone(), t.bd_grad.clone()];
    BlockOp::assemble(
        spaces.clone(),
        spaces,
        vec![
            vec![Some(k33), Some(k36), Some(k39)],
            vec![Some(k63), Some(k66), Some(k69)],
            vec![Some(k93), Some(k96), Some(k99)],
        ],
    )
}

/// `‖K(z) · J B(z) J − I‖_F`.
pub fn k_inverse_residual(t: &BoundaryTriple, z: FrequencyPoint) -> Result<f64> {
    let k = k_matrix_formulas(t, z)?;
    let b = arrange(&assemble_b(t, z)?)?;
    let prod = k.compose(&b)?.flatten();
    let n = prod.src().dim();
    Ok((prod.mat() - crate::linspace::CMat::identity(n, n)).norm())
}

/// Measured and predicted positivity at one sampled `z`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZSampleBound {
    pub z: [f64; 2],
    pub pc_re_b: f64,
    pub pc_re_k: f64,
    pub norm_b: f64,
    /// `(1 − ‖α_b‖/ν) ‖B(z)‖⁻²`.
    pub k_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PositivityBounds {
    pub nu: f64,
    pub alpha_norm: f64,
    /// `1 − ‖α_b‖/ν`.
    pub re_b: f64,
    /// `re_b · min_z ‖B(z)‖⁻²` over the sample grid.
    pub re_k_lower: f64,
    /// `false` when `ν ≤ ‖α_b‖`; no samples are evaluated then.
    pub admissible: bool,
    pub samples: Vec<ZSampleBound>,
}

/// Evaluates and checks `Re B(z) ≥ 1 − ‖α_b‖/ν` and `Re K(z) ≥ (1 − ‖α_b‖/ν)‖B(z)‖⁻²`
/// on the declared sample grid.
pub fn b_positivity_bounds(t: &BoundaryTriple, nu: f64) -> Result<PositivityBounds> {
    if !(nu > 0.0) {
        return Err(Error::Precondition(format!("nu = {nu} must be positive")));
    }
    let alpha_norm = t.alpha_norm();
    let re_b = 1.0 - alpha_norm / nu;
    if !(re_b > 0.0) {
        return Ok(PositivityBounds {
            nu,
            alpha_norm,
            re_b,
            re_k_lower: re_b,
            admissible: false,
            samples: Vec::new(),
        });
    }
    let mut samples = Vec::new();
    for z in z_samples(nu, alpha_norm)? {
        let b = assemble_b(t, z)?;
        let pc_re_b = positivity_constant(&b.flatten())?;
        let norm_b = operator_norm(&b.flatten());
        let k = k_matrix_formulas(t, z)?;
        let pc_re_k = positivity_constant_blockwise(&k)?;
        let k_bound = re_b / (norm_b * norm_b);
        if pc_re_b < re_b - 1e-12 {
            return Err(Error::Numerical(format!(
                "Re B({}) has positivity {pc_re_b:.6e} below 1 - |alpha|/nu = {re_b:.6e}",
                z.z()
            )));
        }
        if pc_re_k < k_bound - 1e-10 {
            return Err(Error::Numerical(format!(
                "Re K({}) has positivity {pc_re_k:.6e} below {k_bound:.6e}",
                z.z()
            )));
        }
        samples.push(ZSampleBound {
            z: [z.z().re, z.z().im],
            pc_re_b,
            pc_re_k,
            norm_b,
            k_bound,
        });
    }
    let min_inv_sq = samples
        .iter()
        .map(|s| 1.0 / (s.norm_b * s.norm_b))
        .fold(f64::INFINITY, f64::min);
    let re_k_lower = re_b * min_inv_sq;
    if let Some(s) = samples.iter().find(|s| s.pc_re_k < re_k_lower - 1e-12) {
        return Err(Error::Numerical(format!(
            "Re K at z = {:?} has positivity {:.6e} below the uniform bound {re_k_lower:.6e}",
            s.z, s.pc_re_k
        )));
    }
    Ok(PositivityBounds {
        nu,
        alpha_norm,
        re_b,
        re_k_lower,
        admissible: true,
        samples,
    })
}

/// Result of a batch of formula-versus-direct-inverse comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KCheckReport {
    pub dims: [usize; 3],
    pub trials: usize,
    pub seed: u64,
    pub frequency_rule: String,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const KCHECK_TOL: f64 = 1e-9;

/// Draws `trials` synthetic triples from `seed` and measures `‖K·JBJ − I‖_F` at
/// `z = 2‖α_b‖ + 1 + i`, or at `z = ν + i` when `nu` is given.
pub fn kcheck(dims: [usize; 3], trials: usize, seed: u64, nu: Option<f64>) -> Result<KCheckReport> {
    if dims.contains(&0) || trials == 0 {
        return Err(Error::Precondition("dims and trials must be at least 1".into()));
    }
    let mut rng = seeded(seed);
    let spaces = [
        HSpace::euclidean(dims[0], "BD(grad)"),
        HSpace::euclidean(dims[1], "BD(curl)"),
        HSpace::euclidean(dims[2], "BD(Grad)"),
    ];
    let mut residuals = Vec::with_capacity(trials);
    for _ in 0..trials {
        let alpha = rng.random_range(0.1..2.0);
        let t = BoundaryTriple::synthetic_on(
            &spaces[0],
            &spaces[1],
            &spaces[2],
            &mut rng,
            TripleScales { q: 1.0, alpha, beta: 1.0 },
        );
        let re = match nu {
            Some(v) => v,
            None => 2.0 * t.alpha_norm() + 1.0,
        };
        let z = FrequencyPoint::from_parts(re, 1.0)?;
        residuals.push(k_inverse_residual(&t, z)?);
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(KCheckReport {
        dims,
        trials,
        seed,
        frequency_rule: match nu {
            Some(v) => format!("z = {v} + i"),
            None => "z = 2|alpha_b| + 1 + i".into(),
        },
        residuals,
        max_residual,
        tolerance: KCHECK_TOL,
        passed: max_residual <= KCHECK_TOL,
    })
}
