//! Seeded random spaces, vectors and structured operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linspace::{adjoint, CMat, CVec, HSpace, LinOp, RMat, Space, C64};

pub type TestRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

pub fn random_cvec(n: usize, rng: &mut impl Rng) -> CVec {
    CVec::from_fn(n, |_, _| C64::new(uniform(rng), uniform(rng)))
}

pub fn random_rvec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| uniform(rng)).collect()
}

pub fn random_cmat(m: usize, n: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(m, n, |_, _| C64::new(uniform(rng), uniform(rng)))
}

pub fn random_rmat(m: usize, n: usize, rng: &mut impl Rng) -> RMat {
    RMat::from_fn(m, n, |_, _| uniform(rng))
}

/// Diagonal Gram with weights in `[0.5, 2)`.
pub fn random_diagonal_space(n: usize, rng: &mut impl Rng) -> Space {
    let w = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    HSpace::diagonal(w, "random-diagonal").expect("positive weights")
}

/// Dense Hermitian Gram `I + X X^H / n`.
pub fn random_dense_space(n: usize, rng: &mut impl Rng) -> Space {
    let x = random_cmat(n, n, rng);
    let g = CMat::identity(n, n) + &x * x.adjoint() * C64::from(1.0 / n.max(1) as f64);
    let g = (&g + g.adjoint()) * C64::from(0.5);
    HSpace::dense(g, "random-dense").expect("positive definite")
}

pub fn random_linop(src: &Space, dst: &Space, rng: &mut impl Rng) -> LinOp {
    LinOp::new(src.clone(), dst.clone(), random_cmat(dst.dim(), src.dim(), rng)).unwrap()
}

pub fn random_real_linop(src: &Space, dst: &Space, rng: &mut impl Rng) -> LinOp {
    LinOp::from_real(src.clone(), dst.clone(), &random_rmat(dst.dim(), src.dim(), rng)).unwrap()
}

/// Exactly skew-adjoint operator `(X − X*)/2`.
pub fn random_skew(space: &Space, rng: &mut impl Rng) -> LinOp {
    let x = random_linop(space, space, rng);
    crate::linspace::skew_part(&x).unwrap()
}

/// Selfadjoint `X* X` scaled to unit size plus `shift`.
pub fn random_positive(space: &Space, shift: f64, rng: &mut impl Rng) -> LinOp {
    let x = random_linop(space, space, rng);
    let n = space.dim().max(1) as f64;
    let p = adjoint(&x).compose(&x).unwrap().scale_real(1.0 / n);
    let p = crate::linspace::real_part(&p).unwrap();
    p.add(&LinOp::scaled_identity(space, C64::from(shift))).unwrap()
}

/// Real-coefficient selfadjoint positive operator on a euclidean or diagonal space.
pub fn random_real_positive(space: &Space, shift: f64, rng: &mut impl Rng) -> LinOp {
    let x = random_real_linop(space, space, rng);
    let n = space.dim().max(1) as f64;
    let p = adjoint(&x).compose(&x).unwrap().scale_real(1.0 / n);
    let p = crate::linspace::real_part(&p).unwrap();
    p.add(&LinOp::scaled_identity(space, C64::from(shift))).unwrap()
}

/// `shift·I + skew + PSD`, so `Re >= shift`.
pub fn random_accretive(space: &Space, shift: f64, rng: &mut impl Rng) -> LinOp {
    let p = random_positive(space, shift, rng);
    p.add(&random_skew(space, rng)).unwrap()
}

/// Random selfadjoint operator with eigenvalues of both signs.
pub fn random_selfadjoint(space: &Space, rng: &mut impl Rng) -> LinOp {
    let x = random_linop(space, space, rng);
    crate::linspace::real_part(&x).unwrap()
}
