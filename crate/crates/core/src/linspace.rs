//! Finite-dimensional inner-product spaces and the bounded operators between them.
//!
//! Every space carries an explicit Gram matrix `G`, so `<x, y> = x^H G y`. Operators
//! store their coefficient matrix; adjoints, real parts, norms and positivity
//! constants are all taken with respect to the Grams of the two spaces involved.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{dim_check, Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Absolute tolerance on smallest eigenvalues used for every positivity decision.
pub const POSITIVITY_TOL: f64 = 1e-10;

/// Relative pivot tolerance for guarded inversions.
pub const PIVOT_TOL: f64 = 1e-12;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, Debug)]
enum Gram {
    Diagonal(Vec<f64>),
    /// `chol` is the lower factor `L` with `G = L L^H`.
    Dense { mat: CMat, chol: CMat },
}

/// A finite-dimensional complex Hilbert space given by its Gram matrix.
#[derive(Clone)]
pub struct HSpace {
    label: String,
    gram: Gram,
}

/// Spaces are shared between operators by reference.
pub type Space = Arc<HSpace>;

impl fmt::Debug for HSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.gram {
            Gram::Diagonal(_) => "diagonal",
            Gram::Dense { .. } => "dense",
        };
        write!(f, "HSpace({}, dim={}, {kind})", self.label, self.dim())
    }
}

impl PartialEq for HSpace {
    fn eq(&self, other: &Self) -> bool {
        match (&self.gram, &other.gram) {
            (Gram::Diagonal(a), Gram::Diagonal(b)) => a == b,
            (Gram::Dense { mat: a, .. }, Gram::Dense { mat: b, .. }) => a == b,
            _ => self.dim() == other.dim() && self.gram_matrix() == other.gram_matrix(),
        }
    }
}

impl HSpace {
    pub fn euclidean(dim: usize, label: impl Into<String>) -> Space {
        Arc::new(HSpace {
            label: label.into(),
            gram: Gram::Diagonal(vec![1.0; dim]),
        })
    }

    /// Space with a diagonal Gram (lumped quadrature weights).
    pub fn diagonal(weights: Vec<f64>, label: impl Into<String>) -> Result<Space> {
        let label = label.into();
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidGram {
                label,
                reason: format!("weight {w} is not positive"),
            });
        }
        Ok(Arc::new(HSpace {
            label,
            gram: Gram::Diagonal(weights),
        }))
    }

    /// Space with a full Hermitian positive-definite Gram.
    pub fn dense(gram: CMat, label: impl Into<String>) -> Result<Space> {
        let label = label.into();
        if !gram.is_square() {
            return Err(Error::InvalidGram {
                label,
                reason: format!("gram is {}x{}", gram.nrows(), gram.ncols()),
            });
        }
        let scale = gram.norm().max(1.0);
        let herm = (&gram - gram.adjoint()).norm();
        if herm > 1e-12 * scale {
            return Err(Error::InvalidGram {
                label,
                reason: format!("not Hermitian (residual {herm:.3e})"),
            });
        }
        let lowest = hermitian_eigenvalues(&gram).first().copied().unwrap_or(1.0);
        let chol = match gram.clone().cholesky() {
            Some(c) if lowest > 0.0 => c.unpack(),
            _ => {
                return Err(Error::InvalidGram {
                    label,
                    reason: "not positive definite".into(),
                })
            }
        };
        Ok(Arc::new(HSpace {
            label,
            gram: Gram::Dense { mat: gram, chol },
        }))
    }

    /// Orthogonal direct sum of the given spaces.
    pub fn direct_sum(parts: &[Space], label: impl Into<String>) -> Space {
        let label = label.into();
        if parts.iter().all(|p| p.is_diagonal()) {
            let w = parts
                .iter()
                .flat_map(|p| p.weights().unwrap().iter().copied())
                .collect();
            return Arc::new(HSpace {
                label,
                gram: Gram::Diagonal(w),
            });
        }
        let n: usize = parts.iter().map(|p| p.dim()).sum();
        let mut mat = CMat::zeros(n, n);
        let mut chol = CMat::zeros(n, n);
        let mut off = 0;
        for p in parts {
            let d = p.dim();
            mat.view_mut((off, off), (d, d)).copy_from(&p.gram_matrix());
            chol.view_mut((off, off), (d, d)).copy_from(&p.chol_factor());
            off += d;
        }
        Arc::new(HSpace {
            label,
            gram: Gram::Dense { mat, chol },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.gram {
            Gram::Diagonal(w) => w.len(),
            Gram::Dense { mat, .. } => mat.nrows(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.gram, Gram::Diagonal(_))
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match &self.gram {
            Gram::Diagonal(w) => Some(w),
            Gram::Dense { .. } => None,
        }
    }

    pub fn gram_matrix(&self) -> CMat {
        match &self.gram {
            Gram::Diagonal(w) => {
                CMat::from_diagonal(&CVec::from_iterator(w.len(), w.iter().map(|&x| C64::from(x))))
            }
            Gram::Dense { mat, .. } => mat.clone(),
        }
    }

    fn chol_factor(&self) -> CMat {
        match &self.gram {
            Gram::Diagonal(w) => CMat::from_diagonal(&CVec::from_iterator(
                w.len(),
                w.iter().map(|&x| C64::from(x.sqrt())),
            )),
            Gram::Dense { chol, .. } => chol.clone(),
        }
    }

    pub fn apply_gram(&self, x: &CVec) -> CVec {
        match &self.gram {
            Gram::Diagonal(w) => CVec::from_iterator(x.len(), x.iter().zip(w).map(|(a, &g)| a * g)),
            Gram::Dense { mat, .. } => mat * x,
        }
    }

    /// `<x, y> = x^H G y`.
    pub fn inner(&self, x: &CVec, y: &CVec) -> C64 {
        x.dotc(&self.apply_gram(y))
    }

    pub fn norm(&self, x: &CVec) -> f64 {
        self.inner(x, x).re.max(0.0).sqrt()
    }

    /// Real-coordinate inner product, for real fields on diagonal spaces.
    pub fn inner_real(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.gram {
            Gram::Diagonal(w) => x.iter().zip(y).zip(w).map(|((a, b), g)| a * b * g).sum(),
            Gram::Dense { .. } => {
                let xc = CVec::from_iterator(x.len(), x.iter().map(|&v| C64::from(v)));
                let yc = CVec::from_iterator(y.len(), y.iter().map(|&v| C64::from(v)));
                self.inner(&xc, &yc).re
            }
        }
    }

    pub fn norm_real(&self, x: &[f64]) -> f64 {
        self.inner_real(x, x).max(0.0).sqrt()
    }

    /// Row transform `L^H m` of a coefficient matrix whose rows live in this space.
    fn lift_rows(&self, m: &CMat) -> CMat {
        match &self.gram {
            Gram::Diagonal(w) => {
                let mut out = m.clone();
                for (i, g) in w.iter().enumerate() {
                    let s = g.sqrt();
                    out.row_mut(i).scale_mut(s);
                }
                out
            }
            Gram::Dense { chol, .. } => chol.adjoint() * m,
        }
    }

    /// Column transform `m L^{-H}` of a coefficient matrix whose columns live in this space.
    fn lower_cols(&self, m: &CMat) -> CMat {
        match &self.gram {
            Gram::Diagonal(w) => {
                let mut out = m.clone();
                for (j, g) in w.iter().enumerate() {
                    let s = 1.0 / g.sqrt();
                    out.column_mut(j).scale_mut(s);
                }
                out
            }
            Gram::Dense { chol, .. } => {
                // X L^H = m  <=>  L X^H = m^H
                let xh = chol
                    .solve_lower_triangular(&m.adjoint())
                    .expect("cholesky factor is nonsingular");
                xh.adjoint()
            }
        }
    }
}

/// A bounded operator `src -> dst`, stored as a `dst.dim x src.dim` coefficient matrix.
#[derive(Clone)]
pub struct LinOp {
    src: Space,
    dst: Space,
    mat: CMat,
}

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LinOp({} -> {}, {}x{})",
            self.src.label(),
            self.dst.label(),
            self.mat.nrows(),
            self.mat.ncols()
        )
    }
}

pub fn same_space(a: &Space, b: &Space) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl LinOp {
    pub fn new(src: Space, dst: Space, mat: CMat) -> Result<Self> {
        dim_check("operator rows", dst.dim(), mat.nrows())?;
        dim_check("operator columns", src.dim(), mat.ncols())?;
        Ok(LinOp { src, dst, mat })
    }

    pub fn from_real(src: Space, dst: Space, mat: &RMat) -> Result<Self> {
        Self::new(src, dst, mat.map(C64::from))
    }

    pub fn identity(space: &Space) -> Self {
        let n = space.dim();
        LinOp {
            src: space.clone(),
            dst: space.clone(),
            mat: CMat::identity(n, n),
        }
    }

    pub fn scaled_identity(space: &Space, c: C64) -> Self {
        let n = space.dim();
        LinOp {
            src: space.clone(),
            dst: space.clone(),
            mat: CMat::identity(n, n) * c,
        }
    }

    pub fn zero(src: &Space, dst: &Space) -> Self {
        LinOp {
            src: src.clone(),
            dst: dst.clone(),
            mat: CMat::zeros(dst.dim(), src.dim()),
        }
    }

    pub fn src(&self) -> &Space {
        &self.src
    }

    pub fn dst(&self) -> &Space {
        &self.dst
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn into_mat(self) -> CMat {
        self.mat
    }

    pub fn is_square(&self) -> bool {
        same_space(&self.src, &self.dst)
    }

    pub fn is_zero(&self) -> bool {
        self.mat.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    pub fn is_real(&self) -> bool {
        self.mat.iter().all(|c| c.im == 0.0)
    }

    /// Real coefficient matrix, if every coefficient is real.
    pub fn real_matrix(&self) -> Option<RMat> {
        if self.is_real() {
            Some(self.mat.map(|c| c.re))
        } else {
            None
        }
    }

    pub fn apply(&self, x: &CVec) -> Result<CVec> {
        dim_check("apply", self.src.dim(), x.len())?;
        Ok(&self.mat * x)
    }

    /// `self ∘ rhs`.
    pub fn compose(&self, rhs: &LinOp) -> Result<LinOp> {
        if !same_space(&rhs.dst, &self.src) {
            return Err(Error::Shape(format!(
                "cannot compose {:?} after {:?}",
                self, rhs
            )));
        }
        Ok(LinOp {
            src: rhs.src.clone(),
            dst: self.dst.clone(),
            mat: matmul(&self.mat, &rhs.mat),
        })
    }

    fn check_same_shape(&self, other: &LinOp, what: &str) -> Result<()> {
        if same_space(&self.src, &other.src) && same_space(&self.dst, &other.dst) {
            Ok(())
        } else {
            Err(Error::Shape(format!("cannot {what} {self:?} and {other:?}")))
        }
    }

    pub fn add(&self, other: &LinOp) -> Result<LinOp> {
        self.check_same_shape(other, "add")?;
        Ok(LinOp {
            src: self.src.clone(),
            dst: self.dst.clone(),
            mat: &self.mat + &other.mat,
        })
    }

    pub fn sub(&self, other: &LinOp) -> Result<LinOp> {
        self.check_same_shape(other, "subtract")?;
        Ok(LinOp {
            src: self.src.clone(),
            dst: self.dst.clone(),
            mat: &self.mat - &other.mat,
        })
    }

    pub fn scale(&self, c: C64) -> LinOp {
        LinOp {
            src: self.src.clone(),
            dst: self.dst.clone(),
            mat: &self.mat * c,
        }
    }

    pub fn scale_real(&self, c: f64) -> LinOp {
        self.scale(C64::from(c))
    }

    pub fn neg(&self) -> LinOp {
        LinOp {
            src: self.src.clone(),
            dst: self.dst.clone(),
            mat: -&self.mat,
        }
    }

    /// Same coefficients, reinterpreted between other spaces of equal dimensions.
    pub fn with_spaces(&self, src: &Space, dst: &Space) -> Result<LinOp> {
        LinOp::new(src.clone(), dst.clone(), self.mat.clone())
    }

    /// Frobenius norm of the coefficient matrix.
    pub fn frobenius(&self) -> f64 {
        self.mat.norm()
    }

    /// Gram-weighted representative `L_dst^H a L_src^{-H}`, a matrix whose euclidean
    /// properties (singular values, Hermitian part) are those of the operator.
    pub fn euclidean_form(&self) -> CMat {
        self.src.lower_cols(&self.dst.lift_rows(&self.mat))
    }
}

/// Hilbert-space adjoint `G_src^{-1} a^H G_dst`.
pub fn adjoint(a: &LinOp) -> LinOp {
    let (n_dst, n_src) = a.mat.shape();
    let mat = match (&a.src.gram, &a.dst.gram) {
        (Gram::Diagonal(gs), Gram::Diagonal(gd)) => {
            // the weight ratio is formed first so that power-of-two ratios keep the
            // adjoint an exact involution
            CMat::from_fn(n_src, n_dst, |i, j| a.mat[(j, i)].conj() * (gd[j] / gs[i]))
        }
        _ => {
            let ah_gd = a.mat.adjoint() * a.dst.gram_matrix();
            match &a.src.gram {
                Gram::Diagonal(gs) => {
                    let mut m = ah_gd;
                    for (i, g) in gs.iter().enumerate() {
                        m.row_mut(i).unscale_mut(*g);
                    }
                    m
                }
                Gram::Dense { chol, .. } => {
                    let y = chol.solve_lower_triangular(&ah_gd).expect("nonsingular");
                    chol.adjoint().solve_upper_triangular(&y).expect("nonsingular")
                }
            }
        }
    };
    LinOp {
        src: a.dst.clone(),
        dst: a.src.clone(),
        mat,
    }
}

fn require_square(a: &LinOp, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what} needs an operator on one space, got {} -> {}",
            a.src.label(),
            a.dst.label()
        )))
    }
}

/// `(a + a*) / 2`.
pub fn real_part(a: &LinOp) -> Result<LinOp> {
    require_square(a, "real_part")?;
    let adj = adjoint(a);
    Ok(LinOp {
        src: a.src.clone(),
        dst: a.dst.clone(),
        mat: (&a.mat + &adj.mat) * C64::from(0.5),
    })
}

/// `(a - a*) / 2`.
pub fn skew_part(a: &LinOp) -> Result<LinOp> {
    require_square(a, "skew_part")?;
    let adj = adjoint(a);
    Ok(LinOp {
        src: a.src.clone(),
        dst: a.dst.clone(),
        mat: (&a.mat - &adj.mat) * C64::from(0.5),
    })
}

/// `‖a − a*‖_F / max(1, ‖a‖_F)`.
pub fn selfadjoint_residual(a: &LinOp) -> f64 {
    let adj = adjoint(a);
    (&a.mat - &adj.mat).norm() / a.mat.norm().max(1.0)
}

/// Ascending eigenvalues of a Hermitian matrix (its Hermitian part is used).
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let h = (m + m.adjoint()) * C64::from(0.5);
    let mut vals = Vec::with_capacity(n);
    match square_blocks(&h) {
        Some(blocks) => {
            for b in &blocks {
                vals.extend(dense_hermitian_eigenvalues(&submatrix(&h, b, b)));
            }
        }
        None => vals = dense_hermitian_eigenvalues(&h),
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

fn dense_hermitian_eigenvalues(h: &CMat) -> Vec<f64> {
    if h.iter().all(|c| c.im == 0.0) {
        h.map(|c| c.re).symmetric_eigenvalues().iter().copied().collect()
    } else {
        h.clone().symmetric_eigenvalues().iter().copied().collect()
    }
}

/// Best constant `c` with `Re <x, a x> >= c ‖x‖²`: the smallest eigenvalue of the real
/// part in the Gram inner product. Returns `+inf` on the zero space.
pub fn positivity_constant(a: &LinOp) -> Result<f64> {
    let r = real_part(a)?;
    Ok(hermitian_eigenvalues(&r.euclidean_form())
        .first()
        .copied()
        .unwrap_or(f64::INFINITY))
}

/// Outcome of a positivity decision at tolerance [`POSITIVITY_TOL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Positivity {
    Positive,
    IndefiniteToTolerance,
    Negative,
}

pub fn classify_positivity(value: f64) -> Positivity {
    if value >= POSITIVITY_TOL {
        Positivity::Positive
    } else if value > -POSITIVITY_TOL {
        Positivity::IndefiniteToTolerance
    } else {
        Positivity::Negative
    }
}

/// Largest Gram-weighted singular value.
pub fn operator_norm(a: &LinOp) -> f64 {
    if a.mat.nrows() == 0 || a.mat.ncols() == 0 {
        return 0.0;
    }
    singular_values(&a.euclidean_form()).into_iter().fold(0.0, f64::max)
}

/// Smallest Gram-weighted singular value (square operators).
pub fn min_singular_value(a: &LinOp) -> f64 {
    if a.mat.nrows() == 0 || a.mat.ncols() == 0 {
        return f64::INFINITY;
    }
    singular_values(&a.euclidean_form()).into_iter().fold(f64::INFINITY, f64::min)
}

/// LU inverse with a relative pivot guard; `name` labels the factor in errors.
pub fn inverse_named(a: &LinOp, name: &str) -> Result<LinOp> {
    if a.src.dim() != a.dst.dim() {
        return Err(Error::Shape(format!("cannot invert non-square {a:?}")));
    }
    let n = a.mat.nrows();
    if n == 0 {
        return Ok(LinOp::zero(&a.dst, &a.src));
    }
    let blocks = square_blocks(&a.mat).unwrap_or_else(|| vec![(0..n).collect()]);
    let mut lus = Vec::with_capacity(blocks.len());
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for b in &blocks {
        let lu = if blocks.len() == 1 { a.mat.clone() } else { submatrix(&a.mat, b, b) }.lu();
        let u = lu.u();
        for i in 0..b.len() {
            let v = u[(i, i)].norm();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        lus.push(lu);
    }
    if !(hi > 0.0) || lo <= PIVOT_TOL * hi || !lo.is_finite() {
        return Err(Error::Singular {
            factor: name.to_string(),
            detail: format!("pivot ratio {:.3e}", if hi > 0.0 { lo / hi } else { 0.0 }),
        });
    }
    let failed = || Error::Singular {
        factor: name.to_string(),
        detail: "LU inverse failed".into(),
    };
    let inv = if blocks.len() == 1 {
        lus.pop().and_then(|lu| lu.try_inverse()).ok_or_else(failed)?
    } else {
        let mut inv = CMat::zeros(n, n);
        for (b, lu) in blocks.iter().zip(lus) {
            let bi = lu.try_inverse().ok_or_else(failed)?;
            for (jj, &j) in b.iter().enumerate() {
                for (ii, &i) in b.iter().enumerate() {
                    inv[(i, j)] = bi[(ii, jj)];
                }
            }
        }
        inv
    };
    Ok(LinOp {
        src: a.dst.clone(),
        dst: a.src.clone(),
        mat: inv,
    })
}

pub fn inverse(a: &LinOp) -> Result<LinOp> {
    inverse_named(a, "operator")
}

/// An inverse together with the bounds guaranteed by `Re a >= c`.
#[derive(Clone, Debug)]
pub struct BoundedInverse {
    pub inverse: LinOp,
    /// `1 / c`, bounding `‖a⁻¹‖`.
    pub norm_bound: f64,
    /// `c ‖a‖⁻²`, bounding `Re a⁻¹` from below.
    pub re_bound: f64,
    /// Measured `‖a⁻¹‖`.
    pub norm: f64,
    /// Measured positivity constant of `a⁻¹`.
    pub re: f64,
}

/// Inverts `a` given `Re a >= c > 0` and checks both resulting bounds.
pub fn inverse_with_bounds(a: &LinOp, c: f64) -> Result<BoundedInverse> {
    if !(c > 0.0) {
        return Err(Error::Precondition(format!("constant c = {c} must be positive")));
    }
    let pc = positivity_constant(a)?;
    if pc < c - PIVOT_TOL * c.max(1.0) {
        return Err(Error::Precondition(format!(
            "positivity constant {pc:.6e} is below c = {c:.6e}"
        )));
    }
    let inv = inverse(a)?;
    let norm = operator_norm(&inv);
    let re = positivity_constant(&inv)?;
    let norm_a = operator_norm(a);
    let norm_bound = 1.0 / c;
    let re_bound = c / (norm_a * norm_a);
    if norm > norm_bound + POSITIVITY_TOL {
        return Err(Error::Numerical(format!(
            "inverse norm {norm:.6e} exceeds 1/c = {norm_bound:.6e}"
        )));
    }
    if re < re_bound - POSITIVITY_TOL {
        return Err(Error::Numerical(format!(
            "inverse positivity {re:.6e} below c/|a|^2 = {re_bound:.6e}"
        )));
    }
    Ok(BoundedInverse {
        inverse: inv,
        norm_bound,
        re_bound,
        norm,
        re,
    })
}

pub fn cvec_from_real(x: &[f64]) -> CVec {
    CVec::from_iterator(x.len(), x.iter().map(|&v| C64::from(v)))
}

/// Products, factorizations and spectra below use the sparsity pattern once a matrix
/// has at most this fraction of nonzeros; coefficient fields on meshes are block
/// diagonal per node, so dense kernels would dominate.
const SPARSE_DENSITY: f64 = 0.25;
const STRUCTURE_MIN_DIM: usize = 48;

fn nonzeros(m: &CMat) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != ZERO {
                out.push((i, j, v));
            }
        }
    }
    out
}

fn matmul(a: &CMat, b: &CMat) -> CMat {
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    if m.max(k).max(n) < STRUCTURE_MIN_DIM {
        return a * b;
    }
    let nb = b.iter().filter(|v| **v != ZERO).count();
    if (nb as f64) <= SPARSE_DENSITY * (k * n) as f64 {
        let mut out = CMat::zeros(m, n);
        for j in 0..n {
            for l in 0..k {
                let v = b[(l, j)];
                if v != ZERO {
                    out.column_mut(j).axpy(v, &a.column(l), ONE);
                }
            }
        }
        return out;
    }
    let na = a.iter().filter(|v| **v != ZERO).count();
    if (na as f64) <= SPARSE_DENSITY * (m * k) as f64 {
        let nz = nonzeros(a);
        let mut out = CMat::zeros(m, n);
        for j in 0..n {
            for &(i, l, v) in &nz {
                out[(i, j)] += v * b[(l, j)];
            }
        }
        return out;
    }
    a * b
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], i: usize, j: usize) {
    let (a, b) = (find(parent, i), find(parent, j));
    if a != b {
        parent[a.max(b)] = a.min(b);
    }
}

fn groups(parent: &mut [usize], len: usize) -> Vec<Vec<usize>> {
    let mut index = vec![usize::MAX; len];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in 0..len {
        let r = find(parent, i);
        if index[r] == usize::MAX {
            index[r] = out.len();
            out.push(Vec::new());
        }
        out[index[r]].push(i);
    }
    out
}

/// Index sets of the connected components of the pattern of `m + m^T`, or `None` when
/// the matrix is small or does not split.
fn square_blocks(m: &CMat) -> Option<Vec<Vec<usize>>> {
    let n = m.nrows();
    if n < STRUCTURE_MIN_DIM || m.ncols() != n {
        return None;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)] != ZERO {
                union(&mut parent, i, j);
            }
        }
    }
    let g = groups(&mut parent, n);
    (g.len() > 1).then_some(g)
}

fn submatrix(m: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn dense_singular_values(t: &CMat) -> Vec<f64> {
    if t.iter().all(|c| c.im == 0.0) {
        t.map(|c| c.re).singular_values().iter().copied().collect()
    } else {
        t.singular_values().iter().copied().collect()
    }
}

/// All `min(m, n)` singular values, split along the bipartite row/column components.
fn singular_values(t: &CMat) -> Vec<f64> {
    let (m, n) = t.shape();
    if m.max(n) < STRUCTURE_MIN_DIM {
        return dense_singular_values(t);
    }
    let mut parent: Vec<usize> = (0..m + n).collect();
    for j in 0..n {
        for i in 0..m {
            if t[(i, j)] != ZERO {
                union(&mut parent, i, m + j);
            }
        }
    }
    let g = groups(&mut parent, m + n);
    if g.len() == 1 {
        return dense_singular_values(t);
    }
    let mut out = Vec::with_capacity(m.min(n));
    for comp in g {
        let (rows, cols): (Vec<usize>, Vec<usize>) = comp.into_iter().partition(|&i| i < m);
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        let cols: Vec<usize> = cols.into_iter().map(|j| j - m).collect();
        out.extend(dense_singular_values(&submatrix(t, &rows, &cols)));
    }
    out.resize(m.min(n).max(out.len()), 0.0);
    out
}
