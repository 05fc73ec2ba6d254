//! Material coefficients, the operators `M₀` and `M₁(z)` of the nine-slot system, the
//! constitutive reconstruction and the well-posedness certificate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bdspace::MeshBdSpaces;
use crate::blockform::{
    gauss_step, inertia, log_step, permute_congruence, BlockOp, CongruenceLog, CongruenceStep,
    CongruenceSummary, StepKind,
};
use crate::error::{Error, Result};
use crate::impedance::{
    b_positivity_bounds, k_matrix_formulas, z_samples, BoundaryTriple, FrequencyPoint,
    PositivityBounds,
};
use crate::linspace::{
    adjoint, hermitian_eigenvalues, inverse_named, positivity_constant, real_part, same_space,
    selfadjoint_residual, CMat, CVec, HSpace, LinOp, RMat, Space, C64, POSITIVITY_TOL,
};
use crate::mesh::{SpatialComplex, SYM_PAIRS};
use crate::random::{random_accretive, random_real_linop, random_real_positive, random_rmat};

/// The nine unknowns in system order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    #[serde(rename = "v")]
    V,
    #[serde(rename = "T")]
    T,
    #[serde(rename = "tau_T")]
    TauT,
    #[serde(rename = "E")]
    E,
    #[serde(rename = "H")]
    H,
    #[serde(rename = "tau_H")]
    TauH,
    #[serde(rename = "theta")]
    Theta,
    #[serde(rename = "q")]
    Q,
    #[serde(rename = "tau_q")]
    TauQ,
}

impl Slot {
    pub const ALL: [Slot; 9] = [
        Slot::V,
        Slot::T,
        Slot::TauT,
        Slot::E,
        Slot::H,
        Slot::TauH,
        Slot::Theta,
        Slot::Q,
        Slot::TauQ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::V => "v",
            Slot::T => "T",
            Slot::TauT => "tau_T",
            Slot::E => "E",
            Slot::H => "H",
            Slot::TauH => "tau_H",
            Slot::Theta => "theta",
            Slot::Q => "q",
            Slot::TauQ => "tau_q",
        }
    }

    pub fn is_tau(self) -> bool {
        matches!(self, Slot::TauT | Slot::TauH | Slot::TauQ)
    }

    pub fn from_name(s: &str) -> Result<Slot> {
        Slot::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Precondition(format!("unknown slot '{s}'")))
    }
}

impl std::fmt::Display for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Dimensions of the field spaces of an abstract layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDims {
    pub displacement: usize,
    pub sym: usize,
    pub vector: usize,
    pub scalar: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayoutKind {
    Mesh { nodes: usize },
    Abstract,
}

/// Slot spaces: fields from the complex (or abstract euclidean spaces), τ-slots from
/// the boundary data spaces.
#[derive(Clone, Debug)]
pub struct SystemLayout {
    spaces: Vec<Space>,
    kind: LayoutKind,
}

impl SystemLayout {
    pub fn from_mesh(complex: &SpatialComplex, bd: &MeshBdSpaces) -> Self {
        let v = complex.vector_space().clone();
        SystemLayout {
            spaces: vec![
                complex.displacement_space().clone(),
                complex.sym_space().clone(),
                bd.sgrad.space().clone(),
                v.clone(),
                v.clone(),
                bd.curl.space().clone(),
                complex.scalar_space().clone(),
                v,
                bd.grad.space().clone(),
            ],
            kind: LayoutKind::Mesh {
                nodes: complex.num_nodes(),
            },
        }
    }

    /// Euclidean field spaces with the triple's boundary data spaces.
    pub fn abstract_layout(dims: FieldDims, triple: &BoundaryTriple) -> Self {
        let v = HSpace::euclidean(dims.vector, "vector");
        SystemLayout {
            spaces: vec![
                HSpace::euclidean(dims.displacement, "displacement"),
                HSpace::euclidean(dims.sym, "sym"),
                triple.bd_sgrad().clone(),
                v.clone(),
                v.clone(),
                triple.bd_curl().clone(),
                HSpace::euclidean(dims.scalar, "scalar"),
                v,
                triple.bd_grad().clone(),
            ],
            kind: LayoutKind::Abstract,
        }
    }

    pub fn space(&self, s: Slot) -> &Space {
        &self.spaces[s.index()]
    }

    pub fn spaces(&self) -> &[Space] {
        &self.spaces
    }

    pub fn dim(&self, s: Slot) -> usize {
        self.space(s).dim()
    }

    pub fn total_dim(&self) -> usize {
        self.spaces.iter().map(|s| s.dim()).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for s in &self.spaces {
            o.push(o.last().unwrap() + s.dim());
        }
        o
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    pub fn displacement(&self) -> &Space {
        self.space(Slot::V)
    }

    pub fn sym(&self) -> &Space {
        self.space(Slot::T)
    }

    pub fn vector(&self) -> &Space {
        self.space(Slot::E)
    }

    pub fn scalar(&self) -> &Space {
        self.space(Slot::Theta)
    }

    /// Checks that the τ-slots carry the triple's boundary data spaces.
    pub fn check_triple(&self, t: &BoundaryTriple) -> Result<()> {
        let ok = same_space(self.space(Slot::TauT), t.bd_sgrad())
            && same_space(self.space(Slot::TauH), t.bd_curl())
            && same_space(self.space(Slot::TauQ), t.bd_grad());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("boundary triple does not match the layout's tau-slots".into()))
        }
    }
}

/// Raw coefficient operators; see [`MaterialData::new`] for the checks applied.
#[derive(Clone, Debug)]
pub struct MaterialFields {
    pub rho_star: LinOp,
    pub cel: LinOp,
    pub e: LinOp,
    pub lambda: LinOp,
    pub p: LinOp,
    pub eps: LinOp,
    pub mu: LinOp,
    pub sigma: LinOp,
    pub theta0: LinOp,
    pub gamma0: LinOp,
    pub kappa0inv: LinOp,
    pub kappa1: LinOp,
}

/// Validated material data with stored `C⁻¹` and `Θ₀⁻¹`.
#[derive(Clone, Debug)]
pub struct MaterialData {
    f: MaterialFields,
    cel_inv: LinOp,
    theta0_inv: LinOp,
}

pub const SELFADJOINT_TOL: f64 = 1e-12;

fn expect_op(op: &LinOp, src: &Space, dst: &Space, name: &str) -> Result<()> {
    if same_space(op.src(), src) && same_space(op.dst(), dst) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{name} must map {} -> {}, got {op:?}",
            src.label(),
            dst.label()
        )))
    }
}

fn expect_selfadjoint(op: &LinOp, name: &str) -> Result<()> {
    let r = selfadjoint_residual(op);
    if r > SELFADJOINT_TOL {
        return Err(Error::Hypothesis {
            name: name.into(),
            detail: format!("selfadjointness residual {r:.3e}"),
        });
    }
    Ok(())
}

impl MaterialData {
    /// Checks shapes against `layout`, selfadjointness of `ρ*, C, ε, μ, γ₀, Θ₀, κ₁`,
    /// `ρ*, C ≫ 0` and invertibility of `C` and `Θ₀`.
    pub fn new(f: MaterialFields, layout: &SystemLayout) -> Result<Self> {
        let (d, s, v, sc) = (layout.displacement(), layout.sym(), layout.vector(), layout.scalar());
        expect_op(&f.rho_star, d, d, "rho_star")?;
        expect_op(&f.cel, s, s, "C")?;
        expect_op(&f.e, v, s, "e")?;
        expect_op(&f.lambda, sc, s, "lambda")?;
        expect_op(&f.p, sc, v, "p")?;
        for (op, name) in [
            (&f.eps, "eps"),
            (&f.mu, "mu"),
            (&f.sigma, "sigma"),
            (&f.kappa0inv, "kappa0inv"),
            (&f.kappa1, "kappa1"),
        ] {
            expect_op(op, v, v, name)?;
        }
        expect_op(&f.theta0, sc, sc, "theta0")?;
        expect_op(&f.gamma0, sc, sc, "gamma0")?;
        for (op, name) in [
            (&f.rho_star, "rho_star"),
            (&f.cel, "C"),
            (&f.eps, "eps"),
            (&f.mu, "mu"),
            (&f.gamma0, "gamma0"),
            (&f.theta0, "theta0"),
            (&f.kappa1, "kappa1"),
        ] {
            expect_selfadjoint(op, name)?;
        }
        for (op, name) in [(&f.rho_star, "rho_star"), (&f.cel, "C")] {
            let pc = positivity_constant(op)?;
            if !(pc > POSITIVITY_TOL) {
                return Err(Error::Hypothesis {
                    name: format!("{name} >> 0"),
                    detail: format!("positivity constant {pc:.3e}"),
                });
            }
        }
        let cel_inv = real_part(&inverse_named(&f.cel, "C")?)?;
        let theta0_inv = inverse_named(&f.theta0, "theta0")?;
        Ok(MaterialData { f, cel_inv, theta0_inv })
    }

    pub fn fields(&self) -> &MaterialFields {
        &self.f
    }

    pub fn cel_inv(&self) -> &LinOp {
        &self.cel_inv
    }

    pub fn theta0_inv(&self) -> &LinOp {
        &self.theta0_inv
    }

    /// `α_m = Θ₀⁻¹ γ₀`.
    pub fn alpha_m(&self) -> Result<LinOp> {
        self.theta0_inv.compose(&self.f.gamma0)
    }

    /// `C⁻¹e`.
    pub fn cinv_e(&self) -> Result<LinOp> {
        self.cel_inv.compose(&self.f.e)
    }

    /// `C⁻¹λΘ₀`.
    pub fn cinv_lambda_theta(&self) -> Result<LinOp> {
        self.cel_inv.compose(&self.f.lambda)?.compose(&self.f.theta0)
    }

    /// `e*C⁻¹λΘ₀`.
    pub fn y_coupling(&self) -> Result<LinOp> {
        adjoint(&self.f.e).compose(&self.cinv_lambda_theta()?)
    }

    /// `pΘ₀ + e*C⁻¹λΘ₀`.
    pub fn x_coupling(&self) -> Result<LinOp> {
        self.f.p.compose(&self.f.theta0)?.add(&self.y_coupling()?)
    }

    /// `ε + e*C⁻¹e`.
    pub fn eps_eff(&self) -> Result<LinOp> {
        self.f.eps.add(&adjoint(&self.f.e).compose(&self.cinv_e()?)?)
    }

    /// Same data with `ε` replaced; revalidated.
    pub fn with_eps(&self, eps: LinOp, layout: &SystemLayout) -> Result<Self> {
        let mut f = self.f.clone();
        f.eps = eps;
        MaterialData::new(f, layout)
    }

    pub fn with_sigma(&self, sigma: LinOp, layout: &SystemLayout) -> Result<Self> {
        let mut f = self.f.clone();
        f.sigma = sigma;
        MaterialData::new(f, layout)
    }
}

/// A coefficient given as one value or as one value per node (per dof on abstract
/// layouts).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Scalar(f64),
    Field(Vec<f64>),
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Scalar(v)
    }
}

/// Coefficients of a material; the default is the decoupled unit material
/// (`ρ* = C = ε = μ = Θ₀ = γ₀ = κ₀⁻¹ = κ₁ = 1`, `σ = e = λ = p = 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSpec {
    pub rho_star: Coefficient,
    pub cel: Coefficient,
    pub e: Coefficient,
    pub lambda: Coefficient,
    pub p: Coefficient,
    pub eps: Coefficient,
    pub mu: Coefficient,
    pub sigma: Coefficient,
    pub theta0: Coefficient,
    pub gamma0: Coefficient,
    pub kappa0inv: Coefficient,
    pub kappa1: Coefficient,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        let one = Coefficient::Scalar(1.0);
        let zero = Coefficient::Scalar(0.0);
        MaterialSpec {
            rho_star: one.clone(),
            cel: one.clone(),
            e: zero.clone(),
            lambda: zero.clone(),
            p: zero.clone(),
            eps: one.clone(),
            mu: one.clone(),
            sigma: zero.clone(),
            theta0: one.clone(),
            gamma0: one.clone(),
            kappa0inv: one.clone(),
            kappa1: one,
        }
    }
}

impl MaterialSpec {
    /// The scalar sample `C = 2, e = 1, λ = 1, p = 0.5, Θ₀ = 1, ε = 1, μ = 3, γ₀ = 2`.
    pub fn scalar_sample() -> Self {
        MaterialSpec {
            cel: 2.0.into(),
            e: 1.0.into(),
            lambda: 1.0.into(),
            p: 0.5.into(),
            mu: 3.0.into(),
            gamma0: 2.0.into(),
            ..Default::default()
        }
    }
}

fn per_dof(c: &Coefficient, space: &Space, nodes: Option<usize>, name: &str) -> Result<Vec<f64>> {
    let n = space.dim();
    match c {
        Coefficient::Scalar(v) => Ok(vec![*v; n]),
        Coefficient::Field(vals) => match nodes {
            Some(nn) if vals.len() == nn && nn > 0 => Ok((0..n).map(|i| vals[i % nn]).collect()),
            None if vals.len() == n => Ok(vals.clone()),
            _ => Err(Error::Dimension {
                context: format!("coefficient {name}"),
                expected: nodes.unwrap_or(n),
                found: vals.len(),
            }),
        },
    }
}

fn diag_op(c: &Coefficient, space: &Space, nodes: Option<usize>, name: &str) -> Result<LinOp> {
    let d = per_dof(c, space, nodes, name)?;
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition(format!("coefficient {name} is not finite")));
    }
    let m = CMat::from_diagonal(&CVec::from_iterator(d.len(), d.iter().map(|&x| C64::from(x))));
    LinOp::new(space.clone(), space.clone(), m)
}

fn node_values(c: &Coefficient, nodes: usize, name: &str) -> Result<Vec<f64>> {
    match c {
        Coefficient::Scalar(v) => Ok(vec![*v; nodes]),
        Coefficient::Field(vals) if vals.len() == nodes => Ok(vals.clone()),
        Coefficient::Field(vals) => Err(Error::Dimension {
            context: format!("coefficient {name}"),
            expected: nodes,
            found: vals.len(),
        }),
    }
}

fn scalar_only(c: &Coefficient, name: &str) -> Result<f64> {
    match c {
        Coefficient::Scalar(v) => Ok(*v),
        Coefficient::Field(_) => Err(Error::Precondition(format!(
            "coupling {name} must be a scalar on an abstract layout"
        ))),
    }
}

/// `rows x cols` matrix with ones on the leading diagonal.
fn rect_identity(src: &Space, dst: &Space, s: f64) -> Result<LinOp> {
    let m = RMat::from_fn(dst.dim(), src.dim(), |i, j| if i == j { s } else { 0.0 });
    LinOp::from_real(src.clone(), dst.clone(), &m)
}

impl MaterialFields {
    /// Broadcasts a `MaterialSpec`. On a mesh, couplings act with the unit vector `d = e_z`:
    /// `e E = e·sym(E ⊗ d)`, `λ θ = λ θ I`, `p θ = p θ d`. On an abstract layout they
    /// are scaled rectangular identities.
    pub fn from_spec(spec: &MaterialSpec, layout: &SystemLayout) -> Result<Self> {
        let nodes = match layout.kind() {
            LayoutKind::Mesh { nodes } => Some(nodes),
            LayoutKind::Abstract => None,
        };
        let (d, s, v, sc) = (layout.displacement(), layout.sym(), layout.vector(), layout.scalar());
        let (e, lambda, p) = match nodes {
            Some(n) => {
                let ev = node_values(&spec.e, n, "e")?;
                let lv = node_values(&spec.lambda, n, "lambda")?;
                let pv = node_values(&spec.p, n, "p")?;
                let mut em = RMat::zeros(6 * n, 3 * n);
                let mut lm = RMat::zeros(6 * n, n);
                let mut pm = RMat::zeros(3 * n, n);
                for node in 0..n {
                    for (c, &(j, k)) in SYM_PAIRS.iter().enumerate() {
                        // sym(E ⊗ e_z)_{jk} = (E_j δ_{k2} + E_k δ_{j2}) / 2
                        if k == 2 {
                            em[(c * n + node, j * n + node)] += 0.5 * ev[node];
                        }
                        if j == 2 {
                            em[(c * n + node, k * n + node)] += 0.5 * ev[node];
                        }
                        if j == k {
                            lm[(c * n + node, node)] = lv[node];
                        }
                    }
                    pm[(2 * n + node, node)] = pv[node];
                }
                (
                    LinOp::from_real(v.clone(), s.clone(), &em)?,
                    LinOp::from_real(sc.clone(), s.clone(), &lm)?,
                    LinOp::from_real(sc.clone(), v.clone(), &pm)?,
                )
            }
            None => (
                rect_identity(v, s, scalar_only(&spec.e, "e")?)?,
                rect_identity(sc, s, scalar_only(&spec.lambda, "lambda")?)?,
                rect_identity(sc, v, scalar_only(&spec.p, "p")?)?,
            ),
        };
        Ok(MaterialFields {
            rho_star: diag_op(&spec.rho_star, d, nodes, "rho_star")?,
            cel: diag_op(&spec.cel, s, nodes, "C")?,
            e,
            lambda,
            p,
            eps: diag_op(&spec.eps, v, nodes, "eps")?,
            mu: diag_op(&spec.mu, v, nodes, "mu")?,
            sigma: diag_op(&spec.sigma, v, nodes, "sigma")?,
            theta0: diag_op(&spec.theta0, sc, nodes, "theta0")?,
            gamma0: diag_op(&spec.gamma0, sc, nodes, "gamma0")?,
            kappa0inv: diag_op(&spec.kappa0inv, v, nodes, "kappa0inv")?,
            kappa1: diag_op(&spec.kappa1, v, nodes, "kappa1")?,
        })
    }
}

impl MaterialData {
    pub fn from_spec(spec: &MaterialSpec, layout: &SystemLayout) -> Result<Self> {
        MaterialData::new(MaterialFields::from_spec(spec, layout)?, layout)
    }

    /// Random data with `ρ*, C, Θ₀ ≫ 0`, non-negative `ε, μ, γ₀, κ₁`, accretive
    /// `σ, κ₀⁻¹` and couplings of size `coupling`.
    pub fn random<R: Rng>(layout: &SystemLayout, coupling: f64, rng: &mut R) -> Result<Self> {
        fn sym_pos<R: Rng>(sp: &Space, shift: f64, rng: &mut R) -> Result<LinOp> {
            real_part(&random_real_positive(sp, shift, rng))
        }
        fn coup<R: Rng>(src: &Space, dst: &Space, size: f64, rng: &mut R) -> LinOp {
            let n = src.dim().max(dst.dim()).max(1) as f64;
            random_real_linop(src, dst, rng).scale_real(size / n.sqrt())
        }
        fn acc<R: Rng>(sp: &Space, shift: f64, rng: &mut R) -> Result<LinOp> {
            let a = random_accretive(sp, shift, rng);
            // real coefficients keep real time stepping applicable
            LinOp::new(sp.clone(), sp.clone(), a.mat().map(|c| C64::from(c.re)))
        }
        let (d, s, v, sc) = (layout.displacement(), layout.sym(), layout.vector(), layout.scalar());
        if let LayoutKind::Mesh { nodes } = layout.kind() {
            return MaterialData::random_pointwise(layout, nodes, coupling, rng);
        }
        let f = MaterialFields {
            rho_star: sym_pos(d, 1.0, rng)?,
            cel: sym_pos(s, 1.0, rng)?,
            e: coup(v, s, coupling, rng),
            lambda: coup(sc, s, coupling, rng),
            p: coup(sc, v, coupling, rng),
            eps: sym_pos(v, 0.5, rng)?,
            mu: sym_pos(v, 1.0, rng)?,
            sigma: acc(v, 0.1, rng)?,
            theta0: sym_pos(sc, 1.0, rng)?,
            gamma0: sym_pos(sc, 1.0, rng)?,
            kappa0inv: acc(v, 0.1, rng)?,
            kappa1: sym_pos(v, 0.5, rng)?,
        };
        MaterialData::new(f, layout)
    }

    /// Mesh version of [`MaterialData::random`]: coefficients act node by node, coupling
    /// only the components at one node.
    fn random_pointwise<R: Rng>(layout: &SystemLayout, nodes: usize, coupling: f64, rng: &mut R) -> Result<Self> {
        fn pos<R: Rng>(n: usize, shift: f64, rng: &mut R) -> RMat {
            let x = random_rmat(n, n, rng);
            x.transpose() * &x / n as f64 + RMat::identity(n, n) * shift
        }
        fn skew<R: Rng>(n: usize, rng: &mut R) -> RMat {
            let y = random_rmat(n, n, rng);
            (&y - y.transpose()) * 0.5
        }
        let (d, s, v, sc) = (layout.displacement(), layout.sym(), layout.vector(), layout.scalar());
        let sym_pos = |sp: &Space, shift: f64, rng: &mut R| {
            real_part(&nodewise(sp, sp, nodes, |n, _| pos(n, shift, rng))?)
        };
        let rho_star = sym_pos(d, 1.0, rng)?;
        let cel = sym_pos(s, 1.0, rng)?;
        let coup = |src: &Space, dst: &Space, rng: &mut R| {
            nodewise(src, dst, nodes, |m, n| random_rmat(m, n, rng) * (coupling / (m.max(n) as f64).sqrt()))
        };
        let e = coup(v, s, rng)?;
        let lambda = coup(sc, s, rng)?;
        let p = coup(sc, v, rng)?;
        let acc = |sp: &Space, shift: f64, rng: &mut R| nodewise(sp, sp, nodes, |n, _| pos(n, shift, rng) + skew(n, rng));
        let f = MaterialFields {
            rho_star,
            cel,
            e,
            lambda,
            p,
            eps: sym_pos(v, 0.5, rng)?,
            mu: sym_pos(v, 1.0, rng)?,
            sigma: acc(v, 0.1, rng)?,
            theta0: sym_pos(sc, 1.0, rng)?,
            gamma0: sym_pos(sc, 1.0, rng)?,
            kappa0inv: acc(v, 0.1, rng)?,
            kappa1: sym_pos(v, 0.5, rng)?,
        };
        MaterialData::new(f, layout)
    }
}

/// Operator assembled from local `dst × src` blocks given in orthonormal coordinates,
/// `a = G_dst^{-1/2} P G_src^{1/2}` at each node; component `c` of node `k` sits at
/// index `c·nodes + k`.
fn nodewise(src: &Space, dst: &Space, nodes: usize, mut local: impl FnMut(usize, usize) -> RMat) -> Result<LinOp> {
    let (cs, cd) = (src.dim() / nodes, dst.dim() / nodes);
    let weights = |sp: &Space| sp.weights().map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; sp.dim()]);
    let (ws, wd) = (weights(src), weights(dst));
    let mut m = RMat::zeros(dst.dim(), src.dim());
    for node in 0..nodes {
        let p = local(cd, cs);
        for i in 0..cd {
            for j in 0..cs {
                let (r, c) = (i * nodes + node, j * nodes + node);
                m[(r, c)] = p[(i, j)] * (ws[c] / wd[r]).sqrt();
            }
        }
    }
    LinOp::from_real(src.clone(), dst.clone(), &m)
}

fn nz(op: LinOp) -> Option<LinOp> {
    if op.is_zero() {
        None
    } else {
        Some(op)
    }
}

/// `M₀` in the nine-slot layout: zero rows and columns on the τ-slots, the `C⁻¹e`
/// coupling between `T` and `H`, and exact selfadjointness (lower blocks are adjoints
/// of the upper ones, diagonal blocks are symmetrized).
pub fn assemble_m0(d: &MaterialData, layout: &SystemLayout) -> Result<BlockOp> {
    let f = d.fields();
    let cinv = d.cel_inv();
    let cinv_e = d.cinv_e()?;
    let cinv_lt = d.cinv_lambda_theta()?;
    let x = d.x_coupling()?;
    let lt = f.lambda.compose(&f.theta0)?;
    let theta_block = f.gamma0.add(&adjoint(&lt).compose(&cinv_lt)?)?;
    let mut m = BlockOp::zero(layout.spaces().to_vec(), layout.spaces().to_vec());
    let put = |m: &mut BlockOp, a: Slot, b: Slot, op: Option<LinOp>| m.set(a.index(), b.index(), op);
    put(&mut m, Slot::V, Slot::V, nz(real_part(&f.rho_star)?))?;
    put(&mut m, Slot::T, Slot::T, nz(cinv.clone()))?;
    put(&mut m, Slot::E, Slot::E, nz(real_part(&d.eps_eff()?)?))?;
    put(&mut m, Slot::H, Slot::H, nz(real_part(&f.mu)?))?;
    put(&mut m, Slot::Theta, Slot::Theta, nz(real_part(&theta_block)?))?;
    put(&mut m, Slot::Q, Slot::Q, nz(real_part(&f.kappa1)?))?;
    for (a, b, op) in [
        (Slot::T, Slot::H, cinv_e),
        (Slot::T, Slot::Theta, cinv_lt),
        (Slot::E, Slot::Theta, x),
    ] {
        if let Some(op) = nz(op) {
            put(&mut m, b, a, Some(adjoint(&op)))?;
            put(&mut m, a, b, Some(op))?;
        }
    }
    Ok(m)
}

/// Indices of the τ-slots in the order `(τ_T, τ_H, τ_q)` used by `K`.
pub const TAU_SLOTS: [Slot; 3] = [Slot::TauT, Slot::TauH, Slot::TauQ];

/// `M₁(z)`: `σ` at `E`, `κ₀⁻¹` at `q`, `K_ij(z)` on the τ-slots, zero elsewhere.
pub fn assemble_m1(d: &MaterialData, t: &BoundaryTriple, z: FrequencyPoint, layout: &SystemLayout) -> Result<BlockOp> {
    layout.check_triple(t)?;
    let k = k_matrix_formulas(t, z)?;
    let mut m = assemble_m1_static(d, layout)?;
    for (a, sa) in TAU_SLOTS.iter().enumerate() {
        for (b, sb) in TAU_SLOTS.iter().enumerate() {
            m.set(sa.index(), sb.index(), k.block(a, b).cloned().and_then(nz))?;
        }
    }
    Ok(m)
}

/// The `z`-independent part of `M₁`: `σ` and `κ₀⁻¹`.
pub fn assemble_m1_static(d: &MaterialData, layout: &SystemLayout) -> Result<BlockOp> {
    let f = d.fields();
    let mut m = BlockOp::zero(layout.spaces().to_vec(), layout.spaces().to_vec());
    m.set(Slot::E.index(), Slot::E.index(), nz(f.sigma.clone()))?;
    m.set(Slot::Q.index(), Slot::Q.index(), nz(f.kappa0inv.clone()))?;
    Ok(m)
}

/// Field values entering the constitutive relations.
#[derive(Clone, Debug)]
pub struct FieldState {
    /// `Grad u`, or a time-integrated surrogate; `None` when no displacement history
    /// is available.
    pub grad_u: Option<CVec>,
    pub e: CVec,
    pub h: CVec,
    /// Relative temperature `Θ₀⁻¹θ`.
    pub theta_rel: CVec,
}

#[derive(Clone, Debug)]
pub struct Fluxes {
    pub b: CVec,
    pub d: CVec,
    /// `None` when `Grad u` is unavailable.
    pub eta: Option<CVec>,
    /// Whether `D` includes the `e*Grad u` term.
    pub d_complete: bool,
}

/// `B = μH`, `D = e*Grad u + εE + pθ`, `η = λ*Grad u + p*E + α_m θ` with `θ = Θ₀θ̃`.
/// Without `Grad u`, `D` omits its first term and `η` is not returned.
pub fn reconstruct_fluxes(d: &MaterialData, s: &FieldState) -> Result<Fluxes> {
    let f = d.fields();
    let theta = f.theta0.apply(&s.theta_rel)?;
    let b = f.mu.apply(&s.h)?;
    let mut dd = f.eps.apply(&s.e)? + f.p.apply(&theta)?;
    let eta = match &s.grad_u {
        Some(g) => {
            dd += adjoint(&f.e).apply(g)?;
            Some(adjoint(&f.lambda).apply(g)? + adjoint(&f.p).apply(&s.e)? + d.alpha_m()?.apply(&theta)?)
        }
        None => None,
    };
    Ok(Fluxes {
        b,
        d: dd,
        eta,
        d_complete: s.grad_u.is_some(),
    })
}

/// `(m₀,₄₄, m₀,₅₅, μ − e*C⁻¹e)`.
#[derive(Clone, Debug)]
pub struct SchurBlocks {
    pub m44: LinOp,
    pub m55: LinOp,
    pub mu_minus: LinOp,
}

/// `μ⁻ = μ − e*C⁻¹e`, `m₀,₅₅ = γ₀ − Y*(μ⁻)⁻¹Y`, `m₀,₄₄ = ε + e*C⁻¹e − X m₀,₅₅⁻¹ X*` with
/// `Y = e*C⁻¹λΘ₀` and `X = pΘ₀ + Y`.
pub fn schur_m44_m55(d: &MaterialData) -> Result<SchurBlocks> {
    let f = d.fields();
    let mu_minus = real_part(&f.mu.sub(&adjoint(&f.e).compose(&d.cinv_e()?)?)?)?;
    let mm_inv = inverse_named(&mu_minus, "mu - e*C^-1 e").map_err(|e| Error::Hypothesis {
        name: "mu - e*C^-1 e invertible".into(),
        detail: e.to_string(),
    })?;
    let y = d.y_coupling()?;
    let m55 = real_part(&f.gamma0.sub(&adjoint(&y).compose(&mm_inv)?.compose(&y)?)?)?;
    let m55_inv = inverse_named(&m55, "m0_55").map_err(|e| Error::Hypothesis {
        name: "m0_55 invertible".into(),
        detail: e.to_string(),
    })?;
    let x = d.x_coupling()?;
    let m44 = real_part(&d.eps_eff()?.sub(&x.compose(&m55_inv)?.compose(&adjoint(&x))?)?)?;
    Ok(SchurBlocks { m44, m55, mu_minus })
}

/// The `ε` making `m₀,₄₄ = 0`: `X m₀,₅₅⁻¹ X* − e*C⁻¹e`.
pub fn eddy_current_eps(d: &MaterialData) -> Result<LinOp> {
    let s = schur_m44_m55(d)?;
    let x = d.x_coupling()?;
    let m55_inv = inverse_named(&s.m55, "m0_55")?;
    let f = d.fields();
    real_part(&x.compose(&m55_inv)?.compose(&adjoint(&x))?.sub(&adjoint(&f.e).compose(&d.cinv_e()?)?)?)
}

/// `γ₀′` of the chain without intermediate permutations.
#[derive(Clone, Debug)]
pub struct GammaPrime {
    pub gamma0_prime: LinOp,
    /// That chain divides by `ε + e*C⁻¹e` and so excludes `ε = −e*C⁻¹e`.
    pub excludes_eddy_current: bool,
}

/// `γ₀′ = γ₀ − Y*(μ − e*C⁻¹e)⁻¹Y − X*(ε + e*C⁻¹e)⁻¹X`.
pub fn eddy_gamma0_prime(d: &MaterialData) -> Result<GammaPrime> {
    let f = d.fields();
    let mu_minus = f.mu.sub(&adjoint(&f.e).compose(&d.cinv_e()?)?)?;
    let mm_inv = inverse_named(&mu_minus, "mu - e*C^-1 e").map_err(|e| Error::Hypothesis {
        name: "mu - e*C^-1 e invertible".into(),
        detail: e.to_string(),
    })?;
    let ee_inv = inverse_named(&d.eps_eff()?, "eps + e*C^-1 e").map_err(|e| Error::Hypothesis {
        name: "eps + e*C^-1 e invertible".into(),
        detail: e.to_string(),
    })?;
    let y = d.y_coupling()?;
    let x = d.x_coupling()?;
    let g = f
        .gamma0
        .sub(&adjoint(&y).compose(&mm_inv)?.compose(&y)?)?
        .sub(&adjoint(&x).compose(&ee_inv)?.compose(&x)?)?;
    Ok(GammaPrime {
        gamma0_prime: real_part(&g)?,
        excludes_eddy_current: true,
    })
}

/// Largest component dimension for which inertia is tracked along the chain.
pub const INERTIA_DIM_CAP: usize = 800;

/// Output of [`congruence_chain`].
#[derive(Clone, Debug)]
pub struct ChainResult {
    /// The fully reduced operator in the order `(v, T, H, E, θ̃, τ_T, τ_H, τ_q, q)`.
    pub reduced: BlockOp,
    /// `(νμ⁻, νm₀,₄₄ + Re σ, νm₀,₅₅)`.
    pub final_diag: [LinOp; 3],
    pub log: CongruenceLog,
}

fn permutation_step(a: &BlockOp, perm: &[usize]) -> Result<(BlockOp, CongruenceStep)> {
    let out = permute_congruence(a, perm)?;
    let step = CongruenceStep {
        kind: StepKind::Permutation { perm: perm.to_vec() },
        factors: Vec::new(),
        inertia: None,
    };
    Ok((out, step))
}

fn max_component_dim(a: &BlockOp) -> usize {
    a.components()
        .iter()
        .map(|c| c.iter().map(|&i| a.rows()[i].dim()).sum::<usize>())
        .max()
        .unwrap_or(0)
}

/// `νM₀ + Re M₁(z)`.
pub fn shifted_operator(d: &MaterialData, t: &BoundaryTriple, layout: &SystemLayout, z: FrequencyPoint) -> Result<BlockOp> {
    let m0 = assemble_m0(d, layout)?;
    let m1 = assemble_m1(d, t, z, layout)?;
    m0.scale(C64::from(z.nu())).add(&m1.real_part()?)
}

/// Replays the reduction of `νM₀ + Re M₁(z)`: a permutation to the order
/// `(v, E, T, H, θ̃, τ, q)`, a permutation bringing `T` first, a Gauss step on `T`, a
/// permutation to `(H, E, θ̃)`, and Gauss steps on `H` and `θ̃`.
pub fn congruence_chain(d: &MaterialData, t: &BoundaryTriple, layout: &SystemLayout, z: FrequencyPoint) -> Result<ChainResult> {
    let start = shifted_operator(d, t, layout, z)?;
    let track = max_component_dim(&start) <= INERTIA_DIM_CAP;
    let mut log = CongruenceLog::default();
    if track {
        log.initial = Some(inertia(&start)?);
    }
    use Slot::*;
    let first: Vec<usize> = [V, E, T, H, Theta, TauT, TauH, TauQ, Q].iter().map(|s| s.index()).collect();
    let (a, s) = permutation_step(&start, &first)?;
    log_step(&mut log, s, &a, track)?;
    let (a, s) = permutation_step(&a, &[0, 2, 1, 3, 4, 5, 6, 7, 8])?;
    log_step(&mut log, s, &a, track)?;
    let (a, s) = gauss_step(&a, 1).map_err(|e| hypothesis("C^-1 pivot", e))?;
    log_step(&mut log, s, &a, track)?;
    let (a, s) = permutation_step(&a, &[0, 1, 3, 2, 4, 5, 6, 7, 8])?;
    log_step(&mut log, s, &a, track)?;
    let (a, s) = gauss_step(&a, 2).map_err(|e| hypothesis("mu - e*C^-1 e pivot", e))?;
    log_step(&mut log, s, &a, track)?;
    let (a, s) = gauss_step(&a, 4).map_err(|e| hypothesis("m0_55 pivot", e))?;
    log_step(&mut log, s, &a, track)?;
    let final_diag = [a.block_or_zero(2, 2), a.block_or_zero(3, 3), a.block_or_zero(4, 4)];
    Ok(ChainResult {
        reduced: a,
        final_diag,
        log,
    })
}

fn hypothesis(name: &str, e: Error) -> Error {
    match e {
        Error::Pivot { detail, .. } => Error::Hypothesis {
            name: name.into(),
            detail,
        },
        other => other,
    }
}

/// Search parameters for `ν_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    /// First sampled `ν`.
    pub nu0: f64,
    /// Number of doublings tried after `nu0`.
    pub max_doublings: u32,
    /// Relative width at which bisection stops (3 significant digits).
    pub rel_precision: f64,
    /// Evaluate at this `ν` only instead of searching.
    pub fixed_nu: Option<f64>,
    pub margin_tol: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            nu0: 1e-2,
            max_doublings: 40,
            rel_precision: 5e-4,
            fixed_nu: None,
            margin_tol: POSITIVITY_TOL,
        }
    }
}

impl SearchParams {
    pub fn fixed(nu: f64) -> Self {
        SearchParams {
            fixed_nu: Some(nu),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargin {
    pub name: String,
    /// Positivity constant, or `1 − ‖α_b‖/ν` for the frequency gate; `None` when the
    /// operator could not be formed.
    pub margin: Option<f64>,
    pub holds: bool,
    pub nu_dependent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZPositivity {
    pub z: FrequencyPoint,
    pub positivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectRoute {
    /// `min_z positivity_constant(νM₀ + Re M₁(z))` over the sample grid.
    pub c: f64,
    pub per_z: Vec<ZPositivity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub nu0: f64,
    pub evaluated: Vec<(f64, bool)>,
}

/// Well-posedness certificate. A rejection is a certificate with `accepted = false`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub accepted: bool,
    /// `ν` at which the conditions were evaluated (`ν_min` on acceptance).
    pub nu: f64,
    pub nu_min: Option<f64>,
    pub c: Option<f64>,
    pub conditions: Vec<ConditionMargin>,
    /// Non-negativity of `ρ*, ε, μ, C, γ₀`; reported, not enforced.
    pub nonnegativity: Vec<ConditionMargin>,
    pub violated: Vec<String>,
    pub worst_condition: Option<String>,
    pub schur_route: bool,
    pub direct_route: Option<DirectRoute>,
    pub routes_consistent: Option<bool>,
    pub boundary_bounds: Option<PositivityBounds>,
    pub chain: Option<CongruenceSummary>,
    pub chain_error: Option<String>,
    pub z_samples: Vec<FrequencyPoint>,
    pub z_sampling: String,
    pub search: SearchTrace,
}

impl Certificate {
    /// Recomputes the acceptance invariants: `c > 0` and every margin above tolerance.
    pub fn validate(&self) -> Result<()> {
        if !self.accepted {
            return Ok(());
        }
        match self.c {
            Some(c) if c > POSITIVITY_TOL => {}
            other => return Err(Error::Uncertified(format!("accepted certificate with c = {other:?}"))),
        }
        if let Some(bad) = self.conditions.iter().find(|c| !c.holds || c.margin.is_none_or(|m| m <= 0.0)) {
            return Err(Error::Uncertified(format!("condition {} fails in an accepted certificate", bad.name)));
        }
        Ok(())
    }
}

struct Precomputed {
    fixed: Vec<ConditionMargin>,
    m44: Option<LinOp>,
    sigma: LinOp,
    kappa1: LinOp,
    kappa0inv: LinOp,
    alpha_norm: f64,
    tol: f64,
}

fn margin(name: &str, m: Option<f64>, tol: f64, nu_dependent: bool) -> ConditionMargin {
    ConditionMargin {
        name: name.into(),
        margin: m,
        holds: m.is_some_and(|v| v > tol),
        nu_dependent,
    }
}

pub const COND_RHO: &str = "rho_star >> 0";
pub const COND_C: &str = "C >> 0";
pub const COND_M55: &str = "m0_55 >> 0";
pub const COND_MU_MINUS: &str = "mu - e*C^-1 e >> 0";
pub const COND_M44: &str = "nu m0_44 + sigma >> 0";
pub const COND_KAPPA: &str = "nu kappa1 + kappa0^-1 >> 0";
pub const COND_ALPHA: &str = "nu > |alpha_b|";

impl Precomputed {
    fn new(d: &MaterialData, t: &BoundaryTriple, tol: f64) -> Result<Self> {
        let f = d.fields();
        let pc = |op: &LinOp| positivity_constant(op).ok();
        let mut fixed = vec![
            margin(COND_RHO, pc(&f.rho_star), tol, false),
            margin(COND_C, pc(&f.cel), tol, false),
        ];
        let mu_minus = real_part(&f.mu.sub(&adjoint(&f.e).compose(&d.cinv_e()?)?)?)?;
        let schur = schur_m44_m55(d).ok();
        fixed.push(margin(COND_M55, schur.as_ref().and_then(|s| pc(&s.m55)), tol, false));
        fixed.push(margin(COND_MU_MINUS, pc(&mu_minus), tol, false));
        Ok(Precomputed {
            fixed,
            m44: schur.map(|s| s.m44),
            sigma: f.sigma.clone(),
            kappa1: f.kappa1.clone(),
            kappa0inv: f.kappa0inv.clone(),
            alpha_norm: t.alpha_norm(),
            tol,
        })
    }

    fn at(&self, nu: f64) -> Result<Vec<ConditionMargin>> {
        let mut out = self.fixed.clone();
        let m44 = match &self.m44 {
            Some(m) => Some(positivity_constant(&m.scale_real(nu).add(&self.sigma)?)?),
            None => None,
        };
        out.push(margin(COND_M44, m44, self.tol, true));
        let k = positivity_constant(&self.kappa1.scale_real(nu).add(&self.kappa0inv)?)?;
        out.push(margin(COND_KAPPA, Some(k), self.tol, true));
        out.push(margin(COND_ALPHA, Some(1.0 - self.alpha_norm / nu), self.tol, true));
        Ok(out)
    }
}

fn all_hold(c: &[ConditionMargin]) -> bool {
    c.iter().all(|m| m.holds)
}

fn nonnegativity(d: &MaterialData) -> Vec<ConditionMargin> {
    let f = d.fields();
    [
        ("rho_star >= 0", &f.rho_star),
        ("eps >= 0", &f.eps),
        ("mu >= 0", &f.mu),
        ("C >= 0", &f.cel),
        ("gamma0 >= 0", &f.gamma0),
    ]
    .into_iter()
    .map(|(n, op)| {
        let m = positivity_constant(op).ok();
        ConditionMargin {
            name: n.into(),
            margin: m,
            holds: m.is_some_and(|v| v > -POSITIVITY_TOL),
            nu_dependent: false,
        }
    })
    .collect()
}

/// `min_z positivity_constant(νM₀ + Re M₁(z))` over `zs`, evaluated per connected
/// component; components without τ-slots are computed once.
pub fn direct_positivity(d: &MaterialData, t: &BoundaryTriple, layout: &SystemLayout, zs: &[FrequencyPoint]) -> Result<DirectRoute> {
    let mut per_z = Vec::with_capacity(zs.len());
    let mut static_min: Option<f64> = None;
    let tau: Vec<usize> = TAU_SLOTS.iter().map(|s| s.index()).collect();
    for &z in zs {
        let op = shifted_operator(d, t, layout, z)?;
        let mut best = f64::INFINITY;
        let mut stat = f64::INFINITY;
        for comp in op.components() {
            let has_tau = comp.iter().any(|i| tau.contains(i));
            if !has_tau && static_min.is_some() {
                continue;
            }
            let f = op.flatten_sub(&comp, &comp);
            if f.src().dim() == 0 {
                continue;
            }
            let pc = positivity_constant(&f)?;
            if has_tau {
                best = best.min(pc);
            } else {
                stat = stat.min(pc);
            }
        }
        let s = *static_min.get_or_insert(stat);
        per_z.push(ZPositivity {
            z,
            positivity: best.min(s),
        });
    }
    let c = per_z.iter().map(|p| p.positivity).fold(f64::INFINITY, f64::min);
    Ok(DirectRoute { c, per_z })
}

/// Searches `ν ∈ {ν₀ 2^k}` for the first `ν` at which every condition holds, refines
/// by bisection, and evaluates the direct route, the chain and the boundary bounds at
/// `ν_min`.
pub fn certify(d: &MaterialData, t: &BoundaryTriple, layout: &SystemLayout, params: &SearchParams) -> Result<Certificate> {
    layout.check_triple(t)?;
    if !(params.nu0 > 0.0) || !(params.rel_precision > 0.0) {
        return Err(Error::Precondition("nu0 and rel_precision must be positive".into()));
    }
    let pre = Precomputed::new(d, t, params.margin_tol)?;
    let mut trace = SearchTrace {
        nu0: params.nu0,
        evaluated: Vec::new(),
    };
    let eval = |nu: f64, trace: &mut SearchTrace| -> Result<(bool, Vec<ConditionMargin>)> {
        let c = pre.at(nu)?;
        let ok = all_hold(&c);
        trace.evaluated.push((nu, ok));
        Ok((ok, c))
    };

    let mut found: Option<(f64, Vec<ConditionMargin>)> = None;
    let mut last: (f64, Vec<ConditionMargin>) = (params.nu0, Vec::new());
    if let Some(nu) = params.fixed_nu {
        if !(nu > 0.0) {
            return Err(Error::Precondition(format!("nu = {nu} must be positive")));
        }
        let (ok, c) = eval(nu, &mut trace)?;
        if ok {
            found = Some((nu, c));
        } else {
            last = (nu, c);
        }
    } else if pre.fixed.iter().all(|m| m.holds) {
        let mut prev_fail: Option<f64> = None;
        for k in 0..=params.max_doublings {
            let nu = params.nu0 * 2f64.powi(k as i32);
            let (ok, c) = eval(nu, &mut trace)?;
            if ok {
                found = Some((nu, c));
                break;
            }
            prev_fail = Some(nu);
            last = (nu, c);
        }
        if let (Some((mut hi, mut hc)), Some(mut lo)) = (found.clone(), prev_fail) {
            while (hi - lo) > params.rel_precision * hi {
                let mid = 0.5 * (lo + hi);
                let (ok, c) = eval(mid, &mut trace)?;
                if ok {
                    hi = mid;
                    hc = c;
                } else {
                    lo = mid;
                }
            }
            found = Some((hi, hc));
        }
    } else {
        let (_, c) = eval(params.nu0, &mut trace)?;
        last = (params.nu0, c);
    }

    let z_sampling = "Re z = nu, Im z in {0, +-1, +-10, +-100, +-1000} * (1 + |alpha_b|)".to_string();
    let nonneg = nonnegativity(d);
    let Some((nu, conditions)) = found else {
        let (nu, conditions) = last;
        let violated: Vec<String> = conditions.iter().filter(|c| !c.holds).map(|c| c.name.clone()).collect();
        let worst = conditions
            .iter()
            .filter(|c| !c.holds)
            .min_by(|a, b| a.margin.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.margin.unwrap_or(f64::NEG_INFINITY)))
            .map(|c| c.name.clone());
        let zs = if nu > pre.alpha_norm { z_samples(nu, pre.alpha_norm)? } else { Vec::new() };
        return Ok(Certificate {
            accepted: false,
            nu,
            nu_min: None,
            c: None,
            conditions,
            nonnegativity: nonneg,
            violated,
            worst_condition: worst,
            schur_route: false,
            direct_route: None,
            routes_consistent: None,
            boundary_bounds: None,
            chain: None,
            chain_error: None,
            z_samples: zs,
            z_sampling,
            search: trace,
        });
    };

    let zs = z_samples(nu, pre.alpha_norm)?;
    let direct = direct_positivity(d, t, layout, &zs)?;
    let consistent = direct.c > POSITIVITY_TOL;
    let bounds = b_positivity_bounds(t, nu)?;
    let (chain, chain_error) = match congruence_chain(d, t, layout, zs[0]) {
        Ok(r) => (Some(r.log.summary()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let accepted = consistent && chain_error.is_none();
    let mut violated = Vec::new();
    if !consistent {
        violated.push("direct positivity".to_string());
    }
    Ok(Certificate {
        accepted,
        nu,
        nu_min: Some(nu),
        c: Some(direct.c),
        conditions,
        nonnegativity: nonneg,
        worst_condition: violated.first().cloned(),
        violated,
        schur_route: true,
        direct_route: Some(direct),
        routes_consistent: Some(consistent),
        boundary_bounds: Some(bounds),
        chain,
        chain_error,
        z_samples: zs,
        z_sampling,
        search: trace,
    })
}

/// Smallest eigenvalue of the real part, for reporting.
pub fn lowest_eigenvalue(op: &LinOp) -> Result<f64> {
    Ok(hermitian_eigenvalues(&real_part(op)?.euclidean_form())
        .first()
        .copied()
        .unwrap_or(f64::INFINITY))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop, clippy::too_many_arguments)]
mod tests {
    use super::*;
    use crate::impedance::TripleScales;
    use crate::random::seeded;

    fn scalar_layout() -> (SystemLayout, BoundaryTriple) {
        let t = BoundaryTriple::synthetic([1, 1, 1], 0, TripleScales::default());
        let t = BoundaryTriple::trivial(t.bd_grad(), t.bd_curl(), t.bd_sgrad());
        let dims = FieldDims {
            displacement: 1,
            sym: 1,
            vector: 1,
            scalar: 1,
        };
        (SystemLayout::abstract_layout(dims, &t), t)
    }

    fn s(op: &LinOp) -> f64 {
        op.mat()[(0, 0)].re
    }

    /// Direct elimination of the 4×4 scalar matrix on `(E, T, H, θ̃)`.
    fn scalar_oracle(c: f64, e: f64, l: f64, p: f64, th: f64, eps: f64, mu: f64, g: f64) -> [f64; 3] {
        let ci = 1.0 / c;
        let mut m = [
            [eps + e * ci * e, 0.0, 0.0, p * th + e * ci * l * th],
            [0.0, ci, ci * e, ci * l * th],
            [0.0, e * ci, mu, 0.0],
            [p * th + e * ci * l * th, ci * l * th, 0.0, g + th * l * ci * l * th],
        ];
        // eliminate T, then H, then θ̃
        for piv in [1usize, 2, 3] {
            let pv = m[piv][piv];
            let row = m[piv];
            for i in 0..4 {
                if i == piv {
                    continue;
                }
                let f = m[i][piv] / pv;
                for j in 0..4 {
                    m[i][j] -= f * row[j];
                }
            }
            for j in 0..4 {
                if j != piv {
                    m[piv][j] = 0.0;
                    m[j][piv] = 0.0;
                }
            }
            let _ = piv;
        }
        [m[2][2], m[0][0], m[3][3]]
    }

    #[test]
    fn scalar_sample_values() {
        let (layout, _) = scalar_layout();
        let d = MaterialData::from_spec(&MaterialSpec::scalar_sample(), &layout).unwrap();
        let m0 = assemble_m0(&d, &layout).unwrap();
        assert!((s(m0.block(Slot::Theta.index(), Slot::Theta.index()).unwrap()) - 2.5).abs() < 1e-15);
        assert!((s(m0.block(Slot::E.index(), Slot::E.index()).unwrap()) - 1.5).abs() < 1e-15);
        let sb = schur_m44_m55(&d).unwrap();
        assert!((s(&sb.mu_minus) - 2.5).abs() < 1e-15);
        assert!((s(&sb.m55) - 1.9).abs() < 1e-14);
        assert!((s(&sb.m44) - (1.5 - 1.0 / 1.9)).abs() < 1e-14);
        assert!((s(&sb.m44) - 0.973684).abs() < 1e-6);
        let g = eddy_gamma0_prime(&d).unwrap();
        assert!((s(&g.gamma0_prime) - (2.0 - 0.25 / 2.5 - 1.0 / 1.5)).abs() < 1e-14);
        assert!(g.excludes_eddy_current);
        let st = FieldState {
            grad_u: Some(CVec::from_element(1, C64::from(1.0))),
            e: CVec::from_element(1, C64::from(1.0)),
            h: CVec::from_element(1, C64::from(0.0)),
            theta_rel: CVec::from_element(1, C64::from(1.0)),
        };
        let fl = reconstruct_fluxes(&d, &st).unwrap();
        assert!((fl.d[0].re - 2.5).abs() < 1e-15);
        assert_eq!(fl.b[0].re, 0.0);
        // η = λ + p + γ₀ with Θ₀ = 1
        assert!((fl.eta.unwrap()[0].re - 3.5).abs() < 1e-15);
    }

    #[test]
    fn chain_matches_oracle_and_schur() {
        let (layout, t) = scalar_layout();
        let d = MaterialData::from_spec(&MaterialSpec::scalar_sample(), &layout).unwrap();
        let z = FrequencyPoint::from_parts(1.0, 0.0).unwrap();
        let r = congruence_chain(&d, &t, &layout, z).unwrap();
        let o = scalar_oracle(2.0, 1.0, 1.0, 0.5, 1.0, 1.0, 3.0, 2.0);
        let got: Vec<f64> = r.final_diag.iter().map(s).collect();
        for k in 0..3 {
            assert!((got[k] - o[k]).abs() < 1e-10, "{got:?} vs {o:?}");
        }
        assert!((got[0] - 2.5).abs() < 1e-12 && (got[2] - 1.9).abs() < 1e-12);
        assert_eq!(r.log.inertia_constant(), Some(true));
        assert_eq!(r.log.steps.len(), 6);
    }

    #[test]
    fn chain_on_random_mesh_data() {
        let c = crate::mesh::build_complex([2, 2, 2], [1.0; 3]).unwrap();
        let bd = MeshBdSpaces::build(&c).unwrap();
        let layout = SystemLayout::from_mesh(&c, &bd);
        let t = BoundaryTriple::from_mesh(&c, &bd, TripleScales { q: 0.3, alpha: 0.2, beta: 0.3 }).unwrap();
        let mut rng = seeded(5);
        let d = MaterialData::random(&layout, 0.3, &mut rng).unwrap();
        let nu = 2.0;
        let r = congruence_chain(&d, &t, &layout, FrequencyPoint::from_parts(nu, 0.0).unwrap()).unwrap();
        let sb = schur_m44_m55(&d).unwrap();
        let re_sigma = real_part(&d.fields().sigma).unwrap();
        let expect = [
            sb.mu_minus.scale_real(nu),
            sb.m44.scale_real(nu).add(&re_sigma).unwrap(),
            sb.m55.scale_real(nu),
        ];
        for k in 0..3 {
            let diff = (r.final_diag[k].mat() - expect[k].mat()).norm() / expect[k].frobenius().max(1.0);
            assert!(diff <= 1e-12, "block {k}: {diff:e}");
        }
        assert_eq!(r.log.inertia_constant(), Some(true));
    }

    #[test]
    fn decoupled_limit_is_block_diagonal() {
        let (layout, t) = scalar_layout();
        let d = MaterialData::from_spec(&MaterialSpec::default(), &layout).unwrap();
        let m0 = assemble_m0(&d, &layout).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                if i != j {
                    assert!(m0.block(i, j).is_none());
                }
            }
            let expect_zero = Slot::ALL[i].is_tau();
            assert_eq!(m0.block(i, i).is_none(), expect_zero);
        }
        let z = FrequencyPoint::from_parts(0.5, 1.0).unwrap();
        let m1 = assemble_m1(&d, &t, z, &layout).unwrap();
        for &s in &TAU_SLOTS {
            assert_eq!(m1.block(s.index(), s.index()).unwrap().mat()[(0, 0)], C64::from(1.0));
        }
        let r = congruence_chain(&d, &t, &layout, FrequencyPoint::from_parts(1.0, 0.0).unwrap()).unwrap();
        let got: Vec<f64> = r.final_diag.iter().map(s).collect();
        assert_eq!(got, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn m1_projector_on_tau_slots() {
        let (layout, t) = scalar_layout();
        let spec = MaterialSpec {
            kappa0inv: 0.0.into(),
            ..Default::default()
        };
        let d = MaterialData::from_spec(&spec, &layout).unwrap();
        let m1 = assemble_m1(&d, &t, FrequencyPoint::from_parts(1.0, 3.0).unwrap(), &layout).unwrap();
        let f = m1.flatten();
        let mut expect = CMat::zeros(9, 9);
        for s in TAU_SLOTS {
            expect[(s.index(), s.index())] = C64::from(1.0);
        }
        assert_eq!(f.mat(), &expect);
    }

    #[test]
    fn m0_exactly_selfadjoint_on_mesh() {
        let c = crate::mesh::build_complex([2, 3, 2], [1.0, 1.5, 0.7]).unwrap();
        let bd = MeshBdSpaces::build(&c).unwrap();
        let layout = SystemLayout::from_mesh(&c, &bd);
        let spec = MaterialSpec {
            e: 0.4.into(),
            lambda: 0.3.into(),
            p: 0.2.into(),
            ..MaterialSpec::scalar_sample()
        };
        let d = MaterialData::from_spec(&spec, &layout).unwrap();
        let m0 = assemble_m0(&d, &layout).unwrap();
        assert_eq!(m0.selfadjoint_residual(), 0.0);
        let mut rng = seeded(1);
        let d = MaterialData::random(&layout, 0.3, &mut rng).unwrap();
        assert_eq!(assemble_m0(&d, &layout).unwrap().selfadjoint_residual(), 0.0);
    }

    #[test]
    fn m1_pattern_matches_display() {
        let t = BoundaryTriple::synthetic([2, 3, 4], 8, TripleScales::default());
        let layout = SystemLayout::abstract_layout(
            FieldDims {
                displacement: 3,
                sym: 4,
                vector: 3,
                scalar: 2,
            },
            &t,
        );
        let mut rng = seeded(2);
        let d = MaterialData::random(&layout, 0.5, &mut rng).unwrap();
        let z = FrequencyPoint::from_parts(2.0 * t.alpha_norm() + 1.0, 0.5).unwrap();
        let m1 = assemble_m1(&d, &t, z, &layout).unwrap();
        for a in Slot::ALL {
            for b in Slot::ALL {
                let expect = (a == b && matches!(a, Slot::E | Slot::Q)) || (a.is_tau() && b.is_tau());
                assert_eq!(m1.is_nonzero(a.index(), b.index()), expect, "{a} {b}");
            }
        }
    }

    #[test]
    fn certify_decoupled_unit() {
        let (layout, t) = scalar_layout();
        let d = MaterialData::from_spec(&MaterialSpec::default(), &layout).unwrap();
        let cert = certify(&d, &t, &layout, &SearchParams::fixed(0.5)).unwrap();
        assert!(cert.accepted);
        assert!((cert.c.unwrap() - 0.5).abs() < 1e-12);
        cert.validate().unwrap();
        let cert = certify(&d, &t, &layout, &SearchParams::fixed(3.0)).unwrap();
        assert!((cert.c.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eddy_current_rejects_then_accepts() {
        let (layout, t) = scalar_layout();
        let d = MaterialData::from_spec(&MaterialSpec::scalar_sample(), &layout).unwrap();
        let eps = eddy_current_eps(&d).unwrap();
        assert!((s(&eps) - (1.0 / 1.9 - 0.5)).abs() < 1e-15);
        let d = d.with_eps(eps, &layout).unwrap();
        assert!(s(&schur_m44_m55(&d).unwrap().m44).abs() <= 1e-12);
        let cert = certify(&d, &t, &layout, &SearchParams::default()).unwrap();
        assert!(!cert.accepted);
        assert_eq!(cert.worst_condition.as_deref(), Some(COND_M44));
        let sigma = LinOp::identity(layout.vector());
        let d = d.with_sigma(sigma, &layout).unwrap();
        let cert = certify(&d, &t, &layout, &SearchParams::default()).unwrap();
        assert!(cert.accepted, "{:?}", cert.violated);
    }

    #[test]
    fn alpha_gate_forces_large_nu() {
        let t = BoundaryTriple::synthetic([2, 2, 2], 3, TripleScales { q: 0.5, alpha: 10.0, beta: 0.5 });
        let layout = SystemLayout::abstract_layout(
            FieldDims {
                displacement: 2,
                sym: 2,
                vector: 2,
                scalar: 2,
            },
            &t,
        );
        let d = MaterialData::from_spec(&MaterialSpec::default(), &layout).unwrap();
        let cert = certify(&d, &t, &layout, &SearchParams::default()).unwrap();
        assert!(cert.accepted);
        let nu = cert.nu_min.unwrap();
        assert!((10.0..10.1).contains(&nu), "{nu}");
        let cert = certify(&d, &t, &layout, &SearchParams::fixed(5.0)).unwrap();
        assert!(!cert.accepted);
        assert_eq!(cert.violated, vec![COND_ALPHA.to_string()]);
    }

    #[test]
    fn certificate_is_sound_on_random_data() {
        let mut accepted = 0;
        for seed in 0..10u64 {
            let mut rng = seeded(seed);
            let t = BoundaryTriple::synthetic([2, 3, 2], seed, TripleScales { q: 0.5, alpha: 0.5, beta: 0.5 });
            let layout = SystemLayout::abstract_layout(
                FieldDims {
                    displacement: 3,
                    sym: 4,
                    vector: 3,
                    scalar: 2,
                },
                &t,
            );
            let d = MaterialData::random(&layout, 0.3, &mut rng).unwrap();
            let cert = certify(&d, &t, &layout, &SearchParams::default()).unwrap();
            if !cert.accepted {
                continue;
            }
            accepted += 1;
            let c = cert.c.unwrap();
            for z in &cert.z_samples {
                let op = shifted_operator(&d, &t, &layout, *z).unwrap().flatten();
                assert!(positivity_constant(&op).unwrap() >= c - 1e-10);
            }
            cert.validate().unwrap();
        }
        assert!(accepted >= 5);
    }

    #[test]
    fn data_validation() {
        let (layout, _) = scalar_layout();
        let bad = MaterialSpec {
            cel: (-1.0).into(),
            ..Default::default()
        };
        assert!(matches!(MaterialData::from_spec(&bad, &layout), Err(Error::Hypothesis { .. })));
        let bad = MaterialSpec {
            theta0: 0.0.into(),
            ..Default::default()
        };
        assert!(MaterialData::from_spec(&bad, &layout).is_err());
        let bad = MaterialSpec {
            eps: Coefficient::Field(vec![1.0, 2.0]),
            ..Default::default()
        };
        assert!(matches!(MaterialData::from_spec(&bad, &layout), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mesh_couplings() {
        let c = crate::mesh::build_complex([2, 2, 2], [1.0; 3]).unwrap();
        let bd = MeshBdSpaces::build(&c).unwrap();
        let layout = SystemLayout::from_mesh(&c, &bd);
        let spec = MaterialSpec {
            e: 2.0.into(),
            p: 0.5.into(),
            lambda: 3.0.into(),
            ..Default::default()
        };
        let f = MaterialFields::from_spec(&spec, &layout).unwrap();
        let n = c.num_nodes();
        // E = e_z at node 0 -> sym(e_z ⊗ e_z) = zz component
        let mut ev = CVec::zeros(3 * n);
        ev[2 * n] = C64::from(1.0);
        let t = f.e.apply(&ev).unwrap();
        assert_eq!(t[2 * n].re, 2.0);
        assert_eq!(t.iter().filter(|x| x.norm() > 0.0).count(), 1);
        // E = e_x -> xz component 1/2 · e
        let mut ev = CVec::zeros(3 * n);
        ev[0] = C64::from(1.0);
        let t = f.e.apply(&ev).unwrap();
        assert_eq!(t[4 * n].re, 1.0);
        let th = CVec::from_element(n, C64::from(1.0));
        let l = f.lambda.apply(&th).unwrap();
        assert_eq!(l[0].re, 3.0);
        assert_eq!(l[3 * n].re, 0.0);
        let p = f.p.apply(&th).unwrap();
        assert_eq!(p[2 * n].re, 0.5);
        assert_eq!(p[0].re, 0.0);
    }
}
