//! Discrete boundary data spaces.
//!
//! `BD(D)` is the orthogonal complement of the homogeneous coordinate subspace of `D`
//! in the graph inner product `⟨u, v⟩ + ⟨Du, Dv⟩`. Its basis is the graph-harmonic
//! extension of the boundary coordinates, orthonormalized in the graph product.

use std::sync::Arc;

use crate::error::{dim_check, Error, Result};
use crate::linspace::{adjoint, operator_norm, skew_part, HSpace, LinOp, RMat, RVec, Space};
use crate::mesh::{ibp_boundary_pairing, OpName, Sparse, SpatialComplex};

#[derive(Clone, Debug)]
pub struct BDSpace {
    op: OpName,
    parent: Space,
    graph: Sparse,
    basis: RMat,
    graph_basis: RMat,
    space: Space,
    homog: Vec<usize>,
}

fn graph_gram(complex: &SpatialComplex, name: OpName) -> Sparse {
    let d = complex.op(name);
    let w_dom = complex.domain(name).weights().expect("mesh spaces are diagonal");
    let w_cod = complex.codomain(name).weights().expect("mesh spaces are diagonal");
    let wd = Sparse::from_triplets(
        d.nrows(),
        d.nrows(),
        w_cod.iter().enumerate().map(|(i, &w)| (i, i, w)).collect(),
    );
    let dtwd = d.transpose().mul(&wd).mul(d);
    let mut t = dtwd.triplets();
    t.extend(w_dom.iter().enumerate().map(|(i, &w)| (i, i, w)));
    Sparse::from_triplets(d.ncols(), d.ncols(), t)
}

/// Builds `BD(name)` on the complex.
pub fn bd_space(complex: &SpatialComplex, name: OpName) -> Result<BDSpace> {
    let parent = complex.domain(name).clone();
    let n = parent.dim();
    let graph = graph_gram(complex, name);
    let homog = complex.homog_dofs(name);
    let bnd = complex.boundary_dofs(name);
    let m = bnd.len();
    let g = graph.to_dense();

    // harmonic extension U = [X; I] with G_HH X = −G_HB
    let mut u = RMat::zeros(n, m);
    for (c, &b) in bnd.iter().enumerate() {
        u[(b, c)] = 1.0;
    }
    if !homog.is_empty() && m > 0 {
        let ghh = g.select_rows(&homog).select_columns(&homog);
        let ghb = g.select_rows(&homog).select_columns(&bnd);
        let chol = ghh.cholesky().ok_or_else(|| {
            Error::Numerical(format!("graph gram of {name} is not positive definite"))
        })?;
        let x = chol.solve(&(-ghb));
        for (r, &h) in homog.iter().enumerate() {
            for c in 0..m {
                u[(h, c)] = x[(r, c)];
            }
        }
    }
    let gu = &g * &u;
    let mgram = u.transpose() * &gu;
    let mgram = (&mgram + mgram.transpose()) * 0.5;
    let (basis, graph_basis) = if m == 0 {
        (RMat::zeros(n, 0), RMat::zeros(n, 0))
    } else {
        let chol = mgram
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("BD({name}) basis gram is singular")))?;
        let l = chol.l();
        // B = U L^{-T}:  B L^T = U  <=>  L B^T = U^T
        let bt = l
            .solve_lower_triangular(&u.transpose())
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let b = bt.transpose();
        let gb = &g * &b;
        (b, gb)
    };
    Ok(BDSpace {
        op: name,
        parent,
        graph,
        basis,
        graph_basis,
        space: HSpace::euclidean(m, format!("BD({name})")),
        homog,
    })
}

impl BDSpace {
    pub fn op(&self) -> OpName {
        self.op
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// The BD coordinate space (euclidean, since the basis is graph-orthonormal).
    pub fn space(&self) -> &Space {
        &self.space
    }

    /// The operator's domain field space with its L2 Gram.
    pub fn parent(&self) -> &Space {
        &self.parent
    }

    pub fn basis(&self) -> &RMat {
        &self.basis
    }

    pub fn graph_gram(&self) -> &Sparse {
        &self.graph
    }

    pub fn homog_dofs(&self) -> &[usize] {
        &self.homog
    }

    pub fn graph_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let gv = self.graph.matvec(v);
        u.iter().zip(&gv).map(|(a, b)| a * b).sum()
    }

    pub fn graph_norm(&self, u: &[f64]) -> f64 {
        self.graph_inner(u, u).max(0.0).sqrt()
    }

    /// `ι x`.
    pub fn inject(&self, x: &[f64]) -> Vec<f64> {
        (&self.basis * RVec::from_column_slice(x)).as_slice().to_vec()
    }

    /// `ι* u`, the graph adjoint of the injection.
    pub fn trace(&self, u: &[f64]) -> Vec<f64> {
        (self.graph_basis.transpose() * RVec::from_column_slice(u)).as_slice().to_vec()
    }

    /// `ι*` as an operator from the L2 field space to BD coordinates.
    pub fn trace_op(&self) -> LinOp {
        LinOp::from_real(self.parent.clone(), self.space.clone(), &self.graph_basis.transpose())
            .expect("trace shape")
    }

    /// `ι` as a coefficient map from BD coordinates into the field space.
    pub fn inject_op(&self) -> LinOp {
        LinOp::from_real(self.space.clone(), self.parent.clone(), &self.basis).expect("inject shape")
    }

    /// `‖ι*ι − I‖_max`.
    pub fn orthonormality_residual(&self) -> f64 {
        let m = self.dim();
        let p = self.graph_basis.transpose() * &self.basis;
        (p - RMat::identity(m, m)).amax()
    }

    /// Largest graph product between a basis vector and a homogeneous coordinate vector.
    pub fn complement_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for &h in &self.homog {
            for c in 0..self.dim() {
                worst = worst.max(self.graph_basis[(h, c)].abs());
            }
        }
        worst
    }

    /// Defect of the continuum characterization (`div grad u = u` and its analogues)
    /// on the free coordinates, relative to the largest basis entry.
    pub fn characterization_defect(&self, complex: &SpatialComplex) -> f64 {
        let d = complex.op(self.op);
        let dp = complex.op(self.op.partner());
        let sign = match self.op {
            OpName::Curl => 1.0,
            _ => -1.0,
        };
        let mut worst: f64 = 0.0;
        for c in 0..self.dim() {
            let col: Vec<f64> = self.basis.column(c).iter().copied().collect();
            let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let second = dp.matvec(&d.matvec(&col));
            for &h in &self.homog {
                worst = worst.max((col[h] + sign * second[h]).abs() / scale);
            }
        }
        worst
    }
}

/// `ιι* u`.
pub fn bd_project(space: &BDSpace, u: &[f64]) -> Result<Vec<f64>> {
    dim_check("bd_project", space.parent.dim(), u.len())?;
    Ok(space.inject(&space.trace(u)))
}

/// An induced map between boundary data spaces with structural diagnostics.
#[derive(Clone, Debug)]
pub struct BdMap {
    pub op: LinOp,
    /// `‖D_BD* D_BD − I‖`.
    pub unitarity_defect: f64,
    /// `‖S + S*‖` for the curl map; `None` otherwise.
    pub skew_defect: Option<f64>,
}

fn valid_pair(src: OpName, dst: OpName) -> bool {
    matches!(
        (src, dst),
        (OpName::Grad, OpName::Div)
            | (OpName::Div, OpName::Grad)
            | (OpName::Curl, OpName::Curl)
            | (OpName::SGrad, OpName::SDiv)
            | (OpName::SDiv, OpName::SGrad)
    )
}

/// `D_BD = ι*_dst D ι_src` for the operator `D` of `src`.
pub fn bd_map(src: &BDSpace, dst: &BDSpace, complex: &SpatialComplex) -> Result<BdMap> {
    if !valid_pair(src.op, dst.op) {
        return Err(Error::InvalidPair(src.op.to_string(), dst.op.to_string()));
    }
    let d = complex.op(src.op);
    dim_check("bd_map source", d.ncols(), src.parent.dim())?;
    dim_check("bd_map target", d.nrows(), dst.parent.dim())?;
    let mut db = RMat::zeros(d.nrows(), src.dim());
    for c in 0..src.dim() {
        let col: Vec<f64> = src.basis.column(c).iter().copied().collect();
        let y = d.matvec(&col);
        db.set_column(c, &RVec::from_vec(y));
    }
    let m = dst.graph_basis.transpose() * db;
    let op = LinOp::from_real(src.space.clone(), dst.space.clone(), &m)?;
    let dd = adjoint(&op).compose(&op)?;
    let unitarity_defect = operator_norm(&dd.sub(&LinOp::identity(src.space()))?);
    let skew_defect = if src.op == OpName::Curl {
        Some(op.add(&adjoint(&op))?.frobenius())
    } else {
        None
    };
    Ok(BdMap {
        op,
        unitarity_defect,
        skew_defect,
    })
}

/// The exactly skew part `(S − S*)/2` of a square BD map.
pub fn skew_symmetrize(op: &LinOp) -> Result<LinOp> {
    skew_part(op)
}

/// The two boundary data spaces of one Green formula.
#[derive(Clone, Debug)]
pub struct BdPair {
    /// Space of the first field (`grad`, `sgrad` or `curl`).
    pub primal: Arc<BDSpace>,
    /// Space of the second field (`div`, `sdiv` or `curl`).
    pub dual: Arc<BDSpace>,
}

impl BdPair {
    pub fn new(complex: &SpatialComplex, name: OpName) -> Result<Self> {
        let primal = Arc::new(bd_space(complex, name)?);
        let dual = if name.partner() == name {
            primal.clone()
        } else {
            Arc::new(bd_space(complex, name.partner())?)
        };
        Ok(BdPair { primal, dual })
    }

    pub fn from_spaces(primal: Arc<BDSpace>, dual: Arc<BDSpace>) -> Result<Self> {
        if primal.op.partner() != dual.op {
            return Err(Error::InvalidPair(primal.op.to_string(), dual.op.to_string()));
        }
        Ok(BdPair { primal, dual })
    }
}

/// `|b(u, U) − b(P u, P U)|` with `b` the Green boundary form of the pair and `P` the
/// projections onto the BD spaces; `big` lives in the dual operator's domain.
pub fn bd_ibp_residual(complex: &SpatialComplex, pair: &BdPair, big: &[f64], small: &[f64]) -> Result<f64> {
    let name = pair.primal.op;
    dim_check("bd_ibp_residual first field", pair.dual.parent.dim(), big.len())?;
    dim_check("bd_ibp_residual second field", pair.primal.parent.dim(), small.len())?;
    let full = ibp_boundary_pairing(complex, name, small, big)?;
    let pu = bd_project(&pair.primal, small)?;
    let pbig = bd_project(&pair.dual, big)?;
    let proj = ibp_boundary_pairing(complex, name, &pu, &pbig)?;
    Ok((full - proj).abs())
}

/// All five BD spaces of a complex.
#[derive(Clone, Debug)]
pub struct MeshBdSpaces {
    pub grad: Arc<BDSpace>,
    pub div: Arc<BDSpace>,
    pub curl: Arc<BDSpace>,
    pub sgrad: Arc<BDSpace>,
    pub sdiv: Arc<BDSpace>,
}

impl MeshBdSpaces {
    pub fn build(complex: &SpatialComplex) -> Result<Self> {
        Ok(MeshBdSpaces {
            grad: Arc::new(bd_space(complex, OpName::Grad)?),
            div: Arc::new(bd_space(complex, OpName::Div)?),
            curl: Arc::new(bd_space(complex, OpName::Curl)?),
            sgrad: Arc::new(bd_space(complex, OpName::SGrad)?),
            sdiv: Arc::new(bd_space(complex, OpName::SDiv)?),
        })
    }

    pub fn get(&self, name: OpName) -> &Arc<BDSpace> {
        match name {
            OpName::Grad => &self.grad,
            OpName::Div => &self.div,
            OpName::Curl => &self.curl,
            OpName::SGrad => &self.sgrad,
            OpName::SDiv => &self.sdiv,
        }
    }

    pub fn pair(&self, name: OpName) -> BdPair {
        BdPair {
            primal: self.get(name).clone(),
            dual: self.get(name.partner()).clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_complex;
    use crate::random::{random_rvec, seeded};

    #[test]
    fn chain_grad_has_two_dimensional_bd() {
        let c = SpatialComplex::chain(6, 1.0).unwrap();
        let bd = bd_space(&c, OpName::Grad).unwrap();
        assert_eq!(bd.dim(), 2);
        assert!(bd.orthonormality_residual() <= 1e-13);
        // the sdiv homogeneous subspace on a chain keeps only the off-axis couplings
        let full = bd_space(&c, OpName::SDiv).unwrap();
        assert_eq!(full.dim(), c.boundary_dofs(OpName::SDiv).len());
    }

    #[test]
    fn whole_space_homogeneous_gives_zero_bd() {
        // on a chain, curl has no tangential boundary components normal to x for the x-component
        let c = SpatialComplex::chain(4, 1.0).unwrap();
        let bd = bd_space(&c, OpName::Curl).unwrap();
        // x-components are all free: they never sit on a face of another axis
        let n = c.num_nodes();
        assert!(c.boundary_dofs(OpName::Curl).iter().all(|&d| d >= n));
        assert_eq!(bd.dim(), 2 * 2);
        let x: Vec<f64> = (0..3 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
        assert!(bd_project(&bd, &x).unwrap().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn grid_bd_dimensions_and_orthonormality() {
        let c = build_complex([4, 4, 4], [1.0; 3]).unwrap();
        let bd = bd_space(&c, OpName::Grad).unwrap();
        let boundary_nodes = c.num_nodes() - c.interior_node_count();
        assert_eq!(bd.dim(), boundary_nodes);
        assert!(bd.orthonormality_residual() <= 1e-12);
        assert!(bd.complement_residual() <= 1e-12);
        for name in OpName::ALL {
            let b = bd_space(&c, name).unwrap();
            assert_eq!(b.dim(), c.domain(name).dim() - c.homog_dim(name));
            assert!(b.orthonormality_residual() <= 1e-12, "{name}");
        }
    }

    #[test]
    fn projector_identities() {
        let c = build_complex([3, 3, 3], [1.0; 3]).unwrap();
        let mut rng = seeded(1);
        for name in OpName::ALL {
            let bd = bd_space(&c, name).unwrap();
            let n = bd.parent().dim();
            // homogeneous input projects to zero
            let mut h = random_rvec(n, &mut rng);
            c.restrict_to_homog(name, &mut h);
            let ph = bd_project(&bd, &h).unwrap();
            assert!(bd.graph_norm(&ph) <= 1e-12 * bd.graph_norm(&h).max(1.0));
            // range elements are fixed
            let x = random_rvec(bd.dim(), &mut rng);
            let ix = bd.inject(&x);
            let pix = bd_project(&bd, &ix).unwrap();
            let diff: Vec<f64> = ix.iter().zip(&pix).map(|(a, b)| a - b).collect();
            assert!(bd.graph_norm(&diff) <= 1e-12 * bd.graph_norm(&ix).max(1.0));
            // idempotence and graph-selfadjointness
            let u = random_rvec(n, &mut rng);
            let v = random_rvec(n, &mut rng);
            let pu = bd_project(&bd, &u).unwrap();
            let ppu = bd_project(&bd, &pu).unwrap();
            let d: Vec<f64> = pu.iter().zip(&ppu).map(|(a, b)| a - b).collect();
            assert!(bd.graph_norm(&d) <= 1e-12 * bd.graph_norm(&u));
            let pv = bd_project(&bd, &v).unwrap();
            let s1 = bd.graph_inner(&pu, &v);
            let s2 = bd.graph_inner(&u, &pv);
            assert!((s1 - s2).abs() <= 1e-12 * bd.graph_norm(&u) * bd.graph_norm(&v));
        }
    }

    fn direct_homog_projector(bd: &BDSpace, u: &[f64]) -> Vec<f64> {
        // P0 u = E (E^T G E)^{-1} E^T G u on the free coordinates
        let g = bd.graph_gram().to_dense();
        let h = bd.homog_dofs();
        let ghh = g.select_rows(h).select_columns(h);
        let gu = &g * RVec::from_column_slice(u);
        let rhs = RVec::from_iterator(h.len(), h.iter().map(|&i| gu[i]));
        let x = ghh.lu().solve(&rhs).unwrap();
        let mut out = vec![0.0; u.len()];
        for (r, &i) in h.iter().enumerate() {
            out[i] = x[r];
        }
        out
    }

    #[test]
    fn complementary_projectors_and_pythagoras() {
        let c = build_complex([3, 3, 3], [1.0, 0.8, 1.2]).unwrap();
        let mut rng = seeded(2);
        for name in OpName::ALL {
            let bd = bd_space(&c, name).unwrap();
            for _ in 0..5 {
                let u = random_rvec(bd.parent().dim(), &mut rng);
                let pu = bd_project(&bd, &u).unwrap();
                let p0 = direct_homog_projector(&bd, &u);
                let r: Vec<f64> = (0..u.len()).map(|i| u[i] - pu[i] - p0[i]).collect();
                assert!(bd.graph_norm(&r) <= 1e-12 * bd.graph_norm(&u), "{name}");
                let lhs = bd.graph_inner(&u, &u);
                let rhs = bd.graph_inner(&pu, &pu) + bd.graph_inner(&p0, &p0);
                assert!((lhs - rhs).abs() <= 1e-12 * lhs);
            }
        }
    }

    #[test]
    fn ibp_residual_for_all_pairs() {
        let c = build_complex([3, 3, 3], [1.0; 3]).unwrap();
        let mut rng = seeded(3);
        for name in [OpName::Grad, OpName::SGrad, OpName::Curl] {
            let pair = BdPair::new(&c, name).unwrap();
            for _ in 0..100 {
                let big = random_rvec(pair.dual.parent().dim(), &mut rng);
                let small = random_rvec(pair.primal.parent().dim(), &mut rng);
                assert!(bd_ibp_residual(&c, &pair, &big, &small).unwrap() <= 1e-12);
            }
            let mut hs = random_rvec(pair.primal.parent().dim(), &mut rng);
            c.restrict_to_homog(name, &mut hs);
            let big = random_rvec(pair.dual.parent().dim(), &mut rng);
            assert!(bd_ibp_residual(&c, &pair, &big, &hs).unwrap() <= 1e-13);
            let mut hb = random_rvec(pair.dual.parent().dim(), &mut rng);
            c.restrict_to_homog(name.partner(), &mut hb);
            let small = random_rvec(pair.primal.parent().dim(), &mut rng);
            assert!(bd_ibp_residual(&c, &pair, &hb, &small).unwrap() <= 1e-13);
        }
    }

    #[test]
    fn bd_maps_and_defects() {
        let c = build_complex([3, 3, 3], [1.0; 3]).unwrap();
        let spaces = MeshBdSpaces::build(&c).unwrap();
        let g = bd_map(&spaces.grad, &spaces.div, &c).unwrap();
        assert!(g.unitarity_defect.is_finite());
        assert!(g.skew_defect.is_none());
        let s = bd_map(&spaces.curl, &spaces.curl, &c).unwrap();
        let defect = s.skew_defect.unwrap();
        assert!(defect.is_finite());
        let sk = skew_symmetrize(&s.op).unwrap();
        assert_eq!(sk.add(&adjoint(&sk)).unwrap().frobenius(), 0.0);
        assert!(matches!(
            bd_map(&spaces.grad, &spaces.curl, &c),
            Err(Error::InvalidPair(_, _))
        ));
    }

    #[test]
    fn characterization_holds_on_free_coordinates() {
        let c = build_complex([3, 3, 3], [1.0; 3]).unwrap();
        for name in OpName::ALL {
            let bd = bd_space(&c, name).unwrap();
            assert!(bd.characterization_defect(&c) <= 1e-10, "{name}");
        }
    }
}
