//! Discrete spatial complex on a box.
//!
//! All fields are collocated at the `(nx+1)(ny+1)(nz+1)` grid nodes. Along each axis
//! the derivative is the second-order summation-by-parts operator `D = W⁻¹ Q`, with
//! `W = h·diag(½, 1, …, 1, ½)` and `Q + Qᵀ = diag(−1, 0, …, 0, 1)`. The 3D operators
//! are Kronecker products of these, so the axis derivatives commute exactly and the
//! Green formulas hold with the lumped trapezoidal Grams.

use std::fmt;
use std::str::FromStr;

use crate::error::{dim_check, Error, Result};
use crate::linspace::{HSpace, LinOp, RMat, Space};

/// Compressed sparse row matrix with real entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Sparse {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Sparse {
    /// Duplicates are summed in input order.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            assert!(r < nrows && c < ncols, "triplet out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Sparse {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Sparse::from_triplets(nrows, ncols, Vec::new())
    }

    pub fn identity(n: usize) -> Self {
        Sparse::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out.push((r, c, v));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension");
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Sparse {
        Sparse::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect(),
        )
    }

    /// Row-by-row product; each entry accumulates its terms in column order of `self`.
    pub fn mul(&self, rhs: &Sparse) -> Sparse {
        assert_eq!(self.ncols, rhs.nrows, "product dimension");
        let mut acc = vec![0.0; rhs.ncols];
        let mut touched = vec![false; rhs.ncols];
        let mut trips = Vec::new();
        for r in 0..self.nrows {
            let mut cols = Vec::new();
            for (k, a) in self.row(r) {
                for (c, b) in rhs.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for c in cols {
                trips.push((r, c, acc[c]));
                acc[c] = 0.0;
                touched[c] = false;
            }
        }
        Sparse::from_triplets(self.nrows, rhs.ncols, trips)
    }

    pub fn to_dense(&self) -> RMat {
        let mut m = RMat::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// The five differential operators of the complex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpName {
    Grad,
    Div,
    Curl,
    /// Symmetrized gradient of a displacement field.
    SGrad,
    /// Row-wise divergence of a symmetric matrix field.
    SDiv,
}

impl OpName {
    pub const ALL: [OpName; 5] = [OpName::Grad, OpName::Div, OpName::Curl, OpName::SGrad, OpName::SDiv];

    /// The operator appearing with this one in its Green formula.
    pub fn partner(self) -> OpName {
        match self {
            OpName::Grad => OpName::Div,
            OpName::Div => OpName::Grad,
            OpName::Curl => OpName::Curl,
            OpName::SGrad => OpName::SDiv,
            OpName::SDiv => OpName::SGrad,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpName::Grad => "grad",
            OpName::Div => "div",
            OpName::Curl => "curl",
            OpName::SGrad => "sgrad",
            OpName::SDiv => "sdiv",
        }
    }
}

impl fmt::Display for OpName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(OpName::Grad),
            "div" => Ok(OpName::Div),
            "curl" => Ok(OpName::Curl),
            "sgrad" | "Grad" => Ok(OpName::SGrad),
            "sdiv" | "Div" => Ok(OpName::SDiv),
            other => Err(Error::UnknownOperator(other.to_string())),
        }
    }
}

/// Index of the symmetric component `(j, k)` in the six-component layout
/// `xx, yy, zz, xy, xz, yz`.
pub fn sym_index(j: usize, k: usize) -> usize {
    let (a, b) = if j <= k { (j, k) } else { (k, j) };
    match (a, b) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        (1, 2) => 5,
        _ => panic!("component out of range"),
    }
}

pub const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Discrete complex on `[0, Lx] × [0, Ly] × [0, Lz]`.
#[derive(Clone, Debug)]
pub struct SpatialComplex {
    cells: [usize; 3],
    lengths: [f64; 3],
    n: usize,
    /// Bitmask per node: bit `2a` for the lower face of axis `a`, `2a+1` for the upper.
    faces: Vec<u8>,
    scalar: Space,
    vector: Space,
    displacement: Space,
    sym: Space,
    deriv: [Sparse; 3],
    grad: Sparse,
    div: Sparse,
    curl: Sparse,
    sgrad: Sparse,
    sdiv: Sparse,
}

fn sbp_1d(n: usize, h: f64) -> Vec<(usize, usize, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let mut t = Vec::new();
    let inv = 1.0 / h;
    let half = 0.5 / h;
    t.push((0, 0, -inv));
    t.push((0, 1, inv));
    for i in 1..n {
        t.push((i, i - 1, -half));
        t.push((i, i + 1, half));
    }
    t.push((n, n - 1, -inv));
    t.push((n, n, inv));
    t
}

/// Builds the complex; every axis needs at least two cells.
pub fn build_complex(cells: [usize; 3], lengths: [f64; 3]) -> Result<SpatialComplex> {
    if cells.iter().any(|&c| c < 2) {
        return Err(Error::Precondition(format!("all cell counts must be >= 2, got {cells:?}")));
    }
    SpatialComplex::new(cells, lengths)
}

impl SpatialComplex {
    /// A cell count of zero collapses the axis to one node of thickness `length`.
    fn new(cells: [usize; 3], lengths: [f64; 3]) -> Result<Self> {
        if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Precondition(format!("lengths must be positive, got {lengths:?}")));
        }
        let np = [cells[0] + 1, cells[1] + 1, cells[2] + 1];
        let n = np[0] * np[1] * np[2];
        let h: Vec<f64> = (0..3)
            .map(|a| if cells[a] == 0 { lengths[a] } else { lengths[a] / cells[a] as f64 })
            .collect();
        let cell_volume = h[0] * h[1] * h[2];

        let mut faces = vec![0u8; n];
        let mut weights = vec![0.0; n];
        for k in 0..np[2] {
            for j in 0..np[1] {
                for i in 0..np[0] {
                    let idx = i + np[0] * (j + np[1] * k);
                    let ijk = [i, j, k];
                    let mut w = cell_volume;
                    for a in 0..3 {
                        if cells[a] == 0 {
                            continue;
                        }
                        if ijk[a] == 0 {
                            faces[idx] |= 1 << (2 * a);
                            w *= 0.5;
                        }
                        if ijk[a] == cells[a] {
                            faces[idx] |= 1 << (2 * a + 1);
                            w *= 0.5;
                        }
                    }
                    weights[idx] = w;
                }
            }
        }

        let deriv: [Sparse; 3] = std::array::from_fn(|a| {
            let d1 = sbp_1d(cells[a], h[a]);
            let mut t = Vec::with_capacity(n * 3);
            for k in 0..np[2] {
                for j in 0..np[1] {
                    for i in 0..np[0] {
                        let ijk = [i, j, k];
                        let row = i + np[0] * (j + np[1] * k);
                        for &(r, c, v) in d1.iter().filter(|e| e.0 == ijk[a]) {
                            debug_assert_eq!(r, ijk[a]);
                            let mut o = ijk;
                            o[a] = c;
                            t.push((row, o[0] + np[0] * (o[1] + np[1] * o[2]), v));
                        }
                    }
                }
            }
            Sparse::from_triplets(n, n, t)
        });

        let scalar = HSpace::diagonal(weights.clone(), "S")?;
        let vec_w: Vec<f64> = (0..3).flat_map(|_| weights.iter().copied()).collect();
        let vector = HSpace::diagonal(vec_w.clone(), "V")?;
        let displacement = HSpace::diagonal(vec_w, "S3")?;
        let sym_w: Vec<f64> = SYM_PAIRS
            .iter()
            .flat_map(|&(j, k)| {
                let f = if j == k { 1.0 } else { 2.0 };
                weights.iter().map(move |w| w * f)
            })
            .collect();
        let sym = HSpace::diagonal(sym_w, "SYM")?;

        // block assembly: (row block, col block, coefficient, derivative axis)
        let blocks = |rb: usize, cb: usize, entries: &[(usize, usize, f64, usize)]| {
            let mut t = Vec::new();
            for &(r, c, coef, a) in entries {
                for (row, col, v) in deriv[a].triplets() {
                    t.push((r * n + row, c * n + col, coef * v));
                }
            }
            Sparse::from_triplets(rb * n, cb * n, t)
        };
        let grad = blocks(3, 1, &[(0, 0, 1.0, 0), (1, 0, 1.0, 1), (2, 0, 1.0, 2)]);
        let div = blocks(1, 3, &[(0, 0, 1.0, 0), (0, 1, 1.0, 1), (0, 2, 1.0, 2)]);
        let curl = blocks(
            3,
            3,
            &[
                (0, 2, 1.0, 1),
                (0, 1, -1.0, 2),
                (1, 0, 1.0, 2),
                (1, 2, -1.0, 0),
                (2, 1, 1.0, 0),
                (2, 0, -1.0, 1),
            ],
        );
        let mut sg = Vec::new();
        for (c, &(j, k)) in SYM_PAIRS.iter().enumerate() {
            if j == k {
                sg.push((c, j, 1.0, j));
            } else {
                sg.push((c, j, 0.5, k));
                sg.push((c, k, 0.5, j));
            }
        }
        let sgrad = blocks(6, 3, &sg);
        let mut sd = Vec::new();
        for j in 0..3 {
            for k in 0..3 {
                sd.push((j, sym_index(j, k), 1.0, k));
            }
        }
        let sdiv = blocks(3, 6, &sd);

        Ok(SpatialComplex {
            cells,
            lengths,
            n,
            faces,
            scalar,
            vector,
            displacement,
            sym,
            deriv,
            grad,
            div,
            curl,
            sgrad,
            sdiv,
        })
    }

    /// One-dimensional chain of `nodes` nodes; the other two axes are collapsed.
    pub fn chain(nodes: usize, length: f64) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Precondition("a chain needs at least two nodes".into()));
        }
        SpatialComplex::new([nodes - 1, 0, 0], [length, 1.0, 1.0])
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn nodes_per_axis(&self) -> [usize; 3] {
        [self.cells[0] + 1, self.cells[1] + 1, self.cells[2] + 1]
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let np = self.nodes_per_axis();
        i + np[0] * (j + np[1] * k)
    }

    pub fn node_coords(&self, idx: usize) -> [f64; 3] {
        let np = self.nodes_per_axis();
        let ijk = [idx % np[0], (idx / np[0]) % np[1], idx / (np[0] * np[1])];
        std::array::from_fn(|a| {
            if self.cells[a] == 0 {
                0.0
            } else {
                self.lengths[a] * ijk[a] as f64 / self.cells[a] as f64
            }
        })
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        self.faces[idx] != 0
    }

    /// Whether the node lies on a face normal to `axis`.
    pub fn on_face(&self, idx: usize, axis: usize) -> bool {
        self.faces[idx] & (0b11 << (2 * axis)) != 0
    }

    pub fn face_bits(&self, idx: usize) -> u8 {
        self.faces[idx]
    }

    pub fn interior_node_count(&self) -> usize {
        self.faces.iter().filter(|&&f| f == 0).count()
    }

    pub fn scalar_space(&self) -> &Space {
        &self.scalar
    }

    pub fn vector_space(&self) -> &Space {
        &self.vector
    }

    pub fn displacement_space(&self) -> &Space {
        &self.displacement
    }

    pub fn sym_space(&self) -> &Space {
        &self.sym
    }

    /// Axis derivative `D_a` on scalar nodes.
    pub fn derivative(&self, axis: usize) -> &Sparse {
        &self.deriv[axis]
    }

    pub fn op(&self, name: OpName) -> &Sparse {
        match name {
            OpName::Grad => &self.grad,
            OpName::Div => &self.div,
            OpName::Curl => &self.curl,
            OpName::SGrad => &self.sgrad,
            OpName::SDiv => &self.sdiv,
        }
    }

    pub fn domain(&self, name: OpName) -> &Space {
        match name {
            OpName::Grad => &self.scalar,
            OpName::Div => &self.vector,
            OpName::Curl => &self.vector,
            OpName::SGrad => &self.displacement,
            OpName::SDiv => &self.sym,
        }
    }

    pub fn codomain(&self, name: OpName) -> &Space {
        match name {
            OpName::Grad => &self.vector,
            OpName::Div => &self.scalar,
            OpName::Curl => &self.vector,
            OpName::SGrad => &self.sym,
            OpName::SDiv => &self.displacement,
        }
    }

    /// The operator as a dense `LinOp` between its field spaces.
    pub fn linop(&self, name: OpName) -> LinOp {
        LinOp::from_real(self.domain(name).clone(), self.codomain(name).clone(), &self.op(name).to_dense())
            .expect("operator shape matches its spaces")
    }

    /// Coordinates forced to zero in the homogeneous subspace of `name`, ascending.
    pub fn boundary_dofs(&self, name: OpName) -> Vec<usize> {
        let n = self.n;
        let mut out = Vec::new();
        match name {
            OpName::Grad => out.extend((0..n).filter(|&i| self.is_boundary_node(i))),
            OpName::SGrad => {
                for c in 0..3 {
                    out.extend((0..n).filter(|&i| self.is_boundary_node(i)).map(|i| c * n + i));
                }
            }
            OpName::Div => {
                for c in 0..3 {
                    out.extend((0..n).filter(|&i| self.on_face(i, c)).map(|i| c * n + i));
                }
            }
            OpName::Curl => {
                for c in 0..3 {
                    out.extend(
                        (0..n)
                            .filter(|&i| (0..3).any(|b| b != c && self.on_face(i, b)))
                            .map(|i| c * n + i),
                    );
                }
            }
            OpName::SDiv => {
                for (c, &(j, k)) in SYM_PAIRS.iter().enumerate() {
                    out.extend(
                        (0..n)
                            .filter(|&i| self.on_face(i, j) || self.on_face(i, k))
                            .map(|i| c * n + i),
                    );
                }
            }
        }
        out
    }

    /// Free coordinates of the homogeneous subspace of `name`, ascending.
    pub fn homog_dofs(&self, name: OpName) -> Vec<usize> {
        let total = self.domain(name).dim();
        let mut mask = vec![true; total];
        for b in self.boundary_dofs(name) {
            mask[b] = false;
        }
        (0..total).filter(|&i| mask[i]).collect()
    }

    pub fn homog_dim(&self, name: OpName) -> usize {
        self.domain(name).dim() - self.boundary_dofs(name).len()
    }

    /// Zeroes the boundary coordinates of `name` in place.
    pub fn restrict_to_homog(&self, name: OpName, x: &mut [f64]) {
        for b in self.boundary_dofs(name) {
            x[b] = 0.0;
        }
    }

    pub fn sample_scalar(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        (0..self.n).map(|i| f(self.node_coords(i))).collect()
    }

    /// Samples a component-major field with `comps` components.
    pub fn sample_components(&self, comps: usize, f: impl Fn([f64; 3]) -> Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; comps * self.n];
        for i in 0..self.n {
            let v = f(self.node_coords(i));
            for c in 0..comps {
                out[c * self.n + i] = v[c];
            }
        }
        out
    }
}

/// The discrete Green boundary term `⟨D u, w⟩ ± ⟨u, D′ w⟩` (minus sign for curl).
pub fn ibp_boundary_pairing(complex: &SpatialComplex, name: OpName, u: &[f64], w: &[f64]) -> Result<f64> {
    let d = complex.op(name);
    let dp = complex.op(name.partner());
    dim_check("pairing first argument", complex.domain(name).dim(), u.len())?;
    dim_check("pairing second argument", complex.codomain(name).dim(), w.len())?;
    let du = d.matvec(u);
    let dpw = dp.matvec(w);
    let a = complex.codomain(name).inner_real(&du, w);
    let b = complex.domain(name).inner_real(u, &dpw);
    Ok(if name == OpName::Curl { a - b } else { a + b })
}

/// Same as [`ibp_boundary_pairing`] with the operator given by name.
pub fn ibp_boundary_pairing_named(complex: &SpatialComplex, name: &str, u: &[f64], w: &[f64]) -> Result<f64> {
    ibp_boundary_pairing(complex, name.parse()?, u, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_rvec, seeded};

    fn grids() -> Vec<SpatialComplex> {
        vec![
            build_complex([2, 2, 2], [1.0, 1.0, 1.0]).unwrap(),
            build_complex([3, 3, 3], [1.0, 2.0, 0.5]).unwrap(),
            build_complex([4, 4, 4], [1.0, 1.0, 1.0]).unwrap(),
            build_complex([2, 3, 4], [0.7, 1.3, 2.1]).unwrap(),
        ]
    }

    fn homog_random(c: &SpatialComplex, name: OpName, rng: &mut crate::random::TestRng) -> Vec<f64> {
        let mut x = random_rvec(c.domain(name).dim(), rng);
        c.restrict_to_homog(name, &mut x);
        x
    }

    #[test]
    fn degenerate_sizes_rejected() {
        assert!(build_complex([1, 2, 2], [1.0; 3]).is_err());
        assert!(build_complex([2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        assert!(SpatialComplex::chain(1, 1.0).is_err());
    }

    #[test]
    fn sparse_product_and_transpose() {
        let a = Sparse::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0), (1, 1, 1.0)]);
        let b = Sparse::from_triplets(3, 2, vec![(0, 1, 1.0), (1, 0, 2.0), (2, 0, -1.0)]);
        let p = a.mul(&b).to_dense();
        assert_eq!(p, a.to_dense() * b.to_dense());
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn opname_parsing() {
        assert_eq!("Grad".parse::<OpName>().unwrap(), OpName::SGrad);
        assert!(matches!("rot".parse::<OpName>(), Err(Error::UnknownOperator(_))));
    }

    #[test]
    fn grad_of_constant_vanishes() {
        for c in grids() {
            let u = vec![3.5; c.num_nodes()];
            assert!(c.op(OpName::Grad).matvec(&u).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mimetic_identities_are_exact() {
        for c in grids() {
            let cg = c.op(OpName::Curl).mul(c.op(OpName::Grad));
            assert!(cg.values().iter().all(|&v| v == 0.0), "curl grad");
            let dc = c.op(OpName::Div).mul(c.op(OpName::Curl));
            assert!(dc.values().iter().all(|&v| v == 0.0), "div curl");
        }
        let c = build_complex([3, 3, 3], [1.0; 3]).unwrap();
        let cg = c.op(OpName::Curl).mul(c.op(OpName::Grad));
        let mut rng = seeded(1);
        for _ in 0..50 {
            let u = random_rvec(c.num_nodes(), &mut rng);
            assert!(cg.matvec(&u).iter().all(|&v| v == 0.0));
            let seq = c.op(OpName::Curl).matvec(&c.op(OpName::Grad).matvec(&u));
            assert!(seq.iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn axis_derivatives_commute_exactly() {
        let c = build_complex([3, 4, 2], [1.0, 1.0, 1.0]).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(
                    c.derivative(a).mul(c.derivative(b)).to_dense(),
                    c.derivative(b).mul(c.derivative(a)).to_dense()
                );
            }
        }
    }

    #[test]
    fn duality_on_homogeneous_pairs() {
        let mut rng = seeded(2);
        for c in grids() {
            for name in [OpName::Grad, OpName::Curl, OpName::SGrad] {
                for _ in 0..100 {
                    // homogeneous first argument, arbitrary second
                    let u = homog_random(&c, name, &mut rng);
                    let w = random_rvec(c.codomain(name).dim(), &mut rng);
                    assert!(ibp_boundary_pairing(&c, name, &u, &w).unwrap().abs() <= 1e-13);
                    // arbitrary first argument, homogeneous second
                    let u = random_rvec(c.domain(name).dim(), &mut rng);
                    let w = homog_random(&c, name.partner(), &mut rng);
                    assert!(ibp_boundary_pairing(&c, name, &u, &w).unwrap().abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn homogeneous_dimensions() {
        for c in grids() {
            assert_eq!(c.homog_dim(OpName::Grad), c.interior_node_count());
            let np = c.nodes_per_axis();
            let interior: usize = np.iter().map(|n| n - 2).product();
            assert_eq!(c.interior_node_count(), interior);
        }
    }

    #[test]
    fn rigid_motions_are_annihilated() {
        for c in grids() {
            let shift = c.sample_components(3, |_| vec![1.0, -2.0, 0.5]);
            assert!(c.op(OpName::SGrad).matvec(&shift).iter().all(|&v| v == 0.0));
            let w = [0.3, -1.1, 0.7];
            let rot = c.sample_components(3, |x| {
                vec![w[1] * x[2] - w[2] * x[1], w[2] * x[0] - w[0] * x[2], w[0] * x[1] - w[1] * x[0]]
            });
            assert!(c.op(OpName::SGrad).matvec(&rot).iter().all(|v| v.abs() <= 1e-12));
        }
    }

    fn face_sum_oracle(c: &SpatialComplex, u: &[f64], w: &[f64]) -> f64 {
        // sum over faces of (2D lumped weight) · (±1) · u · w_normal
        let n = c.num_nodes();
        let cells = c.cells();
        let lengths = c.lengths();
        let np = c.nodes_per_axis();
        let mut total = 0.0;
        for a in 0..3 {
            let (b, d) = ((a + 1) % 3, (a + 2) % 3);
            let hb = lengths[b] / cells[b] as f64;
            let hd = lengths[d] / cells[d] as f64;
            for idx in 0..n {
                let ijk = [idx % np[0], (idx / np[0]) % np[1], idx / (np[0] * np[1])];
                let wb = if ijk[b] == 0 || ijk[b] == cells[b] { 0.5 } else { 1.0 };
                let wd = if ijk[d] == 0 || ijk[d] == cells[d] { 0.5 } else { 1.0 };
                let area = hb * hd * wb * wd;
                if ijk[a] == cells[a] {
                    total += area * u[idx] * w[a * n + idx];
                }
                if ijk[a] == 0 {
                    total -= area * u[idx] * w[a * n + idx];
                }
            }
        }
        total
    }

    #[test]
    fn grad_pairing_matches_face_sums() {
        let mut rng = seeded(3);
        let c = build_complex([3, 4, 2], [1.0, 1.0, 1.0]).unwrap();
        let ones_s = vec![1.0; c.num_nodes()];
        let ones_v = vec![1.0; 3 * c.num_nodes()];
        let p = ibp_boundary_pairing(&c, OpName::Grad, &ones_s, &ones_v).unwrap();
        assert!((p - face_sum_oracle(&c, &ones_s, &ones_v)).abs() <= 1e-12);
        for _ in 0..10 {
            let u = random_rvec(c.num_nodes(), &mut rng);
            let w = random_rvec(3 * c.num_nodes(), &mut rng);
            let p = ibp_boundary_pairing(&c, OpName::Grad, &u, &w).unwrap();
            assert!((p - face_sum_oracle(&c, &u, &w)).abs() <= 1e-12);
        }
    }

    #[test]
    fn curl_pairing_is_antisymmetric() {
        let mut rng = seeded(4);
        let c = build_complex([3, 3, 3], [1.0, 1.0, 1.0]).unwrap();
        for _ in 0..20 {
            let u = random_rvec(3 * c.num_nodes(), &mut rng);
            let w = random_rvec(3 * c.num_nodes(), &mut rng);
            let a = ibp_boundary_pairing(&c, OpName::Curl, &u, &w).unwrap();
            let b = ibp_boundary_pairing(&c, OpName::Curl, &w, &u).unwrap();
            assert!((a + b).abs() <= 1e-13);
        }
        assert!(ibp_boundary_pairing_named(&c, "laplace", &[], &[]).is_err());
    }

    #[test]
    fn chain_has_two_boundary_nodes() {
        let c = SpatialComplex::chain(7, 1.0).unwrap();
        assert_eq!(c.num_nodes(), 7);
        assert_eq!(c.boundary_dofs(OpName::Grad), vec![0, 6]);
        let mut rng = seeded(5);
        let mut u = random_rvec(7, &mut rng);
        c.restrict_to_homog(OpName::Grad, &mut u);
        let w = random_rvec(21, &mut rng);
        assert!(ibp_boundary_pairing(&c, OpName::Grad, &u, &w).unwrap().abs() <= 1e-14);
    }
}
