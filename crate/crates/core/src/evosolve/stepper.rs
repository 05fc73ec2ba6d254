//! Implicit Euler stepping with the boundary rows of `b` pre-inverted: `τ = −B(∂)y`
//! with `y` the traces, and the memory term `α_b ∂⁻¹ y_T` carried by an integrator `w`.

use nalgebra::linalg::LU;
use nalgebra::Dyn;

use super::{real_flat, EvoSystem, SolverKind, SourceTerm, TimeSeries};
use crate::blockform::BlockOp;
use crate::error::{dim_check, Error, Result};
use crate::impedance::{assemble_b, FrequencyPoint};
use crate::linspace::{LinOp, RMat};
use crate::material::{Certificate, Slot};

/// Relative pivot size below which a step matrix counts as singular.
const PIVOT_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, Default)]
pub struct SimulateOptions<'a> {
    pub nu: f64,
    pub certificate: Option<&'a Certificate>,
    /// Run without an accepted certificate covering `nu`.
    pub override_certificate: bool,
}

/// Refuses to run unless a certificate accepts the system at `nu`, or overridden.
pub(crate) fn check_gate(opts: &SimulateOptions) -> Result<()> {
    if !(opts.nu > 0.0) || !opts.nu.is_finite() {
        return Err(Error::Precondition(format!("nu = {} must be positive", opts.nu)));
    }
    if opts.override_certificate {
        return Ok(());
    }
    match opts.certificate {
        None => Err(Error::Uncertified("no certificate supplied".into())),
        Some(c) if !c.accepted => Err(Error::Uncertified("certificate rejects the system".into())),
        Some(c) => match c.nu_min {
            Some(m) if opts.nu < m * (1.0 - 1e-12) => Err(Error::Uncertified(format!(
                "nu = {} is below the certified nu_min = {m}",
                opts.nu
            ))),
            _ => Ok(()),
        },
    }
}

/// Square grid of optional real blocks.
#[derive(Clone, Debug)]
pub(crate) struct RealGrid {
    dims: Vec<usize>,
    blocks: Vec<Option<RMat>>,
}

impl RealGrid {
    pub(crate) fn new(dims: Vec<usize>) -> Self {
        let n = dims.len();
        RealGrid {
            dims,
            blocks: vec![None; n * n],
        }
    }

    pub(crate) fn from_block(b: &BlockOp) -> Result<Self> {
        let mut g = RealGrid::new(b.rows().iter().map(|s| s.dim()).collect());
        for i in 0..b.n_rows() {
            for j in 0..b.n_cols() {
                if let Some(op) = b.block(i, j) {
                    g.add(i, j, &real_flat(op)?, 1.0);
                }
            }
        }
        Ok(g)
    }

    pub(crate) fn len(&self) -> usize {
        self.dims.len()
    }

    pub(crate) fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub(crate) fn get(&self, i: usize, j: usize) -> Option<&RMat> {
        self.blocks[i * self.dims.len() + j].as_ref()
    }

    /// Adds `c·m` to block `(i, j)`; zero contributions leave an absent block absent.
    pub(crate) fn add(&mut self, i: usize, j: usize, m: &RMat, c: f64) {
        assert_eq!((m.nrows(), m.ncols()), (self.dims[i], self.dims[j]), "block shape");
        if c == 0.0 || m.iter().all(|&x| x == 0.0) {
            return;
        }
        let n = self.dims.len();
        match &mut self.blocks[i * n + j] {
            Some(b) => *b += m * c,
            slot @ None => *slot = Some(m * c),
        }
    }

    pub(crate) fn add_identity(&mut self, i: usize, c: f64) {
        let d = self.dims[i];
        self.add(i, i, &RMat::identity(d, d), c);
    }

    pub(crate) fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for d in &self.dims {
            o.push(o.last().unwrap() + d);
        }
        o
    }

    pub(crate) fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && self.get(i, j).is_some() {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_of = vec![usize::MAX; n];
        for i in 0..n {
            if self.dims[i] == 0 {
                continue;
            }
            let r = find(&mut parent, i);
            if root_of[r] == usize::MAX {
                root_of[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[root_of[r]].push(i);
        }
        groups
    }

    pub(crate) fn flatten(&self, rows: &[usize], cols: &[usize]) -> RMat {
        let ro = sub_offsets(&self.dims, rows);
        let co = sub_offsets(&self.dims, cols);
        let mut m = RMat::zeros(ro[rows.len()], co[cols.len()]);
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                if let Some(blk) = self.get(i, j) {
                    m.view_mut((ro[a], co[b]), (self.dims[i], self.dims[j])).copy_from(blk);
                }
            }
        }
        m
    }
}

pub(crate) fn sub_offsets(dims: &[usize], comp: &[usize]) -> Vec<usize> {
    let mut o = vec![0];
    for &i in comp {
        o.push(o.last().unwrap() + dims[i]);
    }
    o
}

pub(crate) fn gather(x: &[f64], offs: &[usize], comp: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    for &i in comp {
        out.extend_from_slice(&x[offs[i]..offs[i + 1]]);
    }
    out
}

pub(crate) fn scatter(x: &mut [f64], offs: &[usize], comp: &[usize], vals: &[f64]) {
    let mut k = 0;
    for &i in comp {
        let d = offs[i + 1] - offs[i];
        x[offs[i]..offs[i + 1]].copy_from_slice(&vals[k..k + d]);
        k += d;
    }
}

/// The trace rows as `(B index, τ-slot, source slot)`: `BD(grad) ↔ τ_q ↔ θ̃`,
/// `BD(curl) ↔ τ_H ↔ E`, `BD(Grad) ↔ τ_T ↔ v`.
pub(crate) const TRACE_ROWS: [(usize, Slot, Slot); 3] = [
    (0, Slot::TauQ, Slot::Theta),
    (1, Slot::TauH, Slot::E),
    (2, Slot::TauT, Slot::V),
];

/// `B` without the memory term, as real blocks.
pub(crate) fn memoryless_b(sys: &EvoSystem) -> Result<RealGrid> {
    let t = sys.boundary();
    let zero = LinOp::zero(t.bd_sgrad(), t.bd_sgrad());
    let b0 = assemble_b(&t.with_alpha(zero)?, FrequencyPoint::new(1.0.into())?)?;
    RealGrid::from_block(&b0)
}

/// Index of the integrator block in the ten-block step grid.
const W: usize = 9;

fn ten_dims(sys: &EvoSystem) -> Vec<usize> {
    let mut d: Vec<usize> = Slot::ALL.iter().map(|&s| sys.layout().dim(s)).collect();
    d.push(sys.w_dim());
    d
}

/// Step matrix `S` and history matrix `P` with `S x_n = F_n + P x_{n−1}`.
fn step_grids(sys: &EvoSystem, dt: f64) -> Result<(RealGrid, RealGrid)> {
    let a = RealGrid::from_block(sys.a())?;
    let m0 = RealGrid::from_block(sys.m0())?;
    let m1 = RealGrid::from_block(sys.m1_static())?;
    let alpha = real_flat(sys.boundary().alpha_b())?;
    let b0 = memoryless_b(sys)?;

    let dims = ten_dims(sys);
    let mut s = RealGrid::new(dims.clone());
    let mut p = RealGrid::new(dims);
    for row in Slot::ALL.iter().filter(|s| !s.is_tau()) {
        let i = row.index();
        for j in 0..9 {
            if let Some(m) = m0.get(i, j) {
                s.add(i, j, m, 1.0 / dt);
                p.add(i, j, m, 1.0 / dt);
            }
            if let Some(m) = m1.get(i, j) {
                s.add(i, j, m, 1.0);
            }
            if let Some(m) = a.get(i, j) {
                s.add(i, j, m, 1.0);
            }
        }
    }
    for &(bi, tau, _) in &TRACE_ROWS {
        s.add_identity(tau.index(), 1.0);
        for &(bj, tau_j, src_j) in &TRACE_ROWS {
            if let (Some(bij), Some(tr)) = (b0.get(bi, bj), a.get(tau_j.index(), src_j.index())) {
                s.add(tau.index(), src_j.index(), &(bij * tr), 1.0);
            }
        }
    }
    s.add(Slot::TauT.index(), W, &alpha, 1.0);
    s.add_identity(W, 1.0 / dt);
    p.add_identity(W, 1.0 / dt);
    if let Some(tr) = a.get(Slot::TauT.index(), Slot::V.index()) {
        s.add(W, Slot::V.index(), tr, -1.0);
    }
    Ok((s, p))
}

struct Factored {
    comp: Vec<usize>,
    lu: LU<f64, Dyn, Dyn>,
    hist: RMat,
}

/// Implicit Euler on `t_n = n·dt` from the zero state, `n = 0..=n_steps` taken from the
/// source grid.
pub fn simulate(sys: &EvoSystem, sources: &SourceTerm, opts: SimulateOptions) -> Result<TimeSeries> {
    check_gate(&opts)?;
    if !sys.is_real() {
        return Err(Error::Precondition("time-domain solvers need real coefficients".into()));
    }
    dim_check("source width", sys.layout().total_dim(), sources.sample(0).len())?;
    let dt = sources.dt();
    let (s, p) = step_grids(sys, dt)?;
    let offs = s.offsets();
    let mut factors = Vec::new();
    for comp in s.components() {
        let m = s.flatten(&comp, &comp);
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let lu = m.lu();
        let u = lu.u();
        let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
        if !(min_pivot > PIVOT_TOL * scale) {
            return Err(Error::StepSingular {
                step: 1,
                detail: format!("pivot {min_pivot:.3e} on blocks {comp:?}"),
            });
        }
        let hist = p.flatten(&comp, &comp);
        factors.push(Factored { comp, lu, hist });
    }

    let nx = sys.layout().total_dim();
    let total = offs[offs.len() - 1];
    let mut states = vec![vec![0.0; nx]];
    let mut ws = vec![vec![0.0; sys.w_dim()]];
    let mut prev = vec![0.0; total];
    for n in 1..=sources.n_steps() {
        let mut f = sources.sample(n).to_vec();
        f.resize(total, 0.0);
        let mut next = vec![0.0; total];
        for fac in &factors {
            let xp = RMat::from_column_slice(fac.hist.ncols(), 1, &gather(&prev, &offs, &fac.comp));
            let mut rhs = &fac.hist * xp;
            for (r, v) in rhs.iter_mut().zip(gather(&f, &offs, &fac.comp)) {
                *r += v;
            }
            let x = fac.lu.solve(&rhs).ok_or_else(|| Error::StepSingular {
                step: n,
                detail: format!("solve failed on blocks {:?}", fac.comp),
            })?;
            scatter(&mut next, &offs, &fac.comp, x.as_slice());
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        states.push(next[..nx].to_vec());
        ws.push(next[nx..].to_vec());
        prev = next;
    }
    Ok(TimeSeries::new(sys, dt, opts.nu, SolverKind::Time, states, ws))
}
