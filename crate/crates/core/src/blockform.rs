//! Block operators over lists of spaces and the congruence toolkit: block
//! permutations, symmetric Gauss steps (Schur complements) and inertia.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linspace::{
    adjoint, hermitian_eigenvalues, inverse_named, min_singular_value, positivity_constant,
    real_part, same_space, selfadjoint_residual, CMat, CVec, HSpace, LinOp, Space, C64,
    POSITIVITY_TOL,
};

/// Grid of optional blocks; an absent block is an exact zero.
#[derive(Clone, Debug)]
pub struct BlockOp {
    rows: Vec<Space>,
    cols: Vec<Space>,
    blocks: Vec<Option<LinOp>>,
}

fn offsets(spaces: &[Space]) -> Vec<usize> {
    let mut out = Vec::with_capacity(spaces.len() + 1);
    let mut acc = 0;
    out.push(0);
    for s in spaces {
        acc += s.dim();
        out.push(acc);
    }
    out
}

impl BlockOp {
    pub fn zero(rows: Vec<Space>, cols: Vec<Space>) -> Self {
        let n = rows.len() * cols.len();
        BlockOp {
            rows,
            cols,
            blocks: vec![None; n],
        }
    }

    /// Builds a block grid; an empty `entries` list is the zero operator.
    pub fn assemble(rows: Vec<Space>, cols: Vec<Space>, entries: Vec<Vec<Option<LinOp>>>) -> Result<Self> {
        let mut out = BlockOp::zero(rows, cols);
        if entries.is_empty() {
            return Ok(out);
        }
        dim_check("block rows", out.rows.len(), entries.len())?;
        for (i, row) in entries.into_iter().enumerate() {
            dim_check("block columns", out.cols.len(), row.len())?;
            for (j, e) in row.into_iter().enumerate() {
                out.set(i, j, e)?;
            }
        }
        Ok(out)
    }

    /// Block-diagonal operator from square operators.
    pub fn diagonal(ops: Vec<LinOp>) -> Result<Self> {
        let spaces: Vec<Space> = ops.iter().map(|o| o.src().clone()).collect();
        let mut out = BlockOp::zero(spaces.clone(), spaces);
        for (i, o) in ops.into_iter().enumerate() {
            out.set(i, i, Some(o))?;
        }
        Ok(out)
    }

    pub fn identity(spaces: Vec<Space>) -> Self {
        let mut out = BlockOp::zero(spaces.clone(), spaces.clone());
        for (i, s) in spaces.iter().enumerate() {
            out.blocks[i * spaces.len() + i] = Some(LinOp::identity(s));
        }
        out
    }

    pub fn rows(&self) -> &[Space] {
        &self.rows
    }

    pub fn cols(&self) -> &[Space] {
        &self.cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&LinOp> {
        self.blocks[i * self.cols.len() + j].as_ref()
    }

    pub fn block_or_zero(&self, i: usize, j: usize) -> LinOp {
        self.block(i, j)
            .cloned()
            .unwrap_or_else(|| LinOp::zero(&self.cols[j], &self.rows[i]))
    }

    /// Present and not identically zero.
    pub fn is_nonzero(&self, i: usize, j: usize) -> bool {
        self.block(i, j).is_some_and(|b| !b.is_zero())
    }

    pub fn set(&mut self, i: usize, j: usize, op: Option<LinOp>) -> Result<()> {
        if i >= self.rows.len() || j >= self.cols.len() {
            return Err(Error::Shape(format!("block index ({i}, {j}) out of range")));
        }
        if let Some(o) = &op {
            if !same_space(o.dst(), &self.rows[i]) || !same_space(o.src(), &self.cols[j]) {
                return Err(Error::Shape(format!(
                    "block ({i}, {j}) is {:?}, expected {} -> {}",
                    o,
                    self.cols[j].label(),
                    self.rows[i].label()
                )));
            }
        }
        let n = self.cols.len();
        self.blocks[i * n + j] = op;
        Ok(())
    }

    pub fn row_offsets(&self) -> Vec<usize> {
        offsets(&self.rows)
    }

    pub fn col_offsets(&self) -> Vec<usize> {
        offsets(&self.cols)
    }

    pub fn is_square_structure(&self) -> bool {
        self.rows.len() == self.cols.len()
            && self.rows.iter().zip(&self.cols).all(|(r, c)| same_space(r, c))
    }

    /// Structural pattern of nonzero blocks.
    pub fn sparsity(&self) -> Vec<Vec<bool>> {
        (0..self.n_rows())
            .map(|i| (0..self.n_cols()).map(|j| self.is_nonzero(i, j)).collect())
            .collect()
    }

    /// The whole grid as one operator between direct sums.
    pub fn flatten(&self) -> LinOp {
        let all_rows: Vec<usize> = (0..self.n_rows()).collect();
        let all_cols: Vec<usize> = (0..self.n_cols()).collect();
        self.flatten_sub(&all_rows, &all_cols)
    }

    /// Flattens the sub-grid on the given block rows and columns.
    pub fn flatten_sub(&self, rows: &[usize], cols: &[usize]) -> LinOp {
        let rs: Vec<Space> = rows.iter().map(|&i| self.rows[i].clone()).collect();
        let cs: Vec<Space> = cols.iter().map(|&j| self.cols[j].clone()).collect();
        let ro = offsets(&rs);
        let co = offsets(&cs);
        let mut m = CMat::zeros(ro[rs.len()], co[cs.len()]);
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                if let Some(blk) = self.block(i, j) {
                    m.view_mut((ro[a], co[b]), (rs[a].dim(), cs[b].dim()))
                        .copy_from(blk.mat());
                }
            }
        }
        let dst = if rows.len() == 1 { rs[0].clone() } else { HSpace::direct_sum(&rs, "sum") };
        let src = if rows == cols {
            dst.clone()
        } else if cols.len() == 1 {
            cs[0].clone()
        } else {
            HSpace::direct_sum(&cs, "sum")
        };
        LinOp::new(src, dst, m).expect("offsets match")
    }

    pub fn apply(&self, x: &[CVec]) -> Result<Vec<CVec>> {
        dim_check("block apply", self.n_cols(), x.len())?;
        let mut out: Vec<CVec> = self.rows.iter().map(|r| CVec::zeros(r.dim())).collect();
        for (i, o) in out.iter_mut().enumerate() {
            for (j, xj) in x.iter().enumerate() {
                if let Some(b) = self.block(i, j) {
                    *o += b.apply(xj)?;
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> BlockOp {
        let mut out = BlockOp::zero(self.cols.clone(), self.rows.clone());
        for i in 0..self.n_rows() {
            for j in 0..self.n_cols() {
                if let Some(b) = self.block(i, j) {
                    out.blocks[j * self.n_rows() + i] = Some(adjoint(b));
                }
            }
        }
        out
    }

    fn zip_with(&self, other: &BlockOp, f: impl Fn(&LinOp, &LinOp) -> Result<LinOp>, g: impl Fn(&LinOp) -> LinOp) -> Result<BlockOp> {
        if self.n_rows() != other.n_rows() || self.n_cols() != other.n_cols() {
            return Err(Error::Shape("block grids differ in size".into()));
        }
        let mut out = BlockOp::zero(self.rows.clone(), self.cols.clone());
        for i in 0..self.n_rows() {
            for j in 0..self.n_cols() {
                let v = match (self.block(i, j), other.block(i, j)) {
                    (Some(a), Some(b)) => Some(f(a, b)?),
                    (Some(a), None) => Some(a.clone()),
                    (None, Some(b)) => Some(g(b)),
                    (None, None) => None,
                };
                out.set(i, j, v)?;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &BlockOp) -> Result<BlockOp> {
        self.zip_with(other, |a, b| a.add(b), |b| b.clone())
    }

    pub fn sub(&self, other: &BlockOp) -> Result<BlockOp> {
        self.zip_with(other, |a, b| a.sub(b), |b| b.neg())
    }

    pub fn scale(&self, c: C64) -> BlockOp {
        BlockOp {
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            blocks: self.blocks.iter().map(|b| b.as_ref().map(|o| o.scale(c))).collect(),
        }
    }

    /// Block product `self ∘ rhs`.
    pub fn compose(&self, rhs: &BlockOp) -> Result<BlockOp> {
        dim_check("block compose", self.n_cols(), rhs.n_rows())?;
        let mut out = BlockOp::zero(self.rows.clone(), rhs.cols.clone());
        for i in 0..self.n_rows() {
            for j in 0..rhs.n_cols() {
                let mut acc: Option<LinOp> = None;
                for k in 0..self.n_cols() {
                    if let (Some(a), Some(b)) = (self.block(i, k), rhs.block(k, j)) {
                        let p = a.compose(b)?;
                        acc = Some(match acc {
                            Some(s) => s.add(&p)?,
                            None => p,
                        });
                    }
                }
                out.set(i, j, acc)?;
            }
        }
        Ok(out)
    }

    /// `(a + a*) / 2` blockwise.
    pub fn real_part(&self) -> Result<BlockOp> {
        if !self.is_square_structure() {
            return Err(Error::Shape("real part needs a square block structure".into()));
        }
        let adj = self.adjoint();
        let half = C64::from(0.5);
        Ok(self.add(&adj)?.scale(half))
    }

    /// `‖a − a*‖_F / max(1, ‖a‖_F)` of the flattened operator, evaluated blockwise.
    pub fn selfadjoint_residual(&self) -> f64 {
        if !self.is_square_structure() {
            return f64::INFINITY;
        }
        let n = self.n_rows();
        let (mut diff, mut size) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let a = self.block(i, j);
                let b = self.block(j, i).map(adjoint);
                let d = match (a, &b) {
                    (Some(a), Some(b)) => (a.mat() - b.mat()).norm_squared(),
                    (Some(a), None) => a.mat().norm_squared(),
                    (None, Some(b)) => b.mat().norm_squared(),
                    (None, None) => 0.0,
                };
                diff += d;
                size += a.map_or(0.0, |a| a.mat().norm_squared());
            }
        }
        diff.sqrt() / size.sqrt().max(1.0)
    }

    /// Connected components of the block graph (square structures), each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_rows();
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
                if i != j && self.is_nonzero(i, j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_of = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if root_of[r] == usize::MAX {
                root_of[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[root_of[r]].push(i);
        }
        groups
    }
}

pub fn assemble_block(rows: Vec<Space>, cols: Vec<Space>, entries: Vec<Vec<Option<LinOp>>>) -> Result<BlockOp> {
    BlockOp::assemble(rows, cols, entries)
}

/// Positivity constant of the flattened operator, computed per connected component.
pub fn positivity_constant_blockwise(a: &BlockOp) -> Result<f64> {
    if !a.is_square_structure() {
        return Err(Error::Shape("positivity needs a square block structure".into()));
    }
    let mut best = f64::INFINITY;
    for comp in a.components() {
        let f = a.flatten_sub(&comp, &comp);
        if f.src().dim() > 0 {
            best = best.min(positivity_constant(&f)?);
        }
    }
    Ok(best)
}

/// Signature `(n₊, n₀, n₋)` at tolerance [`POSITIVITY_TOL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inertia {
    pub plus: usize,
    pub zero: usize,
    pub minus: usize,
}

impl Inertia {
    fn add(self, o: Inertia) -> Inertia {
        Inertia {
            plus: self.plus + o.plus,
            zero: self.zero + o.zero,
            minus: self.minus + o.minus,
        }
    }
}

const SELFADJOINT_TOL: f64 = 1e-9;

pub fn inertia(a: &BlockOp) -> Result<Inertia> {
    if !a.is_square_structure() {
        return Err(Error::Shape("inertia needs a square block structure".into()));
    }
    let mut total = Inertia { plus: 0, zero: 0, minus: 0 };
    for comp in a.components() {
        let f = a.flatten_sub(&comp, &comp);
        if f.src().dim() == 0 {
            continue;
        }
        let res = selfadjoint_residual(&f);
        if res > SELFADJOINT_TOL {
            return Err(Error::NotSelfadjoint { residual: res });
        }
        let h = real_part(&f)?.euclidean_form();
        for v in hermitian_eigenvalues(&h) {
            if v >= POSITIVITY_TOL {
                total.plus += 1;
            } else if v <= -POSITIVITY_TOL {
                total.minus += 1;
            } else {
                total.zero += 1;
            }
        }
    }
    Ok(total)
}

fn validate_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::InvalidPermutation(perm.to_vec()));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidPermutation(perm.to_vec()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// `P* a P`: block `(i, j)` of the result is block `(perm[i], perm[j])` of `a`.
pub fn permute_congruence(a: &BlockOp, perm: &[usize]) -> Result<BlockOp> {
    if !a.is_square_structure() {
        return Err(Error::Shape("permutation congruence needs a square block structure".into()));
    }
    validate_perm(perm, a.n_rows())?;
    let spaces: Vec<Space> = perm.iter().map(|&p| a.rows[p].clone()).collect();
    let mut out = BlockOp::zero(spaces.clone(), spaces);
    for (i, &pi) in perm.iter().enumerate() {
        for (j, &pj) in perm.iter().enumerate() {
            out.set(i, j, a.block(pi, pj).cloned())?;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepKind {
    Permutation { perm: Vec<usize> },
    GaussStep { pivot: usize, block: String },
}

/// One congruence transform together with what is needed to undo it.
#[derive(Clone, Debug)]
pub struct CongruenceStep {
    pub kind: StepKind,
    /// For a Gauss step, `F_j = a_kk⁻¹ a_kj` per block column (absent where `a_kj` is).
    pub factors: Vec<Option<LinOp>>,
    pub inertia: Option<Inertia>,
}

impl CongruenceStep {
    /// Applies the original operator through the reduced one: with `R` the recorded
    /// transform, returns `R* reduced R x`, which equals `a x` for the input `a`.
    pub fn reexpand_apply(&self, reduced: &BlockOp, x: &[CVec]) -> Result<Vec<CVec>> {
        match &self.kind {
            StepKind::Permutation { perm } => {
                // reduced = P* a P, so a x = P reduced P* x
                let mut px = vec![CVec::zeros(0); perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    px[i] = x[p].clone();
                }
                let y = reduced.apply(&px)?;
                let mut out = vec![CVec::zeros(0); perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    out[p] = y[i].clone();
                }
                Ok(out)
            }
            StepKind::GaussStep { pivot, .. } => {
                let k = *pivot;
                let mut rx: Vec<CVec> = x.to_vec();
                for (j, f) in self.factors.iter().enumerate() {
                    if let Some(f) = f {
                        rx[k] += f.apply(&x[j])?;
                    }
                }
                let z = reduced.apply(&rx)?;
                let mut out = z.clone();
                for (j, f) in self.factors.iter().enumerate() {
                    if let Some(f) = f {
                        out[j] += adjoint(f).apply(&z[k])?;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Symmetric Gauss step on block `k`: eliminates row and column `k`, leaving the
/// Schur complements `a_ij − a_ik a_kk⁻¹ a_kj` on the remaining blocks.
pub fn gauss_step(a: &BlockOp, k: usize) -> Result<(BlockOp, CongruenceStep)> {
    if !a.is_square_structure() {
        return Err(Error::Shape("gauss step needs a square block structure".into()));
    }
    let n = a.n_rows();
    if k >= n {
        return Err(Error::Shape(format!("pivot {k} out of range")));
    }
    let res = a.selfadjoint_residual();
    if res > SELFADJOINT_TOL {
        return Err(Error::NotSelfadjoint { residual: res });
    }
    let label = a.rows[k].label().to_string();
    let pivot = a.block(k, k).cloned().ok_or_else(|| Error::Pivot {
        block: label.clone(),
        detail: "pivot block is zero".into(),
    })?;
    if pivot.src().dim() > 0 {
        let pc = positivity_constant(&pivot)?;
        if pc <= POSITIVITY_TOL {
            let sv = min_singular_value(&pivot);
            if sv <= POSITIVITY_TOL {
                return Err(Error::Pivot {
                    block: label,
                    detail: format!("smallest singular value {sv:.3e}"),
                });
            }
        }
    }
    let inv = inverse_named(&pivot, &label).map_err(|e| Error::Pivot {
        block: label.clone(),
        detail: e.to_string(),
    })?;
    let factors: Vec<Option<LinOp>> = (0..n)
        .map(|j| {
            if j == k {
                Ok(None)
            } else {
                a.block(k, j).map(|b| inv.compose(b)).transpose()
            }
        })
        .collect::<Result<_>>()?;
    let mut out = a.clone();
    for j in 0..n {
        if j != k {
            out.set(k, j, None)?;
            out.set(j, k, None)?;
        }
    }
    for i in 0..n {
        if i == k {
            continue;
        }
        let Some(aik) = a.block(i, k) else { continue };
        for (j, f) in factors.iter().enumerate() {
            let Some(f) = f else { continue };
            let upd = aik.compose(f)?;
            let v = match a.block(i, j) {
                Some(b) => b.sub(&upd)?,
                None => upd.neg(),
            };
            out.set(i, j, Some(v))?;
        }
    }
    let step = CongruenceStep {
        kind: StepKind::GaussStep { pivot: k, block: label },
        factors,
        inertia: None,
    };
    Ok((out, step))
}

/// Ordered record of a congruence chain with the inertia after every step.
#[derive(Clone, Debug, Default)]
pub struct CongruenceLog {
    pub initial: Option<Inertia>,
    pub steps: Vec<CongruenceStep>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoggedStep {
    #[serde(flatten)]
    pub kind: StepKind,
    pub inertia: Option<Inertia>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CongruenceSummary {
    pub initial_inertia: Option<Inertia>,
    pub steps: Vec<LoggedStep>,
    pub inertia_constant: Option<bool>,
}

impl CongruenceLog {
    /// `Some(true)` when every recorded inertia equals the initial one; `None` when
    /// inertia was not tracked.
    pub fn inertia_constant(&self) -> Option<bool> {
        let init = self.initial?;
        let mut all = true;
        for s in &self.steps {
            all &= s.inertia? == init;
        }
        Some(all)
    }

    pub fn summary(&self) -> CongruenceSummary {
        CongruenceSummary {
            initial_inertia: self.initial,
            steps: self
                .steps
                .iter()
                .map(|s| LoggedStep {
                    kind: s.kind.clone(),
                    inertia: s.inertia,
                })
                .collect(),
            inertia_constant: self.inertia_constant(),
        }
    }
}

/// Records `step` after checking Sylvester invariance against the log's initial inertia.
pub fn log_step(log: &mut CongruenceLog, mut step: CongruenceStep, result: &BlockOp, track: bool) -> Result<()> {
    if track {
        let i = inertia(result)?;
        if let Some(init) = log.initial {
            if i != init {
                return Err(Error::Numerical(format!(
                    "inertia changed from {init:?} to {i:?} in a congruence step"
                )));
            }
        }
        step.inertia = Some(i);
    }
    log.steps.push(step);
    Ok(())
}

/// Sum of component inertias; kept separate for callers holding a flattened operator.
pub fn inertia_of(op: &LinOp) -> Result<Inertia> {
    let b = BlockOp::diagonal(vec![op.clone()])?;
    let mut acc = Inertia { plus: 0, zero: 0, minus: 0 };
    acc = acc.add(inertia(&b)?);
    Ok(acc)
}
