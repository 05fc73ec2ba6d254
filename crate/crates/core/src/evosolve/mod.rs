//! The assembled evolutionary system `(∂M₀ + M₁(∂) + A)U = F`, causal solvers in the
//! time and frequency domains, and checks of their solutions.

mod io;
mod spectral;
mod stepper;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_raw, write_csv, write_raw, RawSidecar, SlotEntry};
pub use spectral::{freq_solve, freq_solve_pencil, FreqOptions, PencilSolution};
pub use stepper::{simulate, SimulateOptions};

use crate::bdspace::{bd_map, MeshBdSpaces};
use crate::blockform::BlockOp;
use crate::error::{dim_check, Error, Result};
use crate::impedance::BoundaryTriple;
use crate::linspace::{adjoint, LinOp, RMat, Space};
use crate::material::{assemble_m0, assemble_m1_static, MaterialData, Slot, SystemLayout};
use crate::mesh::{OpName, SpatialComplex};
use crate::random::random_real_linop;

/// The three column operators `(−Grad; ι*)`, `(curl; ι*)`, `(grad; ι*)`, stored by
/// their parts.
#[derive(Clone, Debug)]
pub struct ColumnOps {
    /// `Grad`: displacement → sym; enters `A` with a minus sign.
    pub sgrad: LinOp,
    pub trace_sgrad: LinOp,
    pub curl: LinOp,
    pub trace_curl: LinOp,
    pub grad: LinOp,
    pub trace_grad: LinOp,
}

impl ColumnOps {
    pub fn from_mesh(complex: &SpatialComplex, bd: &MeshBdSpaces) -> Self {
        ColumnOps {
            sgrad: complex.linop(OpName::SGrad),
            trace_sgrad: bd.sgrad.trace_op(),
            curl: complex.linop(OpName::Curl),
            trace_curl: bd.curl.trace_op(),
            grad: complex.linop(OpName::Grad),
            trace_grad: bd.grad.trace_op(),
        }
    }

    /// Random real column operators of size `scale` for abstract layouts.
    pub fn random(layout: &SystemLayout, scale: f64, rng: &mut impl Rng) -> Self {
        let mut op = |src: Slot, dst: Slot| {
            let (s, d) = (layout.space(src), layout.space(dst));
            let n = s.dim().max(d.dim()).max(1) as f64;
            random_real_linop(s, d, rng).scale_real(scale / n.sqrt())
        };
        ColumnOps {
            sgrad: op(Slot::V, Slot::T),
            trace_sgrad: op(Slot::V, Slot::TauT),
            curl: op(Slot::E, Slot::H),
            trace_curl: op(Slot::E, Slot::TauH),
            grad: op(Slot::Theta, Slot::Q),
            trace_grad: op(Slot::Theta, Slot::TauQ),
        }
    }

    /// The trace rows `y = (A[τ_T, v], A[τ_H, E], A[τ_q, θ̃])` as `(from, to, op)`.
    pub fn traces(&self) -> [(Slot, Slot, &LinOp); 3] {
        [
            (Slot::V, Slot::TauT, &self.trace_sgrad),
            (Slot::E, Slot::TauH, &self.trace_curl),
            (Slot::Theta, Slot::TauQ, &self.trace_grad),
        ]
    }
}

/// `A` built from the column operators: `A[T, v] = −Grad`, `A[τ_T, v] = ι*`,
/// `A[H, E] = curl`, `A[τ_H, E] = ι*`, `A[q, θ̃] = grad`, `A[τ_q, θ̃] = ι*`, and the
/// negated adjoints in the transposed positions.
pub fn assemble_a(layout: &SystemLayout, c: &ColumnOps) -> Result<BlockOp> {
    let mut a = BlockOp::zero(layout.spaces().to_vec(), layout.spaces().to_vec());
    let entries = [
        (Slot::T, Slot::V, c.sgrad.neg()),
        (Slot::TauT, Slot::V, c.trace_sgrad.clone()),
        (Slot::H, Slot::E, c.curl.clone()),
        (Slot::TauH, Slot::E, c.trace_curl.clone()),
        (Slot::Q, Slot::Theta, c.grad.clone()),
        (Slot::TauQ, Slot::Theta, c.trace_grad.clone()),
    ];
    for (row, col, op) in entries {
        let neg_adj = adjoint(&op).neg();
        a.set(row.index(), col.index(), Some(op))?;
        a.set(col.index(), row.index(), Some(neg_adj))?;
    }
    Ok(a)
}

/// The complex and boundary data spaces behind a mesh system.
#[derive(Clone, Debug)]
pub struct MeshContext {
    pub complex: Arc<SpatialComplex>,
    pub bd: Arc<MeshBdSpaces>,
}

#[derive(Clone, Debug)]
pub struct EvoSystem {
    layout: SystemLayout,
    columns: ColumnOps,
    a: BlockOp,
    m0: BlockOp,
    m1_static: BlockOp,
    material: MaterialData,
    boundary: BoundaryTriple,
    mesh: Option<MeshContext>,
}

impl EvoSystem {
    pub fn new(
        layout: SystemLayout,
        columns: ColumnOps,
        material: MaterialData,
        boundary: BoundaryTriple,
        mesh: Option<MeshContext>,
    ) -> Result<Self> {
        layout.check_triple(&boundary)?;
        let a = assemble_a(&layout, &columns)?;
        let m0 = assemble_m0(&material, &layout)?;
        let m1_static = assemble_m1_static(&material, &layout)?;
        Ok(EvoSystem {
            layout,
            columns,
            a,
            m0,
            m1_static,
            material,
            boundary,
            mesh,
        })
    }

    pub fn from_mesh(
        complex: Arc<SpatialComplex>,
        bd: Arc<MeshBdSpaces>,
        material: MaterialData,
        boundary: BoundaryTriple,
    ) -> Result<Self> {
        let layout = SystemLayout::from_mesh(&complex, &bd);
        let columns = ColumnOps::from_mesh(&complex, &bd);
        EvoSystem::new(layout, columns, material, boundary, Some(MeshContext { complex, bd }))
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn columns(&self) -> &ColumnOps {
        &self.columns
    }

    pub fn a(&self) -> &BlockOp {
        &self.a
    }

    pub fn m0(&self) -> &BlockOp {
        &self.m0
    }

    /// `σ` and `κ₀⁻¹`.
    pub fn m1_static(&self) -> &BlockOp {
        &self.m1_static
    }

    pub fn material(&self) -> &MaterialData {
        &self.material
    }

    pub fn boundary(&self) -> &BoundaryTriple {
        &self.boundary
    }

    pub fn mesh(&self) -> Option<&MeshContext> {
        self.mesh.as_ref()
    }

    /// `‖A + A*‖_F / max(1, ‖A‖_F)`.
    pub fn skew_residual(&self) -> f64 {
        self.a.add(&self.a.adjoint()).map(|s| s.flatten_norm()).unwrap_or(f64::INFINITY)
            / self.a.flatten_norm().max(1.0)
    }

    /// Whether every operator has real coefficients.
    pub fn is_real(&self) -> bool {
        let blocks_real = |b: &BlockOp| {
            (0..b.n_rows()).all(|i| (0..b.n_cols()).all(|j| b.block(i, j).is_none_or(|o| o.is_real())))
        };
        blocks_real(&self.a) && blocks_real(&self.m0) && blocks_real(&self.m1_static) && self.boundary.is_real()
    }

    /// Dimension of the integrator state `w ∈ BD(Grad)`.
    pub fn w_dim(&self) -> usize {
        self.layout.dim(Slot::TauT)
    }

    pub fn w_space(&self) -> &Space {
        self.layout.space(Slot::TauT)
    }
}

impl BlockOp {
    /// Frobenius norm of the flattened coefficient matrix.
    pub fn flatten_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n_rows() {
            for j in 0..self.n_cols() {
                if let Some(b) = self.block(i, j) {
                    s += b.mat().norm_squared();
                }
            }
        }
        s.sqrt()
    }
}

/// Sampled right-hand side on the grid `t_n = n·dt`, `n = 0..=n_steps`; nonzero only on
/// the slots `v, E, H, θ̃`.
#[derive(Clone, Debug)]
pub struct SourceTerm {
    dt: f64,
    samples: Vec<Vec<f64>>,
    onset: usize,
}

/// Slots that may carry a source: force, the two currents and the heat source.
pub const SOURCE_SLOTS: [Slot; 4] = [Slot::V, Slot::E, Slot::H, Slot::Theta];

impl SourceTerm {
    pub fn zero(layout: &SystemLayout, n_steps: usize, dt: f64) -> Result<Self> {
        Self::from_samples(layout, dt, vec![vec![0.0; layout.total_dim()]; n_steps + 1])
    }

    /// Validates lengths, finiteness and that only source slots are nonzero.
    pub fn from_samples(layout: &SystemLayout, dt: f64, samples: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Precondition(format!("dt = {dt} must be positive")));
        }
        if samples.is_empty() {
            return Err(Error::Precondition("source needs at least one sample".into()));
        }
        let off = layout.offsets();
        for s in &samples {
            dim_check("source sample", layout.total_dim(), s.len())?;
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::Precondition("source sample is not finite".into()));
            }
            for slot in Slot::ALL {
                if !SOURCE_SLOTS.contains(&slot) && s[off[slot.index()]..off[slot.index() + 1]].iter().any(|&x| x != 0.0) {
                    return Err(Error::Precondition(format!("slot {slot} cannot carry a source")));
                }
            }
        }
        let onset = samples
            .iter()
            .position(|s| s.iter().any(|&x| x != 0.0))
            .unwrap_or(samples.len());
        Ok(SourceTerm { dt, samples, onset })
    }

    /// `F(t) = amplitude(t) · profile` on one slot.
    pub fn separable(
        layout: &SystemLayout,
        n_steps: usize,
        dt: f64,
        slot: Slot,
        profile: &[f64],
        amplitude: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !SOURCE_SLOTS.contains(&slot) {
            return Err(Error::Precondition(format!("slot {slot} cannot carry a source")));
        }
        dim_check("source profile", layout.dim(slot), profile.len())?;
        let off = layout.offsets()[slot.index()];
        let samples = (0..=n_steps)
            .map(|n| {
                let mut s = vec![0.0; layout.total_dim()];
                let a = amplitude(n as f64 * dt);
                if a != 0.0 {
                    for (k, p) in profile.iter().enumerate() {
                        s[off + k] = a * p;
                    }
                }
                s
            })
            .collect();
        Self::from_samples(layout, dt, samples)
    }

    /// Pulse `exp(−((t − t₀ − 3w)/w)²)` switched on at `t₀`.
    pub fn gaussian_pulse(
        layout: &SystemLayout,
        n_steps: usize,
        dt: f64,
        slot: Slot,
        profile: &[f64],
        onset_time: f64,
        width: f64,
    ) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Precondition(format!("pulse width {width} must be positive")));
        }
        Self::separable(layout, n_steps, dt, slot, profile, |t| {
            if t < onset_time {
                0.0
            } else {
                let s = (t - onset_time - 3.0 * width) / width;
                (-s * s).exp()
            }
        })
    }

    pub fn add(&self, other: &SourceTerm) -> Result<SourceTerm> {
        if self.samples.len() != other.samples.len() || self.dt != other.dt {
            return Err(Error::Precondition("sources live on different grids".into()));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(SourceTerm {
            dt: self.dt,
            samples,
            onset: self.onset.min(other.onset),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.samples.len() - 1
    }

    /// First step with a nonzero sample (`n_steps + 1` for a zero source).
    pub fn onset(&self) -> usize {
        self.onset
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        &self.samples[n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Time,
    Freq,
}

/// Trailing-window energy of the padded frequency solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrapReport {
    pub padded_len: usize,
    /// Weighted energy in the last 5% of the padded window relative to the total.
    pub tail_fraction: f64,
    pub warning: bool,
}

/// States `x_n` (all nine slots, flattened in slot order) and integrator values `w_n`
/// on `t_n = n·dt`; `x_0 = 0`, `w_0 = 0`.
#[derive(Clone, Debug)]
pub struct TimeSeries {
    pub dt: f64,
    pub nu: f64,
    pub solver: SolverKind,
    pub states: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub wrap: Option<WrapReport>,
    spaces: Vec<Space>,
    w_space: Space,
}

impl TimeSeries {
    pub(crate) fn new(sys: &EvoSystem, dt: f64, nu: f64, solver: SolverKind, states: Vec<Vec<f64>>, w: Vec<Vec<f64>>) -> Self {
        TimeSeries {
            dt,
            nu,
            solver,
            states,
            w,
            wrap: None,
            spaces: sys.layout().spaces().to_vec(),
            w_space: sys.w_space().clone(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for s in &self.spaces {
            o.push(o.last().unwrap() + s.dim());
        }
        o
    }

    pub fn slot_values(&self, n: usize, slot: Slot) -> &[f64] {
        let o = self.offsets();
        &self.states[n][o[slot.index()]..o[slot.index() + 1]]
    }

    pub fn slot_norm(&self, n: usize, slot: Slot) -> f64 {
        self.spaces[slot.index()].norm_real(self.slot_values(n, slot))
    }

    pub fn w_norm(&self, n: usize) -> f64 {
        self.w_space.norm_real(&self.w[n])
    }

    /// Norm of the full state in the direct-sum space (without `w`).
    pub fn state_norm(&self, n: usize) -> f64 {
        Slot::ALL
            .iter()
            .map(|&s| self.slot_norm(n, s).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn spaces(&self) -> &[Space] {
        &self.spaces
    }

    pub fn w_space(&self) -> &Space {
        &self.w_space
    }
}

/// Largest state norm (including `w`) before `onset`.
pub fn check_causality(series: &TimeSeries, onset: usize) -> f64 {
    (0..onset.min(series.states.len()))
        .map(|n| series.state_norm(n).hypot(series.w_norm(n)))
        .fold(0.0, f64::max)
}

/// Weighted norm `(Σ_n ω_n dt e^{−2νt_n} |u_n|²)^{1/2}` with trapezoidal weights `ω_n`.
pub fn weighted_norm(values: &[f64], dt: f64, nu: f64) -> f64 {
    let n = values.len();
    let mut s = 0.0;
    for (k, v) in values.iter().enumerate() {
        let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
        s += w * dt * (-2.0 * nu * k as f64 * dt).exp() * v * v;
    }
    s.sqrt()
}

/// Slack `‖F‖_ν / (c‖U‖_ν) − 1` of the bound `‖U‖_ν ≤ ‖F‖_ν / c`; `+∞` for a zero
/// source or zero solution.
pub fn check_norm_bound(series: &TimeSeries, sources: &SourceTerm, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Precondition(format!("norm bound needs c > 0, got {c}")));
    }
    dim_check("source length", series.states.len(), sources.samples().len())?;
    let spaces = series.spaces();
    let fnorm: Vec<f64> = sources
        .samples()
        .iter()
        .map(|f| {
            let mut o = 0;
            let mut s = 0.0;
            for sp in spaces {
                s += sp.norm_real(&f[o..o + sp.dim()]).powi(2);
                o += sp.dim();
            }
            s.sqrt()
        })
        .collect();
    let unorm: Vec<f64> = (0..series.states.len()).map(|n| series.state_norm(n)).collect();
    let f = weighted_norm(&fnorm, series.dt, series.nu);
    let u = weighted_norm(&unorm, series.dt, series.nu);
    if f == 0.0 || u == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(f / (c * u) - 1.0)
}

/// `⟨x, M₀x⟩ + Re⟨w, α_b w⟩` per step.
pub fn energy(series: &TimeSeries, sys: &EvoSystem) -> Result<Vec<f64>> {
    let m0 = real_flat(&sys.m0().flatten())?;
    let alpha = real_flat(sys.boundary().alpha_b())?;
    let gram = diag_weights(sys.layout().spaces())?;
    let wg = diag_weights(std::slice::from_ref(sys.w_space()))?;
    Ok((0..series.states.len())
        .map(|n| {
            let x = RMat::from_column_slice(gram.len(), 1, &series.states[n]);
            let mx = &m0 * &x;
            let e: f64 = (0..gram.len()).map(|i| gram[i] * x[i] * mx[i]).sum();
            let w = RMat::from_column_slice(wg.len(), 1, &series.w[n]);
            let aw = &alpha * &w;
            let ew: f64 = (0..wg.len()).map(|i| wg[i] * w[i] * aw[i]).sum();
            e + ew
        })
        .collect())
}

pub(crate) fn real_flat(op: &LinOp) -> Result<RMat> {
    op.real_matrix()
        .ok_or_else(|| Error::Precondition("time-domain solvers need real coefficients".into()))
}

pub(crate) fn diag_weights(spaces: &[Space]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for s in spaces {
        if s.is_diagonal() {
            match s.weights() {
                Some(w) => out.extend_from_slice(w),
                None => out.extend(std::iter::repeat_n(1.0, s.dim())),
            }
        } else {
            return Err(Error::Precondition(format!("space {} needs a diagonal Gram", s.label())));
        }
    }
    Ok(out)
}

/// `‖τ_T − Div_BD ι*T‖`, `‖τ_H − curl_BD ι*H‖` and `‖τ_q + div_BD ι*q‖` combined, per
/// step. Only defined on mesh systems.
pub fn constraint_residual(series: &TimeSeries, sys: &EvoSystem) -> Result<Vec<f64>> {
    let maps = ConstraintMaps::new(sys)?;
    Ok((0..series.states.len())
        .map(|n| {
            let target = maps.targets(series, n);
            let mut s = 0.0;
            for (slot, t) in target {
                let cur = series.slot_values(n, slot);
                s += cur.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            s.sqrt()
        })
        .collect())
}

/// Overwrites the τ-slots with the values whose constraint residual is zero.
pub fn project_constraints(series: &mut TimeSeries, sys: &EvoSystem) -> Result<()> {
    let maps = ConstraintMaps::new(sys)?;
    let off = series.offsets();
    for n in 0..series.states.len() {
        for (slot, t) in maps.targets(series, n) {
            series.states[n][off[slot.index()]..off[slot.index() + 1]].copy_from_slice(&t);
        }
    }
    Ok(())
}

struct ConstraintMaps {
    /// `(source slot, τ-slot, sign, trace, bd map)`.
    parts: Vec<(Slot, Slot, f64, LinOp, LinOp)>,
}

impl ConstraintMaps {
    fn new(sys: &EvoSystem) -> Result<Self> {
        let m = sys
            .mesh()
            .ok_or_else(|| Error::Precondition("constraint residual needs a mesh system".into()))?;
        let c = &m.complex;
        let bd = &m.bd;
        let parts = vec![
            (Slot::T, Slot::TauT, 1.0, bd.sdiv.trace_op(), bd_map(&bd.sdiv, &bd.sgrad, c)?.op),
            (Slot::H, Slot::TauH, 1.0, bd.curl.trace_op(), bd_map(&bd.curl, &bd.curl, c)?.op),
            (Slot::Q, Slot::TauQ, -1.0, bd.div.trace_op(), bd_map(&bd.div, &bd.grad, c)?.op),
        ];
        Ok(ConstraintMaps { parts })
    }

    fn targets(&self, series: &TimeSeries, n: usize) -> Vec<(Slot, Vec<f64>)> {
        self.parts
            .iter()
            .map(|(src, tau, sign, trace, map)| {
                let x = crate::linspace::cvec_from_real(series.slot_values(n, *src));
                let y = map.apply(&trace.apply(&x).expect("trace shape")).expect("map shape");
                (*tau, y.iter().map(|c| sign * c.re).collect())
            })
            .collect()
    }
}
