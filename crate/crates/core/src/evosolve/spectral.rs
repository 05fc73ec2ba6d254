//! Frequency-domain solve: weight by `e^{−νt}`, zero-pad, transform, solve
//! `(zM₀ + M₁(z) + A)Û = F̂` at `z_k = ν + iξ_k`, transform back and re-weight.

use rayon::prelude::*;
use nalgebra::Cholesky;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use super::stepper::{check_gate, gather, memoryless_b, scatter, sub_offsets, RealGrid, SimulateOptions, TRACE_ROWS};
use super::{diag_weights, real_flat, EvoSystem, SolverKind, SourceTerm, TimeSeries, WrapReport};
use crate::blockform::BlockOp;
use crate::error::{dim_check, Error, Result};
use crate::impedance::FrequencyPoint;
use crate::linspace::{CMat, CVec, RMat, C64};
use crate::material::{assemble_m1, Slot};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreqOptions {
    /// Minimum padded length as a multiple of the sample count.
    pub pad_factor: usize,
    /// Required damping `ν·L·dt` across the padded window.
    pub min_decay: f64,
    /// Cap on the padded length as a multiple of the sample count.
    pub max_pad_factor: usize,
    /// Tail energy fraction above which wrap-around is flagged.
    pub wrap_tol: f64,
    /// Solve every frequency directly, skipping the Hessenberg reduction.
    pub direct: bool,
}

impl Default for FreqOptions {
    fn default() -> Self {
        FreqOptions {
            pad_factor: 4,
            min_decay: 30.0,
            max_pad_factor: 64,
            wrap_tol: 1e-6,
            direct: false,
        }
    }
}

fn padded_len(samples: usize, dt: f64, nu: f64, o: &FreqOptions) -> usize {
    let base = o.pad_factor.max(2) * samples;
    let decay = (o.min_decay / (nu * dt)).ceil();
    let want = if decay.is_finite() { base.max(decay as usize) } else { base };
    smooth_len(want.min(o.max_pad_factor.max(o.pad_factor) * samples))
}

/// Smallest even `2^a 3^b 5^c` not below `n`.
fn smooth_len(n: usize) -> usize {
    let mut m = n.max(2);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 && m % 2 == 0 {
            return m;
        }
        m += 1;
    }
}

/// `ξ_k = 2πk/(L dt)`, folded to negative frequencies for `k > L/2`.
fn omega(k: usize, len: usize, dt: f64) -> f64 {
    let kk = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
    2.0 * std::f64::consts::PI * kk / (len as f64 * dt)
}

struct Transforms {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Transforms {
    fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Transforms {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    /// Coordinate-major signals `buf[c·L + n]` of `e^{−νt_n} x_n[c]`, transformed.
    fn forward_weighted(&self, series: &[Vec<f64>], coords: usize, dt: f64, nu: f64) -> Vec<C64> {
        let l = self.len;
        let mut buf = vec![C64::new(0.0, 0.0); coords * l];
        for (n, x) in series.iter().enumerate() {
            let w = (-nu * n as f64 * dt).exp();
            for c in 0..coords {
                buf[c * l + n] = C64::from(w * x[c]);
            }
        }
        for c in 0..coords {
            self.fwd.process(&mut buf[c * l..(c + 1) * l]);
        }
        buf
    }

    /// Fills `k > L/2` by conjugate symmetry, inverts and scales by `1/L`.
    fn inverse_real(&self, buf: &mut [C64], coords: usize) {
        let l = self.len;
        for c in 0..coords {
            let sig = &mut buf[c * l..(c + 1) * l];
            for k in l / 2 + 1..l {
                sig[k] = sig[l - k].conj();
            }
            self.inv.process(sig);
            let s = 1.0 / l as f64;
            for v in sig.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Solution of a pencil system `(∂M₀ + N)x = f`.
#[derive(Clone, Debug)]
pub struct PencilSolution {
    pub states: Vec<Vec<f64>>,
    pub wrap: WrapReport,
}

/// Unitary reduction of `(zM₀ + N)` for `GM₀` symmetric positive definite:
/// `L⁻¹G(zM₀ + N)L⁻ᵀ = Q(zI + H)Qᵀ` with `GM₀ = LLᵀ` and `H` upper Hessenberg.
struct HessenbergPencil {
    n: usize,
    /// Row `i` of `H` from column `max(i, 1) − 1` on, rows concatenated.
    h: Vec<f64>,
    row_start: Vec<usize>,
    /// `Qᵀ L⁻¹ G`.
    p: RMat,
    /// `L⁻ᵀ Q`.
    r: RMat,
}

impl HessenbergPencil {
    fn new(m0: &RMat, nmat: &RMat, gram: &[f64]) -> Option<Self> {
        let n = m0.nrows();
        let g = RMat::from_diagonal(&nalgebra::DVector::from_column_slice(gram));
        let gm = &g * m0;
        let asym = (&gm - gm.transpose()).amax();
        if asym > 1e-12 * gm.amax().max(1.0) {
            return None;
        }
        let gm = (&gm + gm.transpose()) * 0.5;
        let chol = Cholesky::new(gm)?;
        let l = chol.l();
        let linv_g = l.solve_lower_triangular(&g)?;
        let y = &linv_g * nmat;
        let w = l.solve_lower_triangular(&y.transpose())?.transpose();
        let (q, h) = w.hessenberg().unpack();
        let p = q.transpose() * &linv_g;
        let r = l.transpose().solve_upper_triangular(&q)?;
        let mut hp = Vec::new();
        let mut row_start = Vec::with_capacity(n + 1);
        for i in 0..n {
            row_start.push(hp.len());
            for j in i.saturating_sub(1)..n {
                hp.push(h[(i, j)]);
            }
        }
        row_start.push(hp.len());
        Some(HessenbergPencil { n, h: hp, row_start, p, r })
    }

    /// Solves `(zI + H)u = b` in place by adjacent-row partial pivoting.
    fn solve(&self, z: C64, b: &mut [C64], work: &mut Vec<C64>) -> bool {
        let n = self.n;
        let zero = C64::new(0.0, 0.0);
        // Position of `(i, j)`, `j ≥ i − 1`, in the packed rows.
        let at = |i: usize, j: usize| self.row_start[i] + j - i.saturating_sub(1);
        work.clear();
        work.extend(self.h.iter().map(|&x| C64::from(x)));
        for i in 0..n {
            work[at(i, i)] += z;
        }
        for j in 0..n.saturating_sub(1) {
            let (lo, hi) = work.split_at_mut(self.row_start[j + 1]);
            let rj = &mut lo[at(j, j)..];
            let rk = &mut hi[..n - j];
            if rk[0].norm() > rj[0].norm() {
                rj.swap_with_slice(rk);
                b.swap(j, j + 1);
            }
            if rj[0] == zero {
                return false;
            }
            let m = rk[0] / rj[0];
            if m != zero {
                for (x, y) in rk[1..].iter_mut().zip(&rj[1..]) {
                    *x -= m * y;
                }
                let bj = b[j];
                b[j + 1] -= m * bj;
            }
            rk[0] = zero;
        }
        for i in (0..n).rev() {
            // Row i holds columns i.. after elimination, starting at `at(i, i)`.
            let row = &work[at(i, i)..self.row_start[i + 1]];
            let mut s = b[i];
            for (c, v) in row[1..].iter().enumerate() {
                s -= v * b[i + 1 + c];
            }
            if row[0] == zero {
                return false;
            }
            b[i] = s / row[0];
        }
        b.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Frequency solve of `(∂M₀ + N)x = f` with `GM₀` symmetric positive definite for the
/// diagonal Gram `gram`; `sources[n]` sampled at `t_n = n·dt`.
pub fn freq_solve_pencil(
    m0: &RMat,
    nmat: &RMat,
    gram: &[f64],
    sources: &[Vec<f64>],
    dt: f64,
    nu: f64,
    opts: &FreqOptions,
) -> Result<PencilSolution> {
    let n = m0.nrows();
    dim_check("pencil N", n, nmat.nrows())?;
    dim_check("pencil gram", n, gram.len())?;
    if !(dt > 0.0 && nu > 0.0) {
        return Err(Error::Precondition(format!("need dt > 0 and nu > 0, got dt = {dt}, nu = {nu}")));
    }
    let pencil = HessenbergPencil::new(m0, nmat, gram)
        .ok_or_else(|| Error::Precondition("G M0 is not symmetric positive definite".into()))?;
    let len = padded_len(sources.len(), dt, nu, opts);
    solve_with_pencil(&pencil, sources, dt, nu, len, opts, &Transforms::new(len))
}

fn solve_with_pencil(
    pencil: &HessenbergPencil,
    sources: &[Vec<f64>],
    dt: f64,
    nu: f64,
    len: usize,
    opts: &FreqOptions,
    tf: &Transforms,
) -> Result<PencilSolution> {
    let n = pencil.n;
    let g: Vec<Vec<f64>> = sources
        .iter()
        .map(|f| {
            dim_check("pencil source", pencil.p.ncols(), f.len()).map(|_| {
                let v = &pencil.p * RMat::from_column_slice(f.len(), 1, f);
                v.as_slice().to_vec()
            })
        })
        .collect::<Result<_>>()?;
    let mut buf = tf.forward_weighted(&g, n, dt, nu);
    let solved: Vec<Vec<C64>> = (0..=len / 2)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n * n),
            |work, k| {
                let z = C64::new(nu, omega(k, len, dt));
                let mut b: Vec<C64> = (0..n).map(|c| buf[c * len + k]).collect();
                if pencil.solve(z, &mut b, work) {
                    Ok(b)
                } else {
                    Err(Error::Numerical(format!("shifted Hessenberg solve failed at z = {z}")))
                }
            },
        )
        .collect::<Result<_>>()?;
    for (k, b) in solved.into_iter().enumerate() {
        for (c, v) in b.into_iter().enumerate() {
            buf[c * len + k] = v;
        }
    }
    tf.inverse_real(&mut buf, n);
    let wrap = tail_report(&buf, n, len, opts);
    let states = (0..sources.len())
        .map(|t| {
            let u = RMat::from_iterator(n, 1, (0..n).map(|c| buf[c * len + t].re));
            let e = (nu * t as f64 * dt).exp();
            (&pencil.r * u).iter().map(|x| x * e).collect()
        })
        .collect();
    Ok(PencilSolution { states, wrap })
}

fn tail_report(buf: &[C64], coords: usize, len: usize, opts: &FreqOptions) -> WrapReport {
    let start = len - len / 20;
    let (mut tail, mut total) = (0.0, 0.0);
    for c in 0..coords {
        for (t, v) in buf[c * len..(c + 1) * len].iter().enumerate() {
            let e = v.norm_sqr();
            total += e;
            if t >= start {
                tail += e;
            }
        }
    }
    let tail_fraction = if total > 0.0 { tail / total } else { 0.0 };
    WrapReport {
        padded_len: len,
        tail_fraction,
        warning: tail_fraction > opts.wrap_tol,
    }
}

fn merge(a: Option<WrapReport>, b: WrapReport) -> WrapReport {
    match a {
        None => b,
        Some(a) => WrapReport {
            padded_len: a.padded_len,
            tail_fraction: a.tail_fraction.max(b.tail_fraction),
            warning: a.warning || b.warning,
        },
    }
}

const X_SLOTS: [Slot; 6] = [Slot::V, Slot::T, Slot::E, Slot::H, Slot::Theta, Slot::Q];

/// Frequency-domain solve on the grid of `sources`. With a memoryless boundary and
/// `GM₀` positive definite on the field slots, the τ-slots are eliminated and each
/// component is reduced once to Hessenberg form; otherwise each frequency is solved
/// directly with `K(z)` on the τ-slots.
pub fn freq_solve(
    sys: &EvoSystem,
    sources: &SourceTerm,
    gate: SimulateOptions,
    opts: FreqOptions,
) -> Result<TimeSeries> {
    check_gate(&gate)?;
    if !sys.is_real() {
        return Err(Error::Precondition("time-domain solvers need real coefficients".into()));
    }
    dim_check("source width", sys.layout().total_dim(), sources.sample(0).len())?;
    let nu = gate.nu;
    let dt = sources.dt();
    let len = padded_len(sources.samples().len(), dt, nu, &opts);
    let tf = Transforms::new(len);
    let mut out = None;
    if sys.boundary().is_memoryless() && !opts.direct {
        out = fast_path(sys, sources, nu, len, &opts, &tf)?;
    }
    let (mut states, wrap) = match out {
        Some(r) => r,
        None => general_path(sys, sources, nu, len, &opts, &tf)?,
    };
    let w = integrate_trace(sys, &states, dt, nu, &tf)?;
    if states.is_empty() {
        states.push(vec![0.0; sys.layout().total_dim()]);
    }
    let mut ts = TimeSeries::new(sys, dt, nu, SolverKind::Freq, states, w);
    ts.wrap = Some(wrap);
    Ok(ts)
}

type Solved = (Vec<Vec<f64>>, WrapReport);

fn fast_path(
    sys: &EvoSystem,
    sources: &SourceTerm,
    nu: f64,
    len: usize,
    opts: &FreqOptions,
    tf: &Transforms,
) -> Result<Option<Solved>> {
    let a = RealGrid::from_block(sys.a())?;
    let m0 = RealGrid::from_block(sys.m0())?;
    let m1 = RealGrid::from_block(sys.m1_static())?;
    let b0 = memoryless_b(sys)?;
    let mut red = RealGrid::new(a.dims().to_vec());
    for r in X_SLOTS {
        for c in X_SLOTS {
            let (i, j) = (r.index(), c.index());
            if let Some(m) = a.get(i, j) {
                red.add(i, j, m, 1.0);
            }
            if let Some(m) = m1.get(i, j) {
                red.add(i, j, m, 1.0);
            }
        }
    }
    // τ_i = −Σ_j B₀(i,j) y_j with y_j = A[τ_j, src_j] x_{src_j}.
    for r in X_SLOTS {
        for &(bi, tau_i, _) in &TRACE_ROWS {
            let Some(a_rt) = a.get(r.index(), tau_i.index()) else { continue };
            for &(bj, tau_j, src_j) in &TRACE_ROWS {
                if let (Some(bij), Some(tr)) = (b0.get(bi, bj), a.get(tau_j.index(), src_j.index())) {
                    red.add(r.index(), src_j.index(), &(a_rt * bij * tr), -1.0);
                }
            }
        }
    }
    let gram = diag_weights(sys.layout().spaces())?;
    let offs = red.offsets();
    let x_idx: Vec<usize> = X_SLOTS.iter().map(|s| s.index()).collect();
    let mut comps = components_with(&red, &m0, &x_idx);
    comps.retain(|c| !c.is_empty());

    let nx = sys.layout().total_dim();
    let mut states = vec![vec![0.0; nx]; sources.samples().len()];
    let mut wrap = None;
    for comp in comps {
        let m0c = m0.flatten(&comp, &comp);
        let nc = red.flatten(&comp, &comp);
        let gc = gather(&gram, &offs, &comp);
        let Some(pencil) = HessenbergPencil::new(&m0c, &nc, &gc) else {
            return Ok(None);
        };
        let src: Vec<Vec<f64>> = sources.samples().iter().map(|f| gather(f, &offs, &comp)).collect();
        let sol = solve_with_pencil(&pencil, &src, sources.dt(), nu, len, opts, tf)?;
        wrap = Some(merge(wrap, sol.wrap));
        for (st, x) in states.iter_mut().zip(&sol.states) {
            scatter(st, &offs, &comp, x);
        }
    }
    // Recover the τ-slots.
    for st in states.iter_mut() {
        let y: Vec<RMat> = TRACE_ROWS
            .iter()
            .map(|&(_, tau, src)| {
                let x = RMat::from_column_slice(a.dims()[src.index()], 1, &st[offs[src.index()]..offs[src.index() + 1]]);
                match a.get(tau.index(), src.index()) {
                    Some(tr) => tr * x,
                    None => RMat::zeros(a.dims()[tau.index()], 1),
                }
            })
            .collect();
        for &(bi, tau_i, _) in &TRACE_ROWS {
            let mut t = RMat::zeros(a.dims()[tau_i.index()], 1);
            for &(bj, _, _) in &TRACE_ROWS {
                if let Some(bij) = b0.get(bi, bj) {
                    t -= bij * &y[bj];
                }
            }
            st[offs[tau_i.index()]..offs[tau_i.index() + 1]].copy_from_slice(t.as_slice());
        }
    }
    Ok(Some((states, wrap.unwrap_or(WrapReport { padded_len: len, tail_fraction: 0.0, warning: false }))))
}

/// Components over `keep` of the union of the two block patterns.
fn components_with(a: &RealGrid, b: &RealGrid, keep: &[usize]) -> Vec<Vec<usize>> {
    let mut u = RealGrid::new(a.dims().to_vec());
    for &i in keep {
        for &j in keep {
            if a.get(i, j).is_some() || b.get(i, j).is_some() {
                let (r, c) = (a.dims()[i], a.dims()[j]);
                u.add(i, j, &RMat::from_element(r, c, 1.0), 1.0);
            }
        }
    }
    u.components().into_iter().map(|c| c.into_iter().filter(|i| keep.contains(i)).collect()).collect()
}

fn general_path(
    sys: &EvoSystem,
    sources: &SourceTerm,
    nu: f64,
    len: usize,
    opts: &FreqOptions,
    tf: &Transforms,
) -> Result<Solved> {
    let layout = sys.layout();
    let nx = layout.total_dim();
    let probe = FrequencyPoint::from_parts(nu, 1.0)?;
    let structure = sys.m0().add(&assemble_m1(sys.material(), sys.boundary(), probe, layout)?)?.add(sys.a())?;
    let comps = structure.components();
    let dims: Vec<usize> = Slot::ALL.iter().map(|&s| layout.dim(s)).collect();
    let offs = sub_offsets(&dims, &(0..9).collect::<Vec<_>>());
    let dt = sources.dt();
    let mut buf = tf.forward_weighted(sources.samples(), nx, dt, nu);
    let idx: Vec<Vec<usize>> = comps
        .iter()
        .map(|comp| comp.iter().flat_map(|&i| offs[i]..offs[i + 1]).collect())
        .collect();
    let solved: Vec<Vec<CVec>> = (0..=len / 2)
        .into_par_iter()
        .map(|k| {
            let z = FrequencyPoint::from_parts(nu, omega(k, len, dt))?;
            let m1 = assemble_m1(sys.material(), sys.boundary(), z, layout)?;
            let op: BlockOp = sys.m0().scale(z.z()).add(&m1)?.add(sys.a())?;
            comps
                .iter()
                .zip(&idx)
                .map(|(comp, idx)| {
                    let m: CMat = op.flatten_sub(comp, comp).into_mat();
                    let rhs = CVec::from_iterator(idx.len(), idx.iter().map(|&c| buf[c * len + k]));
                    m.lu().solve(&rhs).ok_or_else(|| {
                        Error::Numerical(format!("frequency system singular at z = {}", z.z()))
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    for (k, sols) in solved.into_iter().enumerate() {
        for (idx, sol) in idx.iter().zip(sols) {
            for (c, v) in idx.iter().zip(sol.iter()) {
                buf[c * len + k] = *v;
            }
        }
    }
    tf.inverse_real(&mut buf, nx);
    let wrap = tail_report(&buf, nx, len, opts);
    let states = (0..sources.samples().len())
        .map(|t| {
            let e = (nu * t as f64 * dt).exp();
            (0..nx).map(|c| buf[c * len + t].re * e).collect()
        })
        .collect();
    Ok((states, wrap))
}

/// `w = ∂⁻¹ y_T` with `y_T = A[τ_T, v]v`, computed spectrally as `ŷ_T / z`.
fn integrate_trace(sys: &EvoSystem, states: &[Vec<f64>], dt: f64, nu: f64, tf: &Transforms) -> Result<Vec<Vec<f64>>> {
    let tr = real_flat(sys.a().block(Slot::TauT.index(), Slot::V.index()).expect("trace block present"))?;
    let off = sys.layout().offsets()[Slot::V.index()];
    let nv = sys.layout().dim(Slot::V);
    let nw = sys.w_dim();
    let y: Vec<Vec<f64>> = states
        .iter()
        .map(|x| (&tr * RMat::from_column_slice(nv, 1, &x[off..off + nv])).as_slice().to_vec())
        .collect();
    let len = tf.len;
    let mut buf = tf.forward_weighted(&y, nw, dt, nu);
    for k in 0..=len / 2 {
        let z = C64::new(nu, omega(k, len, dt));
        for c in 0..nw {
            buf[c * len + k] /= z;
        }
    }
    tf.inverse_real(&mut buf, nw);
    Ok((0..states.len())
        .map(|t| {
            let e = (nu * t as f64 * dt).exp();
            (0..nw).map(|c| buf[c * len + t].re * e).collect()
        })
        .collect())
}
