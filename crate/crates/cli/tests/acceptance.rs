//! Acceptance criteria, one line each. Runs without the libtest harness so the lines
//! land in the normal test output; exits nonzero when any criterion fails.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tpem_core::bdspace::{bd_ibp_residual, BdPair};
use tpem_core::impedance::b_positivity_bounds;
use tpem_core::linspace::{inverse, operator_norm, positivity_constant};
use tpem_core::material::{
    congruence_chain, eddy_current_eps, schur_m44_m55, shifted_operator, assemble_m0, COND_M44,
};
use tpem_core::mesh::{ibp_boundary_pairing, OpName};
use tpem_core::verify::l2_difference;
use tpem_core::random::{random_accretive, random_dense_space, random_diagonal_space, random_rvec, seeded};
use tpem_core::{
    build_complex, certify, check_causality, check_norm_bound, freq_solve, kcheck, simulate, BlockOp, BoundaryTriple,
    EvoSystem, FieldDims, FreqOptions, FrequencyPoint, HSpace, LinOp, MaterialData, MaterialSpec, MeshBdSpaces,
    SearchParams, SimulateOptions, Slot, SourceTerm, SystemLayout, TripleScales,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit_s: u64, t: Duration, detail: String) -> Outcome {
    ensure(t <= Duration::from_secs(limit_s), format!("{detail}; {:.2}s (limit {limit_s}s)", t.as_secs_f64()))
}

fn k_formulas() -> Outcome {
    let t0 = Instant::now();
    let r = kcheck([3, 4, 5], 100, 42, None).map_err(|e| e.to_string())?;
    let detail = format!("max |K B - I|_F = {:.2e} over {} trials", r.max_residual, r.trials);
    ensure(r.max_residual <= 1e-9, detail.clone())?;
    within(5, t0.elapsed(), detail)
}

fn inverse_bounds() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seeded(2);
    let (mut norm_gap, mut re_gap) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..100usize {
        let n = 1 + k % 8;
        let s = if k % 2 == 0 { random_diagonal_space(n, &mut rng) } else { random_dense_space(n, &mut rng) };
        let a = random_accretive(&s, 0.05 + 0.01 * (k % 7) as f64, &mut rng);
        let c = positivity_constant(&a).map_err(|e| e.to_string())?;
        let inv = inverse(&a).map_err(|e| e.to_string())?;
        let na = operator_norm(&a);
        norm_gap = norm_gap.max(operator_norm(&inv) - 1.0 / c);
        re_gap = re_gap.max(c / (na * na) - positivity_constant(&inv).map_err(|e| e.to_string())?);
    }
    let detail = format!("max(|a^-1| - 1/c) = {norm_gap:.2e}, max(c|a|^-2 - pc(a^-1)) = {re_gap:.2e}");
    ensure(norm_gap <= 1e-10 && re_gap <= 1e-10, detail.clone())?;
    within(5, t0.elapsed(), detail)
}

fn selfadjoint_defect(m: &BlockOp) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.n_rows() {
        for j in 0..m.n_cols() {
            let a = m.block_or_zero(i, j);
            let b = tpem_core::linspace::adjoint(&m.block_or_zero(j, i));
            for (x, y) in a.mat().iter().zip(b.mat().iter()) {
                worst = worst.max((x - y).norm());
            }
        }
    }
    worst
}

fn structure() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seeded(3);
    let (mut skew, mut m0, mut cg, mut dc, mut dual, mut tri, mut ibp) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for cells in 2..=6usize {
        let c = Arc::new(build_complex([cells; 3], [1.0; 3]).map_err(|e| e.to_string())?);
        let bd = Arc::new(MeshBdSpaces::build(&c).map_err(|e| e.to_string())?);
        cg = cg.max(c.op(OpName::Curl).mul(c.op(OpName::Grad)).max_abs());
        dc = dc.max(c.op(OpName::Div).mul(c.op(OpName::Curl)).max_abs());
        for name in [OpName::Grad, OpName::Curl, OpName::SGrad] {
            for _ in 0..10 {
                let mut u = random_rvec(c.domain(name).dim(), &mut rng);
                c.restrict_to_homog(name, &mut u);
                let w = random_rvec(c.codomain(name).dim(), &mut rng);
                dual = dual.max(ibp_boundary_pairing(&c, name, &u, &w).map_err(|e| e.to_string())?.abs());
            }
        }
        for name in OpName::ALL {
            let b = bd.get(name);
            let ti = b.trace_op().compose(&b.inject_op()).map_err(|e| e.to_string())?;
            let d = ti.sub(&LinOp::identity(b.space())).map_err(|e| e.to_string())?;
            tri = tri.max(d.mat().iter().fold(0.0, |m, x| m.max(x.norm())));
        }
        if cells <= 4 {
            for name in [OpName::Grad, OpName::SGrad, OpName::Curl] {
                let pair = BdPair::new(&c, name).map_err(|e| e.to_string())?;
                for _ in 0..100 {
                    let big = random_rvec(pair.dual.parent().dim(), &mut rng);
                    let small = random_rvec(pair.primal.parent().dim(), &mut rng);
                    ibp = ibp.max(bd_ibp_residual(&c, &pair, &big, &small).map_err(|e| e.to_string())?);
                }
            }
        }
        let layout = SystemLayout::from_mesh(&c, &bd);
        let d = MaterialData::random(&layout, 0.3, &mut rng).map_err(|e| e.to_string())?;
        m0 = m0.max(selfadjoint_defect(&assemble_m0(&d, &layout).map_err(|e| e.to_string())?));
        let t = BoundaryTriple::from_mesh(&c, &bd, TripleScales::default()).map_err(|e| e.to_string())?;
        let sys = EvoSystem::from_mesh(c, bd, d, t).map_err(|e| e.to_string())?;
        skew = skew.max(sys.skew_residual());
    }
    let detail = format!(
        "2^3..6^3: |A+A*| {skew:.1e}, |M0-M0*| {m0:.1e}, curl grad {cg:.1e}, div curl {dc:.1e}, duality {dual:.1e}, \
         trace inject - id {tri:.1e}, bd ibp {ibp:.1e}"
    );
    ensure(
        skew <= 1e-12 && m0 == 0.0 && cg == 0.0 && dc == 0.0 && dual <= 1e-13 && tri <= 1e-12 && ibp <= 1e-12,
        detail.clone(),
    )?;
    within(60, t0.elapsed(), detail)
}

fn b_real_part() -> Outcome {
    let t0 = Instant::now();
    let (mut gap_b, mut gap_k, mut n_z) = (f64::INFINITY, f64::INFINITY, 0usize);
    for k in 0..50u64 {
        let t = BoundaryTriple::synthetic([3, 4, 5], 500 + k, TripleScales::default());
        let nu = t.alpha_norm() * (1.1 + (k % 5) as f64);
        let b = b_positivity_bounds(&t, nu).map_err(|e| e.to_string())?;
        for s in &b.samples {
            gap_b = gap_b.min(s.pc_re_b - b.re_b);
            gap_k = gap_k.min(s.pc_re_k - s.k_bound);
            n_z += 1;
        }
    }
    let detail = format!("min pc(Re B) - (1-|a|/nu) = {gap_b:.2e}, min pc(Re K) - bound = {gap_k:.2e} at {n_z} z");
    ensure(gap_b >= -1e-12 && gap_k >= -1e-10 && n_z > 0, detail.clone())?;
    within(10, t0.elapsed(), detail)
}

/// Eliminates `T`, `H` and `θ̃` from the 4×4 matrix on `(E, T, H, θ̃)` at `ν = 1`.
fn scalar_elimination(c: f64, e: f64, l: f64, p: f64, th: f64, eps: f64, mu: f64, g: f64) -> [f64; 3] {
    let ci = 1.0 / c;
    let mut m = [
        [eps + e * ci * e, 0.0, 0.0, p * th + e * ci * l * th],
        [0.0, ci, ci * e, ci * l * th],
        [0.0, e * ci, mu, 0.0],
        [p * th + e * ci * l * th, ci * l * th, 0.0, g + th * l * ci * l * th],
    ];
    for piv in [1usize, 2, 3] {
        let row = m[piv];
        for i in 0..4 {
            if i != piv {
                let f = m[i][piv] / row[piv];
                for j in 0..4 {
                    m[i][j] -= f * row[j];
                }
            }
        }
    }
    [m[2][2], m[0][0], m[3][3]]
}

fn congruence() -> Outcome {
    let e1 = |l: &str| HSpace::euclidean(1, l);
    let t = BoundaryTriple::trivial(&e1("BD(grad)"), &e1("BD(curl)"), &e1("BD(Grad)"));
    let layout = SystemLayout::abstract_layout(FieldDims { displacement: 1, sym: 1, vector: 1, scalar: 1 }, &t);
    let err = |e: tpem_core::Error| e.to_string();
    let d = MaterialData::from_spec(&MaterialSpec::scalar_sample(), &layout).map_err(err)?;
    let chain = congruence_chain(&d, &t, &layout, FrequencyPoint::from_parts(1.0, 0.0).map_err(err)?).map_err(err)?;
    let got: Vec<f64> = chain.final_diag.iter().map(|op| op.mat()[(0, 0)].re).collect();
    let want = scalar_elimination(2.0, 1.0, 1.0, 0.5, 1.0, 1.0, 3.0, 2.0);
    let diag_err = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    let inertia = chain.log.inertia_constant() == Some(true);
    let eddy = d.with_eps(eddy_current_eps(&d).map_err(err)?, &layout).map_err(err)?;
    let m44 = schur_m44_m55(&eddy).map_err(err)?.m44.mat()[(0, 0)].norm();
    let rejected = certify(&eddy, &t, &layout, &SearchParams::default()).map_err(err)?;
    let with_sigma = eddy.with_sigma(LinOp::identity(layout.vector()), &layout).map_err(err)?;
    let accepted = certify(&with_sigma, &t, &layout, &SearchParams::default()).map_err(err)?;
    let detail = format!(
        "diag ({:.6}, {:.6}, {:.6}) err {diag_err:.1e}, inertia constant {inertia}, eddy m44 {m44:.1e}, \
         sigma=0 rejected on {:?}, sigma=1 accepted {}",
        got[0],
        got[1],
        got[2],
        rejected.worst_condition.as_deref().unwrap_or("-"),
        accepted.accepted
    );
    ensure(
        diag_err <= 1e-10
            && inertia
            && m44 <= 1e-12
            && !rejected.accepted
            && rejected.worst_condition.as_deref() == Some(COND_M44)
            && accepted.accepted,
        detail,
    )
}

fn certificate_vs_direct() -> Outcome {
    let err = |e: tpem_core::Error| e.to_string();
    let (mut accepted, mut worst, mut n_z) = (0usize, f64::INFINITY, 0usize);
    for seed in 0..50u64 {
        let mut rng = seeded(600 + seed);
        let t = BoundaryTriple::synthetic([2, 3, 2], seed, TripleScales { q: 0.5, alpha: 0.5, beta: 0.5 });
        let layout = SystemLayout::abstract_layout(FieldDims { displacement: 3, sym: 4, vector: 3, scalar: 2 }, &t);
        let d = MaterialData::random(&layout, 0.3, &mut rng).map_err(err)?;
        let cert = certify(&d, &t, &layout, &SearchParams::default()).map_err(err)?;
        if !cert.accepted || !cert.schur_route {
            continue;
        }
        accepted += 1;
        let c = cert.c.ok_or("accepted certificate without c")?;
        let nu_min = cert.nu_min.ok_or("accepted certificate without nu_min")?;
        for z in &cert.z_samples {
            if (z.nu() - nu_min).abs() > 1e-12 * nu_min {
                return Err(format!("sample at Re z = {} differs from nu_min = {nu_min}", z.nu()));
            }
            let op = shifted_operator(&d, &t, &layout, *z).map_err(err)?.flatten();
            worst = worst.min(positivity_constant(&op).map_err(err)? - c);
            n_z += 1;
        }
    }
    ensure(
        accepted >= 10 && worst >= -1e-10,
        format!("{accepted}/50 accepted, min direct pc - c = {worst:.2e} over {n_z} z"),
    )
}

fn decoupled_mesh(cells: usize) -> Result<EvoSystem, String> {
    let err = |e: tpem_core::Error| e.to_string();
    let c = build_complex([cells; 3], [1.0; 3]).map_err(err)?;
    let bd = MeshBdSpaces::build(&c).map_err(err)?;
    let layout = SystemLayout::from_mesh(&c, &bd);
    let d = MaterialData::from_spec(&MaterialSpec::default(), &layout).map_err(err)?;
    let t = BoundaryTriple::trivial(bd.grad.space(), bd.curl.space(), bd.sgrad.space());
    EvoSystem::from_mesh(Arc::new(c), Arc::new(bd), d, t).map_err(err)
}

fn causality() -> Outcome {
    let t0 = Instant::now();
    let err = |e: tpem_core::Error| e.to_string();
    let c = Arc::new(build_complex([3; 3], [1.0; 3]).map_err(err)?);
    let bd = Arc::new(MeshBdSpaces::build(&c).map_err(err)?);
    let layout = SystemLayout::from_mesh(&c, &bd);
    let mut rng = seeded(7);
    let d = MaterialData::random(&layout, 0.3, &mut rng).map_err(err)?;
    let t = BoundaryTriple::from_mesh(&c, &bd, TripleScales::default()).map_err(err)?;
    let sys = EvoSystem::from_mesh(c, bd, d, t).map_err(err)?;
    let dt = 0.02;
    let prof = random_rvec(sys.layout().dim(Slot::E), &mut rng);
    let f = SourceTerm::gaussian_pulse(sys.layout(), 200, dt, Slot::E, &prof, 50.0 * dt, 0.1).map_err(err)?;
    let opts = SimulateOptions { nu: 1.0, certificate: None, override_certificate: true };
    let s = simulate(&sys, &f, opts).map_err(err)?;
    let pre = check_causality(&s, 50);
    let post = (50..=200).map(|n| s.state_norm(n)).fold(0.0, f64::max);
    let detail = format!("onset step {}, max pre-onset norm {pre:.1e}, max post-onset {post:.2e}", f.onset());
    ensure(f.onset() == 50 && pre <= 1e-13 && post > 0.0, detail.clone())?;
    within(30, t0.elapsed(), detail)
}

fn norm_bound() -> Outcome {
    let t0 = Instant::now();
    let err = |e: tpem_core::Error| e.to_string();
    let sys = decoupled_mesh(2)?;
    let cert = certify(sys.material(), sys.boundary(), sys.layout(), &SearchParams::fixed(1.0)).map_err(err)?;
    let c = cert.c.ok_or("decoupled data rejected")?;
    let mesh = sys.mesh().ok_or("mesh system")?;
    let mut phi = mesh.complex.sample_scalar(|x| (3.0 * x[0]).sin() + x[1] * x[2] + 1.0);
    mesh.complex.restrict_to_homog(OpName::Grad, &mut phi);
    let prof = mesh.complex.op(OpName::Grad).matvec(&phi);
    let total = 4.0;
    let mut slacks = Vec::new();
    for n in [64usize, 128, 256, 512] {
        let dt = total / n as f64;
        let f = SourceTerm::separable(sys.layout(), n, dt, Slot::E, &prof, |t| {
            (-(t - 1.5f64).powi(2)).exp() * (1.3 * t).cos()
        })
        .map_err(err)?;
        let opts = SimulateOptions { nu: 1.0, certificate: Some(&cert), override_certificate: false };
        let s = simulate(&sys, &f, opts).map_err(err)?;
        slacks.push(check_norm_bound(&s, &f, c).map_err(err)?);
    }
    let monotone = slacks.windows(2).all(|w| w[1] >= w[0]);
    let detail = format!(
        "c = {c}, slack at T/64..T/512: {}",
        slacks.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(", ")
    );
    ensure(monotone && slacks[3] >= -0.05, detail.clone())?;
    within(60, t0.elapsed(), detail)
}

fn cross_validation() -> Outcome {
    let t0 = Instant::now();
    let err = |e: tpem_core::Error| e.to_string();
    let sys = decoupled_mesh(4)?;
    let mesh = sys.mesh().ok_or("mesh system")?;
    let prof = mesh.complex.sample_components(3, |x| vec![(2.0 * x[0]).sin(), x[1] * x[2], x[2].cos()]);
    let total = 4.0;
    let mut diffs = Vec::new();
    for n in [256usize, 512] {
        let dt = total / n as f64;
        let f = SourceTerm::separable(sys.layout(), n, dt, Slot::E, &prof, |t| (-((t - 1.5) / 0.5f64).powi(2)).exp())
            .map_err(err)?;
        let opts = SimulateOptions { nu: 2.0, certificate: None, override_certificate: true };
        let a = simulate(&sys, &f, opts).map_err(err)?;
        let b = freq_solve(&sys, &f, opts, FreqOptions::default()).map_err(err)?;
        diffs.push(l2_difference(&a.states, &b.states, dt));
    }
    let ratio = diffs[0] / diffs[1];
    let detail = format!("4^3, L2 diff {:.3e} -> {:.3e}, ratio {ratio:.3}", diffs[0], diffs[1]);
    ensure((1.6..=2.4).contains(&ratio), detail.clone())?;
    within(60, t0.elapsed(), detail)
}

fn reproducibility() -> Outcome {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_tpem"))
            .args(["kcheck", "--dims", "3,4,5", "--trials", "100", "--seed", "42"])
            .output()
            .map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    let ok = a.status.success() && b.status.success() && a.stdout == b.stdout && !a.stdout.is_empty();
    ensure(ok, format!("two runs, {} bytes each, identical = {}", a.stdout.len(), a.stdout == b.stdout))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("K-formula exactness", k_formulas),
        ("inverse bounds for accretive operators", inverse_bounds),
        ("structural exactness on meshes", structure),
        ("real-part structure of B and K", b_real_part),
        ("congruence chain and eddy-current limit", congruence),
        ("certificate against direct spectra", certificate_vs_direct),
        ("causality", causality),
        ("solution bound under dt refinement", norm_bound),
        ("time/frequency solver cross-validation", cross_validation),
        ("kcheck reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("acceptance {:>2} {tag}: {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
