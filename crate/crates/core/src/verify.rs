//! Invariant suites run by `verify`: each check records a measured value against a limit.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bdspace::{bd_ibp_residual, BdPair, MeshBdSpaces};
use crate::blockform::{positivity_constant_blockwise, BlockOp};
use crate::error::{Error, Result};
use crate::evosolve::{
    check_causality, energy, freq_solve, simulate, ColumnOps, EvoSystem, FreqOptions, SimulateOptions, SourceTerm,
};
use crate::impedance::{assemble_b, b_positivity_bounds, kcheck, BoundaryTriple, FrequencyPoint, TripleScales};
use crate::linspace::{HSpace, LinOp};
use crate::material::{
    assemble_m0, certify, congruence_chain, eddy_current_eps, schur_m44_m55, FieldDims, MaterialData, MaterialSpec,
    SearchParams, Slot, SystemLayout, COND_M44,
};
use crate::mesh::{build_complex, ibp_boundary_pairing, OpName, SpatialComplex};
use crate::random::{random_rvec, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Bd,
    Mesh,
    Impedance,
    Material,
    Evosolve,
    All,
}

impl Suite {
    pub const EACH: [Suite; 5] = [Suite::Bd, Suite::Mesh, Suite::Impedance, Suite::Material, Suite::Evosolve];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Bd => "bd",
            Suite::Mesh => "mesh",
            Suite::Impedance => "impedance",
            Suite::Material => "material",
            Suite::Evosolve => "evosolve",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .iter()
            .chain(&[Suite::All])
            .find(|x| x.name() == s)
            .copied()
            .ok_or_else(|| Error::Precondition(format!("unknown suite `{s}` (expected bd, mesh, impedance, material, evosolve or all)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub limit: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

struct Recorder {
    suite: Suite,
    checks: Vec<Check>,
}

impl Recorder {
    fn new(suite: Suite) -> Self {
        Recorder { suite, checks: Vec::new() }
    }

    fn record(&mut self, name: &str, measured: Result<f64>, relation: Relation, limit: f64) {
        let (m, detail) = match measured {
            Ok(v) => (v, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        let passed = match relation {
            Relation::AtMost => m <= limit,
            Relation::AtLeast => m >= limit,
        };
        self.checks.push(Check {
            suite: self.suite,
            name: name.to_string(),
            measured: m,
            relation,
            limit,
            passed,
            detail,
        });
    }

    fn at_most(&mut self, name: &str, measured: Result<f64>, limit: f64) {
        self.record(name, measured, Relation::AtMost, limit);
    }

    fn at_least(&mut self, name: &str, measured: Result<f64>, limit: f64) {
        self.record(name, measured, Relation::AtLeast, limit);
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let suites: Vec<Suite> = if suite == Suite::All { Suite::EACH.to_vec() } else { vec![suite] };
    let mut checks = Vec::new();
    for s in suites {
        let mut r = Recorder::new(s);
        match s {
            Suite::Bd => bd_suite(&mut r, seed)?,
            Suite::Mesh => mesh_suite(&mut r, seed)?,
            Suite::Impedance => impedance_suite(&mut r, seed)?,
            Suite::Material => material_suite(&mut r, seed)?,
            Suite::Evosolve => evosolve_suite(&mut r, seed)?,
            Suite::All => unreachable!(),
        }
        checks.extend(r.checks);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { suite, seed, checks, passed })
}

fn grids() -> Result<Vec<SpatialComplex>> {
    Ok(vec![
        build_complex([2, 2, 2], [1.0; 3])?,
        build_complex([3, 3, 3], [1.0; 3])?,
        build_complex([3, 2, 4], [1.0, 0.8, 1.2])?,
    ])
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn mesh_suite(r: &mut Recorder, seed: u64) -> Result<()> {
    let mut rng = seeded(seed);
    let gs = grids()?;
    let mut cg = 0.0f64;
    let mut dc = 0.0f64;
    let mut gc = 0.0f64;
    let mut dual = 0.0f64;
    for c in &gs {
        cg = cg.max(c.op(OpName::Curl).mul(c.op(OpName::Grad)).max_abs());
        dc = dc.max(c.op(OpName::Div).mul(c.op(OpName::Curl)).max_abs());
        gc = gc.max(max_abs(&c.op(OpName::Grad).matvec(&vec![1.7; c.num_nodes()])));
        for name in [OpName::Grad, OpName::Curl, OpName::SGrad] {
            for _ in 0..20 {
                let mut u = random_rvec(c.domain(name).dim(), &mut rng);
                c.restrict_to_homog(name, &mut u);
                let w = random_rvec(c.codomain(name).dim(), &mut rng);
                dual = dual.max(ibp_boundary_pairing(c, name, &u, &w)?.abs());
                let u = random_rvec(c.domain(name).dim(), &mut rng);
                let mut w = random_rvec(c.codomain(name).dim(), &mut rng);
                c.restrict_to_homog(name.partner(), &mut w);
                dual = dual.max(ibp_boundary_pairing(c, name, &u, &w)?.abs());
            }
        }
    }
    r.at_most("curl grad = 0 (composed)", Ok(cg), 0.0);
    r.at_most("div curl = 0 (composed)", Ok(dc), 0.0);
    r.at_most("grad of constants = 0", Ok(gc), 0.0);
    r.at_most("homogeneous-pair duality", Ok(dual), 1e-13);
    Ok(())
}

fn bd_suite(r: &mut Recorder, seed: u64) -> Result<()> {
    let mut rng = seeded(seed);
    let c = build_complex([3, 3, 3], [1.0; 3])?;
    let spaces = MeshBdSpaces::build(&c)?;
    let (mut ortho, mut compl, mut tri, mut charz) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for name in OpName::ALL {
        let b = spaces.get(name);
        ortho = ortho.max(b.orthonormality_residual());
        compl = compl.max(b.complement_residual());
        charz = charz.max(b.characterization_defect(&c));
        let ti = b.trace_op().compose(&b.inject_op())?;
        let d = ti.sub(&LinOp::identity(b.space()))?;
        tri = tri.max(d.mat().iter().fold(0.0, |m, x| m.max(x.norm())));
    }
    r.at_most("basis orthonormal in graph inner product", Ok(ortho), 1e-12);
    r.at_most("BD orthogonal to homogeneous subspace", Ok(compl), 1e-12);
    r.at_most("trace after inject = id", Ok(tri), 1e-12);
    r.at_most("harmonic characterization on free coordinates", Ok(charz), 1e-10);
    let mut ibp = 0.0f64;
    for name in [OpName::Grad, OpName::SGrad, OpName::Curl] {
        let pair = BdPair::new(&c, name)?;
        for _ in 0..100 {
            let big = random_rvec(pair.dual.parent().dim(), &mut rng);
            let small = random_rvec(pair.primal.parent().dim(), &mut rng);
            ibp = ibp.max(bd_ibp_residual(&c, &pair, &big, &small)?);
        }
    }
    r.at_most("bd_ibp_residual over random pairs", Ok(ibp), 1e-12);
    Ok(())
}

fn impedance_suite(r: &mut Recorder, seed: u64) -> Result<()> {
    let rep = kcheck([3, 4, 5], 100, seed, None)?;
    r.at_most("K formulas invert B", Ok(rep.max_residual), 1e-9);
    let triv = kcheck([2, 3, 4], 1, seed, None).map(|_| ());
    let t = BoundaryTriple::synthetic([2, 3, 4], seed, TripleScales::default());
    let t0 = BoundaryTriple::trivial(t.bd_grad(), t.bd_curl(), t.bd_sgrad());
    let z = FrequencyPoint::from_parts(1.0, 0.5)?;
    r.at_most(
        "trivial triple K B = I",
        triv.and_then(|_| crate::impedance::k_inverse_residual(&t0, z)),
        0.0,
    );
    let (mut worst_b, mut worst_k, mut offdiag) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for k in 0..50u64 {
        let t = BoundaryTriple::synthetic([3, 4, 5], seed.wrapping_add(1000 + k), TripleScales::default());
        let nu = t.alpha_norm() * (1.1 + (k % 5) as f64);
        let b = b_positivity_bounds(&t, nu)?;
        for s in &b.samples {
            worst_b = worst_b.min(s.pc_re_b - b.re_b);
            worst_k = worst_k.min(s.pc_re_k - s.k_bound);
            let rb = assemble_b(&t, FrequencyPoint::from_parts(s.z[0], s.z[1])?)?.real_part()?;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        offdiag = offdiag.max(rb.block_or_zero(i, j).frobenius());
                    }
                }
            }
        }
    }
    r.at_least("pc(Re B) - (1 - |alpha_b|/nu)", Ok(worst_b), -1e-12);
    r.at_least("pc(Re K) - (1 - |alpha_b|/nu)|B|^-2", Ok(worst_k), -1e-10);
    r.at_most("Re B block diagonal", Ok(offdiag), 1e-12);
    let refused = matches!(
        kcheck([3, 4, 5], 1, seed, Some(1e-3)),
        Err(Error::FrequencyTooSmall { .. })
    );
    r.at_least("nu <= |alpha_b| refused", Ok(if refused { 1.0 } else { 0.0 }), 1.0);
    Ok(())
}

fn scalar_layout() -> (SystemLayout, BoundaryTriple) {
    let e = |l: &str| HSpace::euclidean(1, l);
    let t = BoundaryTriple::trivial(&e("BD(grad)"), &e("BD(curl)"), &e("BD(Grad)"));
    let dims = FieldDims { displacement: 1, sym: 1, vector: 1, scalar: 1 };
    (SystemLayout::abstract_layout(dims, &t), t)
}

fn scalar(op: &LinOp) -> f64 {
    op.mat()[(0, 0)].re
}

fn material_suite(r: &mut Recorder, seed: u64) -> Result<()> {
    let (layout, t) = scalar_layout();
    let d = MaterialData::from_spec(&MaterialSpec::scalar_sample(), &layout)?;
    let chain = congruence_chain(&d, &t, &layout, FrequencyPoint::from_parts(1.0, 0.0)?)?;
    let got: Vec<f64> = chain.final_diag.iter().map(scalar).collect();
    let want = [2.5, 1.5 - 1.0 / 1.9, 1.9];
    let err = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    r.at_most("scalar sample final diagonal", Ok(err), 1e-10);
    let inertia_ok = chain.log.inertia_constant() == Some(true);
    r.at_least("inertia constant along chain", Ok(inertia_ok as u8 as f64), 1.0);

    let eps = eddy_current_eps(&d)?;
    let eddy = d.with_eps(eps, &layout)?;
    r.at_most("eddy-current m0_44 = 0", Ok(scalar(&schur_m44_m55(&eddy)?.m44).abs()), 1e-12);
    let cert = certify(&eddy, &t, &layout, &SearchParams::default())?;
    let rejected = !cert.accepted && cert.worst_condition.as_deref() == Some(COND_M44);
    r.at_least("eddy-current rejected with sigma = 0", Ok(rejected as u8 as f64), 1.0);
    let cert = certify(&eddy.with_sigma(LinOp::identity(layout.vector()), &layout)?, &t, &layout, &SearchParams::default())?;
    r.at_least("eddy-current accepted with sigma = 1", Ok(cert.accepted as u8 as f64), 1.0);

    let unit = MaterialData::from_spec(&MaterialSpec::default(), &layout)?;
    let mut cerr = 0.0f64;
    for nu in [0.25, 0.5, 2.0, 4.0] {
        let cert = certify(&unit, &t, &layout, &SearchParams::fixed(nu))?;
        cerr = cerr.max((cert.c.unwrap_or(f64::NAN) - nu.min(1.0)).abs());
    }
    r.at_most("decoupled unit c = min(nu, 1)", Ok(cerr), 1e-12);

    let c = build_complex([2, 2, 2], [1.0; 3])?;
    let bd = MeshBdSpaces::build(&c)?;
    let ml = SystemLayout::from_mesh(&c, &bd);
    let md = MaterialData::random(&ml, 0.5, &mut seeded(seed))?;
    let m0 = assemble_m0(&md, &ml)?;
    r.at_most("M0 - M0* on mesh", Ok(exact_selfadjoint_defect(&m0)), 0.0);
    Ok(())
}

/// Largest `|a_ij − adjoint(a_ji)|` entry.
fn exact_selfadjoint_defect(m: &BlockOp) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.n_rows() {
        for j in 0..m.n_cols() {
            let a = m.block_or_zero(i, j);
            let b = crate::linspace::adjoint(&m.block_or_zero(j, i));
            for (x, y) in a.mat().iter().zip(b.mat().iter()) {
                worst = worst.max((x - y).norm());
            }
        }
    }
    worst
}

fn evosolve_suite(r: &mut Recorder, seed: u64) -> Result<()> {
    let mut skew = 0.0f64;
    let mut mesh_sys = None;
    for cells in [2usize, 3] {
        let c = Arc::new(build_complex([cells; 3], [1.0; 3])?);
        let bd = Arc::new(MeshBdSpaces::build(&c)?);
        let layout = SystemLayout::from_mesh(&c, &bd);
        let d = MaterialData::random(&layout, 0.3, &mut seeded(seed))?;
        let t = BoundaryTriple::from_mesh(&c, &bd, TripleScales::default())?;
        let sys = EvoSystem::from_mesh(c, bd, d, t)?;
        skew = skew.max(sys.skew_residual());
        if cells == 2 {
            mesh_sys = Some(sys);
        }
    }
    r.at_most("A + A* on meshes", Ok(skew), 1e-12);

    let sys = mesh_sys.expect("2^3 system");
    let free = SimulateOptions { nu: 1.0, certificate: None, override_certificate: true };
    let dt = 0.02;
    let prof = random_rvec(sys.layout().dim(Slot::E), &mut seeded(seed));
    let f = SourceTerm::gaussian_pulse(sys.layout(), 100, dt, Slot::E, &prof, 25.0 * dt, 0.1)?;
    let causal = simulate(&sys, &f, free).map(|s| check_causality(&s, f.onset()));
    r.at_most("simulate causal before onset", causal, 1e-13);

    let mut worst_rise = f64::NEG_INFINITY;
    for k in 0..5u64 {
        let sys = abstract_system(seed.wrapping_add(k), 0.7)?;
        let prof = random_rvec(sys.layout().dim(Slot::V), &mut seeded(seed ^ k));
        let f = SourceTerm::separable(sys.layout(), 80, 0.05, Slot::V, &prof, |t| if t <= 0.5 { (10.0 * t).sin() } else { 0.0 })?;
        let s = simulate(&sys, &f, free)?;
        let e = energy(&s, &sys)?;
        for n in 12..e.len() {
            worst_rise = worst_rise.max((e[n] - e[n - 1]) / e[n - 1].max(1e-300));
        }
    }
    r.at_most("energy non-increasing after sources stop", Ok(worst_rise), 1e-10);

    let sys = abstract_system(seed.wrapping_add(99), 0.0)?;
    let mut diffs = Vec::new();
    for steps in [200usize, 400] {
        let dt = 2.0 / steps as f64;
        let prof = random_rvec(sys.layout().dim(Slot::H), &mut seeded(seed));
        let f = SourceTerm::separable(sys.layout(), steps, dt, Slot::H, &prof, |t| (-((t - 0.7) / 0.25f64).powi(2)).exp())?;
        let o = SimulateOptions { nu: 2.0, ..free };
        let a = simulate(&sys, &f, o)?;
        let b = freq_solve(&sys, &f, o, FreqOptions::default())?;
        diffs.push(l2_difference(&a.states, &b.states, dt));
    }
    r.at_least("time/frequency difference halves with dt", Ok(diffs[0] / diffs[1]), 1.6);
    r.at_most("time/frequency difference halves with dt (upper)", Ok(diffs[0] / diffs[1]), 2.4);
    let m0_pc = positivity_constant_blockwise(sys.m0());
    r.at_least("abstract M0 nonnegative", m0_pc, 0.0);
    Ok(())
}

/// `(Σ_n dt |a_n − b_n|²)^{1/2}` in coordinates.
pub fn l2_difference(a: &[Vec<f64>], b: &[Vec<f64>], dt: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| dt * x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn abstract_system(seed: u64, alpha: f64) -> Result<EvoSystem> {
    let mut rng = seeded(seed);
    let e = |n, l: &str| HSpace::euclidean(n, l);
    let scales = TripleScales { q: 1.0, alpha, beta: 1.0 };
    let t = BoundaryTriple::synthetic_real_on(&e(3, "BD(grad)"), &e(4, "BD(curl)"), &e(5, "BD(Grad)"), &mut rng, scales, true);
    let layout = SystemLayout::abstract_layout(FieldDims { displacement: 6, sym: 7, vector: 5, scalar: 4 }, &t);
    let d = MaterialData::random(&layout, 0.3, &mut rng)?;
    let cols = ColumnOps::random(&layout, 1.0, &mut rng);
    EvoSystem::new(layout, cols, d, t, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse() {
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn every_suite_passes() {
        for s in Suite::EACH {
            let rep = run_suite(s, 7).unwrap();
            for c in &rep.checks {
                assert!(c.passed, "{s}: {c:?}");
            }
            assert!(rep.passed);
        }
    }
}
