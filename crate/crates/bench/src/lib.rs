//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use tpem_core::random::{random_rvec, seeded};
use tpem_core::{
    build_complex, certify, BoundaryTriple, Certificate, EvoSystem, MaterialData, MeshBdSpaces, SearchParams, Slot,
    SourceTerm, SystemLayout, TripleScales,
};

pub const SCALES: TripleScales = TripleScales { q: 1.0, alpha: 0.4, beta: 1.0 };

/// Random coupled material on an `n³` unit box with a real synthetic boundary.
pub fn mesh_system(n: usize, seed: u64) -> EvoSystem {
    let c = build_complex([n; 3], [1.0; 3]).expect("complex");
    let bd = MeshBdSpaces::build(&c).expect("bd spaces");
    let layout = SystemLayout::from_mesh(&c, &bd);
    let mut rng = seeded(seed);
    let t = BoundaryTriple::synthetic_real_on(bd.grad.space(), bd.curl.space(), bd.sgrad.space(), &mut rng, SCALES, true);
    let d = MaterialData::random(&layout, 0.3, &mut rng).expect("material");
    EvoSystem::from_mesh(Arc::new(c), Arc::new(bd), d, t).expect("system")
}

pub fn certificate(sys: &EvoSystem) -> Certificate {
    let cert = certify(sys.material(), sys.boundary(), sys.layout(), &SearchParams::default()).expect("certify");
    assert!(cert.accepted, "{:?}", cert.violated);
    cert
}

/// Temperature pulse with a random spatial profile.
pub fn pulse(sys: &EvoSystem, n_steps: usize, dt: f64) -> SourceTerm {
    let prof = random_rvec(sys.layout().dim(Slot::Theta), &mut seeded(99));
    SourceTerm::gaussian_pulse(sys.layout(), n_steps, dt, Slot::Theta, &prof, 0.2, 0.1).expect("pulse")
}
