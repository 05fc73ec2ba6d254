//! Structure-preserving discretization of a coupled thermo-piezo-electromagnetic
//! evolutionary system with impedance boundary conditions.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bdspace;
pub mod blockform;
pub mod error;
pub mod evosolve;
pub mod impedance;
pub mod linspace;
pub mod material;
pub mod mesh;
pub mod random;
pub mod verify;

pub use bdspace::{bd_map, bd_space, BDSpace, MeshBdSpaces};
pub use blockform::{BlockOp, CongruenceSummary, Inertia};
pub use error::{Error, Result};
pub use evosolve::{
    check_causality, check_norm_bound, constraint_residual, freq_solve, simulate, ColumnOps, EvoSystem, FreqOptions,
    SimulateOptions, SolverKind, SourceTerm, TimeSeries, WrapReport,
};
pub use impedance::{kcheck, BoundaryTriple, FrequencyPoint, KCheckReport, TripleScales, KCHECK_TOL};
pub use linspace::{HSpace, LinOp, Space, C64};
pub use material::{certify, Certificate, FieldDims, MaterialData, MaterialSpec, SearchParams, Slot, SystemLayout};
pub use mesh::{build_complex, OpName, SpatialComplex};
pub use verify::{run_suite, Suite, VerifyReport};
