//! Run configuration, read from TOML or JSON (by file extension).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use tpem_core::evosolve::SOURCE_SLOTS;
use tpem_core::{FieldDims, MaterialSpec, SearchParams, Slot, SolverKind, TripleScales};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub certificate: SearchParams,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sources: SourceConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    Mesh {
        cells: [usize; 3],
        #[serde(default = "unit_lengths")]
        lengths: [f64; 3],
    },
    /// Euclidean field spaces with random column operators.
    Abstract {
        dims: FieldDims,
        /// `(dim BD(grad), dim BD(curl), dim BD(Grad))`.
        bd: [usize; 3],
        #[serde(default = "one")]
        column_scale: f64,
    },
}

fn unit_lengths() -> [f64; 3] {
    [1.0; 3]
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaterialPreset {
    #[default]
    DecoupledUnit,
    ScalarSample,
    /// Seeded random real data with couplings of size `coupling`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub preset: MaterialPreset,
    pub coupling: f64,
    /// Replace `ε` by the eddy-current value that makes `m0_44 = 0`.
    pub eddy_current: bool,
    /// Coefficient overrides on top of the preset: a number broadcasts, an array gives
    /// one value per node (mesh) or per dof (abstract).
    pub coefficients: Map<String, Value>,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig {
            preset: MaterialPreset::DecoupledUnit,
            coupling: 0.3,
            eddy_current: false,
            coefficients: Map::new(),
        }
    }
}

impl MaterialConfig {
    /// The preset's coefficients with the overrides applied.
    pub fn spec(&self) -> Result<MaterialSpec, CliError> {
        let base = match self.preset {
            MaterialPreset::ScalarSample => MaterialSpec::scalar_sample(),
            _ => MaterialSpec::default(),
        };
        let mut v = serde_json::to_value(base).map_err(|e| CliError::Config(e.to_string()))?;
        let obj = v.as_object_mut().expect("struct serializes to an object");
        for (k, val) in &self.coefficients {
            if !obj.contains_key(k) {
                return Err(CliError::Config(format!("unknown material coefficient `{k}`")));
            }
            obj.insert(k.clone(), val.clone());
        }
        serde_json::from_value(v).map_err(|e| CliError::Config(format!("material coefficients: {e}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    /// Seeded random real operators on the boundary data spaces.
    #[default]
    Synthetic,
    Trivial,
    /// Operators induced by the mesh traces.
    Mesh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub kind: BoundaryKind,
    pub scales: TripleScales,
    /// Draw `α_b` selfadjoint positive semidefinite (synthetic only).
    pub alpha_psd: bool,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            kind: BoundaryKind::Synthetic,
            scales: TripleScales::default(),
            alpha_psd: true,
        }
    }
}

/// A fixed `ν` or `"auto"` (the certified `ν_min`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NuSetting {
    Value(f64),
    Word(String),
}

impl Default for NuSetting {
    fn default() -> Self {
        NuSetting::Word("auto".into())
    }
}

impl NuSetting {
    pub fn fixed(&self) -> Result<Option<f64>, CliError> {
        match self {
            NuSetting::Value(v) if *v > 0.0 && v.is_finite() => Ok(Some(*v)),
            NuSetting::Value(v) => Err(CliError::Config(format!("solver.nu = {v} must be positive"))),
            NuSetting::Word(w) if w == "auto" => Ok(None),
            NuSetting::Word(w) => Err(CliError::Config(format!("solver.nu must be a number or \"auto\", got \"{w}\""))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub dt: f64,
    pub n_steps: usize,
    pub nu: NuSetting,
    /// Also run the other solver and report the L2 difference.
    pub compare: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: SolverKind::Time,
            dt: 0.01,
            n_steps: 100,
            nu: NuSetting::default(),
            compare: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Smooth,
    Random,
    Ones,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceConfig {
    #[default]
    Zero,
    GaussianPulse {
        slot: String,
        onset: f64,
        width: f64,
        #[serde(default)]
        profile: Profile,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `n_steps + 1` rows of the full state width: JSON arrays for `.json`, raw
    /// little-endian `f64` otherwise.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Raw],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match &self.system {
            SystemConfig::Mesh { cells, lengths } => {
                if cells.iter().any(|&c| c < 2) {
                    return bad(format!("system.cells must all be >= 2, got {cells:?}"));
                }
                if lengths.iter().any(|&l| !(l > 0.0)) {
                    return bad(format!("system.lengths must be positive, got {lengths:?}"));
                }
            }
            SystemConfig::Abstract { dims, bd, column_scale } => {
                if [dims.displacement, dims.sym, dims.vector, dims.scalar].contains(&0) || bd.contains(&0) {
                    return bad("abstract dimensions must be >= 1".into());
                }
                if !column_scale.is_finite() {
                    return bad("system.column_scale must be finite".into());
                }
            }
        }
        if matches!(self.system, SystemConfig::Abstract { .. }) && self.boundary.kind == BoundaryKind::Mesh {
            return bad("boundary.kind = \"mesh\" needs a mesh system".into());
        }
        if !(self.solver.dt > 0.0) || self.solver.n_steps == 0 {
            return bad(format!(
                "solver.dt must be positive and solver.n_steps >= 1 (dt = {}, n_steps = {})",
                self.solver.dt, self.solver.n_steps
            ));
        }
        self.solver.nu.fixed()?;
        if let SourceConfig::GaussianPulse { slot, onset, width, .. } = &self.sources {
            source_slot(slot)?;
            if !(*onset >= 0.0) {
                return bad(format!("sources.onset must be >= 0, got {onset}"));
            }
            if !(*width > 0.0) {
                return bad(format!("sources.width must be positive, got {width}"));
            }
        }
        if self.material.preset == MaterialPreset::Random && !self.material.coefficients.is_empty() {
            return bad("material.coefficients cannot be combined with the random preset".into());
        }
        self.material.spec()?;
        Ok(())
    }
}

/// Parses a slot name and checks that it can carry a source.
pub fn source_slot(name: &str) -> Result<Slot, CliError> {
    let slot = Slot::from_name(name).map_err(|_| CliError::Config(format!("unknown slot `{name}`")))?;
    if !SOURCE_SLOTS.contains(&slot) {
        return Err(CliError::Config(format!("slot `{name}` cannot carry a source (use v, E, H or theta)")));
    }
    Ok(slot)
}
