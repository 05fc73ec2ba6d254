use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tpem_core::material::eddy_current_eps;
use tpem_core::random::{random_rvec, seeded, TestRng};
use tpem_core::verify::l2_difference;
use tpem_core::{
    certify, check_causality, check_norm_bound, constraint_residual, freq_solve, kcheck, run_suite, simulate,
    build_complex, BoundaryTriple, Certificate, ColumnOps, EvoSystem, FreqOptions, HSpace, MaterialData,
    MeshBdSpaces, SimulateOptions, SolverKind, SourceTerm, Suite, SystemLayout, TimeSeries, WrapReport,
};

use crate::config::{
    source_slot, BoundaryKind, Format, MaterialPreset, Profile, RunConfig, SourceConfig, SystemConfig,
};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "tpem", version, about = "Certify and simulate coupled thermo-piezo-electromagnetic systems")]
pub struct Cli {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub solver: Option<SolverArg>,
    /// Run the solver even without an accepting certificate.
    #[arg(long, global = true)]
    pub override_certificate: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Time,
    Freq,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Time => SolverKind::Time,
            SolverArg::Freq => SolverKind::Freq,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the positivity conditions and write certificate.json.
    Certify,
    /// Solve the evolution problem and write the series.
    Simulate,
    /// Compare the closed-form K blocks against a direct inverse on random triples.
    Kcheck {
        #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        nu: Option<f64>,
    },
    /// Run a self-check suite: bd, mesh, impedance, material, evosolve or all.
    Verify { suite: String },
}

pub const KCHECK_DEFAULT_SEED: u64 = 42;

/// Runs one verb; the error carries the exit code.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Certify => cmd_certify(cli),
        Command::Simulate => cmd_simulate(cli),
        Command::Kcheck { dims, trials, nu } => cmd_kcheck(cli, dims, *trials, *nu),
        Command::Verify { suite } => cmd_verify(cli, suite),
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --config <file>".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.solver {
        cfg.solver.kind = s.into();
    }
    if let Some(o) = &cli.out {
        cfg.outputs.dir = o.clone();
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(tpem_core::Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// An assembled system plus the node count used to sample mesh profiles.
pub struct Built {
    pub system: EvoSystem,
    nodes: Option<usize>,
}

pub fn build_system(cfg: &RunConfig) -> Result<Built, CliError> {
    let mut rng = seeded(cfg.seed);
    let b = &cfg.boundary;
    match &cfg.system {
        SystemConfig::Mesh { cells, lengths } => {
            let complex = build_complex(*cells, *lengths)?;
            let bd = MeshBdSpaces::build(&complex)?;
            let layout = SystemLayout::from_mesh(&complex, &bd);
            let (g, c, s) = (bd.grad.space(), bd.curl.space(), bd.sgrad.space());
            let triple = match b.kind {
                BoundaryKind::Synthetic => BoundaryTriple::synthetic_real_on(g, c, s, &mut rng, b.scales, b.alpha_psd),
                BoundaryKind::Trivial => BoundaryTriple::trivial(g, c, s),
                BoundaryKind::Mesh => BoundaryTriple::from_mesh(&complex, &bd, b.scales)?,
            };
            let d = material(cfg, &layout, &mut rng)?;
            let nodes = complex.sample_scalar(|_| 0.0).len();
            let system = EvoSystem::from_mesh(Arc::new(complex), Arc::new(bd), d, triple)?;
            Ok(Built { system, nodes: Some(nodes) })
        }
        SystemConfig::Abstract { dims, bd, column_scale } => {
            let g = HSpace::euclidean(bd[0], "BD(grad)");
            let c = HSpace::euclidean(bd[1], "BD(curl)");
            let s = HSpace::euclidean(bd[2], "BD(Grad)");
            let triple = match b.kind {
                BoundaryKind::Trivial => BoundaryTriple::trivial(&g, &c, &s),
                _ => BoundaryTriple::synthetic_real_on(&g, &c, &s, &mut rng, b.scales, b.alpha_psd),
            };
            let layout = SystemLayout::abstract_layout(*dims, &triple);
            let d = material(cfg, &layout, &mut rng)?;
            let cols = ColumnOps::random(&layout, *column_scale, &mut rng);
            let system = EvoSystem::new(layout, cols, d, triple, None)?;
            Ok(Built { system, nodes: None })
        }
    }
}

fn material(cfg: &RunConfig, layout: &SystemLayout, rng: &mut TestRng) -> Result<MaterialData, CliError> {
    let m = &cfg.material;
    let d = match m.preset {
        MaterialPreset::Random => MaterialData::random(layout, m.coupling, rng)?,
        _ => MaterialData::from_spec(&m.spec()?, layout)?,
    };
    if m.eddy_current {
        let eps = eddy_current_eps(&d)?;
        return Ok(d.with_eps(eps, layout)?);
    }
    Ok(d)
}

fn smooth(x: [f64; 3], comps: usize) -> Vec<f64> {
    let [a, b, c] = x;
    match comps {
        1 => vec![(1.0 + a) * (1.0 + b * c)],
        _ => (0..comps)
            .map(|k| match k % 3 {
                0 => (2.0 * a).sin(),
                1 => b * c,
                _ => c.cos(),
            })
            .collect(),
    }
}

pub fn build_sources(cfg: &RunConfig, built: &Built) -> Result<SourceTerm, CliError> {
    let layout = built.system.layout();
    let (n, dt) = (cfg.solver.n_steps, cfg.solver.dt);
    let f = match &cfg.sources {
        SourceConfig::Zero => SourceTerm::zero(layout, n, dt)?,
        SourceConfig::GaussianPulse { slot, onset, width, profile, amplitude } => {
            let slot = source_slot(slot)?;
            let dim = layout.dim(slot);
            let mut prof = match (profile, built.nodes) {
                (Profile::Ones, _) => vec![1.0; dim],
                (Profile::Random, _) => random_rvec(dim, &mut seeded(cfg.seed ^ 0x5eed)),
                (Profile::Smooth, Some(nodes)) => {
                    let complex = &built.system.mesh().expect("mesh system").complex;
                    complex.sample_components(dim / nodes, |x| smooth(x, dim / nodes))
                }
                (Profile::Smooth, None) => (0..dim).map(|i| (0.7 * (i + 1) as f64).sin()).collect(),
            };
            prof.iter_mut().for_each(|p| *p *= amplitude);
            SourceTerm::gaussian_pulse(layout, n, dt, slot, &prof, *onset, *width)?
        }
        SourceConfig::File { path } => {
            let samples = read_source_file(path, layout.total_dim())?;
            let f = SourceTerm::from_samples(layout, dt, samples)?;
            if f.n_steps() != n {
                return Err(CliError::Config(format!(
                    "source file has {} rows, expected n_steps + 1 = {}",
                    f.n_steps() + 1,
                    n + 1
                )));
            }
            f
        }
    };
    Ok(f)
}

fn read_source_file(path: &Path, width: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let cfg_err = |e: String| CliError::Config(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| cfg_err(e.to_string()))?;
        return serde_json::from_str(&text).map_err(|e| cfg_err(e.to_string()));
    }
    let bytes = fs::read(path).map_err(|e| cfg_err(e.to_string()))?;
    if width == 0 || bytes.len() % (8 * width) != 0 {
        return Err(cfg_err(format!("{} bytes is not a whole number of rows of {width} f64", bytes.len())));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(vals.chunks(width).map(|r| r.to_vec()).collect())
}

fn certificate_for(cfg: &RunConfig, built: &Built, nu: Option<f64>) -> Result<Certificate, CliError> {
    let mut params = cfg.certificate.clone();
    if nu.is_some() {
        params.fixed_nu = nu;
    }
    let sys = &built.system;
    Ok(certify(sys.material(), sys.boundary(), sys.layout(), &params)?)
}

fn report_certificate(cert: &Certificate) {
    if cert.accepted {
        println!(
            "accepted: nu_min = {:.6e}, c = {:.6e}",
            cert.nu_min.unwrap_or(cert.nu),
            cert.c.unwrap_or(f64::NAN)
        );
    } else {
        println!(
            "rejected at nu = {:.6e}: worst condition {}",
            cert.nu,
            cert.worst_condition.as_deref().unwrap_or("(none)")
        );
    }
}

fn cmd_certify(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let built = build_system(&cfg)?;
    let cert = certificate_for(&cfg, &built, None)?;
    let path = cfg.outputs.dir.join("certificate.json");
    write_json(&path, &cert)?;
    report_certificate(&cert);
    println!("wrote {}", path.display());
    if cert.accepted {
        Ok(())
    } else {
        Err(CliError::Rejected(format!(
            "material rejected: {}",
            cert.worst_condition.as_deref().unwrap_or("no margin above tolerance")
        )))
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub solver: SolverKind,
    pub nu: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub certified: bool,
    pub override_certificate: bool,
    pub c: Option<f64>,
    /// Largest state norm before the source onset.
    pub causality: f64,
    /// `‖F‖_ν / (c‖U‖_ν) − 1`; negative values violate the bound, `null` for a zero source.
    pub norm_bound_slack: Option<f64>,
    pub wrap: Option<WrapReport>,
    pub constraint_residual: Option<f64>,
    /// L2 distance to the other solver's states, relative to this run's L2 norm.
    pub compare_relative_l2: Option<f64>,
}

fn solve(sys: &EvoSystem, f: &SourceTerm, kind: SolverKind, opts: SimulateOptions) -> Result<TimeSeries, CliError> {
    Ok(match kind {
        SolverKind::Time => simulate(sys, f, opts)?,
        SolverKind::Freq => freq_solve(sys, f, opts, FreqOptions::default())?,
    })
}

fn cmd_simulate(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let built = build_system(&cfg)?;
    let f = build_sources(&cfg, &built)?;
    let fixed = cfg.solver.nu.fixed()?;
    let cert = if cli.override_certificate && fixed.is_some() {
        None
    } else {
        Some(certificate_for(&cfg, &built, fixed)?)
    };
    if let Some(c) = &cert {
        report_certificate(c);
        write_json(&cfg.outputs.dir.join("certificate.json"), c)?;
    }
    let nu = match (fixed, &cert) {
        (Some(nu), _) => nu,
        (None, Some(c)) if c.accepted => c.nu_min.unwrap_or(c.nu),
        _ => {
            return Err(CliError::Rejected(
                "solver.nu = \"auto\" needs an accepting certificate; give a number to override".into(),
            ))
        }
    };
    let opts = SimulateOptions {
        nu,
        certificate: cert.as_ref(),
        override_certificate: cli.override_certificate,
    };
    let sys = &built.system;
    let series = solve(sys, &f, cfg.solver.kind, opts)?;

    let dir = &cfg.outputs.dir;
    fs::create_dir_all(dir)?;
    if cfg.outputs.formats.contains(&Format::Csv) {
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join("series.csv"))?);
        tpem_core::evosolve::write_csv(&series, &mut out)?;
    }
    if cfg.outputs.formats.contains(&Format::Raw) {
        tpem_core::evosolve::write_raw(&series, &dir.join("series.bin"), &dir.join("series.json"))?;
    }

    let certified = cert.as_ref().is_some_and(|c| c.accepted);
    let c = cert.as_ref().filter(|c| c.accepted).and_then(|c| c.c);
    let compare_relative_l2 = if cfg.solver.compare {
        let other = match cfg.solver.kind {
            SolverKind::Time => SolverKind::Freq,
            SolverKind::Freq => SolverKind::Time,
        };
        let alt = solve(sys, &f, other, opts)?;
        let zero: Vec<Vec<f64>> = series.states.iter().map(|x| vec![0.0; x.len()]).collect();
        let scale = l2_difference(&series.states, &zero, series.dt);
        let diff = l2_difference(&series.states, &alt.states, series.dt);
        Some(if scale > 0.0 { diff / scale } else { diff })
    } else {
        None
    };
    let summary = RunSummary {
        solver: series.solver,
        nu,
        dt: series.dt,
        n_steps: series.n_steps(),
        certified,
        override_certificate: cli.override_certificate,
        c,
        causality: check_causality(&series, f.onset()),
        norm_bound_slack: match c {
            Some(c) => Some(check_norm_bound(&series, &f, c)?),
            None => None,
        },
        wrap: series.wrap,
        constraint_residual: match sys.mesh() {
            Some(_) => Some(constraint_residual(&series, sys)?.into_iter().fold(0.0, f64::max)),
            None => None,
        },
        compare_relative_l2,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "{:?} solver, nu = {nu:.6e}, {} steps, causality {:.3e}, wrote {}",
        series.solver,
        summary.n_steps,
        summary.causality,
        dir.display()
    );
    if let Some(w) = series.wrap.filter(|w| w.warning) {
        eprintln!("warning: wrap-around tail fraction {:.3e}", w.tail_fraction);
    }
    Ok(())
}

fn cmd_kcheck(cli: &Cli, dims: &[usize], trials: usize, nu: Option<f64>) -> Result<(), CliError> {
    let dims: [usize; 3] = dims
        .try_into()
        .map_err(|_| CliError::Usage(format!("--dims needs three values, got {}", dims.len())))?;
    let report = kcheck(dims, trials, cli.seed.unwrap_or(KCHECK_DEFAULT_SEED), nu)?;
    let text = serde_json::to_string_pretty(&report).map_err(tpem_core::Error::from)?;
    println!("{text}");
    if let Some(dir) = &cli.out {
        write_json(&dir.join("kcheck.json"), &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Rejected(format!(
            "kcheck failed: max residual {:.3e} > {:.1e}",
            report.max_residual, report.tolerance
        )))
    }
}

fn cmd_verify(cli: &Cli, suite: &str) -> Result<(), CliError> {
    let suite: Suite = suite.parse().map_err(|e: tpem_core::Error| CliError::Usage(e.to_string()))?;
    let report = run_suite(suite, cli.seed.unwrap_or(0))?;
    for c in &report.checks {
        println!(
            "{} {}/{}: {:.3e} (limit {:.1e}){}",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.measured,
            c.limit,
            c.detail.as_ref().map(|d| format!(" {d}")).unwrap_or_default()
        );
    }
    if let Some(dir) = &cli.out {
        write_json(&dir.join("verify.json"), &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        let n = report.checks.iter().filter(|c| !c.passed).count();
        Err(CliError::Rejected(format!("verify {suite}: {n} check(s) failed")))
    }
}
