//! Series output: per-slot norms as CSV, full states as little-endian `f64` rows with a
//! JSON sidecar describing the layout.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SolverKind, TimeSeries, WrapReport};
use crate::error::{Error, Result};
use crate::material::Slot;

/// Writes `step,t,slot,norm` for the nine slots and `w`.
pub fn write_csv(series: &TimeSeries, out: &mut impl Write) -> Result<()> {
    writeln!(out, "step,t,slot,norm")?;
    for n in 0..series.states.len() {
        let t = series.time(n);
        for slot in Slot::ALL {
            writeln!(out, "{n},{t:.12e},{},{:.12e}", slot.name(), series.slot_norm(n, slot))?;
        }
        writeln!(out, "{n},{t:.12e},w,{:.12e}", series.w_norm(n))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub name: String,
    pub offset: usize,
    pub dim: usize,
    pub space: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub format: String,
    /// Row-major `[rows, cols]`: one row per time step.
    pub shape: [usize; 2],
    pub dt: f64,
    pub nu: f64,
    pub solver: SolverKind,
    pub columns: Vec<SlotEntry>,
    pub wrap: Option<WrapReport>,
}

const FORMAT: &str = "f64-le";

fn sidecar(series: &TimeSeries) -> RawSidecar {
    let offs = series.offsets();
    let mut columns: Vec<SlotEntry> = Slot::ALL
        .iter()
        .map(|&s| SlotEntry {
            name: s.name().to_string(),
            offset: offs[s.index()],
            dim: series.spaces()[s.index()].dim(),
            space: series.spaces()[s.index()].label().to_string(),
        })
        .collect();
    let nx = offs[offs.len() - 1];
    columns.push(SlotEntry {
        name: "w".into(),
        offset: nx,
        dim: series.w_space().dim(),
        space: series.w_space().label().to_string(),
    });
    RawSidecar {
        format: FORMAT.into(),
        shape: [series.states.len(), nx + series.w_space().dim()],
        dt: series.dt,
        nu: series.nu,
        solver: series.solver,
        columns,
        wrap: series.wrap,
    }
}

/// Writes each step as the row `[x_n, w_n]`.
pub fn write_raw(series: &TimeSeries, data: &Path, meta: &Path) -> Result<RawSidecar> {
    let side = sidecar(series);
    let mut f = BufWriter::new(File::create(data)?);
    for (x, w) in series.states.iter().zip(&series.w) {
        for v in x.iter().chain(w) {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    std::fs::write(meta, serde_json::to_string_pretty(&side)?)?;
    Ok(side)
}

pub fn read_raw(data: &Path, meta: &Path) -> Result<(RawSidecar, Vec<Vec<f64>>)> {
    let side: RawSidecar = serde_json::from_str(&std::fs::read_to_string(meta)?)?;
    if side.format != FORMAT {
        return Err(Error::Precondition(format!("unknown raw format `{}`", side.format)));
    }
    let mut bytes = Vec::new();
    File::open(data)?.read_to_end(&mut bytes)?;
    let [rows, cols] = side.shape;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Dimension {
            context: "raw container bytes".into(),
            expected: rows * cols * 8,
            found: bytes.len(),
        });
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let out = if cols == 0 {
        vec![Vec::new(); rows]
    } else {
        vals.chunks(cols).map(|r| r.to_vec()).collect()
    };
    Ok((side, out))
}
