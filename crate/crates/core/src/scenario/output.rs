//! CSV diagnostics log and legacy VTK snapshots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::diagnostics::DiagRecord;
use crate::error::Result;
use crate::gas::GasParams;
use crate::stepper::State;

/// Column order of the diagnostics CSV.
pub const CSV_HEADER: [&str; 10] = [
    "time",
    "energy",
    "mass",
    "entropy",
    "kinetic_l2",
    "energy_drift",
    "mass_drift",
    "min_secondlaw_margin",
    "boundary_flux",
    "kinetic_rho",
];

pub fn csv_row(r: &DiagRecord) -> [f64; 10] {
    [
        r.time,
        r.total_energy,
        r.total_mass,
        r.total_entropy,
        r.kinetic_l2,
        r.energy_drift,
        r.mass_drift,
        r.min_second_law_margin,
        r.boundary_energy_flux,
        r.kinetic_rho,
    ]
}

/// Streaming CSV writer, one row per record, flushed every row.
pub struct CsvLog<W: Write = BufWriter<File>> {
    w: csv::Writer<W>,
}

impl CsvLog {
    pub fn create(path: &Path) -> Result<Self> {
        Self::from_writer(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> CsvLog<W> {
    pub fn from_writer(w: W) -> Result<Self> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(CSV_HEADER)?;
        Ok(CsvLog { w })
    }

    pub fn write(&mut self, r: &DiagRecord) -> Result<()> {
        self.w.write_record(csv_row(r).iter().map(|v| format!("{v:e}")))?;
        self.w.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.w.flush()?;
        self.w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
    }
}

/// Reads back a CSV written by [`CsvLog`].
pub fn read_csv(path: &Path) -> Result<Vec<[f64; 10]>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let mut row = [0.0; 10];
        for (i, v) in row.iter_mut().enumerate() {
            *v = rec
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| crate::Error::Config(format!("malformed CSV row {:?}", rec)))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes an ASCII legacy VTK unstructured grid.
///
/// Cells are written with their own three vertices so that discontinuous
/// fields and the periodic seam render correctly. Point data: the projected
/// temperature and the velocity at cell corners. Cell data: `ρ` and `s` at
/// the centroid.
pub fn write_vtk(path: &Path, state: &State, gp: &GasParams) -> Result<()> {
    let mesh = state.mesh();
    let t = state.temperature(gp)?;
    let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let centroid = [[1.0 / 3.0, 1.0 / 3.0]];
    let nc = mesh.num_cells();
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# vtk DataFile Version 3.0")?;
    writeln!(f, "state at t = {}", state.time)?;
    writeln!(f, "ASCII")?;
    writeln!(f, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(f, "POINTS {} double", 3 * nc)?;
    for cell in 0..nc {
        for &xi in &corners {
            let x = mesh.geometry[cell].map(xi);
            writeln!(f, "{} {} 0", x[0], x[1])?;
        }
    }
    writeln!(f, "CELLS {} {}", nc, 4 * nc)?;
    for cell in 0..nc {
        writeln!(f, "3 {} {} {}", 3 * cell, 3 * cell + 1, 3 * cell + 2)?;
    }
    writeln!(f, "CELL_TYPES {nc}")?;
    for _ in 0..nc {
        writeln!(f, "5")?;
    }
    writeln!(f, "POINT_DATA {}", 3 * nc)?;
    writeln!(f, "SCALARS T double 1")?;
    writeln!(f, "LOOKUP_TABLE default")?;
    for cell in 0..nc {
        for v in t.evaluate(cell, &corners) {
            writeln!(f, "{v}")?;
        }
    }
    writeln!(f, "VECTORS u double")?;
    for cell in 0..nc {
        let ux = state.u.evaluate_component(0, cell, &corners);
        let uz = state.u.evaluate_component(1, cell, &corners);
        for i in 0..3 {
            writeln!(f, "{} {} 0", ux[i], uz[i])?;
        }
    }
    writeln!(f, "CELL_DATA {nc}")?;
    for (name, field) in [("rho", &state.rho), ("s", &state.s)] {
        writeln!(f, "SCALARS {name} double 1")?;
        writeln!(f, "LOOKUP_TABLE default")?;
        for cell in 0..nc {
            writeln!(f, "{}", field.evaluate(cell, &centroid)[0])?;
        }
    }
    f.flush()?;
    Ok(())
}
