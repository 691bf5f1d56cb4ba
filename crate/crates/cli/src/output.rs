//! CSV files with a `# key=value` header echoing the resolved configuration.
//!
//! Floats are written in the shortest form that parses back to the same
//! value; lines end with `\n`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use layerfet_core::saddle::SolutionFields;
use layerfet_core::transport::TransportState;
use layerfet_core::Discretization;

pub type CsvWriter = csv::Writer<BufWriter<File>>;

/// Shortest decimal form that parses back to `x`; exponent notation outside
/// `[1e-4, 1e6)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{x:?}")
    } else {
        format!("{x:e}")
    }
}

/// Opens `path`, writes the header block and the column names.
pub fn create(path: &Path, header: &[(String, String)], columns: &[&str]) -> io::Result<CsvWriter> {
    let mut file = BufWriter::new(File::create(path)?);
    for (k, v) in header {
        writeln!(file, "# {k}={v}")?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(columns)?;
    Ok(w)
}

pub fn row(w: &mut CsvWriter, values: &[f64]) -> io::Result<()> {
    w.write_record(values.iter().map(|v| num(*v)))?;
    Ok(())
}

pub fn finish(mut w: CsvWriter) -> io::Result<()> {
    w.flush()?;
    w.into_inner().map_err(|e| e.into_error())?.flush()
}

/// `interface.csv`, `bulk_{1,2}.csv` and `multipliers_{1,2}.csv` of one
/// solution. Densities are written in m^-2.
pub fn emit_solution_csv(
    dir: &Path,
    header: &[(String, String)],
    disc: &Discretization,
    fields: &SolutionFields,
    state: &TransportState,
) -> io::Result<()> {
    let n_plus = disc.cfg.n_plus;
    let mut w = create(&dir.join("interface.csv"), header, &["x", "u_gamma", "rho", "n_dop"])?;
    for (k, &x) in disc.grid.nodes().iter().enumerate() {
        row(&mut w, &[x, fields.u_gamma[k], state.rho[k] * n_plus, disc.cfg.scaled_doping(x) * n_plus])?;
    }
    finish(w)?;
    for i in 0..2 {
        let name = format!("u_{}", i + 1);
        let mut w = create(&dir.join(format!("bulk_{}.csv", i + 1)), header, &["x", "y", &name])?;
        for (p, u) in disc.meshes[i].vertices.iter().zip(&fields.u[i]) {
            row(&mut w, &[p[0], p[1], *u])?;
        }
        finish(w)?;
        let name = format!("lambda_{}", i + 1);
        let mut w = create(&dir.join(format!("multipliers_{}.csv", i + 1)), header, &["x", &name])?;
        // dof m sits on interior node m + 1; the end intervals are constant
        let nodes = disc.multipliers[i].partition_nodes();
        let lam = &fields.lambda[i];
        for (k, &x) in nodes.iter().enumerate() {
            let dof = k.saturating_sub(1).min(lam.len() - 1);
            row(&mut w, &[x, lam[dof]])?;
        }
        finish(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.0, 60.0, 0.04, 1e14, 1e17, 6.635346e-3, 1e-9, -2.5e-5, 123456.789, 1.0 / 3.0] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(num(1e14), "1e14");
        assert_eq!(num(0.04), "0.04");
        assert_eq!(num(60.0), "60.0");
    }
}
