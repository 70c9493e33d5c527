//! CSV and text export helpers shared by the library and the CLI.
//!
//! All CSV output is comma-separated, `.`-decimal, LF-terminated UTF-8 with
//! 17 significant digits for floating-point fields.

use std::io::Write;

use nalgebra::DMatrix;

/// Formats with 17 significant digits (round-trip safe for f64).
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the provenance comment and the schema row. `provenance` should
/// name the tool version, scheme and parameters of the run.
pub fn write_header<W: Write>(w: &mut W, provenance: &str, columns: &[&str]) -> std::io::Result<()> {
    writeln!(w, "# {provenance}")?;
    writeln!(w, "{}", columns.join(","))?;
    Ok(())
}

/// Coordinate-format text dump `row,col,value` of the nonzero entries.
pub fn write_coo<W: Write>(w: &mut W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(w, "{},{},{}", i, j, fmt_g17(v))?;
            }
        }
    }
    Ok(())
}

/// Dense coefficient matrix as `m,n,U_mn` rows.
pub fn write_matrix_csv<W: Write>(
    w: &mut W,
    provenance: &str,
    m: &DMatrix<f64>,
) -> std::io::Result<()> {
    write_header(w, provenance, &["m", "n", "U_mn"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            writeln!(w, "{},{},{}", i, j, fmt_g17(m[(i, j)]))?;
        }
    }
    Ok(())
}
