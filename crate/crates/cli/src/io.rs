//! Plain-text matrix and field files. Floats are written in shortest
//! round-trip form, so a write/read cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use helmholtz_dtn::domain::{NodalField, PwcField};
use helmholtz_dtn::forward::DtnMatrix;
use helmholtz_dtn::{Error, Result};
use nalgebra::DMatrix;

fn write_rows(out: &mut String, a: &DMatrix<f64>) {
    for i in 0..a.nrows() {
        let row: Vec<String> = a.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

/// `dtn <nb> <omega2>` followed by `nb` rows.
pub fn format_dtn(dtn: &DtnMatrix) -> String {
    let mut s = format!("dtn {} {:?}\n", dtn.nb(), dtn.omega2);
    write_rows(&mut s, &dtn.lambda);
    s
}

/// `<tag> <nb>` followed by `nb` rows.
pub fn format_matrix(tag: &str, a: &DMatrix<f64>) -> String {
    let mut s = format!("{tag} {}\n", a.nrows());
    write_rows(&mut s, a);
    s
}

/// `pwc <N> <level>` followed by `cell_id coeff` lines.
pub fn format_pwc(f: &PwcField) -> String {
    let p = f.partition();
    let mut s = format!("pwc {} {}\n", p.len(), p.level());
    for (j, c) in f.coeffs().iter().enumerate() {
        let _ = writeln!(s, "{j} {c:?}");
    }
    s
}

/// `nodal <m>` followed by `m` rows of `m` values.
pub fn format_nodal(f: &NodalField) -> String {
    let m = f.grid_arc().m();
    let mut s = format!("nodal {m}\n");
    for row in f.values().chunks(m) {
        let row: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn header<'a>(lines: &mut impl Iterator<Item = &'a str>, tag: &str) -> Result<Vec<&'a str>> {
    let line = lines.next().ok_or_else(|| Error::Parse(format!("empty file, expected `{tag}` header")))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.first() != Some(&tag) {
        return Err(Error::Parse(format!("expected `{tag}` header, found `{line}`")));
    }
    Ok(parts[1..].to_vec())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad {what} `{s}`")))
}

fn read_rows<'a>(lines: &mut impl Iterator<Item = &'a str>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("expected {rows} rows, found {i}")))?;
        let vals: Vec<f64> = line.split_whitespace().map(|v| num(v, "value")).collect::<Result<_>>()?;
        if vals.len() != cols {
            return Err(Error::Parse(format!("row {i} has {} values, expected {cols}", vals.len())));
        }
        for (j, v) in vals.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Parse("trailing content after the last row".into()));
    }
    Ok(a)
}

/// Returns `(omega2, Λ)`.
pub fn parse_dtn(text: &str) -> Result<(f64, DMatrix<f64>)> {
    let mut lines = text.lines();
    let h = header(&mut lines, "dtn")?;
    if h.len() != 2 {
        return Err(Error::Parse("dtn header needs `nb omega2`".into()));
    }
    let nb: usize = num(h[0], "size")?;
    let omega2: f64 = num(h[1], "omega^2")?;
    Ok((omega2, read_rows(&mut lines, nb, nb)?))
}

pub fn parse_matrix(tag: &str, text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines();
    let h = header(&mut lines, tag)?;
    let n: usize = num(h.first().copied().unwrap_or(""), "size")?;
    read_rows(&mut lines, n, n)
}

/// Returns `(level, coefficients)`; cell ids must run `0..N` in order.
pub fn parse_pwc(text: &str) -> Result<(usize, Vec<f64>)> {
    let mut lines = text.lines();
    let h = header(&mut lines, "pwc")?;
    if h.len() != 2 {
        return Err(Error::Parse("pwc header needs `N level`".into()));
    }
    let n: usize = num(h[0], "N")?;
    let level: usize = num(h[1], "level")?;
    let mut coeffs = Vec::with_capacity(n);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Parse(format!("expected `cell_id coeff`, found `{line}`")));
        }
        let id: usize = num(parts[0], "cell id")?;
        if id != coeffs.len() {
            return Err(Error::Parse(format!("cell id {id} out of order")));
        }
        coeffs.push(num(parts[1], "coefficient")?);
    }
    if coeffs.len() != n {
        return Err(Error::Parse(format!("header announces {n} cells, found {}", coeffs.len())));
    }
    Ok((level, coeffs))
}

/// Returns `(m, values)` in row-major order.
pub fn parse_nodal(text: &str) -> Result<(usize, Vec<f64>)> {
    let mut lines = text.lines();
    let h = header(&mut lines, "nodal")?;
    let m: usize = num(h.first().copied().unwrap_or(""), "m")?;
    let a = read_rows(&mut lines, m, m)?;
    Ok((m, a.transpose().as_slice().to_vec()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
