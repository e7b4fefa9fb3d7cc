//! Field export.
//!
//! CSV: header `x1,..,xd,t,value`, one row per node and snapshot.
//!
//! Binary (all little-endian):
//!
//! ```text
//! magic     4 bytes  "HSFD"
//! version   u32      1
//! dim       u32
//! bc        u8       0 dirichlet, 1 neumann, 2 whole_space
//! dtype     u8       1 = f64
//! reserved  2 bytes
//! counts    dim × u64
//! lower     dim × f64
//! upper     dim × f64
//! n_times   u64
//! times     n_times × f64
//! values    n_times × Π counts × f64   (axis 0 fastest)
//! ```

use std::fmt::Write as _;
use std::io::{self, Read, Write};

use super::mesh::{Bc, Field, Grid};

pub const MAGIC: &[u8; 4] = b"HSFD";
pub const BINARY_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn write_csv(field: &Field) -> String {
    let g = &field.grid;
    let d = g.dim();
    let mut out = String::new();
    for a in 0..d {
        let _ = write!(out, "x{},", a + 1);
    }
    out.push_str("t,value\n");
    let mut x = [0.0; 3];
    for (t, vals) in field.times.iter().zip(&field.values) {
        for (n, v) in vals.iter().enumerate() {
            g.node_coords(n, &mut x[..d]);
            for xa in &x[..d] {
                let _ = write!(out, "{xa},");
            }
            let _ = writeln!(out, "{t},{v}");
        }
    }
    out
}

pub fn write_binary(field: &Field, w: &mut impl Write) -> io::Result<()> {
    let g = &field.grid;
    w.write_all(MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    w.write_all(&[field.bc.tag(), DTYPE_F64, 0, 0])?;
    for &c in &g.counts {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    for v in g.lower.iter().chain(&g.upper) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(field.times.len() as u64).to_le_bytes())?;
    for t in &field.times {
        w.write_all(&t.to_le_bytes())?;
    }
    for vals in &field.values {
        for v in vals {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads a field written by [`write_binary`]; solver metadata is not stored.
pub fn read_binary(r: &mut impl Read) -> io::Result<Field> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a field file"));
    }
    if read_u32(r)? != BINARY_VERSION {
        return Err(bad("unsupported version"));
    }
    let dim = read_u32(r)? as usize;
    if !(1..=3).contains(&dim) {
        return Err(bad("unsupported dimension"));
    }
    let mut tags = [0u8; 4];
    r.read_exact(&mut tags)?;
    let bc = Bc::from_tag(tags[0]).ok_or_else(|| bad("unknown boundary tag"))?;
    if tags[1] != DTYPE_F64 {
        return Err(bad("unsupported dtype"));
    }
    let counts = (0..dim).map(|_| read_u64(r).map(|v| v as usize)).collect::<io::Result<Vec<_>>>()?;
    let lower = (0..dim).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>()?;
    let upper = (0..dim).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>()?;
    let n_times = read_u64(r)? as usize;
    let times = (0..n_times).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>()?;
    let grid = Grid::new(counts, lower, upper);
    let n = grid.len();
    let values = (0..n_times)
        .map(|_| (0..n).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>())
        .collect::<io::Result<Vec<_>>>()?;
    Ok(Field {
        bc,
        grid,
        times,
        values,
        corner_discontinuity: false,
        theta: f64::NAN,
        steps: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Field {
        let grid = Grid::for_domain(2, 1.0, vec![3, 2], false);
        Field {
            bc: Bc::Dirichlet,
            grid,
            times: vec![0.0, 0.5],
            values: vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.5; 6]],
            corner_discontinuity: false,
            theta: 1.0,
            steps: 3,
        }
    }

    #[test]
    fn binary_roundtrip() {
        let f = sample();
        let mut buf = Vec::new();
        write_binary(&f, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"HSFD");
        assert_eq!(buf.len(), 4 + 4 + 4 + 4 + 2 * 8 + 4 * 8 + 8 + 2 * 8 + 12 * 8);
        let g = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(g.grid, f.grid);
        assert_eq!(g.values, f.values);
        assert_eq!(g.times, f.times);
        assert_eq!(g.bc, Bc::Dirichlet);
        buf[0] = b'X';
        assert!(read_binary(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn csv_layout() {
        let csv = write_csv(&sample());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x1,x2,t,value");
        assert_eq!(lines.len(), 1 + 12);
        assert_eq!(lines[1], "-1,0,0,1");
        assert_eq!(lines[12], "1,1,0.5,0.5");
    }
}
