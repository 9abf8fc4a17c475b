//! Little-endian primitives for the versioned model and index files.
//!
//! Every file starts with an 8-byte magic tag and a `u32` format version.
//! Strings are a `u32` byte length followed by UTF-8 bytes. Matrices are a
//! `u32` row count, a `u32` column count, then row-major `f64` values.

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

pub fn write_header<W: Write>(out: &mut W, magic: &[u8; 8], version: u32) -> io::Result<()> {
    out.write_all(magic)?;
    write_u32(out, version)
}

/// Reads and checks the header. Returns the version.
pub fn read_header<R: Read>(input: &mut R, magic: &[u8; 8], supported: u32) -> io::Result<u32> {
    let mut got = [0u8; 8];
    input.read_exact(&mut got)?;
    if &got != magic {
        return Err(invalid(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(input)?;
    if version != supported {
        return Err(invalid(format!("unsupported format version {version}")));
    }
    Ok(version)
}

pub fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn write_u32<W: Write>(out: &mut W, v: u32) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

pub fn write_u64<W: Write>(out: &mut W, v: u64) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

pub fn write_f64<W: Write>(out: &mut W, v: f64) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

pub fn write_len<W: Write>(out: &mut W, len: usize) -> io::Result<()> {
    let len =
        u32::try_from(len).map_err(|_| invalid(format!("length {len} does not fit in u32")))?;
    write_u32(out, len)
}

pub fn write_str<W: Write>(out: &mut W, s: &str) -> io::Result<()> {
    write_len(out, s.len())?;
    out.write_all(s.as_bytes())
}

pub fn write_vector<W: Write>(out: &mut W, v: &Array1<f64>) -> io::Result<()> {
    write_len(out, v.len())?;
    v.iter().try_for_each(|&x| write_f64(out, x))
}

pub fn write_matrix<W: Write>(out: &mut W, m: &Array2<f64>) -> io::Result<()> {
    write_len(out, m.nrows())?;
    write_len(out, m.ncols())?;
    m.iter().try_for_each(|&x| write_f64(out, x))
}

pub fn read_u32<R: Read>(input: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(input: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f64<R: Read>(input: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_str<R: Read>(input: &mut R) -> io::Result<String> {
    let len = read_u32(input)? as usize;
    let mut buf = Vec::new();
    input.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "truncated string",
        ));
    }
    String::from_utf8(buf).map_err(|_| invalid("string is not UTF-8".into()))
}

fn read_values<R: Read>(input: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut bytes = Vec::new();
    input.take(n as u64 * 8).read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "truncated array",
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_vector<R: Read>(input: &mut R) -> io::Result<Array1<f64>> {
    let n = read_u32(input)? as usize;
    Ok(Array1::from(read_values(input, n)?))
}

pub fn read_matrix<R: Read>(input: &mut R) -> io::Result<Array2<f64>> {
    let rows = read_u32(input)? as usize;
    let cols = read_u32(input)? as usize;
    let values = read_values(input, rows * cols)?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| invalid(e.to_string()))
}

/// Reads a matrix and checks its shape.
pub fn read_matrix_shaped<R: Read>(
    input: &mut R,
    rows: usize,
    cols: usize,
    name: &str,
) -> io::Result<Array2<f64>> {
    let m = read_matrix(input)?;
    if m.dim() != (rows, cols) {
        return Err(invalid(format!(
            "{name} has shape {:?}, expected ({rows}, {cols})",
            m.dim()
        )));
    }
    Ok(m)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
