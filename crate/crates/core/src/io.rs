//! Matrix containers and iteration logs.
//!
//! Binary layout: the 8-byte magic `EKIMAT01`, rows and columns as
//! little-endian `u64`, then `rows·cols` little-endian `f64` in row-major
//! order. CSV files hold one matrix row per line without a header. Floats are
//! written in shortest round-trip form, so a write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::adaptive::IterationRecord;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EKIMAT01";

pub const RECORD_HEADER: [&str; 8] = [
    "k",
    "alpha",
    "J",
    "residual",
    "e_rel",
    "e_app",
    "projected",
    "wall_time",
];

pub fn write_matrix_bin<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_bin<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("dimensions {rows}x{cols} overflow")))?;
    let mut data = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        r.read_exact(&mut word)
            .map_err(|_| Error::Format("truncated matrix data".into()))?;
        data.push(f64::from_le_bytes(word));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after matrix data".into()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn save_matrix_bin(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_matrix_bin(BufWriter::new(File::create(path)?), m)
}

pub fn load_matrix_bin(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_matrix_bin(BufReader::new(File::open(path)?))
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("not a number: {field:?}")))
}

pub fn write_matrix_csv<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for r in 0..m.nrows() {
        out.write_record(m.row(r).iter().map(|&v| fmt_f64(v)))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut input = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in input.records() {
        let record = record?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Format(format!(
                    "row {rows} has {} fields, expected {c}",
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            data.push(parse_f64(field)?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}

pub fn save_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_matrix_csv(File::create(path)?, m)
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_matrix_csv(File::open(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_records<W: Write>(w: W, records: &[IterationRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORD_HEADER)?;
    for r in records {
        out.write_record([
            r.k.to_string(),
            fmt_f64(r.alpha),
            r.j.to_string(),
            fmt_f64(r.residual),
            opt(r.e_rel),
            opt(r.e_app),
            r.projected.to_string(),
            fmt_f64(r.wall_time),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<IterationRecord>> {
    let mut input = csv::Reader::from_reader(r);
    let header = input.headers()?.clone();
    if header.iter().ne(RECORD_HEADER) {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("not an integer: {s:?}")))
    };
    let optional = |s: &str| {
        if s.is_empty() {
            Ok(None)
        } else {
            parse_f64(s).map(Some)
        }
    };
    let mut records = Vec::new();
    for row in input.records() {
        let row = row?;
        records.push(IterationRecord {
            k: int(&row[0])?,
            alpha: parse_f64(&row[1])?,
            j: int(&row[2])?,
            residual: parse_f64(&row[3])?,
            e_rel: optional(&row[4])?,
            e_app: optional(&row[5])?,
            projected: row[6]
                .parse()
                .map_err(|_| Error::Format(format!("not a bool: {:?}", &row[6])))?,
            wall_time: parse_f64(&row[7])?,
        });
    }
    Ok(records)
}

pub fn save_records(path: impl AsRef<Path>, records: &[IterationRecord]) -> Result<()> {
    write_records(File::create(path)?, records)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<IterationRecord>> {
    read_records(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 3, &[1.0, -0.1, 1e-300, f64::MAX, 0.1 + 0.2, -0.0])
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let mut buf = Vec::new();
        write_matrix_bin(&mut buf, &sample()).unwrap();
        assert_eq!(buf.len(), 24 + 6 * 8);
        let back = read_matrix_bin(&buf[..]).unwrap();
        assert!(back
            .iter()
            .zip(sample().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn binary_rejects_garbage() {
        assert!(matches!(
            read_matrix_bin(&b"NOTAMATRIX"[..]),
            Err(Error::Format(_))
        ));
        let mut buf = Vec::new();
        write_matrix_bin(&mut buf, &sample()).unwrap();
        buf.pop();
        assert!(read_matrix_bin(&buf[..]).is_err());
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &sample()).unwrap();
        let back = read_matrix_csv(&buf[..]).unwrap();
        assert!(back
            .iter()
            .zip(sample().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn records_roundtrip() {
        let records = vec![
            IterationRecord {
                k: 1,
                alpha: 0.8,
                j: 50,
                residual: 3.25,
                e_rel: Some(0.5),
                e_app: None,
                projected: false,
                wall_time: 0.01,
            },
            IterationRecord {
                k: 2,
                alpha: 0.64,
                j: 63,
                residual: 1.1,
                e_rel: None,
                e_app: Some(1e-9),
                projected: true,
                wall_time: 0.02,
            },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,alpha,J,residual,e_rel,e_app,projected,wall_time\n"));
        assert_eq!(read_records(&buf[..]).unwrap(), records);
    }
}
