//! Checkpoint plumbing: a `key=value` text header ended by a blank line,
//! followed by raw little-endian f64 payloads.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) type Header = BTreeMap<String, String>;

pub(crate) fn write_header<W: Write>(w: &mut W, fields: &[(&str, String)]) -> Result<()> {
    for (k, v) in fields {
        writeln!(w, "{k}={v}")?;
    }
    writeln!(w)?;
    Ok(())
}

pub(crate) fn read_header<R: BufRead>(r: &mut R, what: &'static str) -> Result<Header> {
    let mut header = Header::new();
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::format(what, "header is not terminated by a blank line"));
        }
        let t = line.trim_end_matches(['\n', '\r']);
        if t.is_empty() {
            return Ok(header);
        }
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| Error::format(what, format!("bad header line {t:?}")))?;
        header.insert(k.trim().to_string(), v.trim().to_string());
    }
}

pub(crate) fn header_get<T: std::str::FromStr>(header: &Header, key: &str, what: &'static str) -> Result<T> {
    let raw = header
        .get(key)
        .ok_or_else(|| Error::format(what, format!("missing header key {key}")))?;
    raw.parse()
        .map_err(|_| Error::format(what, format!("bad value {raw:?} for {key}")))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::format(what, format!("truncated payload: {e}")))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::format(what, format!("non-finite value {v} in payload")));
    }
    Ok(values)
}

pub(crate) fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize, what: &'static str) -> Result<Array2<f64>> {
    let data = read_f64s(r, rows * cols, what)?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches shape"))
}

/// `name\nrows cols\n` then the row-major payload.
pub(crate) fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Array2<f64>) -> Result<()> {
    writeln!(w, "{name}")?;
    writeln!(w, "{} {}", t.nrows(), t.ncols())?;
    write_f64s(w, t.iter().copied())
}

/// `None` at a clean end of input.
pub(crate) fn read_tensor<R: BufRead>(r: &mut R, what: &'static str) -> Result<Option<(String, Array2<f64>)>> {
    let mut name = String::new();
    if r.read_line(&mut name)? == 0 {
        return Ok(None);
    }
    let name = name.trim_end_matches(['\n', '\r']).to_string();
    let mut dims = String::new();
    r.read_line(&mut dims)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (Some(Ok(rows)), Some(Ok(cols)), None) = (it.next(), it.next(), it.next()) else {
        return Err(Error::format(what, format!("bad shape line for tensor {name:?}")));
    };
    if rows.checked_mul(cols).is_none_or(|n| n > 1 << 28) {
        return Err(Error::format(what, format!("tensor {name:?} is too large")));
    }
    Ok(Some((name, read_matrix(r, rows, cols, what)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn header_and_tensors_round_trip() {
        let mut buf = Vec::new();
        write_header(&mut buf, &[("a", "1".into()), ("b", "x y".into())]).unwrap();
        let t = Array2::from_shape_fn((2, 3), |(i, j)| i as f64 - 0.5 * j as f64);
        write_tensor(&mut buf, "w", &t).unwrap();
        let mut r = Cursor::new(buf);
        let h = read_header(&mut r, "test").unwrap();
        assert_eq!(header_get::<u32>(&h, "a", "test").unwrap(), 1);
        assert_eq!(h["b"], "x y");
        assert!(header_get::<u32>(&h, "c", "test").is_err());
        let (name, back) = read_tensor(&mut r, "test").unwrap().unwrap();
        assert_eq!(name, "w");
        assert_eq!(back, t);
        assert!(read_tensor(&mut r, "test").unwrap().is_none());
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, "w", &Array2::zeros((4, 4))).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensor(&mut Cursor::new(buf), "test").is_err());
        let mut r = Cursor::new(b"a=1\n".to_vec());
        assert!(read_header(&mut r, "test").is_err());
    }
}
