//! File helpers shared by every artifact: atomic writes and line-delimited
//! files that open with a header record.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct HeaderLine<H> {
    header: H,
}

/// Serializes a header line followed by one line per record.
pub fn jsonl_with_header<H: Serialize, R: Serialize>(header: &H, records: &[R]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, &HeaderLine { header })?;
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_jsonl_with_header<H: Serialize, R: Serialize>(
    path: &Path,
    header: &H,
    records: &[R],
) -> Result<()> {
    write_atomic(path, &jsonl_with_header(header, records)?)
}

/// Reads a file written by [`write_jsonl_with_header`].
pub fn read_jsonl_with_header<H: DeserializeOwned, R: DeserializeOwned>(
    path: &Path,
) -> Result<(H, Vec<R>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut header: Option<H> = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: name.clone(),
            line: i + 1,
            message: e.to_string(),
        };
        if header.is_none() {
            let h: HeaderLine<H> = serde_json::from_str(&line).map_err(parse_err)?;
            header = Some(h.header);
        } else {
            records.push(serde_json::from_str(&line).map_err(parse_err)?);
        }
    }
    let header = header.ok_or_else(|| Error::Parse {
        path: name,
        line: 1,
        message: "missing header record".into(),
    })?;
    Ok((header, records))
}

/// Pretty JSON document, newline terminated.
pub fn json_document<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl_with_header(&p, &"hdr".to_string(), &[1u32, 2, 3]).unwrap();
        let (h, r): (String, Vec<u32>) = read_jsonl_with_header(&p).unwrap();
        assert_eq!(h, "hdr");
        assert_eq!(r, [1, 2, 3]);
    }
}
