//! Shared pieces of the on-disk containers: a `key = value` text header
//! terminated by a line reading `end`, followed by little-endian arrays.

use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub(crate) struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Header::default()
    }

    pub fn put(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn write_to<W: Write>(&self, magic: &str, w: &mut W) -> Result<()> {
        writeln!(w, "{magic}")?;
        for (k, v) in &self.entries {
            writeln!(w, "{k} = {v}")?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    /// Reads a header, requiring the first line to equal `magic`.
    pub fn read_from<R: BufRead>(magic: &str, r: &mut R) -> Result<Self> {
        let first = read_line(r)?
            .ok_or_else(|| Error::Format("empty input where a header was expected".into()))?;
        if first != magic {
            return Err(Error::Format(format!(
                "expected magic `{magic}`, found `{}`",
                truncate(&first)
            )));
        }
        let mut header = Header::new();
        loop {
            let line = read_line(r)?
                .ok_or_else(|| Error::Format("header ended without `end` line".into()))?;
            if line == "end" {
                return Ok(header);
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("header line `{}` has no `=`", truncate(&line))))?;
            header
                .entries
                .push((k.trim().to_string(), v.trim().to_string()));
        }
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("header is missing `{key}`")))
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("header field `{key}` has invalid value `{raw}`")))
    }

    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Vec<V>> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| {
                    Error::Format(format!("header field `{key}` has invalid entry `{s}`"))
                })
            })
            .collect()
    }
}

pub(crate) fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn truncate(s: &str) -> String {
    s.chars().take(40).collect()
}

fn read_line<R: BufRead>(r: &mut R) -> Result<Option<String>> {
    let mut buf = Vec::new();
    // Headers are short; cap the read so binary garbage cannot balloon memory.
    let n = r.take(4096).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(Error::Format("unterminated header line".into()));
    }
    buf.pop();
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| Error::Format("header is not UTF-8".into()))
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f32>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_u32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = u32>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<u32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

/// Fails unless the reader is exhausted.
pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}
