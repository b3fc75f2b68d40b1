//! CSV files with a `# key = value` metadata preamble.

use std::fmt::Display;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

/// First line of every file written by this crate.
pub const MARKER: &str = "# levy-transport";

/// Ordered `key = value` pairs written as comment lines above a CSV table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an existing entry in place.
    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn extend(&mut self, other: &Metadata) -> &mut Self {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Parse(format!("metadata lacks `{key}`")))?;
        parse_value(key, raw)
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn write_header<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{MARKER}")?;
        for (k, v) in &self.entries {
            writeln!(out, "# {k} = {v}")?;
        }
        Ok(())
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse `{key}` from `{raw}`")))
}

/// A CSV body held as strings, with named columns.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| parse_value(name, r.get(idx).map(String::as_str).unwrap_or("")))
            .collect()
    }
}

/// Reads comment lines (`#`) as metadata and the rest as a headed CSV table.
pub fn read_commented_csv<R: BufRead>(input: R) -> Result<(Metadata, CsvTable)> {
    let mut meta = Metadata::new();
    let mut body = String::new();
    for line in input.lines() {
        let line = line?;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                meta.set(k.trim(), v.trim());
            }
        } else if !line.trim().is_empty() {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((meta, CsvTable { headers, rows }))
}

/// Writes metadata followed by a CSV table; floats use the shortest
/// representation that round-trips exactly.
pub fn write_table<W: Write>(
    out: &mut W,
    meta: &Metadata,
    headers: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    meta.write_header(out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(headers)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One time slice of a field CSV (`t, x, value, stderr`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub time: f64,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

pub fn write_field_csv<W: Write>(
    out: &mut W,
    meta: &Metadata,
    snapshots: &[FieldSnapshot],
) -> Result<()> {
    let mut rows = Vec::new();
    for s in snapshots {
        for i in 0..s.x.len() {
            rows.push(vec![
                s.time.to_string(),
                s.x[i].to_string(),
                s.values[i].to_string(),
                s.stderr[i].to_string(),
            ]);
        }
    }
    write_table(out, meta, &["t", "x", "value", "stderr"], &rows)
}

/// Reads a field CSV, grouping consecutive rows with equal `t`.
pub fn read_field_csv<R: BufRead>(input: R) -> Result<(Metadata, Vec<FieldSnapshot>)> {
    let (meta, table) = read_commented_csv(input)?;
    let t = table.f64_column("t")?;
    let x = table.f64_column("x")?;
    let v = table.f64_column("value")?;
    let e = table.f64_column("stderr")?;
    let mut snapshots: Vec<FieldSnapshot> = Vec::new();
    for i in 0..t.len() {
        match snapshots.last_mut() {
            Some(s) if s.time == t[i] => {
                s.x.push(x[i]);
                s.values.push(v[i]);
                s.stderr.push(e[i]);
            }
            _ => snapshots.push(FieldSnapshot {
                time: t[i],
                x: vec![x[i]],
                values: vec![v[i]],
                stderr: vec![e[i]],
            }),
        }
    }
    Ok((meta, snapshots))
}
