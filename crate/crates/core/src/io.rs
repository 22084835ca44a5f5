//! Diagram and state persistence.
//!
//! Three formats:
//! * diagram CSV with header `branch_id,mu_0,...,mu_{N-1},f,iterations,converged`
//!   (plus an optional `rel_error` column written by online verification),
//! * a JSON mirror of the same rows together with the bifurcation estimates,
//! * a binary state file: 16-byte header (magic `DFCN`, version `u32` LE,
//!   dof count `u64` LE) followed by little-endian 64-bit floats, one
//!   `dof`-sized record per state.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagram::{BifurcationDiagram, BifurcationEstimate};
use crate::{real, Real};

pub const STATE_MAGIC: &[u8; 4] = b"DFCN";
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown format tag `{0}`")]
    UnknownFormat(String),
    #[error("malformed file: {0}")]
    Malformed(String),
}

/// Serialization target of [`serialize_diagram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagramFormat {
    Csv,
    Json,
}

impl DiagramFormat {
    pub fn from_tag(tag: &str) -> Result<Self, IoError> {
        match tag {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(IoError::UnknownFormat(other.to_string())),
        }
    }
}

/// One diagram row; the flat interchange form of a branch point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramRow {
    pub branch_id: usize,
    pub mu: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationRow {
    pub mu_star: f64,
    pub uncertainty: f64,
    pub branch_ids: Vec<usize>,
}

/// Flat diagram interchange structure shared by the CSV and JSON writers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagramFile {
    pub rows: Vec<DiagramRow>,
    #[serde(default)]
    pub bifurcations: Vec<BifurcationRow>,
}

impl DiagramFile {
    pub fn from_diagram<T: Real>(diagram: &BifurcationDiagram<T>) -> Self {
        let mut rows = Vec::new();
        for branch in &diagram.branches {
            for p in &branch.points {
                rows.push(DiagramRow {
                    branch_id: branch.id,
                    mu: p.mu.values().iter().map(|&v| to_f64(v)).collect(),
                    f: to_f64(p.output),
                    iterations: p.iterations,
                    converged: p.converged,
                    rel_error: None,
                });
            }
        }
        let bifurcations = diagram
            .bifurcations
            .iter()
            .map(|b: &BifurcationEstimate<T>| BifurcationRow {
                mu_star: to_f64(b.mu_star),
                uncertainty: to_f64(b.uncertainty),
                branch_ids: b.branch_ids.clone(),
            })
            .collect();
        Self { rows, bifurcations }
    }

    pub fn n_params(&self) -> usize {
        self.rows.first().map(|r| r.mu.len()).unwrap_or(0)
    }

    pub fn branch_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.branch_id) {
                ids.push(r.branch_id);
            }
        }
        ids
    }
}

fn to_f64<T: Real>(x: T) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).expect("scalar not convertible to f64")
}

/// Serializes a diagram into the requested format.
pub fn serialize_diagram(file: &DiagramFile, format: DiagramFormat) -> Result<Vec<u8>, IoError> {
    match format {
        DiagramFormat::Csv => Ok(write_csv_bytes(file)),
        DiagramFormat::Json => Ok(serde_json::to_vec_pretty(file)?),
    }
}

/// Inverse of [`serialize_diagram`].
pub fn deserialize_diagram(bytes: &[u8], format: DiagramFormat) -> Result<DiagramFile, IoError> {
    match format {
        DiagramFormat::Csv => read_csv_bytes(bytes),
        DiagramFormat::Json => Ok(serde_json::from_slice(bytes)?),
    }
}

fn write_csv_bytes(file: &DiagramFile) -> Vec<u8> {
    let n_mu = file.n_params();
    let with_error = file.rows.iter().any(|r| r.rel_error.is_some());
    let mut out = String::from("branch_id");
    for i in 0..n_mu {
        out.push_str(&format!(",mu_{i}"));
    }
    out.push_str(",f,iterations,converged");
    if with_error {
        out.push_str(",rel_error");
    }
    out.push('\n');
    for row in &file.rows {
        out.push_str(&format!("{}", row.branch_id));
        for v in &row.mu {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{},{}", row.f, row.iterations, row.converged));
        if with_error {
            match row.rel_error {
                Some(e) => out.push_str(&format!(",{e}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out.into_bytes()
}

fn read_csv_bytes(bytes: &[u8]) -> Result<DiagramFile, IoError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| IoError::Malformed(format!("not utf-8: {e}")))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IoError::Malformed("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"branch_id") {
        return Err(IoError::Malformed("missing branch_id column".into()));
    }
    let n_mu = cols.iter().filter(|c| c.starts_with("mu_")).count();
    let with_error = cols.last() == Some(&"rel_error");
    let expected = 1 + n_mu + 3 + usize::from(with_error);
    if cols.len() != expected {
        return Err(IoError::Malformed(format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(IoError::Malformed(format!("row {}: wrong field count", ln + 2)));
        }
        let parse_f = |s: &str| -> Result<f64, IoError> {
            s.parse().map_err(|_| IoError::Malformed(format!("row {}: bad float `{s}`", ln + 2)))
        };
        let branch_id = fields[0]
            .parse()
            .map_err(|_| IoError::Malformed(format!("row {}: bad branch id", ln + 2)))?;
        let mu = fields[1..1 + n_mu].iter().map(|s| parse_f(s)).collect::<Result<_, _>>()?;
        let f = parse_f(fields[1 + n_mu])?;
        let iterations = fields[2 + n_mu]
            .parse()
            .map_err(|_| IoError::Malformed(format!("row {}: bad iteration count", ln + 2)))?;
        let converged = match fields[3 + n_mu] {
            "true" => true,
            "false" => false,
            other => {
                return Err(IoError::Malformed(format!("row {}: bad bool `{other}`", ln + 2)))
            }
        };
        let rel_error = if with_error {
            let s = fields[4 + n_mu];
            if s.is_empty() { None } else { Some(parse_f(s)?) }
        } else {
            None
        };
        rows.push(DiagramRow { branch_id, mu, f, iterations, converged, rel_error });
    }
    Ok(DiagramFile { rows, bifurcations: Vec::new() })
}

/// Writes states in the binary `DFCN` format.
pub fn write_states<'a, T: Real, I>(path: &Path, dof: usize, states: I) -> Result<usize, IoError>
where
    I: IntoIterator<Item = &'a DVector<T>>,
    T: 'a,
{
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STATE_MAGIC)?;
    w.write_all(&STATE_VERSION.to_le_bytes())?;
    w.write_all(&(dof as u64).to_le_bytes())?;
    let mut count = 0;
    for s in states {
        assert_eq!(s.len(), dof, "state length does not match declared dof count");
        for v in s.iter() {
            w.write_all(&to_f64(*v).to_le_bytes())?;
        }
        count += 1;
    }
    w.flush()?;
    Ok(count)
}

/// Reads a binary `DFCN` state file; the record count is implied by the
/// file length.
pub fn read_states<T: Real>(path: &Path) -> Result<(usize, Vec<DVector<T>>), IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != STATE_MAGIC {
        return Err(IoError::Malformed("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != STATE_VERSION {
        return Err(IoError::Malformed(format!("unsupported version {version}")));
    }
    let dof = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let rec = dof * 8;
    if dof == 0 || payload.len() % rec != 0 {
        return Err(IoError::Malformed("payload not a whole number of records".into()));
    }
    let mut states = Vec::with_capacity(payload.len() / rec);
    for chunk in payload.chunks_exact(rec) {
        let coeffs: Vec<T> = chunk
            .chunks_exact(8)
            .map(|b| real::<T>(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        states.push(DVector::from_vec(coeffs));
    }
    Ok((dof, states))
}

/// Per-snapshot metadata of a persisted snapshot set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub index: usize,
    pub mu: Vec<f64>,
    pub branch_id: usize,
    pub tolerance: f64,
}

/// JSON manifest accompanying a binary snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub space_tag: String,
    /// Discretization order of the full-order model (0 when not applicable).
    pub order: usize,
    pub dof: usize,
    pub entries: Vec<SnapshotEntry>,
}

impl SnapshotManifest {
    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// Reads a whole file through a `BufRead`, for small text formats.
pub fn read_lines(path: &Path) -> Result<Vec<String>, IoError> {
    let r = BufReader::new(File::open(path)?);
    Ok(r.lines().collect::<Result<_, _>>()?)
}
