//! `TransferTrace`, the time-series record every backend produces, and its
//! plain-text file format.
//!
//! ```text
//! # gapchannel trace
//! # schema = 1
//! # backend = ed
//! # config.<key> = <value>        one line per config entry
//! # diagnostics.<key> = <value>   one line per diagnostic
//! # columns = t,P_dd,P_ud,...
//! 0.0000000000000000e0,1.0000000000000000e0,...
//! ```
//!
//! Numbers are written with 17 significant digits, which reproduces every
//! double bit-exactly on read-back. Files are written to a temporary sibling
//! and renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::config::{format_f64, KeyValues};
use crate::error::{Error, Result};
use crate::scalar::Complex;

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "# gapchannel trace";

/// Ancilla probabilities; the first letter is S, the second R (`u` = up).
pub const P_DD: &str = "P_dd";
pub const P_UD: &str = "P_ud";
pub const P_DU: &str = "P_du";
pub const P_UU: &str = "P_uu";
pub const N_S: &str = "n_S";
pub const N_R: &str = "n_R";
pub const N_CHAIN: &str = "n_chain";
pub const ENERGY: &str = "energy";
pub const ENERGY_SQ: &str = "energy_sq";
pub const TRUNCATION: &str = "truncation_weight";
pub const E_N: &str = "E_N";
pub const E_N_APPROX: &str = "E_N_approx";

/// Channels of the two-ancilla density matrix, basis index `2·s + r` with
/// `s, r = 1` for spin up: the diagonal is (P_dd, P_du, P_ud, P_uu) and the
/// strict upper triangle is stored as `rho_ij_re`, `rho_ij_im`.
pub fn density_channels() -> Vec<String> {
    let mut out = vec![P_DD.to_string(), P_UD.to_string(), P_DU.to_string(), P_UU.to_string()];
    for i in 0..4 {
        for j in (i + 1)..4 {
            out.push(format!("rho_{i}{j}_re"));
            out.push(format!("rho_{i}{j}_im"));
        }
    }
    out
}

/// Flattens a two-ancilla density matrix in the order of [`density_channels`].
pub fn density_values(rho: &[[Complex<f64>; 4]; 4]) -> Vec<f64> {
    let mut out = vec![rho[0][0].re, rho[2][2].re, rho[1][1].re, rho[3][3].re];
    for i in 0..4 {
        for j in (i + 1)..4 {
            out.push(rho[i][j].re);
            out.push(rho[i][j].im);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferTrace {
    pub backend: String,
    pub config: KeyValues,
    pub diagnostics: KeyValues,
    times: Vec<f64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TransferTrace {
    pub fn new<S: AsRef<str>>(backend: &str, config: KeyValues, channels: &[S]) -> Self {
        Self {
            backend: backend.to_string(),
            config,
            diagnostics: KeyValues::new(),
            times: Vec::new(),
            names: channels.iter().map(|s| s.as_ref().to_string()).collect(),
            columns: vec![Vec::new(); channels.len()],
        }
    }

    /// Appends one sample; times must be strictly increasing.
    pub fn push(&mut self, t: f64, values: &[f64]) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::InvalidArgument(format!(
                "record has {} values for {} channels",
                values.len(),
                self.names.len()
            )));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidArgument(format!(
                    "time {t} does not follow {last}"
                )));
            }
        }
        self.times.push(t);
        for (col, &v) in self.columns.iter_mut().zip(values) {
            col.push(v);
        }
        Ok(())
    }

    /// Adds a complete derived channel.
    pub fn add_channel(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.times.len() {
            return Err(Error::InvalidArgument(format!(
                "channel `{name}` has {} samples, trace has {}",
                values.len(),
                self.times.len()
            )));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(Error::InvalidArgument(format!("duplicate channel `{name}`")));
        }
        self.names.push(name.to_string());
        self.columns.push(values);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn channel_names(&self) -> &[String] {
        &self.names
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.channel(name)
            .ok_or_else(|| Error::InvalidArgument(format!("trace has no channel `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Two-ancilla density matrix at sample `i`, if the trace carries it.
    pub fn ancilla_density(&self, i: usize) -> Option<[[Complex<f64>; 4]; 4]> {
        let names = density_channels();
        let mut vals = Vec::with_capacity(names.len());
        for n in &names {
            vals.push(*self.channel(n)?.get(i)?);
        }
        let mut rho = [[Complex::new(0.0, 0.0); 4]; 4];
        rho[0][0].re = vals[0];
        rho[2][2].re = vals[1];
        rho[1][1].re = vals[2];
        rho[3][3].re = vals[3];
        let mut k = 4;
        for a in 0..4 {
            for b in (a + 1)..4 {
                rho[a][b] = Complex::new(vals[k], vals[k + 1]);
                rho[b][a] = rho[a][b].conj();
                k += 2;
            }
        }
        Some(rho)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "# schema = {SCHEMA_VERSION}");
        let _ = writeln!(out, "# backend = {}", self.backend);
        for (k, v) in self.config.iter() {
            let _ = writeln!(out, "# config.{k} = {v}");
        }
        for (k, v) in self.diagnostics.iter() {
            let _ = writeln!(out, "# diagnostics.{k} = {v}");
        }
        let _ = write!(out, "# columns = t");
        for n in &self.names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format_f64(*t));
            for col in &self.columns {
                out.push(',');
                out.push_str(&format_f64(col[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Format("missing trace header".into()));
        }
        let mut backend = None;
        let mut config = KeyValues::new();
        let mut diagnostics = KeyValues::new();
        let mut names = None;
        let mut schema = None;
        let mut trace: Option<TransferTrace> = None;
        for (lineno, line) in lines.enumerate() {
            if let Some(meta) = line.strip_prefix("# ") {
                if trace.is_some() {
                    return Err(Error::Format(format!("header line after data: {line}")));
                }
                let (k, v) = meta
                    .split_once(" = ")
                    .ok_or_else(|| Error::Format(format!("malformed header line: {line}")))?;
                if let Some(key) = k.strip_prefix("config.") {
                    config.insert(key, v);
                } else if let Some(key) = k.strip_prefix("diagnostics.") {
                    diagnostics.insert(key, v);
                } else {
                    match k {
                        "schema" => schema = Some(v.to_string()),
                        "backend" => backend = Some(v.to_string()),
                        "columns" => {
                            let mut cols = v.split(',');
                            if cols.next() != Some("t") {
                                return Err(Error::Format("first column must be t".into()));
                            }
                            names = Some(cols.map(str::to_string).collect::<Vec<_>>());
                        }
                        other => return Err(Error::Format(format!("unknown header key `{other}`"))),
                    }
                }
                continue;
            }
            if trace.is_none() {
                if schema.as_deref() != Some(&SCHEMA_VERSION.to_string()) {
                    return Err(Error::Format(format!("unsupported schema {schema:?}")));
                }
                let names = names
                    .take()
                    .ok_or_else(|| Error::Format("missing columns header".into()))?;
                let mut t = TransferTrace::new(
                    &backend.take().ok_or_else(|| Error::Format("missing backend".into()))?,
                    std::mem::take(&mut config),
                    &names,
                );
                t.diagnostics = std::mem::take(&mut diagnostics);
                trace = Some(t);
            }
            let tr = trace.as_mut().expect("initialized above");
            let mut vals = Vec::with_capacity(tr.names.len() + 1);
            for field in line.split(',') {
                vals.push(field.parse::<f64>().map_err(|_| {
                    Error::Format(format!("line {}: bad number `{field}`", lineno + 2))
                })?);
            }
            if vals.is_empty() {
                return Err(Error::Format(format!("line {}: empty row", lineno + 2)));
            }
            tr.push(vals[0], &vals[1..])
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))?;
        }
        match trace {
            Some(t) => Ok(t),
            None => {
                if schema.as_deref() != Some(&SCHEMA_VERSION.to_string()) {
                    return Err(Error::Format(format!("unsupported schema {schema:?}")));
                }
                let names = names.ok_or_else(|| Error::Format("missing columns header".into()))?;
                let mut t = TransferTrace::new(
                    &backend.ok_or_else(|| Error::Format("missing backend".into()))?,
                    config,
                    &names,
                );
                t.diagnostics = diagnostics;
                Ok(t)
            }
        }
    }

    /// Writes the trace atomically: a temporary file in the target directory
    /// is filled, synced and renamed over `path`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Whole-file atomic write via temp-file-then-rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
