//! CSV/JSON persistence. Every file is written atomically (a `.partial`
//! sibling renamed into place) and every CSV starts with a
//! `# schema: <name> v1` line. `manifest.json` is written last and lists
//! each file with its SHA-256 digest; if a run fails, the files it already
//! wrote are removed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

/// Column layouts of the CSV outputs, by schema name.
pub mod schema {
    pub const MARKERS: &str = "markers";
    pub const MONITORS: &str = "monitors";
    pub const SWEEP: &str = "sweep";
    pub const ORDERS: &str = "orders";
    pub const SIO: &str = "sio";

    /// `markers.csv` header for an `n`-dimensional run.
    pub fn markers_header(n: usize) -> Vec<String> {
        let mut h = vec!["step".to_string(), "t".to_string()];
        h.extend((1..=n).map(|k| format!("label_{k}")));
        h.extend((1..=n).map(|k| format!("X_{k}")));
        h.push("rho0".into());
        h.push("det".into());
        h
    }

    pub const MONITORS_HEADER: [&str; 7] = ["step", "t", "min_det", "max_det", "phi_norm", "max_speed", "admissible"];
    pub const SWEEP_HEADER: [&str; 6] =
        ["epsilon", "input_distance", "output_distance", "flow_distance", "admissible_to_T", "norm_kind"];
    pub const ORDERS_HEADER: [&str; 6] = ["case", "study", "h", "dt", "error", "order"];
    pub const SIO_HEADER: [&str; 10] =
        ["kernel", "i", "j", "field_id", "epsilon", "h", "sup_S", "seminorm_S", "implied_c_eps", "implied_c_sna"];
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub started: String,
    pub finished: String,
    /// Why a simulation stopped, when it did not complete.
    pub halt: Option<String>,
    pub files: Vec<FileEntry>,
}

/// A CSV file read back: schema line, header and raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub version: u32,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column `name` parsed as `f64`; empty cells become NaN.
    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| Error::Parse(format!("missing column '{name}'")))?;
        self.rows
            .iter()
            .map(|r| {
                let s = r[c].trim();
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse().map_err(|_| Error::Parse(format!("column '{name}': '{s}' is not a number")))
                }
            })
            .collect()
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let tag = first
        .strip_prefix("# schema:")
        .ok_or_else(|| Error::Parse(format!("{}: missing '# schema:' line", path.display())))?;
    let (schema, version) = tag
        .trim()
        .rsplit_once(" v")
        .and_then(|(s, v)| Some((s.to_string(), v.parse::<u32>().ok()?)))
        .ok_or_else(|| Error::Parse(format!("{}: malformed schema line '{first}'", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let parse = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    let header = rdr.headers().map_err(parse)?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(parse))
        .collect::<Result<_>>()?;
    Ok(CsvTable {
        schema,
        version,
        header,
        rows,
    })
}

/// Output directory of one run; tracks what it wrote so the manifest can
/// list it and a failed run can remove it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(OutputDir { root, files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write_atomic(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.path(name);
        let partial = self.path(&format!("{name}.partial"));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&partial)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&partial, &target)
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&partial);
            return Err(Error::io(target, e));
        }
        let entry = FileEntry {
            name: name.to_string(),
            sha256: hex(&Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        };
        match self.files.iter_mut().find(|f| f.name == name) {
            Some(f) => *f = entry,
            None => self.files.push(entry),
        }
        Ok(())
    }

    /// Writes `name` with a schema line, `header` and `rows`.
    pub fn write_csv<H, R, S>(&mut self, name: &str, schema: &str, header: H, rows: R) -> Result<()>
    where
        H: IntoIterator,
        H::Item: AsRef<str>,
        R: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        let mut buf = format!("# schema: {schema} v{SCHEMA_VERSION}\n").into_bytes();
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
            let fail = |e: csv::Error| Error::Parse(format!("{name}: {e}"));
            w.write_record(header.into_iter().map(|h| h.as_ref().to_string()))
                .map_err(fail)?;
            for r in rows {
                w.write_record(r.iter().map(|s| s.as_ref())).map_err(fail)?;
            }
            w.flush().map_err(|e| Error::io(self.path(name), e))?;
        }
        self.write_atomic(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse(format!("{name}: {e}")))?;
        bytes.push(b'\n');
        self.write_atomic(name, &bytes)
    }

    /// Writes `manifest.json` listing every file written so far; on
    /// failure every file is removed.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.files = self.files.clone();
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        match self.write_atomic(MANIFEST, &bytes) {
            Ok(()) => Ok(manifest),
            Err(e) => {
                self.abort();
                Err(e)
            }
        }
    }

    /// Removes every file written so far (and any stray `.partial`).
    pub fn abort(self) {
        for f in &self.files {
            let _ = fs::remove_file(self.path(&f.name));
            let _ = fs::remove_file(self.path(&format!("{}.partial", f.name)));
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file on disk, as lowercase hex.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}
