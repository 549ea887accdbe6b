//! Versioned CSV files, content hashes and run manifests.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";
const SCHEMA_PREFIX: &str = "# schema-version:";

/// Formats a number for CSV output; NaN becomes `NA`.
pub struct Num(pub f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_nan() {
            f.write_str("NA")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

pub fn opt_num(v: Option<f64>) -> Num {
    Num(v.unwrap_or(f64::NAN))
}

pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.record(format_args!("{SCHEMA_PREFIX} {SCHEMA_VERSION}"))?;
        w.record(format_args!("{}", header.join(",")))?;
        Ok(w)
    }

    pub fn record(&mut self, line: fmt::Arguments) -> CliResult<()> {
        self.out
            .write_fmt(line)
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.path)
    }
}

/// Streams the records of a CSV written by [`CsvWriter`], checking the
/// schema line and the header. `f` receives the 1-based line number and
/// the fields.
pub fn read_csv(path: &Path, header: &[&str], mut f: impl FnMut(usize, &[&str]) -> CliResult<()>) -> CliResult<()> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = |n: usize| -> CliResult<Option<String>> {
        lines
            .next()
            .transpose()
            .map_err(|e| CliError::input(format!("{}: line {n}: {e}", path.display())))
    };
    let bad = |line: usize, msg: String| CliError::input(format!("{}: line {line}: {msg}", path.display()));
    let first = next(1)?.unwrap_or_default();
    let version = first
        .strip_prefix(SCHEMA_PREFIX)
        .ok_or_else(|| bad(1, "missing schema-version line".into()))?
        .trim();
    if version != SCHEMA_VERSION.to_string() {
        return Err(bad(1, format!("schema-version mismatch: expected {SCHEMA_VERSION}, found {version}")));
    }
    let found = next(2)?.unwrap_or_default();
    if found.trim_end() != header.join(",") {
        return Err(bad(2, format!("expected header '{}'", header.join(","))));
    }
    let mut n = 2;
    while let Some(line) = next(n + 1)? {
        n += 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(bad(n, format!("expected {} fields, found {}", header.len(), fields.len())));
        }
        f(n, &fields).map_err(|e| match e {
            CliError::Input(m) => bad(n, m),
            other => other,
        })?;
    }
    Ok(())
}

pub fn parse_field<T: std::str::FromStr>(field: &str, what: &str) -> CliResult<T> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::input(format!("bad {what} '{field}'")))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Creates `dir` for the outputs of `command`. A directory already holding
/// the manifest of a different command is refused so that every directory
/// keeps exactly one manifest.
pub fn prepare_dir(dir: &Path, command: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let manifest = dir.join(MANIFEST);
    if manifest.exists() {
        let text = std::fs::read_to_string(&manifest).map_err(|e| CliError::io(&manifest, e))?;
        let previous = text
            .lines()
            .find_map(|l| l.strip_prefix("command = "))
            .unwrap_or("unknown");
        if previous != command {
            return Err(CliError::input(format!(
                "{} already holds the outputs of '{previous}'; choose another --out",
                dir.display()
            )));
        }
    }
    Ok(())
}

/// Record of one command run: configuration, inputs, seeds and outputs.
pub struct Manifest {
    command: String,
    started: u64,
    config: Vec<(String, String)>,
    inputs: Vec<(String, PathBuf, String)>,
    seeds: Vec<(String, String)>,
    notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: unix_now(),
            config: Vec::new(),
            inputs: Vec::new(),
            seeds: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn config(&mut self, resolved: &[(String, String)]) {
        self.config.extend_from_slice(resolved);
    }

    pub fn input(&mut self, label: &str, path: &Path) -> CliResult<()> {
        let hash = sha256_file(path)?;
        self.inputs.push((label.to_string(), path.to_path_buf(), hash));
        Ok(())
    }

    pub fn seed(&mut self, label: &str, value: impl fmt::Display) {
        self.seeds.push((label.to_string(), value.to_string()));
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Writes `manifest.txt` into `dir`, hashing every listed output.
    pub fn write(&self, dir: &Path, outputs: &[PathBuf]) -> CliResult<()> {
        let mut text = String::new();
        let mut line = |s: String| {
            text.push_str(&s);
            text.push('\n');
        };
        line(format!("# panelhmm run manifest, schema-version {SCHEMA_VERSION}"));
        line(format!("command = {}", self.command));
        line(format!("version = {}", env!("CARGO_PKG_VERSION")));
        line(format!("started_unix = {}", self.started));
        line(format!("finished_unix = {}", unix_now()));
        for (k, v) in &self.config {
            line(format!("config.{k} = {v}"));
        }
        for (k, v) in &self.seeds {
            line(format!("seed.{k} = {v}"));
        }
        for (label, path, hash) in &self.inputs {
            line(format!("input.{label} = {} sha256:{hash}", path.display()));
        }
        for path in outputs {
            let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            line(format!("output.{name} = sha256:{}", sha256_file(path)?));
        }
        for n in &self.notes {
            line(format!("note = {n}"));
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
