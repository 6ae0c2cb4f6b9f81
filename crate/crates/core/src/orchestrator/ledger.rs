//! Append-only JSON-lines results ledger.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::evaluation::{CellResult, CellStatus};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("ledger {path} line {line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

pub type CellKey = (String, String, usize, usize);

pub fn key_of(c: &CellResult) -> CellKey {
    (c.dataset.clone(), c.strategy.clone(), c.budget_k, c.fold)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LedgerError + '_ {
    move |source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Every record in file order. A missing file is an empty ledger; an
/// unterminated last line (an interrupted write) is ignored.
pub fn read_ledger(path: &Path) -> Result<Vec<CellResult>, LedgerError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_line(&mut buf).map_err(io(path))? == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            log::warn!("{}: ignoring unterminated line {line_no}", path.display());
            break;
        }
        if buf.trim().is_empty() {
            continue;
        }
        let cell = serde_json::from_str(buf.trim_end()).map_err(|e| LedgerError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(cell);
    }
    Ok(out)
}

/// The last record of every cell, which is the one reports use.
pub fn latest(cells: Vec<CellResult>) -> BTreeMap<CellKey, CellResult> {
    cells.into_iter().map(|c| (key_of(&c), c)).collect()
}

/// Cells that a resumed run does not need to repeat.
pub fn finished(latest: &BTreeMap<CellKey, CellResult>) -> impl Iterator<Item = &CellKey> {
    latest
        .iter()
        .filter(|(_, c)| matches!(c.status, CellStatus::Ok | CellStatus::Skipped))
        .map(|(k, _)| k)
}

/// Single writer; every record is flushed as soon as it is appended.
pub struct LedgerWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LedgerWriter {
    /// Opens `path` for appending, dropping a trailing partial line first.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io(path))?;
        }
        if let Ok(bytes) = std::fs::read(path) {
            if !bytes.is_empty() && !bytes.ends_with(b"\n") {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                let f = OpenOptions::new().write(true).open(path).map_err(io(path))?;
                f.set_len(keep as u64).map_err(io(path))?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
        Ok(LedgerWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, c: &CellResult) -> Result<(), LedgerError> {
        let line = serde_json::to_string(c).expect("cell results serialize");
        writeln!(self.out, "{line}").map_err(io(&self.path))?;
        self.out.flush().map_err(io(&self.path))
    }
}
