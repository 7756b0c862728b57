//! Append-only block log: one hex-wrapped canonical block per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{Block, LedgerError};
use crate::identity::{from_canonical, to_canonical};

pub fn encode_line(block: &Block) -> String {
    hex::encode(to_canonical(block).expect("block is canonical"))
}

pub fn decode_line(line: &str) -> Result<Block, String> {
    let raw = hex::decode(line.trim()).map_err(|e| format!("bad hex: {e}"))?;
    let block: Block = from_canonical(&raw).map_err(|e| e.to_string())?;
    if to_canonical(&block).map_err(|e| e.to_string())? != raw {
        return Err("block bytes are not canonical".into());
    }
    Ok(block)
}

#[derive(Debug)]
pub struct BlockLog {
    path: PathBuf,
    file: File,
}

impl BlockLog {
    /// Open for appending, creating the file if needed.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LedgerError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, block: &Block) -> Result<(), LedgerError> {
        let mut line = encode_line(block);
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| LedgerError::Io(format!("{}: {e}", self.path.display())))
    }

    pub fn read_all(path: &Path) -> Result<Vec<Block>, LedgerError> {
        let file = File::open(path).map_err(|e| LedgerError::Io(format!("{}: {e}", path.display())))?;
        let mut blocks = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LedgerError::Io(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let block = decode_line(&line).map_err(|reason| LedgerError::Log { line: i + 1, reason })?;
            blocks.push(block);
        }
        Ok(blocks)
    }
}

pub fn write_all(path: &Path, blocks: &[Block]) -> Result<(), LedgerError> {
    let mut text = String::new();
    for b in blocks {
        text.push_str(&encode_line(b));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| LedgerError::Io(format!("{}: {e}", path.display())))
}
