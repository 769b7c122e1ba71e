use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::error::Category;

use super::{ChunkRecord, CorpusError};

/// Writes one JSON object per line, `\n`-terminated.
pub fn write_chunks(chunks: &[ChunkRecord], path: &Path) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in chunks {
        serde_json::to_writer(&mut w, c).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chunks(path: &Path) -> Result<Vec<ChunkRecord>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ChunkRecord = serde_json::from_str(&line).map_err(|e| match e.classify() {
            Category::Data => CorpusError::Schema {
                line: lineno,
                msg: e.to_string(),
            },
            _ => CorpusError::Malformed {
                line: lineno,
                msg: e.to_string(),
            },
        })?;
        out.push(rec);
    }
    Ok(out)
}
