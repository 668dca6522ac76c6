use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{at_path, CliError, CliResult};

/// Parses one JSON object per non-blank line; errors name file and line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let f = at_path(path, std::fs::File::open(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = at_path(path, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(out: &mut impl Write, items: &[T]) -> CliResult<()> {
    for it in items {
        serde_json::to_writer(&mut *out, it)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Pretty JSON document plus trailing newline on stdout.
pub fn print_json<T: Serialize>(v: &T) -> CliResult<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, v)?;
    lock.write_all(b"\n")?;
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        at_path(dir, std::fs::create_dir_all(dir))?;
    }
    at_path(path, std::fs::write(path, bytes))
}
