//! Line-delimited JSON helpers.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("I/O error")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Reads one value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(
    mut writer: impl Write,
    items: impl IntoIterator<Item = T>,
) -> Result<(), JsonlError> {
    for item in items {
        serde_json::to_writer(&mut writer, &item).map_err(|e| JsonlError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_blank_lines_and_reports_line_numbers() {
        let values: Vec<u32> = read_jsonl("1\n\n2\n".as_bytes()).unwrap();
        assert_eq!(values, vec![1, 2]);
        let err = read_jsonl::<u32>("1\nx\n".as_bytes()).unwrap_err();
        assert!(matches!(err, JsonlError::Parse { line: 2, .. }));
    }

    #[test]
    fn writes_one_object_per_line() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, [1, 2, 3]).unwrap();
        assert_eq!(buf, b"1\n2\n3\n");
    }
}
