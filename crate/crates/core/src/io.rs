//! JSONL readers/writers shared by every file format, plus file digests.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::decision::{PredictionLine, PredictionRecord, PREDICTION_KEYS};
use crate::error::{Error, Result};

/// How unknown keys in input lines are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

/// Lowercase hex SHA-256 of raw bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

/// Parses prediction lines from any reader. `origin` only labels errors.
pub fn parse_predictions(
    reader: impl BufRead,
    origin: &Path,
    strictness: Strictness,
) -> Result<Vec<PredictionRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for_each_line(reader, origin, |line_no, line| {
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| corrupt(origin, line_no, e.to_string()))?;
        if strictness == Strictness::Strict {
            if let Some(obj) = value.as_object() {
                if let Some(key) = obj.keys().find(|k| !PREDICTION_KEYS.contains(&k.as_str())) {
                    return Err(Error::Schema(format!(
                        "{}:{line_no}: unknown key {key:?}",
                        origin.display()
                    )));
                }
            }
        }
        let raw: PredictionLine = serde_json::from_value(value)
            .map_err(|e| Error::Schema(format!("{}:{line_no}: {e}", origin.display())))?;
        let record = PredictionRecord::try_from(raw).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{}:{line_no}: {msg}", origin.display())),
            other => other,
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        out.push(record);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_predictions(path: impl AsRef<Path>, strictness: Strictness) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(BufReader::new(file), path, strictness)
}

/// Reads one JSON value per non-blank line, reporting the 1-based line
/// number of the first line that fails to parse.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for_each_line(BufReader::new(file), path, |line_no, line| {
        let value = serde_json::from_str(line).map_err(|e| corrupt(path, line_no, e.to_string()))?;
        out.push(value);
        Ok(())
    })?;
    Ok(out)
}

/// Overwrites `path` with one JSON line per item.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let n = write_lines(&mut w, items).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub(crate) fn write_lines<'a, T: Serialize + 'a>(
    w: &mut impl Write,
    items: impl IntoIterator<Item = &'a T>,
) -> std::io::Result<usize> {
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}

fn for_each_line(
    reader: impl BufRead,
    origin: &Path,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => corrupt(origin, line_no, e.to_string()),
            _ => Error::io(origin, e),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        f(line_no, &line)?;
    }
    Ok(())
}

fn corrupt(path: &Path, line: usize, message: String) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        line,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, strictness: Strictness) -> Result<Vec<PredictionRecord>> {
        parse_predictions(text.as_bytes(), Path::new("mem.jsonl"), strictness)
    }

    #[test]
    fn parses_optional_fields() {
        let text = r#"{"id":"a","p_yes":0.5,"p_no":0.3,"p_tbd":0.2}
{"id":"b","p_yes":0.1,"p_no":0.1,"p_tbd":0.8,"gold":"TBD","aux":{"risk":0.4}}
"#;
        let recs = parse(text, Strictness::Strict).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].gold, None);
        assert_eq!(recs[1].aux.as_ref().unwrap()["risk"], 0.4);
    }

    #[test]
    fn unknown_keys_depend_on_mode() {
        let text = r#"{"id":"a","p_yes":0.5,"p_no":0.3,"p_tbd":0.2,"logits":[1,2,3]}"#;
        assert_eq!(parse(text, Strictness::Strict).unwrap_err().code(), "SCHEMA_ERROR");
        assert_eq!(parse(text, Strictness::Lenient).unwrap().len(), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = r#"{"id":"a","p_yes":0.5,"p_no":0.3,"p_tbd":0.2}
{"id":"a","p_yes":0.5,"p_no":0.3,"p_tbd":0.2}"#;
        assert_eq!(parse(text, Strictness::Strict).unwrap_err().code(), "DUPLICATE_ID");
    }

    #[test]
    fn distribution_errors_surface() {
        let text = r#"{"id":"a","p_yes":0.5,"p_no":0.5,"p_tbd":0.1}"#;
        assert_eq!(parse(text, Strictness::Strict).unwrap_err().code(), "NOT_NORMALIZED");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"p_yes\":0.5,\"p_no\":0.3,\"p_tbd\":0.2}\n{\"id\":\"b\",\"p_y";
        match parse(text, Strictness::Strict).unwrap_err() {
            Error::Corrupt { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn digest_is_sha256_hex() {
        assert_eq!(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
