use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AnnotationRecord, Extra, PreferencePair, SyntheticSample};
use crate::{Error, Result};

/// Records that keep fields they do not know about.
pub trait Extras {
    fn extras(&self) -> &Extra;
}

impl Extras for SyntheticSample {
    fn extras(&self) -> &Extra {
        &self.extra
    }
}

impl Extras for AnnotationRecord {
    fn extras(&self) -> &Extra {
        &self.extra
    }
}

impl Extras for PreferencePair {
    fn extras(&self) -> &Extra {
        &self.extra
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read one record per non-blank line. Strict mode rejects unknown fields.
pub fn read_jsonl<T: DeserializeOwned + Extras>(path: &Path, strict: bool) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let de = &mut serde_json::Deserializer::from_str(&line);
        let rec: T = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            err(format!("field `{field}`: {}", e.into_inner()))
        })?;
        if strict {
            if let Some(k) = rec.extras().keys().next() {
                return Err(err(format!("unknown field `{k}`")));
            }
        }
        out.push(rec);
    }
    Ok(out)
}
