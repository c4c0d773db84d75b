//! FSPE1 embedding interchange files.
//!
//! ```text
//! FSPE1 <dim>
//! <face_id> <v1> <v2> ... <v_dim>
//! ```
//!
//! Values are written with Rust's shortest round-trip decimal formatting, so
//! a parse/serialize cycle reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use super::{FaceVector, VectorSource};
use crate::error::{Error, Result};

const MAGIC: &str = "FSPE1";

/// Face id to vector, in file order.
pub type EmbeddingMap = IndexMap<String, FaceVector>;

pub fn parse_embeddings(text: &str) -> Result<EmbeddingMap> {
    let bad = |line: usize, msg: String| Error::parse("FSPE1 file", format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let dim: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
        [MAGIC, d] => d.parse().map_err(|_| bad(1, format!("bad dimension \"{d}\"")))?,
        _ => return Err(bad(1, format!("expected \"{MAGIC} <dim>\", got \"{header}\""))),
    };

    let mut map = EmbeddingMap::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let id = parts.next().unwrap_or_default();
        if id.is_empty() {
            return Err(bad(no, "empty face_id".into()));
        }
        let values = parts
            .map(|v| v.parse::<f64>().map_err(|_| bad(no, format!("bad number \"{v}\""))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::validation(format!(
                "FSPE1 record \"{id}\" has {} values but the header declares dim {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(no, format!("non-finite value in record \"{id}\"")));
        }
        let vector = FaceVector::new(id, values, VectorSource::External);
        if map.insert(id.to_string(), vector).is_some() {
            return Err(Error::validation(format!("duplicate FSPE1 record \"{id}\"")));
        }
    }
    Ok(map)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

/// Serializes vectors of one common dimension. An empty input writes a
/// header with dimension 0.
pub fn format_embeddings<'a>(vectors: impl IntoIterator<Item = &'a FaceVector>) -> Result<String> {
    let vectors: Vec<&FaceVector> = vectors.into_iter().collect();
    let dim = vectors.first().map_or(0, |v| v.dim());
    let mut out = format!("{MAGIC} {dim}\n");
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::Dim {
                expected: dim,
                got: v.dim(),
            });
        }
        if v.face_id.is_empty() || v.face_id.contains(char::is_whitespace) {
            return Err(Error::validation(format!(
                "face_id \"{}\" cannot be written to FSPE1",
                v.face_id
            )));
        }
        out.push_str(&v.face_id);
        for x in &v.values {
            write!(out, " {x}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_embeddings<'a>(vectors: impl IntoIterator<Item = &'a FaceVector>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_embeddings(vectors)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, dim: usize, base: f64) -> String {
        let vals: Vec<String> = (0..dim).map(|i| format!("{}", base + i as f64 * 0.001)).collect();
        format!("{id} {}\n", vals.join(" "))
    }

    #[test]
    fn parses_two_4096_records() {
        let text = format!("FSPE1 4096\n{}{}", record("a", 4096, 0.5), record("b", 4096, -1.0));
        let map = parse_embeddings(&text).unwrap();
        assert_eq!(map.len(), 2);
        assert!(map
            .values()
            .all(|v| v.dim() == 4096 && v.source == VectorSource::External));
        assert_eq!(map.keys().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let text = format!("FSPE1 4096\n{}{}", record("a", 4096, 0.5), record("b", 512, 0.5));
        assert!(parse_embeddings(&text).is_err());
    }

    #[test]
    fn empty_record_list() {
        assert!(parse_embeddings("FSPE1 4096\n").unwrap().is_empty());
    }

    #[test]
    fn bad_header_and_duplicates() {
        assert!(parse_embeddings("FSPE2 3\n").is_err());
        assert!(parse_embeddings("").is_err());
        assert!(parse_embeddings("FSPE1 1\na 1\na 2\n").is_err());
        assert!(parse_embeddings("FSPE1 1\na NaN\n").is_err());
    }

    #[test]
    fn awkward_values_round_trip() {
        let values = vec![0.1, -0.0, 1e-300, f64::MAX, f64::MIN_POSITIVE, 1.0 / 3.0, 5e-324];
        let v = FaceVector::new("x", values.clone(), VectorSource::External);
        let text = format_embeddings([&v]).unwrap();
        let back = parse_embeddings(&text).unwrap();
        let got = &back["x"].values;
        assert!(got.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(format_embeddings(back.values()).unwrap(), text);
    }
}
