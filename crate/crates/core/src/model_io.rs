//! Versioned binary model container and the text formats shared by the
//! pipeline stages.
//!
//! Container byte layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   b"RMC1"
//! version    u32       currently 1
//! header_len u32
//! header     header_len bytes of UTF-8 JSON (model kind + metadata)
//! n_matrices u32
//! per matrix:
//!   name_len u32
//!   name     name_len bytes UTF-8
//!   rows     u32
//!   cols     u32
//!   data     rows*cols f32, row-major
//! ```
//!
//! The header is serialized from fixed-order structs, so identical models
//! produce identical bytes on every platform.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::FeatureRecord;
use crate::corpus::Vocabulary;

pub const MAGIC: &[u8; 4] = b"RMC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes (not a model container)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("corrupt matrix section: {0}")]
    BadMatrix(String),
    #[error("container holds a {found} model, expected {expected}")]
    WrongKind { expected: &'static str, found: String },
    #[error("missing matrix {0:?}")]
    MissingMatrix(String),
    #[error("malformed {what} at line {line}: {reason}")]
    BadText {
        what: &'static str,
        line: usize,
        reason: String,
    },
}

/// Metadata header, tagged by model kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelHeader {
    Lda(LdaHeader),
    Embedding(EmbeddingHeader),
    FeedForward(FeedForwardHeader),
}

impl ModelHeader {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelHeader::Lda(_) => "lda",
            ModelHeader::Embedding(_) => "embedding",
            ModelHeader::FeedForward(_) => "feed_forward",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaHeader {
    pub k: usize,
    pub vocab_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iterations: usize,
    pub vocab: Vocabulary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub dim: usize,
    pub window: usize,
    pub subsample_t: f64,
    pub epochs: usize,
    pub start_lr: f64,
    pub end_lr: f64,
    pub seed: u64,
    pub vocab: Vocabulary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedForwardHeader {
    pub layer_sizes: Vec<usize>,
    pub head: String,
    pub lr_multipliers: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` entries.
    pub data: Vec<f32>,
}

impl NamedMatrix {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f32>) -> NamedMatrix {
        let name = name.into();
        assert_eq!(data.len(), rows * cols, "matrix {name}: bad shape");
        NamedMatrix { name, rows, cols, data }
    }

    pub fn from_f64(name: impl Into<String>, rows: usize, cols: usize, data: &[f64]) -> NamedMatrix {
        NamedMatrix::new(name, rows, cols, data.iter().map(|&x| x as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Container {
    pub header: ModelHeader,
    pub matrices: Vec<NamedMatrix>,
}

impl Container {
    pub fn matrix(&self, name: &str) -> Result<&NamedMatrix, ModelIoError> {
        self.matrices
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| ModelIoError::MissingMatrix(name.to_string()))
    }
}

pub fn write_container<W: Write>(mut w: W, container: &Container) -> Result<(), ModelIoError> {
    let io_err = |source| ModelIoError::Io { path: "<writer>".to_string(), source };
    let header =
        serde_json::to_vec(&container.header).map_err(|e| ModelIoError::BadHeader(e.to_string()))?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(header.len() as u32).map_err(io_err)?;
    w.write_all(&header).map_err(io_err)?;
    w.write_u32::<LittleEndian>(container.matrices.len() as u32).map_err(io_err)?;
    for m in &container.matrices {
        w.write_u32::<LittleEndian>(m.name.len() as u32).map_err(io_err)?;
        w.write_all(m.name.as_bytes()).map_err(io_err)?;
        w.write_u32::<LittleEndian>(m.rows as u32).map_err(io_err)?;
        w.write_u32::<LittleEndian>(m.cols as u32).map_err(io_err)?;
        for &x in &m.data {
            w.write_f32::<LittleEndian>(x).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<Container, ModelIoError> {
    let io_err = |source| ModelIoError::Io { path: "<reader>".to_string(), source };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != FORMAT_VERSION {
        return Err(ModelIoError::BadVersion(version));
    }
    let header_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(io_err)?;
    let mut header: ModelHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| ModelIoError::BadHeader(e.to_string()))?;
    match &mut header {
        ModelHeader::Lda(h) => h.vocab.rebuild_index(),
        ModelHeader::Embedding(h) => h.vocab.rebuild_index(),
        ModelHeader::FeedForward(_) => {}
    }
    let n = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut matrices = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| ModelIoError::BadMatrix(e.to_string()))?;
        let rows = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut data = vec![0f32; rows * cols];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(io_err)?;
        matrices.push(NamedMatrix { name, rows, cols, data });
    }
    Ok(Container { header, matrices })
}

pub fn save_container(path: &Path, container: &Container) -> Result<(), ModelIoError> {
    let file = File::create(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_container(BufWriter::new(file), container)
}

pub fn load_container(path: &Path) -> Result<Container, ModelIoError> {
    let file = File::open(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_container(BufReader::new(file))
}

/// Write word vectors in the plain text interchange format: first line
/// `V dim`, then one word and `dim` floats per line.
pub fn write_vectors_text<W: Write>(
    mut w: W,
    vocab: &Vocabulary,
    vectors: &[f32],
    dim: usize,
) -> Result<(), ModelIoError> {
    let io_err = |source| ModelIoError::Io { path: "<writer>".to_string(), source };
    assert_eq!(vectors.len(), vocab.len() * dim);
    writeln!(w, "{} {}", vocab.len(), dim).map_err(io_err)?;
    for id in 0..vocab.len() {
        write!(w, "{}", vocab.token(id as u32)).map_err(io_err)?;
        for j in 0..dim {
            write!(w, " {}", vectors[id * dim + j]).map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    Ok(())
}

/// Read the text vector format back: `(words, dim, row-major matrix)`.
pub fn read_vectors_text<R: Read>(r: R) -> Result<(Vec<String>, usize, Vec<f32>), ModelIoError> {
    let reader = BufReader::new(r);
    let mut lines = std::io::BufRead::lines(reader).enumerate();
    let bad = |line: usize, reason: &str| ModelIoError::BadText {
        what: "vector file",
        line,
        reason: reason.to_string(),
    };
    let (_, first) = lines
        .next()
        .ok_or_else(|| bad(1, "empty file"))?;
    let first = first.map_err(|e| bad(1, &e.to_string()))?;
    let mut head = first.split_whitespace();
    let v: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "bad vocabulary size"))?;
    let dim: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "bad dimension"))?;
    let mut words = Vec::with_capacity(v);
    let mut data = Vec::with_capacity(v * dim);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| bad(line_no, &e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().ok_or_else(|| bad(line_no, "missing word"))?;
        words.push(word.to_string());
        let mut count = 0;
        for f in fields {
            let x: f32 = f.parse().map_err(|_| bad(line_no, "bad float"))?;
            data.push(x);
            count += 1;
        }
        if count != dim {
            return Err(bad(line_no, &format!("expected {dim} floats, found {count}")));
        }
    }
    if words.len() != v {
        return Err(bad(0, &format!("expected {v} rows, found {}", words.len())));
    }
    Ok((words, dim, data))
}

/// Write the feature file format: header `N F`, then one line per record
/// with the image key and `F` floats.
pub fn write_features<W: Write>(mut w: W, records: &[FeatureRecord]) -> Result<(), ModelIoError> {
    let io_err = |source| ModelIoError::Io { path: "<writer>".to_string(), source };
    let dim = records.first().map(|r| r.features.len()).unwrap_or(0);
    writeln!(w, "{} {}", records.len(), dim).map_err(io_err)?;
    for rec in records {
        assert_eq!(rec.features.len(), dim, "inconsistent feature dimension");
        write!(w, "{}", rec.image_key).map_err(io_err)?;
        for &x in &rec.features {
            write!(w, " {}", x).map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRecord>, ModelIoError> {
    let file = File::open(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let bad = |line: usize, reason: String| ModelIoError::BadText {
        what: "feature file",
        line,
        reason,
    };
    let mut lines = std::io::BufRead::lines(reader).enumerate();
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let first = first.map_err(|e| bad(1, e.to_string()))?;
    let mut head = first.split_whitespace();
    let n: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "bad record count".into()))?;
    let dim: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "bad feature dimension".into()))?;
    let mut records = Vec::with_capacity(n);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| bad(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let key = fields.next().ok_or_else(|| bad(line_no, "missing image key".into()))?;
        let mut features = Vec::with_capacity(dim);
        for f in fields {
            let x: f64 = f
                .parse()
                .map_err(|_| bad(line_no, format!("bad float {f:?}")))?;
            if !x.is_finite() {
                return Err(bad(line_no, format!("non-finite feature {f:?}")));
            }
            features.push(x);
        }
        if features.len() != dim {
            return Err(bad(
                line_no,
                format!("expected {dim} floats, found {}", features.len()),
            ));
        }
        records.push(FeatureRecord::new(key, features));
    }
    if records.len() != n {
        return Err(bad(0, format!("expected {n} records, found {}", records.len())));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    fn small_vocab() -> Vocabulary {
        Vocabulary::from_token_streams(
            vec![vec!["alpha", "alpha", "beta", "gamma"]],
            1,
        )
    }

    #[test]
    fn container_roundtrip_is_bit_exact() {
        let vocab = small_vocab();
        let container = Container {
            header: ModelHeader::Lda(LdaHeader {
                k: 2,
                vocab_size: vocab.len(),
                alpha: 25.0,
                beta: 0.01,
                seed: 7,
                iterations: 10,
                vocab,
            }),
            matrices: vec![NamedMatrix::new(
                "phi",
                2,
                3,
                vec![0.5, 0.25, 0.25, 0.1, 0.2, 0.7],
            )],
        };
        let mut bytes = Vec::new();
        write_container(&mut bytes, &container).unwrap();
        let back = read_container(&bytes[..]).unwrap();
        assert_eq!(back.matrix("phi").unwrap(), &container.matrices[0]);
        let mut bytes2 = Vec::new();
        write_container(&mut bytes2, &back).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = read_container(&b"NOPE\x01\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, ModelIoError::BadMagic));
    }

    #[test]
    fn vectors_text_roundtrip() {
        let vocab = small_vocab();
        let data: Vec<f32> = (0..vocab.len() * 4).map(|i| i as f32 * 0.5).collect();
        let mut text = Vec::new();
        write_vectors_text(&mut text, &vocab, &data, 4).unwrap();
        let (words, dim, back) = read_vectors_text(&text[..]).unwrap();
        assert_eq!(dim, 4);
        assert_eq!(words.len(), vocab.len());
        assert_eq!(back, data);
    }

    #[test]
    fn feature_file_roundtrip() {
        let records = vec![
            FeatureRecord::new("r1:-:1", vec![1.0, -0.5, 0.25]),
            FeatureRecord::new("r1:2:9", vec![0.0, 3.5, -1.0]),
        ];
        let mut text = Vec::new();
        write_features(&mut text, &records).unwrap();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), &text).unwrap();
        let back = read_features(tmp.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].image_key, "r1:-:1");
        assert_eq!(back[1].features, vec![0.0, 3.5, -1.0]);
    }
}
