//! On-disk formats: JSON-lines boxes and media listings, text and binary
//! embeddings, and the JSON protocol manifest.
//!
//! Binary embeddings (`BEMB`), all integers little-endian:
//!
//! ```text
//! "BEMB" | u32 version = 1 | u32 dim | u64 count
//! count × ( u32 id_len | id_len bytes UTF-8 | dim × f32 )
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use bodymetric_core::model::{
    BoundingBox, DetectionRecord, DetectionStore, EmbeddingRecord, EmbeddingStore, GroundTruthRecord, GroundTruthStore,
    MediaRecord, Modality, ProtocolManifest,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"BEMB";
pub const BINARY_VERSION: u32 = 1;

/// Coordinate convention of box lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxFormat {
    /// `x`, `y`, `w`, `h` with a top-left origin.
    #[default]
    Xywh,
    /// `x1`, `y1`, `x2`, `y2` corners.
    Xyxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Text,
    Binary,
}

#[derive(Deserialize)]
struct BoxLine {
    media_id: String,
    frame: u64,
    x: Option<f64>,
    y: Option<f64>,
    w: Option<f64>,
    h: Option<f64>,
    x1: Option<f64>,
    y1: Option<f64>,
    x2: Option<f64>,
    y2: Option<f64>,
    score: Option<f64>,
    subject_id: Option<String>,
    dataset_tag: Option<String>,
}

impl BoxLine {
    fn bbox(&self, format: BoxFormat) -> std::result::Result<BoundingBox, String> {
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| format!("missing key {key:?}"));
        let b = match format {
            BoxFormat::Xywh => {
                BoundingBox::new(need(self.x, "x")?, need(self.y, "y")?, need(self.w, "w")?, need(self.h, "h")?)
            }
            BoxFormat::Xyxy => BoundingBox::from_corners(
                need(self.x1, "x1")?,
                need(self.y1, "y1")?,
                need(self.x2, "x2")?,
                need(self.y2, "y2")?,
            ),
        };
        b.map_err(|e| e.to_string())
    }
}

/// Parses a JSON-lines file, skipping blank lines. `line` numbers are
/// 1-based.
fn read_json_lines<T, F>(path: &Path, mut build: F) -> Result<Vec<T>>
where
    F: FnMut(usize, &str) -> Result<T>,
{
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(build(i + 1, &line)?);
    }
    Ok(out)
}

fn parse_line<T: for<'de> Deserialize<'de>>(path: &Path, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse { path: path.into(), line, message: e.to_string() })
}

fn record_err(path: &Path, line: usize, source: bodymetric_core::Error) -> Error {
    Error::Record { path: path.into(), line, source }
}

pub fn load_detections(path: impl AsRef<Path>, format: BoxFormat) -> Result<DetectionStore> {
    let path = path.as_ref();
    let records = read_json_lines(path, |line, text| {
        let l: BoxLine = parse_line(path, line, text)?;
        let bbox = l.bbox(format).map_err(|m| record_err(path, line, bodymetric_core::Error::Validation(m)))?;
        let score =
            l.score.ok_or_else(|| Error::Parse { path: path.into(), line, message: "missing key \"score\"".into() })?;
        let mut rec = DetectionRecord::new(l.media_id, l.frame, bbox, score).map_err(|e| record_err(path, line, e))?;
        rec.dataset_tag = l.dataset_tag;
        Ok(rec)
    })?;
    Ok(DetectionStore::new(records))
}

pub fn load_ground_truth(path: impl AsRef<Path>, format: BoxFormat) -> Result<GroundTruthStore> {
    let path = path.as_ref();
    let records = read_json_lines(path, |line, text| {
        let l: BoxLine = parse_line(path, line, text)?;
        let bbox = l.bbox(format).map_err(|m| record_err(path, line, bodymetric_core::Error::Validation(m)))?;
        let subject = l.subject_id.clone().ok_or_else(|| Error::Parse {
            path: path.into(),
            line,
            message: "missing key \"subject_id\"".into(),
        })?;
        let mut rec = GroundTruthRecord::new(l.media_id, l.frame, bbox, subject);
        rec.dataset_tag = l.dataset_tag;
        Ok(rec)
    })?;
    GroundTruthStore::new(records).map_err(|source| Error::Invalid { path: path.into(), source })
}

#[derive(Deserialize)]
struct MediaLine {
    media_id: String,
    subject_id: String,
    dataset_tag: String,
    modality: Modality,
    #[serde(default = "one")]
    frame_count: u64,
}

fn one() -> u64 {
    1
}

pub fn load_media(path: impl AsRef<Path>) -> Result<Vec<MediaRecord>> {
    let path = path.as_ref();
    read_json_lines(path, |line, text| {
        let l: MediaLine = parse_line(path, line, text)?;
        MediaRecord::new(l.media_id, l.subject_id, l.dataset_tag, l.modality, l.frame_count)
            .map_err(|e| record_err(path, line, e))
    })
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    media_id: String,
    vector: Vec<f64>,
}

/// Reads an embedding file. With no explicit format, files starting with
/// the binary magic are read as binary and everything else as text.
pub fn load_embeddings(path: impl AsRef<Path>, format: Option<EmbeddingFormat>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => sniff_embedding_format(path)?,
    };
    match format {
        EmbeddingFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes).map_err(|message| Error::Format { path: path.into(), message })?.into_store(path)
        }
        EmbeddingFormat::Text => load_embeddings_text(path),
    }
}

pub fn sniff_embedding_format(path: &Path) -> Result<EmbeddingFormat> {
    use std::io::Read;
    let mut head = [0u8; 4];
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    Ok(if n == 4 && &head == BINARY_MAGIC { EmbeddingFormat::Binary } else { EmbeddingFormat::Text })
}

fn load_embeddings_text(path: &Path) -> Result<EmbeddingStore> {
    let mut dim: Option<usize> = None;
    let records = read_json_lines(path, |line, text| {
        let l: EmbeddingLine = parse_line(path, line, text)?;
        let d = *dim.get_or_insert(l.vector.len());
        if l.vector.len() != d {
            return Err(record_err(
                path,
                line,
                bodymetric_core::Error::Validation(format!(
                    "embedding {} has dimension {}, store dimension is {d}",
                    l.media_id,
                    l.vector.len()
                )),
            ));
        }
        Ok(EmbeddingRecord { media_id: l.media_id, vector: l.vector })
    })?;
    EmbeddingStore::new(dim.unwrap_or(0), records).map_err(|source| Error::Invalid { path: path.into(), source })
}

/// Decoded binary file before store validation.
pub struct BinaryEmbeddings {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl BinaryEmbeddings {
    fn into_store(self, path: &Path) -> Result<EmbeddingStore> {
        EmbeddingStore::new(self.dim, self.records).map_err(|source| Error::Invalid { path: path.into(), source })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated file while reading {what} at byte {}", self.pos)),
        }
    }
    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_binary(bytes: &[u8]) -> std::result::Result<BinaryEmbeddings, String> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != BINARY_MAGIC {
        return Err(format!("bad magic {:?}, expected \"BEMB\"", String::from_utf8_lossy(magic)));
    }
    let version = c.u32("version")?;
    if version != BINARY_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let dim = c.u32("dim")? as usize;
    let count = c.u64("count")?;
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for i in 0..count {
        let len = c.u32("id length")? as usize;
        let id = std::str::from_utf8(c.take(len, "media id")?)
            .map_err(|e| format!("record {i}: media id is not UTF-8: {e}"))?
            .to_owned();
        let raw = c.take(dim * 4, "vector")?;
        let vector = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
        records.push(EmbeddingRecord { media_id: id, vector });
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes after {count} records", bytes.len() - c.pos));
    }
    Ok(BinaryEmbeddings { dim, records })
}

/// Encodes a store; components are narrowed to `f32`.
pub fn encode_binary(store: &EmbeddingStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + store.len() * (8 + 4 * store.dim()));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (id, v) in store.iter() {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in v {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    out
}

pub fn encode_text(store: &EmbeddingStore) -> Vec<u8> {
    let mut out = Vec::new();
    for (id, v) in store.iter() {
        let line = EmbeddingLine { media_id: id.to_owned(), vector: v.to_vec() };
        serde_json::to_writer(&mut out, &line).expect("in-memory write");
        out.push(b'\n');
    }
    out
}

pub fn write_embeddings(path: impl AsRef<Path>, store: &EmbeddingStore, format: EmbeddingFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        EmbeddingFormat::Binary => encode_binary(store),
        EmbeddingFormat::Text => encode_text(store),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_protocol(path: impl AsRef<Path>) -> Result<ProtocolManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), line: e.line(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn detections_count_preserved() {
        let f = file_with(
            r#"{"media_id":"m","frame":0,"x":1,"y":2,"w":3,"h":4,"score":0.9}
{"media_id":"m","frame":0,"x":5,"y":2,"w":3,"h":4,"score":0.4,"dataset_tag":"struct"}
"#,
        );
        let s = load_detections(f.path(), BoxFormat::Xywh).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.records()[1].dataset_tag.as_deref(), Some("struct"));
    }

    #[test]
    fn zero_width_names_the_line() {
        let f = file_with(
            "{\"media_id\":\"m\",\"frame\":0,\"x\":1,\"y\":2,\"w\":3,\"h\":4,\"score\":0.9}\n\
             {\"media_id\":\"m\",\"frame\":1,\"x\":1,\"y\":2,\"w\":0,\"h\":4,\"score\":0.9}\n",
        );
        match load_detections(f.path(), BoxFormat::Xywh) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_a_parse_error() {
        let f = file_with("{\"media_id\":\"m\",\"frame\":0,\n");
        assert!(matches!(load_detections(f.path(), BoxFormat::Xywh), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_empty_store() {
        let f = file_with("");
        assert!(load_detections(f.path(), BoxFormat::Xywh).unwrap().is_empty());
        assert!(load_ground_truth(f.path(), BoxFormat::Xywh).unwrap().is_empty());
    }

    #[test]
    fn corner_format() {
        let f = file_with(r#"{"media_id":"m","frame":3,"x1":1,"y1":2,"x2":4,"y2":6,"subject_id":"s"}"#);
        let s = load_ground_truth(f.path(), BoxFormat::Xyxy).unwrap();
        assert_eq!(s.records()[0].bbox.to_array(), [1.0, 2.0, 3.0, 4.0]);
        assert!(load_ground_truth(f.path(), BoxFormat::Xywh).is_err());
    }

    #[test]
    fn text_dimension_mismatch() {
        let f = file_with("{\"media_id\":\"a\",\"vector\":[1,2,3]}\n{\"media_id\":\"b\",\"vector\":[1,2]}\n");
        assert!(matches!(load_embeddings(f.path(), None), Err(Error::Record { line: 2, .. })));
    }

    #[test]
    fn binary_header_contract() {
        let store = EmbeddingStore::new(
            512,
            (0..3).map(|i| EmbeddingRecord { media_id: format!("m{i}"), vector: vec![i as f64 * 0.5; 512] }).collect(),
        )
        .unwrap();
        let bytes = encode_binary(&store);
        assert_eq!(&bytes[..4], b"BEMB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 512);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        let f = file_with("");
        std::fs::write(f.path(), &bytes).unwrap();
        let back = load_embeddings(f.path(), None).unwrap();
        assert_eq!((back.len(), back.dim()), (3, 512));
        assert_eq!(back, store);
    }

    #[test]
    fn binary_magic_mismatch() {
        let f = file_with("BEMX\x01\0\0\0");
        assert!(matches!(load_embeddings(f.path(), Some(EmbeddingFormat::Binary)), Err(Error::Format { .. })));
        assert!(decode_binary(b"BEMB\x01\0\0\0\x02\0\0\0\x01\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn protocol_json() {
        let f = file_with(
            r#"{"gallery":[{"subject_id":"s1","media_ids":["g1"]},{"subject_id":"d","media_ids":["g2"],"distractor":true}],
                "probes":[{"probe_id":"p","media_id":"x","true_subject_id":"s1"},{"probe_id":"q","media_id":"y"}]}"#,
        );
        let m = load_protocol(f.path()).unwrap();
        assert_eq!(m.gallery.len(), 2);
        assert!(m.gallery[1].distractor);
        assert_eq!(m.probes[1].true_subject_id, None);
    }
}
