//! Index file format.
//!
//! ```text
//! STRATA-INDEX\n
//! {manifest json}\n
//! body: length-prefixed little-endian sections
//! ```
//!
//! The body holds one chunk-table section followed by one section per
//! layer (node ids, embedding block, edge triples, communities). Every
//! float is stored as its IEEE-754 bits, so a load reproduces the saved
//! index exactly. The manifest checksum is SHA-256 over the manifest
//! serialized with an empty checksum, followed by the body.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::EmbeddingVector;
use crate::docmodel::{BuildConfig, ChunkKind, DocumentChunk};
use crate::error::{Error, Result};
use crate::graphbuild::{Community, Edge, GraphLayer, HierarchicalIndex};

pub const MAGIC: &[u8] = b"STRATA-INDEX\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexManifest {
    pub format_version: u32,
    pub config: BuildConfig,
    pub layer_count: usize,
    pub chunk_count: usize,
    pub body_bytes: u64,
    pub checksum: String,
}

fn checksum(manifest: &IndexManifest, body: &[u8]) -> Result<String> {
    let unsigned = IndexManifest { checksum: String::new(), ..manifest.clone() };
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&unsigned)?);
    h.update(body);
    Ok(hex::encode(h.finalize()))
}

pub fn encode_index(index: &HierarchicalIndex) -> Result<(IndexManifest, Vec<u8>)> {
    let mut body = Vec::new();
    let mut chunks = Vec::new();
    put_u64(&mut chunks, index.chunks.len() as u64);
    for c in index.chunks.values() {
        put_u64(&mut chunks, c.id);
        chunks.push(match c.kind {
            ChunkKind::Leaf => 0,
            ChunkKind::Summary => 1,
        });
        put_u64(&mut chunks, c.layer_index as u64);
        put_u64(&mut chunks, c.token_count as u64);
        put_bytes(&mut chunks, c.text.as_bytes());
        put_u64(&mut chunks, c.source_ids.len() as u64);
        c.source_ids.iter().for_each(|s| put_u64(&mut chunks, *s));
    }
    put_bytes(&mut body, &chunks);

    for (layer, comms) in index.layers.iter().zip(&index.communities) {
        let mut sec = Vec::new();
        put_u64(&mut sec, layer.layer_index as u64);
        put_u64(&mut sec, layer.node_ids.len() as u64);
        layer.node_ids.iter().for_each(|id| put_u64(&mut sec, *id));
        let dim = layer.embeddings.first().map_or(0, EmbeddingVector::dim);
        if layer.embeddings.iter().any(|e| e.dim() != dim) {
            return Err(Error::input(format!("layer {} mixes embedding dimensions", layer.layer_index)));
        }
        put_u64(&mut sec, dim as u64);
        for e in &layer.embeddings {
            e.values().iter().for_each(|v| put_f64(&mut sec, *v));
        }
        put_u64(&mut sec, layer.edges.len() as u64);
        for e in &layer.edges {
            put_u64(&mut sec, e.u as u64);
            put_u64(&mut sec, e.v as u64);
            put_f64(&mut sec, e.w);
        }
        put_u64(&mut sec, comms.len() as u64);
        for c in comms {
            put_u64(&mut sec, c.id as u64);
            put_u64(&mut sec, c.summary_id);
            put_u64(&mut sec, c.members.len() as u64);
            c.members.iter().for_each(|m| put_u64(&mut sec, *m));
        }
        put_bytes(&mut body, &sec);
    }

    let mut manifest = IndexManifest {
        format_version: FORMAT_VERSION,
        config: index.config.clone(),
        layer_count: index.layers.len(),
        chunk_count: index.chunks.len(),
        body_bytes: body.len() as u64,
        checksum: String::new(),
    };
    manifest.checksum = checksum(&manifest, &body)?;
    Ok((manifest, body))
}

pub fn to_bytes(index: &HierarchicalIndex) -> Result<(IndexManifest, Vec<u8>)> {
    let (manifest, body) = encode_index(index)?;
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&manifest)?);
    out.push(b'\n');
    out.extend(body);
    Ok((manifest, out))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(IndexManifest, HierarchicalIndex)> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated("file ends inside the magic line".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not an index file (bad magic line)".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Truncated("file ends inside the manifest".into()))?;
    let header = &rest[..nl];
    let body = &rest[nl + 1..];
    let value: serde_json::Value =
        serde_json::from_slice(header).map_err(|e| Error::Format(format!("manifest is not json: {e}")))?;
    if let Some(v) = value.get("format_version").and_then(serde_json::Value::as_u64) {
        if v != u64::from(FORMAT_VERSION) {
            return Err(Error::VersionMismatch { found: v as u32, expected: FORMAT_VERSION });
        }
    }
    let manifest: IndexManifest =
        serde_json::from_value(value).map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
    if serde_json::to_vec(&manifest)? != header {
        return Err(Error::Format("manifest is not in canonical form".into()));
    }
    if (body.len() as u64) < manifest.body_bytes {
        return Err(Error::Truncated(format!("body has {} of {} bytes", body.len(), manifest.body_bytes)));
    }
    if body.len() as u64 > manifest.body_bytes {
        return Err(Error::Format("trailing bytes after the body".into()));
    }
    let actual = checksum(&manifest, body)?;
    if actual != manifest.checksum {
        return Err(Error::ChecksumMismatch { expected: manifest.checksum.clone(), actual });
    }
    let index = decode_body(&manifest, body)?;
    Ok((manifest, index))
}

fn decode_body(manifest: &IndexManifest, body: &[u8]) -> Result<HierarchicalIndex> {
    let mut r = Reader { buf: body };
    let mut sec = Reader { buf: r.bytes()? };
    let n_chunks = sec.len()?;
    let mut chunks = BTreeMap::new();
    for _ in 0..n_chunks {
        let id = sec.u64()?;
        let kind = match sec.u8()? {
            0 => ChunkKind::Leaf,
            1 => ChunkKind::Summary,
            k => return Err(Error::Format(format!("unknown chunk kind {k}"))),
        };
        let layer_index = sec.len()?;
        let token_count = sec.len()?;
        let text = String::from_utf8(sec.bytes()?.to_vec())
            .map_err(|_| Error::Format(format!("chunk {id} text is not utf-8")))?;
        let n_src = sec.len()?;
        let source_ids = (0..n_src).map(|_| sec.u64()).collect::<Result<Vec<_>>>()?;
        chunks.insert(id, DocumentChunk { id, text, token_count, kind, layer_index, source_ids });
    }
    sec.finish()?;

    let mut layers = Vec::with_capacity(manifest.layer_count);
    let mut communities = Vec::with_capacity(manifest.layer_count);
    for _ in 0..manifest.layer_count {
        let mut sec = Reader { buf: r.bytes()? };
        let layer_index = sec.len()?;
        let n = sec.len()?;
        let node_ids = (0..n).map(|_| sec.u64()).collect::<Result<Vec<_>>>()?;
        let dim = sec.len()?;
        let mut embeddings = Vec::with_capacity(n.min(sec.buf.len()));
        for _ in 0..n {
            let values = (0..dim).map(|_| sec.f64()).collect::<Result<Vec<_>>>()?;
            embeddings.push(EmbeddingVector::from_unit(values).map_err(|e| Error::Format(e.to_string()))?);
        }
        let n_edges = sec.len()?;
        let mut edges = Vec::with_capacity(n_edges.min(sec.buf.len()));
        for _ in 0..n_edges {
            edges.push(Edge { u: sec.len()?, v: sec.len()?, w: sec.f64()? });
        }
        let n_comms = sec.len()?;
        let mut comms = Vec::with_capacity(n_comms.min(sec.buf.len()));
        for _ in 0..n_comms {
            let id = sec.len()?;
            let summary_id = sec.u64()?;
            let m = sec.len()?;
            let members = (0..m).map(|_| sec.u64()).collect::<Result<Vec<_>>>()?;
            comms.push(Community { id, members, summary_id });
        }
        sec.finish()?;
        layers.push(GraphLayer { layer_index, node_ids, embeddings, edges });
        communities.push(comms);
    }
    r.finish()?;
    if chunks.len() != manifest.chunk_count {
        return Err(Error::Format("chunk count disagrees with the manifest".into()));
    }
    Ok(HierarchicalIndex { layers, chunks, communities, config: manifest.config.clone() })
}

/// Writes atomically via a sibling temporary file.
pub fn save_index(index: &HierarchicalIndex, path: &Path) -> Result<IndexManifest> {
    let (manifest, bytes) = to_bytes(index)?;
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(manifest)
}

pub fn load_index(path: &Path) -> Result<HierarchicalIndex> {
    Ok(from_bytes(&fs::read(path)?)?.1)
}

pub fn load_index_with_manifest(path: &Path) -> Result<(IndexManifest, HierarchicalIndex)> {
    from_bytes(&fs::read(path)?)
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u64(out, b.len() as u64);
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Truncated(format!("need {n} bytes, {} left in section", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("length {v} out of range")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} unexpected bytes at end of section", self.buf.len())))
        }
    }
}
