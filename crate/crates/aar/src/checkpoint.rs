//! Binary snapshots of encoders, indexes and readers.
//!
//! All integers are little-endian `u32` unless noted and all reals `f32`.
//!
//! * encoder: `AARENC01`, vocab size, dim, embedding table, projection.
//! * index: `AARIDX01`, count, dim, mode tag (0 exact, 1 IVF), ids as
//!   length-prefixed UTF-8, vectors; IVF adds n_lists, n_probe, centroids
//!   and one list number per vector.
//! * reader: `AARFID01`, layers, heads, d_model, vocab size, max segment
//!   length, seed (`u64`), tensor count, then per tensor its name
//!   (length-prefixed), rank, dims and data.
//!
//! Parameters live on the `f32` grid, so every round trip is exact.

use std::fs;
use std::path::Path;

use aar_core::ann::IvfLists;
use aar_core::reader::NamedTensor;
use aar_core::{EncoderParams, Index, ReaderConfig, ReaderModel};

use crate::error::{AarError, Result};
use crate::formats::write_file;

pub const ENCODER_MAGIC: &[u8; 8] = b"AARENC01";
pub const INDEX_MAGIC: &[u8; 8] = b"AARIDX01";
pub const READER_MAGIC: &[u8; 8] = b"AARFID01";

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, x: usize) {
        let x = u32::try_from(x).expect("size fits in u32");
        self.0.extend_from_slice(&x.to_le_bytes());
    }

    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }

    fn f32s(&mut self, xs: impl IntoIterator<Item = f32>) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 8], what: &'static str) -> Result<Self> {
        let mut r = Self { bytes, pos: 0, what };
        let found = r.take(8, "magic bytes")?;
        if found != magic {
            return Err(AarError::Data(format!(
                "{what}: bad magic bytes {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            AarError::Data(format!("{}: truncated while reading {field} at byte {}", self.what, self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| AarError::Data(format!("{}: {field} too large", self.what)))?;
        let b = self.take(len, field)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn str(&mut self, field: &str) -> Result<String> {
        let n = self.u32(field)?;
        let b = self.take(n, field)?;
        String::from_utf8(b.to_vec()).map_err(|_| AarError::Data(format!("{}: {field} is not UTF-8", self.what)))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(AarError::Data(format!("{}: {} trailing bytes", self.what, self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AarError::io(path, e))
}

fn widen(xs: Vec<f32>) -> Vec<f64> {
    xs.into_iter().map(f64::from).collect()
}

pub fn encoder_to_bytes(params: &EncoderParams) -> Vec<u8> {
    let mut w = Writer(ENCODER_MAGIC.to_vec());
    w.u32(params.vocab_size() as usize);
    w.u32(params.embed_dim());
    w.f32s(params.embedding_table.iter().map(|&x| x as f32));
    w.f32s(params.projection.iter().map(|&x| x as f32));
    w.0
}

pub fn encoder_from_bytes(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = Reader::new(bytes, ENCODER_MAGIC, "encoder checkpoint")?;
    let vocab = r.u32("vocab size")?;
    let dim = r.u32("embedding dim")?;
    let table = r.f32s(vocab * dim, "embedding table")?;
    let projection = r.f32s(dim * dim, "projection")?;
    r.finish()?;
    EncoderParams::from_parts(vocab as u32, dim, widen(table), widen(projection))
        .map_err(|e| AarError::Data(format!("encoder checkpoint: {e}")))
}

pub fn save_encoder(params: &EncoderParams, path: &Path) -> Result<()> {
    write_file(path, &encoder_to_bytes(params))
}

pub fn load_encoder(path: &Path) -> Result<EncoderParams> {
    encoder_from_bytes(&read_bytes(path)?).map_err(|e| e.context(&path.display().to_string()))
}

/// Saves the trained retriever, warning when an existing file is replaced.
pub fn export_retriever(params: &EncoderParams, path: &Path) -> Result<()> {
    if path.exists() {
        log::warn!("overwriting existing retriever checkpoint {}", path.display());
    }
    save_encoder(params, path)
}

pub fn index_to_bytes(index: &Index) -> Vec<u8> {
    let mut w = Writer(INDEX_MAGIC.to_vec());
    w.u32(index.len());
    w.u32(index.dim());
    w.u32(usize::from(index.ivf().is_some()));
    for id in index.doc_ids() {
        w.str(id);
    }
    w.f32s(index.vectors().iter().copied());
    if let Some(ivf) = index.ivf() {
        w.u32(ivf.n_lists);
        w.u32(ivf.n_probe);
        w.f32s(ivf.centroids.iter().copied());
        for &a in &ivf.assignments {
            w.u32(a as usize);
        }
    }
    w.0
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<Index> {
    let mut r = Reader::new(bytes, INDEX_MAGIC, "index snapshot")?;
    let count = r.u32("count")?;
    let dim = r.u32("dim")?;
    let tag = r.u32("mode tag")?;
    let ids = (0..count).map(|_| r.str("document id")).collect::<Result<Vec<_>>>()?;
    let vectors = r.f32s(count * dim, "vectors")?;
    let ivf = match tag {
        0 => None,
        1 => {
            let n_lists = r.u32("n_lists")?;
            let n_probe = r.u32("n_probe")?;
            let centroids = r.f32s(n_lists * dim, "centroids")?;
            let assignments = (0..count).map(|_| r.u32("assignment").map(|a| a as u32)).collect::<Result<Vec<_>>>()?;
            Some(IvfLists::new(n_lists, n_probe, centroids, assignments, dim)?)
        }
        t => return Err(AarError::Data(format!("index snapshot: unknown mode tag {t}"))),
    };
    r.finish()?;
    Ok(Index::from_parts(ids, dim, vectors, ivf)?)
}

pub fn save_index(index: &Index, path: &Path) -> Result<()> {
    write_file(path, &index_to_bytes(index))
}

pub fn load_index(path: &Path) -> Result<Index> {
    index_from_bytes(&read_bytes(path)?).map_err(|e| e.context(&path.display().to_string()))
}

pub fn reader_to_bytes(model: &ReaderModel) -> Vec<u8> {
    let c = model.config;
    let mut w = Writer(READER_MAGIC.to_vec());
    w.u32(c.layers);
    w.u32(c.heads);
    w.u32(c.d_model);
    w.u32(c.vocab_size as usize);
    w.u32(c.max_seg_len);
    w.u64(c.seed);
    let tensors = model.named_tensors();
    w.u32(tensors.len());
    for t in tensors {
        w.str(&t.name);
        w.u32(t.shape.len());
        for &d in &t.shape {
            w.u32(d);
        }
        w.f32s(t.data.iter().map(|&x| x as f32));
    }
    w.0
}

pub fn reader_from_bytes(bytes: &[u8]) -> Result<ReaderModel> {
    let mut r = Reader::new(bytes, READER_MAGIC, "reader checkpoint")?;
    let config = ReaderConfig {
        layers: r.u32("layers")?,
        heads: r.u32("heads")?,
        d_model: r.u32("d_model")?,
        vocab_size: r.u32("vocab size")? as u32,
        max_seg_len: r.u32("max segment length")?,
        seed: r.u64("seed")?,
    };
    let n = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.str("tensor name")?;
        let rank = r.u32("tensor rank")?;
        let shape = (0..rank).map(|_| r.u32("tensor dim")).collect::<Result<Vec<_>>>()?;
        let size = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let size = size.ok_or_else(|| AarError::Data(format!("reader checkpoint: tensor {name} too large")))?;
        let data = widen(r.f32s(size, &name)?);
        tensors.push(NamedTensor { name, shape, data });
    }
    r.finish()?;
    Ok(ReaderModel::from_tensors(config, tensors)?)
}

pub fn save_reader(model: &ReaderModel, path: &Path) -> Result<()> {
    write_file(path, &reader_to_bytes(model))
}

pub fn load_reader(path: &Path) -> Result<ReaderModel> {
    reader_from_bytes(&read_bytes(path)?).map_err(|e| e.context(&path.display().to_string()))
}
