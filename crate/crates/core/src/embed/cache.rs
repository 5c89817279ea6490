//! Binary embedding cache.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   b"PCEMB\x01"
//! dim     u32
//! taglen  u16, tag bytes (provider tag, UTF-8)
//! count   u64
//! count × { idlen u16, id bytes, dim × f64 }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Embedding;
use crate::pair::PairId;

const MAGIC: &[u8; 6] = b"PCEMB\x01";

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not an embedding cache (bad magic)")]
    BadMagic,
    #[error("cache entry {id} has non-UTF-8 id")]
    BadId { id: usize },
    #[error("cache was written by provider {found}, expected {expected}")]
    ProviderMismatch { expected: String, found: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCache {
    pub dim: usize,
    pub provider_tag: String,
    pub vectors: BTreeMap<PairId, Embedding>,
}

impl EmbeddingCache {
    pub fn new(dim: usize, provider_tag: impl Into<String>) -> Self {
        EmbeddingCache {
            dim,
            provider_tag: provider_tag.into(),
            vectors: BTreeMap::new(),
        }
    }
}

pub fn write_cache(path: &Path, cache: &EmbeddingCache) -> Result<(), CacheError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(cache.dim as u32)?;
    w.write_u16::<LittleEndian>(cache.provider_tag.len() as u16)?;
    w.write_all(cache.provider_tag.as_bytes())?;
    w.write_u64::<LittleEndian>(cache.vectors.len() as u64)?;
    for (id, v) in &cache.vectors {
        debug_assert_eq!(v.dim(), cache.dim);
        w.write_u16::<LittleEndian>(id.as_str().len() as u16)?;
        w.write_all(id.as_str().as_bytes())?;
        for x in v.values() {
            w.write_f64::<LittleEndian>(*x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<EmbeddingCache, CacheError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CacheError::BadMagic);
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let taglen = r.read_u16::<LittleEndian>()? as usize;
    let mut tag = vec![0u8; taglen];
    r.read_exact(&mut tag)?;
    let provider_tag = String::from_utf8(tag).map_err(|_| CacheError::BadMagic)?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut vectors = BTreeMap::new();
    for i in 0..count {
        let idlen = r.read_u16::<LittleEndian>()? as usize;
        let mut id = vec![0u8; idlen];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| CacheError::BadId { id: i })?;
        let mut values = vec![0.0; dim];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        vectors.insert(PairId(id), Embedding::new(values));
    }
    Ok(EmbeddingCache {
        dim,
        provider_tag,
        vectors,
    })
}
