//! Binary parameter container and its text manifest.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AQ01" | version: u32
//! repeated until end of file:
//!     name_len: u32 | name: UTF-8 | rank: u32 | extents: u64 × rank | values: f64 × Π extents
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AQ01";
pub const VERSION: u32 = 1;

pub fn encode_params(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.scalar_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                self.source,
                format!("byte {}", self.pos),
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_params(bytes: &[u8], seed: u64, source: &str) -> Result<ParamSet> {
    let mut r = Reader {
        bytes,
        pos: 0,
        source,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(source, "byte 0", "bad magic, expected AQ01"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(
            source,
            "byte 4",
            format!("unsupported version {version}"),
        ));
    }
    let mut params = ParamSet::new(seed);
    while !r.done() {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::parse(source, format!("byte {at}"), "name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::parse(source, format!("entry `{name}`"), e.to_string()))?;
        params
            .insert(&name, t)
            .map_err(|e| Error::parse(source, format!("entry `{name}`"), e.to_string()))?;
    }
    Ok(params)
}

pub fn manifest_text(params: &ParamSet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format = AQ01 v{VERSION}");
    let _ = writeln!(s, "seed = {}", params.seed());
    let _ = writeln!(s, "entries = {}", params.len());
    let _ = writeln!(s, "scalars = {}", params.scalar_count());
    for (name, t) in params.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{name}\t{}", shape.join("x"));
    }
    s
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest")
}

/// Writes the container and its sidecar manifest next to it.
pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))?;
    let m = manifest_path(path);
    fs::write(&m, manifest_text(params)).map_err(|e| Error::io(&m, e))
}

/// Reads a container; the seed comes from the manifest when it exists.
pub fn load_params(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let seed = match fs::read_to_string(manifest_path(path)) {
        Ok(text) => text
            .lines()
            .find_map(|l| l.strip_prefix("seed = "))
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0),
        Err(_) => 0,
    };
    decode_params(&bytes, seed, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::Init;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut p = ParamSet::new(1);
        p.insert("ab", Tensor::vector(vec![1.5])).unwrap();
        let bytes = encode_params(&p);
        assert_eq!(&bytes[..4], b"AQ01");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], b"ab");
        assert_eq!(&bytes[14..18], &1u32.to_le_bytes());
        assert_eq!(&bytes[18..26], &1u64.to_le_bytes());
        assert_eq!(&bytes[26..34], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 34);
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let mut p = ParamSet::new(1);
        p.init("w", &[2, 3], Init::Xavier).unwrap();
        let bytes = encode_params(&p);
        assert!(decode_params(&bytes[..bytes.len() - 3], 1, "t").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_params(&bad, 1, "t").is_err());
    }

    #[test]
    fn save_and_load_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.aq");
        let mut p = ParamSet::new(77);
        p.init("gru.w_z", &[4, 3], Init::Xavier).unwrap();
        p.init("head.b", &[2], Init::Uniform(0.3)).unwrap();
        save_params(&path, &p).unwrap();
        let manifest = fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(manifest.contains("seed = 77"));
        assert!(manifest.contains("gru.w_z\t4x3"));
        assert_eq!(load_params(&path).unwrap(), p);
    }

    proptest! {
        #[test]
        fn roundtrip_is_lossless(
            entries in prop::collection::btree_map(
                "[a-z][a-z0-9_.]{0,12}",
                prop::collection::vec(-1e6f64..1e6, 1..20),
                1..6,
            ),
            seed in any::<u64>(),
        ) {
            let mut p = ParamSet::new(seed);
            for (name, values) in &entries {
                p.insert(name, Tensor::vector(values.clone())).unwrap();
            }
            let back = decode_params(&encode_params(&p), seed, "prop").unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
