//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"TICN"                      magic
//! u32                          format version
//! u64 + bytes                  UTF-8 JSON model configuration
//! u64                          tensor count
//! per tensor:
//!   u64 + bytes                UTF-8 name
//!   u32                        rank
//!   u64 * rank                 dimensions
//!   f32 * product(dims)        row-major data
//! u64 + bytes                  UTF-8 JSON array of vocabulary tokens
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TICN";
pub const FORMAT_VERSION: u32 = 1;

const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config_json: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub vocab: Vec<String>,
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u64(r)?;
    let mut buf = Vec::new();
    r.by_ref().take(len).read_to_end(&mut buf)?;
    if buf.len() as u64 != len {
        return Err(Error::Checkpoint(format!("truncated {what}")));
    }
    String::from_utf8(buf).map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
}

impl Container {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_bytes(w, self.config_json.as_bytes())?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_bytes(w, name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut raw = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                raw.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&raw)?;
        }
        write_bytes(w, serde_json::to_string(&self.vocab)?.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let config_json = read_string(r, "config")?;
        let count = read_u64(r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = read_string(r, "tensor name")?;
            let rank = read_u32(r)?;
            if rank == 0 || rank > MAX_RANK {
                return Err(Error::Checkpoint(format!("tensor `{name}` has unsupported rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let mut raw = Vec::new();
            r.by_ref().take((n * 4) as u64).read_to_end(&mut raw)?;
            if raw.len() != n * 4 {
                return Err(Error::Checkpoint(format!("tensor `{name}` is truncated")));
            }
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        let vocab: Vec<String> = serde_json::from_str(&read_string(r, "vocabulary")?)?;
        Ok(Container {
            config_json,
            tensors,
            vocab,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Container {
        Container {
            config_json: r#"{"a":1}"#.into(),
            tensors: vec![
                ("w".into(), Tensor::from_vec(&[2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-7, f32::MAX]).unwrap()),
                ("b".into(), Tensor::from_vec(&[1], vec![0.5]).unwrap()),
            ],
            vocab: vec!["<pad>".into(), "<unk>".into(), "naïve".into()],
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"TICN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 7);
        assert_eq!(&bytes[16..23], br#"{"a":1}"#);
        assert_eq!(u64::from_le_bytes(bytes[23..31].try_into().unwrap()), 2);
        // first tensor: name "w", rank 2, dims 2 and 3, then 6 floats
        assert_eq!(u64::from_le_bytes(bytes[31..39].try_into().unwrap()), 1);
        assert_eq!(bytes[39], b'w');
        assert_eq!(u32::from_le_bytes(bytes[40..44].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[44..52].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[52..60].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(bytes[64..68].try_into().unwrap()), -2.5);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(Container::read_from(&mut bytes.as_slice()), Err(Error::Checkpoint(m)) if m.contains("version")));
        bytes[0] = b'X';
        assert!(Container::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn rejects_truncated_file() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(Container::read_from(&mut &cut[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e6f32..1e6, 1..40), tokens in proptest::collection::vec("[a-z']{1,8}", 0..10)) {
            let c = Container {
                config_json: "{}".into(),
                tensors: vec![("t".into(), Tensor::from_vec(&[values.len()], values).unwrap())],
                vocab: tokens,
            };
            let back = Container::read_from(&mut c.to_bytes().unwrap().as_slice()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
