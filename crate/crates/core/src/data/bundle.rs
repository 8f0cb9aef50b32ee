//! Binary container for a [`DatasetBundle`].
//!
//! Layout, all integers little-endian:
//! `b"STTDBNDL"`, `u32` version, then the sections vocabulary (`u32` count,
//! each `u32` byte length + UTF-8), popularity (`u32` count + `u64` each),
//! train and validation prefixes (`u32` count, each `u32` length + `u32` ids),
//! and the train, validation and test instances (`u32` count, each `u32`
//! label, `u32` length + `u32` ids).

use std::io::{self, Read, Write};
use std::path::Path;

use super::{DatasetBundle, Session};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"STTDBNDL";
pub const BUNDLE_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: usize) -> io::Result<()> {
        let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "value exceeds u32"))?;
        self.0.write_all(&v.to_le_bytes())
    }

    fn ids(&mut self, ids: &[usize]) -> io::Result<()> {
        self.u32(ids.len())?;
        ids.iter().try_for_each(|&i| self.u32(i))
    }

    fn sessions(&mut self, s: &[Session]) -> io::Result<()> {
        self.u32(s.len())?;
        for x in s {
            self.u32(x.label)?;
            self.ids(&x.items)?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("bundle truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn ids(&mut self, limit: usize) -> Result<Vec<usize>> {
        let n = self.u32()?;
        (0..n)
            .map(|_| {
                let i = self.u32()?;
                if i >= limit {
                    return Err(Error::Format(format!("item id {i} outside vocabulary of {limit}")));
                }
                Ok(i)
            })
            .collect()
    }

    fn prefixes(&mut self, limit: usize) -> Result<Vec<Vec<usize>>> {
        let n = self.u32()?;
        (0..n).map(|_| self.ids(limit)).collect()
    }

    fn sessions(&mut self, limit: usize) -> Result<Vec<Session>> {
        let n = self.u32()?;
        (0..n)
            .map(|_| {
                let label = self.u32()?;
                if label >= limit {
                    return Err(Error::Format(format!("label {label} outside vocabulary of {limit}")));
                }
                Ok(Session::new(self.ids(limit)?, label))
            })
            .collect()
    }
}

pub fn encode_bundle(b: &DatasetBundle) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    let inner = |w: &mut Writer<Vec<u8>>| -> io::Result<()> {
        w.0.write_all(MAGIC)?;
        w.u32(BUNDLE_VERSION as usize)?;
        w.u32(b.vocab.len())?;
        for key in &b.vocab {
            w.u32(key.len())?;
            w.0.write_all(key.as_bytes())?;
        }
        w.u32(b.popularity.len())?;
        for &c in &b.popularity {
            w.0.write_all(&c.to_le_bytes())?;
        }
        for p in [&b.train_sessions, &b.valid_sessions] {
            w.u32(p.len())?;
            p.iter().try_for_each(|s| w.ids(s))?;
        }
        w.sessions(&b.train)?;
        w.sessions(&b.valid)?;
        w.sessions(&b.test)
    };
    inner(&mut w).map_err(|e| Error::Format(e.to_string()))?;
    Ok(w.0)
}

pub fn decode_bundle(buf: &[u8]) -> Result<DatasetBundle> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a dataset bundle".into()));
    }
    let version = r.u32()? as u32;
    if version != BUNDLE_VERSION {
        return Err(Error::Format(format!(
            "bundle version {version}, expected {BUNDLE_VERSION}"
        )));
    }
    let n_vocab = r.u32()?;
    let vocab = (0..n_vocab)
        .map(|_| {
            let len = r.u32()?;
            String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("vocabulary key is not UTF-8".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_pop = r.u32()?;
    if n_pop != n_vocab {
        return Err(Error::Format(format!(
            "{n_pop} popularity counts for {n_vocab} items"
        )));
    }
    let popularity = (0..n_pop).map(|_| r.u64()).collect::<Result<_>>()?;
    let train_sessions = r.prefixes(n_vocab)?;
    let valid_sessions = r.prefixes(n_vocab)?;
    let train = r.sessions(n_vocab)?;
    let valid = r.sessions(n_vocab)?;
    let test = r.sessions(n_vocab)?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after bundle",
            buf.len() - r.pos
        )));
    }
    Ok(DatasetBundle {
        vocab,
        train_sessions,
        valid_sessions,
        train,
        valid,
        test,
        popularity,
    })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_bundle(path: &Path, b: &DatasetBundle) -> Result<()> {
    let bytes = encode_bundle(b)?;
    crate::checkpoint::write_atomic(path, &bytes)
}

/// Hex SHA-256 of the encoded bundle; checkpoints record it to detect mismatched data.
pub fn bundle_digest(b: &DatasetBundle) -> Result<String> {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(encode_bundle(b)?);
    Ok(digest.iter().map(|x| format!("{x:02x}")).collect())
}

pub fn read_bundle(path: &Path) -> Result<DatasetBundle> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_bundle(&buf)
}
