//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "RNNGCKPT" | u32 version
//! u32 n_dims  { u32 key_len, key bytes, u64 value }*
//! u32 n_params { u32 name_len, name bytes, u32 rows, u32 cols, u8 trainable, rows*cols f32 }*
//! u64 vocab_len, vocab text (utf-8)
//! ```

use std::io::{Read, Write};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RNNGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: Vec<(String, u64)>,
    pub params: Vec<StoredParam>,
    pub vocab: String,
}

impl Checkpoint {
    pub fn from_store(dims: Vec<(String, u64)>, store: &ParamStore, vocab: String) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| StoredParam {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
                trainable: p.trainable,
                data: p.data.iter().map(|&x| x as f32).collect(),
            })
            .collect();
        Checkpoint {
            dims,
            params,
            vocab,
        }
    }

    pub fn dim(&self, key: &str) -> Option<u64> {
        self.dims.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// Copies stored values into `store`, checking names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for sp in &self.params {
            let id = store
                .id(&sp.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", sp.name)))?;
            let p = store.get_mut(id);
            if (p.rows, p.cols) != (sp.rows, sp.cols) {
                return Err(Error::Checkpoint(format!(
                    "parameter {} is {}x{} in checkpoint, {}x{} in model",
                    sp.name, sp.rows, sp.cols, p.rows, p.cols
                )));
            }
            p.data = sp.data.iter().map(|&x| x as f64).collect();
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for (k, v) in &self.dims {
            write_str(w, k)?;
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            write_str(w, &p.name)?;
            w.write_all(&(p.rows as u32).to_le_bytes())?;
            w.write_all(&(p.cols as u32).to_le_bytes())?;
            w.write_all(&[p.trainable as u8])?;
            let mut buf = Vec::with_capacity(p.data.len() * 4);
            for x in &p.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.write_all(&(self.vocab.len() as u64).to_le_bytes())?;
        w.write_all(self.vocab.as_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let n_dims = read_u32(r)?;
        let mut dims = Vec::new();
        for _ in 0..n_dims {
            let k = read_str(r)?;
            dims.push((k, read_u64(r)?));
        }
        let n_params = read_u32(r)?;
        let mut params = Vec::new();
        for _ in 0..n_params {
            let name = read_str(r)?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let mut buf = vec![0u8; rows * cols * 4];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(StoredParam {
                name,
                rows,
                cols,
                trainable: flag[0] != 0,
                data,
            });
        }
        let n = read_u64(r)? as usize;
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)?;
        let vocab =
            String::from_utf8(buf).map_err(|_| Error::Checkpoint("vocab is not utf-8".into()))?;
        Ok(Checkpoint {
            dims,
            params,
            vocab,
        })
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Checkpoint("implausible string length".into()));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("name is not utf-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let mut store = ParamStore::new();
        store.add("a", 2, 2, vec![0.5, -1.0, 2.0, 0.25], true);
        store.add("pre", 1, 3, vec![1.0, 2.0, 3.0], false);
        let ck = Checkpoint::from_store(vec![("word_dim".into(), 40)], &store, "vocab".into());
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.dim("word_dim"), Some(40));

        let mut other = ParamStore::new();
        other.add("a", 2, 2, vec![0.0; 4], true);
        other.add("pre", 1, 3, vec![0.0; 3], false);
        back.restore_into(&mut other).unwrap();
        assert_eq!(other, store);

        let mut wrong = ParamStore::new();
        wrong.add("a", 4, 1, vec![0.0; 4], true);
        wrong.add("pre", 1, 3, vec![0.0; 3], false);
        assert!(back.restore_into(&mut wrong).is_err());

        bytes[0] = b'X';
        assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
    }
}
