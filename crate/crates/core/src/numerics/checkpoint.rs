//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u64`:
//!
//! ```text
//! "DEEPCOM1"
//! repeated until EOF:
//!   name_len, name (UTF-8)
//!   rank, dims[rank]
//!   values (f64 LE, product(dims) of them)
//! ```
//!
//! Optimizer accumulators are stored as ordinary entries under `opt/<name>`;
//! run metadata lives under `meta/`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DEEPCOM1";
const OPT_PREFIX: &str = "opt/";
const META_PREFIX: &str = "meta/";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn set_meta(&mut self, key: &str, value: f64) {
        let name = format!("{META_PREFIX}{key}");
        self.entries.retain(|(n, _)| *n != name);
        self.push(name, Tensor::scalar(value));
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.get(&format!("{META_PREFIX}{key}")).map(Tensor::item)
    }

    /// Adds every parameter of `store` as `<prefix><name>`, plus accumulators
    /// under `opt/<prefix><name>`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for id in store.ids() {
            self.push(format!("{prefix}{}", store.name(id)), store.value(id).clone());
        }
        for id in store.ids() {
            if let Some(acc) = store.accum(id) {
                self.push(format!("{OPT_PREFIX}{prefix}{}", store.name(id)), acc.clone());
            }
        }
    }

    /// Loads values into an already-shaped store. Every store parameter must
    /// be present with an identical shape.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let key = format!("{prefix}{}", store.name(id));
            let t = self
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{key}`")))?;
            let want = store.value(id).shape().to_vec();
            if t.shape() != want.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{key}`: checkpoint {:?}, model {want:?}",
                    t.shape()
                )));
            }
            store.assign(id, t.clone())?;
            if let Some(acc) = self.get(&format!("{OPT_PREFIX}{key}")) {
                store.set_accum(id, acc.clone())?;
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a DEEPCOM1 checkpoint".into()));
        }
        let mut cur = Cursor {
            bytes,
            pos: MAGIC.len(),
        };
        let mut entries = Vec::new();
        while cur.pos < bytes.len() {
            let name_len = cur.u64()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u64()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("implausible rank {rank} for `{name}`")));
            }
            let dims = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push((name, Tensor::new(dims, data)?));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let s = self.take(8)?;
        Ok(u64::from_le_bytes(s.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let mut ck = Checkpoint::new();
        ck.push("w", Tensor::row(vec![1.5]));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut want = b"DEEPCOM1".to_vec();
        want.extend(1u64.to_le_bytes());
        want.extend(b"w");
        want.extend(2u64.to_le_bytes());
        want.extend(1u64.to_le_bytes());
        want.extend(1u64.to_le_bytes());
        want.extend(1.5f64.to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn store_round_trip_with_accumulators() {
        let mut store = ParamStore::new();
        let a = store.insert("a.w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        store.accum_or_init(a, 0.1);
        store.zeros("a.b", 1, 2).unwrap();
        let mut ck = Checkpoint::new();
        ck.push_store("model/", &store);
        assert!(ck.get("opt/model/a.w").is_some());
        assert!(ck.get("opt/model/a.b").is_none());

        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::from_bytes(&buf).unwrap();
        let mut fresh = ParamStore::new();
        fresh.zeros("a.w", 2, 2).unwrap();
        fresh.zeros("a.b", 1, 2).unwrap();
        back.restore_store("model/", &mut fresh).unwrap();
        assert_eq!(fresh.value(a), store.value(a));
        assert_eq!(fresh.accum(a).unwrap().data(), &[0.1; 4]);
    }

    #[test]
    fn shape_mismatch_is_a_checkpoint_error() {
        let mut store = ParamStore::new();
        store.zeros("w", 2, 2).unwrap();
        let mut ck = Checkpoint::new();
        ck.push_store("", &store);
        let mut other = ParamStore::new();
        other.zeros("w", 3, 2).unwrap();
        assert!(matches!(ck.restore_store("", &mut other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::from_bytes(b"DEEPCOM2").is_err());
        let mut ck = Checkpoint::new();
        ck.push("w", Tensor::row(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(Checkpoint::from_bytes(&buf).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..20), name in "[a-z./]{1,12}") {
            let mut ck = Checkpoint::new();
            ck.push(name, Tensor::row(values));
            ck.set_meta("step", 7.0);
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            prop_assert_eq!(Checkpoint::from_bytes(&buf).unwrap(), ck);
        }
    }
}
