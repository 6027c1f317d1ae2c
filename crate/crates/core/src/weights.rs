//! LSW1 weight archives.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! "LSW1"                         magic, 4 bytes
//! u32                            tensor count
//! per tensor:
//!   u16                          name length in bytes
//!   [u8]                         UTF-8 name
//!   u8                           dtype (0 = f32)
//!   u8                           ndim
//!   u32 * ndim                   dims
//!   f32 * product(dims)          payload
//! u32                            CRC32 (IEEE) of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LSW1";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl WeightTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let count: usize = dims.iter().product();
        if count != values.len() {
            return Err(Error::InvalidEntry(format!(
                "dims {dims:?} need {count} values, got {}",
                values.len()
            )));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::InvalidEntry(format!(
                "dims {dims:?} not representable"
            )));
        }
        Ok(WeightTensor { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let count = dims.iter().product();
        WeightTensor {
            dims,
            values: vec![0.0; count],
        }
    }
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightArchive {
    entries: IndexMap<String, WeightTensor>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn format_version(&self) -> u32 {
        FORMAT_VERSION
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: WeightTensor) -> Result<()> {
        let name = name.into();
        validate_name(&name)?;
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Inserts or overwrites.
    pub fn set(&mut self, name: impl Into<String>, tensor: WeightTensor) -> Result<()> {
        let name = name.into();
        validate_name(&name)?;
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightTensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Entries whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> WeightArchive {
        WeightArchive {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copy of `self` with every entry of `other` inserted or overwritten.
    pub fn merged(&self, other: &WeightArchive) -> WeightArchive {
        let mut out = self.clone();
        for (k, v) in &other.entries {
            out.entries.insert(k.clone(), v.clone());
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .entries
            .iter()
            .map(|(k, v)| 2 + k.len() + 2 + 4 * v.dims.len() + 4 * v.values.len())
            .sum();
        let mut buf = Vec::with_capacity(12 + payload);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(DTYPE_F32);
            buf.push(t.dims.len() as u8);
            for &d in &t.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Truncated(format!(
                "{} bytes is shorter than the magic",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut cur = Cursor { bytes, pos: 4 };
        let count = cur.u32("tensor count")?;
        let mut parsed = Vec::new();
        for i in 0..count {
            let name_len = cur.u16("name length")? as usize;
            let name_bytes = cur.take(name_len, "name")?;
            let dtype = cur.u8("dtype")?;
            let ndim = cur.u8("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(cur.u32("dims")? as usize);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|c| c.checked_mul(4))
                .ok_or_else(|| Error::Truncated(format!("tensor {i} dims {dims:?} overflow")))?;
            let payload = cur.take(count, "payload")?;
            parsed.push((name_bytes, dtype, dims, payload, i));
        }
        let remaining = bytes.len() - cur.pos;
        if remaining < 4 {
            return Err(Error::Truncated(format!(
                "missing checksum: {remaining} of 4 bytes present"
            )));
        }
        if remaining > 4 {
            return Err(Error::InvalidEntry(format!(
                "{} unexpected bytes before the checksum",
                remaining - 4
            )));
        }
        let stored = u32::from_le_bytes(bytes[cur.pos..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..cur.pos]);
        if stored != computed {
            return Err(Error::CrcMismatch { stored, computed });
        }

        let mut archive = WeightArchive::new();
        for (name_bytes, dtype, dims, payload, i) in parsed {
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| Error::InvalidEntry(format!("tensor {i} name is not UTF-8")))?;
            if dtype != DTYPE_F32 {
                return Err(Error::InvalidEntry(format!(
                    "tensor `{name}` has unsupported dtype {dtype}"
                )));
            }
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            archive.insert(name, WeightTensor { dims, values })?;
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

/// Renames entries; names absent from `renames` pass through unchanged.
pub fn import_map(
    archive: &WeightArchive,
    renames: &BTreeMap<String, String>,
) -> Result<WeightArchive> {
    if let Some(missing) = renames.keys().find(|k| !archive.contains(k)) {
        return Err(Error::RenameSource(missing.clone()));
    }
    let mut out = IndexMap::with_capacity(archive.len());
    for (name, tensor) in archive.iter() {
        let target = renames.get(name).map(String::as_str).unwrap_or(name);
        validate_name(target)?;
        if out.insert(target.to_string(), tensor.clone()).is_some() {
            return Err(Error::RenameCollision(target.to_string()));
        }
    }
    Ok(WeightArchive { entries: out })
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::InvalidEntry("empty tensor name".into()));
    }
    if name.len() > u16::MAX as usize {
        return Err(Error::InvalidEntry(format!(
            "tensor name of {} bytes exceeds 65535",
            name.len()
        )));
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        // The trailing checksum is not part of the entry stream.
        let limit = self.bytes.len().saturating_sub(4);
        if self.pos + n > limit {
            return Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, only {} before the checksum",
                self.pos,
                limit.saturating_sub(self.pos)
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_tensor_archive() -> WeightArchive {
        let mut a = WeightArchive::new();
        a.insert(
            "conv.weight",
            WeightTensor::new(vec![2, 1, 3, 3], (0..18).map(|v| v as f32 * 0.5).collect()).unwrap(),
        )
        .unwrap();
        a.insert(
            "conv.bias",
            WeightTensor::new(vec![2], vec![-1.0, 1.5]).unwrap(),
        )
        .unwrap();
        a
    }

    #[test]
    fn empty_archive_layout() {
        let bytes = WeightArchive::new().to_bytes();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"LSW1");
        assert_eq!(&bytes[4..8], &[0, 0, 0, 0]);
        assert!(WeightArchive::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn file_size_matches_layout_arithmetic() {
        // header 4 + count 4 + crc 4
        // conv.weight: 2 + 11 + 1 + 1 + 4*4 + 18*4 = 103
        // conv.bias:   2 + 9 + 1 + 1 + 4*1 + 2*4  = 25
        assert_eq!(two_tensor_archive().to_bytes().len(), 12 + 103 + 25);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lsw");
        let a = two_tensor_archive();
        a.save(&path).unwrap();
        let b = WeightArchive::load(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read(&path).unwrap(), b.to_bytes());
    }

    #[test]
    fn distinct_corruption_errors() {
        let bytes = two_tensor_archive().to_bytes();

        let mut flipped = bytes.clone();
        flipped[40] ^= 0x01;
        assert!(matches!(
            WeightArchive::from_bytes(&flipped),
            Err(Error::CrcMismatch { .. })
        ));

        assert!(matches!(
            WeightArchive::from_bytes(&bytes[..bytes.len() - 4]),
            Err(Error::Truncated(_))
        ));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            WeightArchive::from_bytes(&magic),
            Err(Error::BadMagic)
        ));
    }

    #[test]
    fn duplicate_name_in_file_is_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            buf.extend_from_slice(&1u16.to_le_bytes());
            buf.push(b'a');
            buf.push(DTYPE_F32);
            buf.push(1);
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(&1.0f32.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            WeightArchive::from_bytes(&buf),
            Err(Error::DuplicateName(n)) if n == "a"
        ));
    }

    #[test]
    fn names_are_validated() {
        let mut a = WeightArchive::new();
        assert!(a.insert("", WeightTensor::zeros(vec![1])).is_err());
        assert!(a
            .insert("x".repeat(70_000), WeightTensor::zeros(vec![1]))
            .is_err());
        assert!(WeightTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn import_map_cases() {
        let a = two_tensor_archive();
        let identity: BTreeMap<_, _> = a.names().map(|n| (n.to_string(), n.to_string())).collect();
        assert_eq!(import_map(&a, &identity).unwrap(), a);
        assert_eq!(import_map(&a, &BTreeMap::new()).unwrap(), a);

        let collide = BTreeMap::from([("conv.weight".to_string(), "conv.bias".to_string())]);
        assert!(matches!(
            import_map(&a, &collide),
            Err(Error::RenameCollision(_))
        ));

        let missing = BTreeMap::from([("nope".to_string(), "x".to_string())]);
        assert!(matches!(
            import_map(&a, &missing),
            Err(Error::RenameSource(_))
        ));

        let swap = BTreeMap::from([
            ("conv.weight".to_string(), "conv.bias".to_string()),
            ("conv.bias".to_string(), "conv.weight".to_string()),
        ]);
        let s = import_map(&a, &swap).unwrap();
        assert_eq!(s.get("conv.bias").unwrap().dims, vec![2, 1, 3, 3]);
    }

    fn arb_archive() -> impl Strategy<Value = WeightArchive> {
        let entry = (
            "[a-z][a-z0-9._]{0,12}",
            prop::collection::vec(0usize..4, 0..4),
        )
            .prop_flat_map(|(name, dims)| {
                let n: usize = dims.iter().product();
                (
                    Just(name),
                    Just(dims),
                    prop::collection::vec(any::<f32>(), n),
                )
            });
        prop::collection::vec(entry, 0..6).prop_map(|entries| {
            let mut a = WeightArchive::new();
            for (name, dims, values) in entries {
                let _ = a.insert(name, WeightTensor::new(dims, values).unwrap());
            }
            a
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(a in arb_archive()) {
            let bytes = a.to_bytes();
            let b = WeightArchive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(b.to_bytes(), bytes);
            for ((n1, t1), (n2, t2)) in a.iter().zip(b.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(&t1.dims, &t2.dims);
                let bits1: Vec<u32> = t1.values.iter().map(|v| v.to_bits()).collect();
                let bits2: Vec<u32> = t2.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits1, bits2);
            }
        }
    }
}
