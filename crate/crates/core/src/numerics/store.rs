//! Self-describing binary weight container.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "SGLK" | version: u16 | count: u32 |
//!   count x ( name_len: u16 | name: utf-8 | rank: u8 | dims: u32 x rank | f64 x prod(dims) )
//! ```

use super::{NumericsError, Scaler, ScalerKind, Tensor};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SGLK";
pub const FORMAT_VERSION: u16 = 1;

/// Named tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: Vec<(String, Tensor)>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = tensor;
        } else {
            self.entries.push((name, tensor));
        }
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.insert(name, Tensor::scalar(value));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| NumericsError::Format(format!("missing tensor '{name}'")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64, NumericsError> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(NumericsError::Format(format!("'{name}' is not a scalar")));
        }
        Ok(t.item())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores a scaler under `prefix.kind`, `prefix.offset`, `prefix.divisor`.
    pub fn insert_scaler(&mut self, prefix: &str, scaler: &Scaler) {
        let kind = match scaler.kind {
            ScalerKind::MinMax => 0.0,
            ScalerKind::Standard => 1.0,
        };
        self.insert_scalar(format!("{prefix}.kind"), kind);
        let n = scaler.features();
        self.insert(
            format!("{prefix}.offset"),
            Tensor::new(vec![n], scaler.offset().to_vec()).expect("non-empty"),
        );
        self.insert(
            format!("{prefix}.divisor"),
            Tensor::new(vec![n], scaler.divisor().to_vec()).expect("non-empty"),
        );
    }

    pub fn scaler(&self, prefix: &str) -> Result<Scaler, NumericsError> {
        let kind = match self.scalar(&format!("{prefix}.kind"))? as i64 {
            0 => ScalerKind::MinMax,
            1 => ScalerKind::Standard,
            k => return Err(NumericsError::Format(format!("unknown scaler kind {k}"))),
        };
        Scaler::from_parts(
            kind,
            self.get(&format!("{prefix}.offset"))?.data().to_vec(),
            self.get(&format!("{prefix}.divisor"))?.data().to_vec(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for d in t.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, NumericsError> {
        let r = &mut bytes;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(NumericsError::Format("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes(read_array(r)?);
        if version != FORMAT_VERSION {
            return Err(NumericsError::Format(format!("unsupported format version {version}")));
        }
        let count = u32::from_le_bytes(read_array(r)?);
        let mut store = Self::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_array(r)?) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| NumericsError::Format("tensor name is not utf-8".into()))?;
            let [rank] = read_array::<1>(r)?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(read_array(r)?) as usize);
            }
            let n: usize = shape.iter().product();
            if n.saturating_mul(8) > r.len() {
                return Err(NumericsError::Format(format!("truncated payload for '{name}'")));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(read_array(r)?));
            }
            let t = Tensor::new(shape, data).map_err(|e| NumericsError::Format(format!("'{name}': {e}")))?;
            store.entries.push((name, t));
        }
        if !r.is_empty() {
            return Err(NumericsError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(store)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| NumericsError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let bytes = std::fs::read(path).map_err(|e| NumericsError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), NumericsError> {
    r.read_exact(buf)
        .map_err(|_| NumericsError::Format("unexpected end of weight file".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], NumericsError> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}
