//! Flat checkpoint files: a header (magic, version, per-net topology) followed by a
//! single little-endian `f64` blob holding every net's values in header order.

use std::io::{Read, Write};
use std::path::Path;

use super::net::{GaussianNet, Mlp, Normalizer};
use super::ModelError;

pub const MAGIC: &[u8; 8] = b"MEMBCKPT";
pub const VERSION: u32 = 1;

/// One network inside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSection {
    pub name: String,
    /// Layer sizes including input and output.
    pub sizes: Vec<usize>,
    /// Parameter values in registration order.
    pub values: Vec<f64>,
    pub normalizer: Option<Normalizer>,
}

impl NetSection {
    pub fn from_mlp(name: &str, mlp: &Mlp) -> Self {
        Self {
            name: name.to_string(),
            sizes: mlp.sizes().to_vec(),
            values: mlp.params().flat_values(),
            normalizer: None,
        }
    }

    pub fn from_gaussian(name: &str, net: &GaussianNet) -> Self {
        Self {
            normalizer: net.normalizer().cloned(),
            ..Self::from_mlp(name, net.mlp())
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp, ModelError> {
        Ok(Mlp::from_flat(&self.sizes, &self.values)?)
    }

    pub fn to_gaussian(&self) -> Result<GaussianNet, ModelError> {
        Ok(GaussianNet::from_parts(self.to_mlp()?, self.normalizer.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub sections: Vec<NetSection>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Result<&NetSection, ModelError> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| ModelError::Format(format!("checkpoint has no section `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.extend_from_slice(&(s.sizes.len() as u32).to_le_bytes());
            for &n in &s.sizes {
                out.extend_from_slice(&(n as u32).to_le_bytes());
            }
            out.push(u8::from(s.normalizer.is_some()));
            out.extend_from_slice(&(s.values.len() as u64).to_le_bytes());
        }
        for s in &self.sections {
            let mut put = |x: f64| out.extend_from_slice(&x.to_le_bytes());
            s.values.iter().copied().for_each(&mut put);
            if let Some(n) = &s.normalizer {
                put(n.count());
                n.mean().iter().copied().for_each(&mut put);
                n.m2().iter().copied().for_each(&mut put);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut headers = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| ModelError::Format(e.to_string()))?;
            let layers = r.u32()? as usize;
            let sizes = (0..layers).map(|_| r.u32().map(|x| x as usize)).collect::<Result<Vec<_>, _>>()?;
            let normalized = r.take(1)?[0] != 0;
            let n_values = r.u64()? as usize;
            let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            if n_values != expected {
                return Err(ModelError::Format(format!(
                    "section `{name}`: {n_values} values do not match topology {sizes:?}"
                )));
            }
            headers.push((name, sizes, normalized, n_values));
        }
        let mut sections = Vec::with_capacity(count);
        for (name, sizes, normalized, n_values) in headers {
            let values = r.f64s(n_values)?;
            let normalizer = if normalized {
                let dim = sizes[0];
                let n = r.f64()?;
                Some(Normalizer::from_raw(n, r.f64s(dim)?, r.f64s(dim)?))
            } else {
                None
            };
            sections.push(NetSection {
                name,
                sizes,
                values,
                normalizer,
            });
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Format("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        (0..n).map(|_| self.f64()).collect()
    }
}
