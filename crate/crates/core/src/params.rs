//! Named parameter storage and the `THNK` binary checkpoint format.
//!
//! Layout (all integers u32 little-endian, values f64 little-endian):
//!
//! ```text
//! "THNK" | version | { name_len | name (UTF-8) | rank | dims[rank] | values }*
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{numel, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"THNK";
pub const FORMAT_VERSION: u32 = 1;

/// Parameters keyed by dotted path, e.g. `backbone.block2.conv1.weight`.
/// Iteration order is lexicographic, which keeps every reduction over the
/// store deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Adds a convolution's weight (Kaiming-uniform over fan-in) and zero bias.
    pub fn init_conv(&mut self, prefix: &str, c_out: usize, c_in: usize, k: usize, rng: &mut impl Rng) {
        let bound = (6.0 / (c_in * k * k) as f64).sqrt();
        let weight = Tensor::from_fn([c_out, c_in, k, k], |_, _, _, _| rng.random_range(-bound..bound));
        self.insert(format!("{prefix}.weight"), weight);
        self.insert(format!("{prefix}.bias"), Tensor::zeros([c_out, 1, 1, 1]));
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for (name, t) in &self.tensors {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&4u32.to_le_bytes())?;
            for d in t.shape() {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic bytes {magic:?}")));
        }
        let version = read_u32(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut store = ParamStore::new();
        loop {
            let mut len_bytes = [0u8; 4];
            match input.read(&mut len_bytes[..1]) {
                Ok(0) => break,
                Ok(_) => read_exact(&mut input, &mut len_bytes[1..])?,
                Err(e) => return Err(Error::Checkpoint(format!("read failed: {e}"))),
            }
            let name_len = u32::from_le_bytes(len_bytes) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut input, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = read_u32(&mut input)? as usize;
            if rank > 4 {
                return Err(Error::Checkpoint(format!("`{name}` has rank {rank}; at most 4 supported")));
            }
            let mut shape: Shape = [1; 4];
            for d in shape.iter_mut().take(rank) {
                *d = read_u32(&mut input)? as usize;
            }
            let mut data = Vec::with_capacity(numel(shape));
            let mut buf = [0u8; 8];
            for _ in 0..numel(shape) {
                read_exact(&mut input, &mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
