//! `STCK` parameter checkpoints.
//!
//! Layout, little-endian: magic `STCK`, `u32` version, 32-byte config
//! digest, then tensors until end of file. Each tensor is a `u32` name
//! length, the UTF-8 name, a `u32` rank, `rank` `u32` dims and the `f32`
//! values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;

pub const STCK_MAGIC: [u8; 4] = *b"STCK";
pub const STCK_VERSION: u32 = 1;
pub const EPOCHS_TENSOR: &str = "meta.epochs_done";
pub const VELOCITY_TENSOR: &str = "meta.velocity";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub tensors: Vec<Tensor>,
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::dim(format!("{} {} does not fit in u32", what, n)))
}

/// Fills `buf` or reports how far the payload got.
fn read_exact_or<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

impl Checkpoint {
    /// Model parameters plus the epoch counter and optimizer state.
    pub fn from_model(model: &Model<f32>, digest: [u8; 32], epochs_done: usize, velocity: &[f32]) -> Self {
        let mut tensors: Vec<Tensor> = model
            .params()
            .into_iter()
            .map(|(name, p)| Tensor { name, dims: p.shape().to_vec(), values: p.values.clone() })
            .collect();
        tensors.push(Tensor { name: EPOCHS_TENSOR.into(), dims: vec![1], values: vec![epochs_done as f32] });
        if !velocity.is_empty() {
            tensors.push(Tensor { name: VELOCITY_TENSOR.into(), dims: vec![velocity.len()], values: velocity.to_vec() });
        }
        Checkpoint { digest, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn epochs_done(&self) -> usize {
        self.tensor(EPOCHS_TENSOR).map_or(0, |t| t.values[0] as usize)
    }

    pub fn velocity(&self) -> Vec<f32> {
        self.tensor(VELOCITY_TENSOR).map_or_else(Vec::new, |t| t.values.clone())
    }

    /// Copies every parameter into `model`, which must have the same layout.
    pub fn apply(&self, model: &mut Model<f32>) -> Result<()> {
        for (name, p) in model.params_mut() {
            let t = self.tensor(&name).ok_or_else(|| Error::dim(format!("checkpoint lacks tensor {}", name)))?;
            if t.dims != p.shape() {
                return Err(Error::dim(format!("tensor {} has dims {:?}, model expects {:?}", name, t.dims, p.shape())));
            }
            p.values.copy_from_slice(&t.values);
        }
        Ok(())
    }

    /// Fails with [`Error::DigestMismatch`] unless the digests agree.
    pub fn check_digest(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.digest != expected {
            return Err(Error::DigestMismatch);
        }
        Ok(())
    }

    pub fn encode<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&STCK_MAGIC)?;
        out.write_all(&STCK_VERSION.to_le_bytes())?;
        out.write_all(&self.digest)?;
        for t in &self.tensors {
            if t.values.len() != t.dims.iter().product::<usize>() {
                return Err(Error::dim(format!("tensor {} has {} values for dims {:?}", t.name, t.values.len(), t.dims)));
            }
            out.write_all(&u32_of(t.name.len(), "name length")?.to_le_bytes())?;
            out.write_all(t.name.as_bytes())?;
            out.write_all(&u32_of(t.dims.len(), "rank")?.to_le_bytes())?;
            for &d in &t.dims {
                out.write_all(&u32_of(d, "dim")?.to_le_bytes())?;
            }
            for v in &t.values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn decode<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact_or(&mut input, &mut magic, "magic")?;
        if magic != STCK_MAGIC {
            return Err(Error::BadMagic { expected: STCK_MAGIC, found: magic });
        }
        let version = read_u32(&mut input, "version")?;
        if version != STCK_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut digest = [0u8; 32];
        read_exact_or(&mut input, &mut digest, "config digest")?;
        let mut tensors = Vec::new();
        loop {
            let mut first = [0u8; 4];
            let got = read_up_to(&mut input, &mut first)?;
            if got == 0 {
                break;
            }
            if got < 4 {
                return Err(Error::Truncated("tensor name length".into()));
            }
            let name_len = u32::from_le_bytes(first) as usize;
            let mut name = vec![0u8; name_len];
            read_exact_or(&mut input, &mut name, "tensor name")?;
            let name = String::from_utf8(name).map_err(|_| Error::dim("tensor name is not UTF-8"))?;
            let rank = read_u32(&mut input, "tensor rank")? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(read_u32(&mut input, "tensor dims")? as usize);
            }
            let n: usize = dims.iter().product();
            let mut bytes = vec![0u8; n * 4];
            read_exact_or(&mut input, &mut bytes, &format!("values of {}", name))?;
            let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(Tensor { name, dims, values });
        }
        Ok(Checkpoint { digest, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.encode(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Reads until `buf` is full or the input ends; returns the byte count.
fn read_up_to<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match input.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(n)
}
