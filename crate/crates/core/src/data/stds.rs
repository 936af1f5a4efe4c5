//! `STDS` sequence files.
//!
//! Little-endian layout: `b"STDS"`, version `u32 = 1`, then `N, T, C, H, W`
//! as `u32`, then `N*T*C*H*W` `f32` values in row-major `(N, T, C, H, W)` order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FrameSequence;
use crate::error::{Error, Result};

pub const STDS_MAGIC: [u8; 4] = *b"STDS";
pub const STDS_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 5 * 4;

pub fn encode_sequences<W: Write>(mut out: W, seqs: &[FrameSequence]) -> Result<()> {
    let dims = seqs.first().map(|s| s.dims()).unwrap_or([0; 4]);
    if let Some(bad) = seqs.iter().find(|s| s.dims() != dims) {
        return Err(Error::dim(format!("mixed sequence shapes {:?} and {:?}", dims, bad.dims())));
    }
    out.write_all(&STDS_MAGIC)?;
    out.write_all(&STDS_VERSION.to_le_bytes())?;
    let n = u32::try_from(seqs.len()).map_err(|_| Error::config("too many sequences"))?;
    out.write_all(&n.to_le_bytes())?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::config("dimension exceeds u32"))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for s in seqs {
        for v in s.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn decode_sequences<R: Read>(mut input: R) -> Result<Vec<FrameSequence>> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or_truncated(&mut input, &mut header, "header")?;
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
    if magic != STDS_MAGIC {
        return Err(Error::BadMagic { expected: STDS_MAGIC, found: magic });
    }
    let version = word(4);
    if version != STDS_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = word(8) as usize;
    let dims = [word(12) as usize, word(16) as usize, word(20) as usize, word(24) as usize];
    let per_seq: usize = dims.iter().product();
    let mut seqs = Vec::with_capacity(n);
    let mut buf = vec![0u8; per_seq * 4];
    for s in 0..n {
        read_exact_or_truncated(&mut input, &mut buf, "payload")?;
        let data: Vec<f32> =
            buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData(s * per_seq + i));
        }
        seqs.push(FrameSequence::new(dims, data)?);
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::dim("trailing bytes after declared payload"));
    }
    Ok(seqs)
}

fn read_exact_or_truncated<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("{} ends early", what)),
        _ => Error::Io(e),
    })
}

pub fn write_sequences(path: impl AsRef<Path>, seqs: &[FrameSequence]) -> Result<()> {
    encode_sequences(BufWriter::new(File::create(path)?), seqs)
}

pub fn read_sequences(path: impl AsRef<Path>) -> Result<Vec<FrameSequence>> {
    decode_sequences(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(seqs: &[FrameSequence]) -> Vec<u8> {
        let mut v = Vec::new();
        encode_sequences(&mut v, seqs).unwrap();
        v
    }

    #[test]
    fn tiny_file_size() {
        let b = bytes(&[FrameSequence::zeros([1, 1, 2, 2])]);
        assert_eq!(b.len(), 44);
        assert_eq!(&b[..4], b"STDS");
    }

    #[test]
    fn header_errors_are_distinct() {
        let good = bytes(&[FrameSequence::zeros([2, 1, 2, 2])]);

        let mut bad = good.clone();
        bad[3] = b'X';
        assert!(matches!(decode_sequences(&bad[..]), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_sequences(&bad[..]), Err(Error::UnsupportedVersion(2))));

        assert!(matches!(decode_sequences(&good[..good.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(decode_sequences(&good[..10]), Err(Error::Truncated(_))));

        let mut bad = good.clone();
        bad[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_sequences(&bad[..]), Err(Error::NonFiniteData(0))));
    }

    #[test]
    fn mixed_shapes_rejected() {
        let r = encode_sequences(
            Vec::new(),
            &[FrameSequence::zeros([2, 1, 2, 2]), FrameSequence::zeros([2, 1, 3, 2])],
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn empty_set_round_trips() {
        assert!(decode_sequences(&bytes(&[])[..]).unwrap().is_empty());
    }
}
