//! Flat binary layout for test fixtures.
//!
//! | offset | size        | content                                   |
//! |--------|-------------|-------------------------------------------|
//! | 0      | 4           | magic `ODDM`                              |
//! | 4      | 4           | format version, `u32` LE, currently 1     |
//! | 8      | 4           | rank `r`, `u32` LE, 1 to 4                |
//! | 12     | 8·r         | dims, `u64` LE, slowest varying first     |
//! | 12+8r  | 8·∏dims     | payload, `complex64` (`f32` re, `f32` im) |
//!
//! A frame set is stored with dims `[N_t, N, M]`, i.e. in the order of
//! [`FrameSet::symbols`]. A matrix is stored row-major as `[rows, cols]`.
//! Samples are narrowed to single precision.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::modem::FrameSet;
use crate::C64;

pub const MAGIC: &[u8; 4] = b"ODDM";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 4;

pub fn write_array<W: Write>(mut out: W, dims: &[usize], data: &[C64]) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::Fixture(format!("rank {} outside 1..={MAX_RANK}", dims.len())));
    }
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::Fixture(format!(
            "dims {dims:?} do not cover {} samples",
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(12 + 8 * dims.len() + 8 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&(v.re as f32).to_le_bytes());
        buf.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Fixture("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_array<R: Read>(mut input: R) -> Result<(Vec<usize>, Vec<C64>)> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Fixture("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Fixture("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Fixture(format!("unsupported version {version}")));
    }
    let rank = read_u32(&mut input)? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Fixture(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        input
            .read_exact(&mut b)
            .map_err(|_| Error::Fixture("truncated dims".into()))?;
        dims.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Fixture("dim overflow".into()))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Fixture("payload size overflows".into()))?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != count {
        return Err(Error::Fixture(format!(
            "payload has {} bytes, dims need {count}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            C64::new(re as f64, im as f64)
        })
        .collect();
    Ok((dims, data))
}

pub fn write_frames<W: Write>(out: W, frames: &FrameSet) -> Result<()> {
    write_array(out, &[frames.num_antennas, frames.n, frames.m], frames.symbols())
}

pub fn read_frames<R: Read>(input: R) -> Result<FrameSet> {
    let (dims, data) = read_array(input)?;
    let [nt, n, m] = dims[..] else {
        return Err(Error::Fixture(format!("frames need rank 3, got {}", dims.len())));
    };
    FrameSet::from_symbols(nt, m, n, data).map_err(|e| Error::Fixture(e.to_string()))
}

pub fn write_matrix<W: Write>(out: W, mat: &DMatrix<C64>) -> Result<()> {
    let row_major: Vec<C64> = mat.transpose().iter().copied().collect();
    write_array(out, &[mat.nrows(), mat.ncols()], &row_major)
}

pub fn read_matrix<R: Read>(input: R) -> Result<DMatrix<C64>> {
    let (dims, data) = read_array(input)?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Fixture(format!("matrix needs rank 2, got {}", dims.len())));
    };
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::Constellation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frames_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = FrameSet::random(2, 4, 3, Constellation::Qpsk, &mut rng);
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames).unwrap();
        assert_eq!(buf.len(), 12 + 24 + 8 * 24);
        let back = read_frames(&buf[..]).unwrap();
        assert_eq!((back.num_antennas, back.m, back.n), (2, 4, 3));
        for (a, b) in back.symbols().iter().zip(frames.symbols()) {
            assert!((a - b).norm() < 1e-7);
        }
    }

    #[test]
    fn matrix_is_row_major() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0),
                C64::new(2.0, 0.0),
                C64::new(3.0, 0.0),
                C64::new(4.0, -1.0),
            ],
        );
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(f32::from_le_bytes(buf[28..32].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(buf[36..40].try_into().unwrap()), 2.0);
        assert_eq!(read_matrix(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_array(&mut buf, &[2], &[C64::new(1.0, 0.0); 2]).unwrap();
        assert!(read_array(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_array(&bad[..]).is_err());
        assert!(read_frames(&buf[..]).is_err());
        assert!(write_array(Vec::new(), &[3], &[C64::default(); 2]).is_err());
    }
}
