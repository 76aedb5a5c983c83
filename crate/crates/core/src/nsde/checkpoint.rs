//! Binary checkpoint of [`NeuralSdeParams`]. All integers and floats are
//! little endian.
//!
//! ```text
//! magic            8 bytes   "NSDECKPT"
//! version          u32       1
//! d_a d_y d_w d_x d_c        5 x u32
//! learn_initial    u8        0 or 1
//! for xi, mu, sigma:
//!     layer count  u32       number of sizes n
//!     sizes        n x u32
//!     activation   u8        0 identity, 1 tanh
//! parameter count  u64
//! parameters       f64 each, in the order
//!                  xi (W_0, b_0, W_1, b_1, ...), mu (...), sigma (...), A, b
//! ```
//!
//! Weight matrices are row-major `out x in`; `A` is row-major
//! `d_x x (d_y + d_c)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};

use super::{MlpParams, NeuralSdeParams, SdeDims};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NSDECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_checkpoint<W: Write>(params: &NeuralSdeParams, mut w: W) -> Result<()> {
    params.validate()?;
    let d = params.dims;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [d.d_a, d.d_y, d.d_w, d.d_x, d.d_c] {
        put_u32(&mut w, v)?;
    }
    w.write_all(&[params.learn_initial as u8])?;
    for m in [&params.xi, &params.mu, &params.sigma] {
        put_u32(&mut w, m.sizes.len())?;
        for &s in &m.sizes {
            put_u32(&mut w, s)?;
        }
        w.write_all(&[m.activation_code()])?;
    }
    w.write_all(&(params.num_params() as u64).to_le_bytes())?;
    for t in params.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::InvalidArgument("truncated checkpoint".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn mlp(&mut self) -> Result<MlpParams> {
        let n = self.u32()?;
        if n > 64 {
            return Err(Error::InvalidArgument(format!("implausible layer count {n}")));
        }
        let sizes = (0..n).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let act = MlpParams::activation_from_code(self.bytes::<1>()?[0])?;
        MlpParams::zeros(&sizes, act)
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<NeuralSdeParams> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != CHECKPOINT_MAGIC {
        return Err(Error::InvalidArgument("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported checkpoint version {version}")));
    }
    let dims = SdeDims {
        d_a: r.u32()?,
        d_y: r.u32()?,
        d_w: r.u32()?,
        d_x: r.u32()?,
        d_c: r.u32()?,
    };
    dims.validate()?;
    let learn_initial = r.bytes::<1>()?[0] != 0;
    let xi = r.mlp()?;
    let mu = r.mlp()?;
    let sigma = r.mlp()?;
    let mut params = NeuralSdeParams {
        dims,
        learn_initial,
        xi,
        mu,
        sigma,
        readout_w: vec![0.0; dims.d_x * (dims.d_y + dims.d_c)],
        readout_b: vec![0.0; dims.d_x],
    };
    let count = u64::from_le_bytes(r.bytes()?) as usize;
    if count != params.num_params() {
        return Err(Error::DimensionMismatch {
            expected: params.num_params(),
            got: count,
        });
    }
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(r.bytes()?);
        }
    }
    params.validate()?;
    Ok(params)
}

pub fn write_checkpoint_file(params: &NeuralSdeParams, path: &std::path::Path) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn read_checkpoint_file(path: &std::path::Path) -> Result<NeuralSdeParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nsde::{init_params, Architecture};

    fn params() -> NeuralSdeParams {
        let dims = SdeDims { d_a: 2, d_y: 3, d_w: 2, d_x: 1, d_c: 4 };
        init_params(dims, &Architecture { hidden: vec![5, 4], ..Architecture::default() }, 1.0, 7).unwrap()
    }

    #[test]
    fn round_trip() {
        let p = params();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"NSDECKPT");
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), p);
        let header = 8 + 4 + 20 + 1 + (4 + 2 * 4 + 1) + 2 * (4 + 4 * 4 + 1) + 8;
        assert_eq!(buf.len(), header + 8 * p.num_params());
    }

    #[test]
    fn corrupt_inputs() {
        let p = params();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        let mut bad = buf;
        bad[8] = 9;
        assert!(read_checkpoint(&bad[..]).is_err());
    }
}
