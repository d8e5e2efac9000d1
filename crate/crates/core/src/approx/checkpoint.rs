//! Flat little-endian binary layout for networks and normalizers.
//!
//! Network:
//!
//! ```text
//! magic      8 bytes   "GCRLNET1"
//! n_sizes    u32       number of layer sizes (layers + 1)
//! sizes      u32 * n_sizes
//! output     u8        0 linear, 1 tanh, 2 softmax
//! per layer  f64 * (fan_in * fan_out)  weights, row-major (fan_in rows)
//!            f64 * fan_out             bias
//! ```
//!
//! Normalizer:
//!
//! ```text
//! magic      8 bytes   "GCRLNRM1"
//! dim        u32
//! count      f64
//! sum        f64 * dim
//! sumsq      f64 * dim
//! ```
//!
//! Values are always stored as `f64`, whatever the in-memory scalar type.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::net::{Dense, DenseNet, OutputActivation};
use super::normalizer::Normalizer;

const NET_MAGIC: &[u8; 8] = b"GCRLNET1";
const NORM_MAGIC: &[u8; 8] = b"GCRLNRM1";
const MAX_WIDTH: u32 = 1 << 20;

pub fn write_net<F: Scalar, W: Write>(w: &mut W, net: &DenseNet<F>) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    let sizes = net.sizes();
    write_u32(w, sizes.len() as u32)?;
    for s in sizes {
        write_u32(w, s as u32)?;
    }
    let tag = match net.output_activation() {
        OutputActivation::Linear => 0u8,
        OutputActivation::Tanh => 1,
        OutputActivation::Softmax => 2,
    };
    w.write_all(&[tag])?;
    for layer in net.layers() {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_net<F: Scalar, R: Read>(r: &mut R) -> Result<DenseNet<F>> {
    expect_magic(r, NET_MAGIC)?;
    let n = read_u32(r)?;
    if !(2..=64).contains(&n) {
        return format_err(format!("implausible layer count {n}"));
    }
    let mut sizes = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let s = read_u32(r)?;
        if s == 0 || s > MAX_WIDTH {
            return format_err(format!("implausible layer width {s}"));
        }
        sizes.push(s as usize);
    }
    let mut tag = [0u8];
    r.read_exact(&mut tag)?;
    let output = match tag[0] {
        0 => OutputActivation::Linear,
        1 => OutputActivation::Tanh,
        2 => OutputActivation::Softmax,
        t => return format_err(format!("unknown output activation tag {t}")),
    };
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for w in sizes.windows(2) {
        let weights = read_f64s::<F, R>(r, w[0] * w[1])?;
        let bias = read_f64s::<F, R>(r, w[1])?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((w[0], w[1]), weights).expect("length checked"),
            bias: Array1::from_vec(bias),
        });
    }
    DenseNet::from_layers(layers, output)
}

pub fn write_normalizer<F: Scalar, W: Write>(w: &mut W, norm: &Normalizer<F>) -> Result<()> {
    w.write_all(NORM_MAGIC)?;
    let (sum, sumsq, count) = norm.raw_stats();
    write_u32(w, sum.len() as u32)?;
    w.write_all(&count.as_f64().to_le_bytes())?;
    for v in sum.iter().chain(sumsq) {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_normalizer<F: Scalar, R: Read>(r: &mut R) -> Result<Normalizer<F>> {
    expect_magic(r, NORM_MAGIC)?;
    let dim = read_u32(r)?;
    if dim > MAX_WIDTH {
        return format_err(format!("implausible normalizer dimension {dim}"));
    }
    let count = read_f64s::<F, R>(r, 1)?[0];
    let sum = read_f64s(r, dim as usize)?;
    let sumsq = read_f64s(r, dim as usize)?;
    Normalizer::from_raw_stats(sum, sumsq, count)
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        ));
    }
    Ok(())
}

fn read_f64s<F: Scalar, R: Read>(r: &mut R, n: usize) -> Result<Vec<F>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(F::lit(f64::from_le_bytes(b)));
    }
    Ok(out)
}

fn format_err<T>(msg: String) -> Result<T> {
    Err(Error::Format {
        path: String::new(),
        msg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn net_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::<f64>::new(&[4, 7, 3], OutputActivation::Softmax, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_net(&mut buf, &net).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 12 + 1 + 8 * (4 * 7 + 7 + 7 * 3 + 3));
        let back: DenseNet<f64> = read_net(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn normalizer_round_trip() {
        let mut n = Normalizer::<f64>::new(2);
        n.update([[1.0, 2.0].as_slice(), [3.0, -4.0].as_slice()]).unwrap();
        let mut buf = Vec::new();
        write_normalizer(&mut buf, &n).unwrap();
        let back: Normalizer<f64> = read_normalizer(&mut buf.as_slice()).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            read_net::<f64, _>(&mut b"NOTANET!....".as_slice()),
            Err(Error::Format { .. })
        ));
        let mut buf = Vec::new();
        let net = DenseNet::<f64>::zeros(&[2, 2], OutputActivation::Linear).unwrap();
        write_net(&mut buf, &net).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_net::<f64, _>(&mut buf.as_slice()), Err(Error::Io(_))));
    }
}
