//! Binary checkpoint format.
//!
//! ```text
//! "SWPR" 0x01
//! u32 layer_count
//! per layer: u32 in, u32 out, u8 activation (0 identity, 1 relu),
//!            in*out f64 weights (row-major), out f64 biases
//! u8 frozen
//! f64 dropout_rate
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use super::{Activation, Dense, Matrix, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SWPR";
pub const VERSION: u8 = 0x01;

pub fn to_bytes<T: Scalar>(model: &Mlp<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        out.push(layer.activation.code());
        for v in layer.weights.data().iter().chain(layer.bias.data()) {
            out.extend_from_slice(&v.to_wire().to_le_bytes());
        }
    }
    out.push(model.is_frozen() as u8);
    out.extend_from_slice(&model.dropout_rate().to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes<T: Scalar>(buf: &[u8]) -> Result<Mlp<T>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Format("zero layers".into()));
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let activation = Activation::from_code(r.u8()?)
            .ok_or_else(|| Error::Format(format!("layer {i} has unknown activation code")))?;
        // Reject sizes the remaining buffer cannot hold before allocating.
        let needed = fan_in
            .checked_mul(fan_out)
            .and_then(|w| w.checked_add(fan_out))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("layer size overflow".into()))?;
        if needed > buf.len() - r.pos {
            return Err(Error::Format(format!("truncated in layer {i}")));
        }
        let weights = (0..fan_in * fan_out).map(|_| r.f64().map(T::from_wire)).collect::<Result<Vec<_>>>()?;
        let bias = (0..fan_out).map(|_| r.f64().map(T::from_wire)).collect::<Result<Vec<_>>>()?;
        layers.push(Dense {
            weights: Matrix::from_vec(fan_in, fan_out, weights)?,
            bias: Matrix::from_vec(1, fan_out, bias)?,
            activation,
        });
    }
    let frozen = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("frozen flag {v}"))),
    };
    let dropout = r.f64()?;
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::Format(format!("dropout rate {dropout}")));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Mlp::restore(layers, frozen, dropout).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint<T: Scalar>(model: &Mlp<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Mlp<T>> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ActivationPlan;

    fn model() -> Mlp<f64> {
        let mut m = Mlp::init(&[4, 8, 3], &ActivationPlan::HiddenRelu, 0.25, 17).unwrap();
        m.set_frozen(true);
        m
    }

    #[test]
    fn file_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.swpr");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        let back: Mlp<f64> = load_checkpoint(&path).unwrap();
        assert!(m.bit_eq(&back));
        assert_eq!(to_bytes(&back), to_bytes(&m));
    }

    #[test]
    fn size_matches_layout() {
        let bytes = to_bytes(&model());
        let expect = 5 + 4 + (9 + (32 + 8) * 8) + (9 + (24 + 3) * 8) + 1 + 8;
        assert_eq!(bytes.len(), expect);
    }

    #[test]
    fn truncated_is_format_error() {
        let bytes = to_bytes(&model());
        for cut in [0, 3, 5, 20, bytes.len() - 1] {
            assert!(matches!(from_bytes::<f64>(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = to_bytes(&model());
        bytes[0] = b'X';
        assert!(matches!(from_bytes::<f64>(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = to_bytes(&model());
        bytes.push(0);
        assert!(matches!(from_bytes::<f64>(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn f32_round_trip() {
        let m = Mlp::<f32>::init(&[3, 2], &ActivationPlan::AllRelu, 0.0, 2).unwrap();
        let back: Mlp<f32> = from_bytes(&to_bytes(&m)).unwrap();
        assert!(m.bit_eq(&back));
    }
}
