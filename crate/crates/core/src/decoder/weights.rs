//! `GWT1` weight files.
//!
//! Header: magic `GWT1`, `u16` version, `u16` layer count. Each layer is a
//! `u8` kind (0 convolution, 1 batch-norm, 2 property transform), a `u8` rank,
//! `rank` `u16` dimensions and an `f32` payload. All little-endian.
//!
//! | kind | dims | payload |
//! |------|------|---------|
//! | 0 | `[cout, cin, 3, 3]` | kernels, then `cout` biases |
//! | 1 | `[4, C]` | γ, β, running mean, running variance |
//! | 2 | `[4]` | a, b, c, d |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BatchNorm, Conv2d, DecoderError, DecoderWeights, Layer};
use crate::grid::FormatError;

pub const GWT1_MAGIC: &[u8; 4] = b"GWT1";
pub const GWT1_VERSION: u16 = 1;

const KIND_CONV: u8 = 0;
const KIND_BN: u8 = 1;
const KIND_TRANSFORM: u8 = 2;

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_header(out: &mut Vec<u8>, kind: u8, dims: &[usize]) -> Result<(), FormatError> {
    out.push(kind);
    out.push(dims.len() as u8);
    for &d in dims {
        let d = u16::try_from(d).map_err(|_| FormatError::ShapeInconsistent(format!("dimension {d} exceeds u16")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

impl DecoderWeights {
    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let mut out = Vec::new();
        out.extend_from_slice(GWT1_MAGIC);
        out.extend_from_slice(&GWT1_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    put_header(&mut out, KIND_CONV, &[c.cout, c.cin, 3, 3])?;
                    put_f32s(&mut out, &c.weight);
                    put_f32s(&mut out, &c.bias);
                }
                Layer::BatchNorm(b) => {
                    put_header(&mut out, KIND_BN, &[4, b.channels()])?;
                    for v in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                        put_f32s(&mut out, v);
                    }
                }
                Layer::Transform(t) => {
                    put_header(&mut out, KIND_TRANSFORM, &[4])?;
                    put_f32s(&mut out, t);
                }
            }
        }
        Ok(out)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        self.save(BufWriter::new(File::create(path)?))
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, DecoderError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(FormatError::from)?;
        Self::from_bytes(&bytes)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self, DecoderError> {
        Self::load(BufReader::new(File::open(path).map_err(FormatError::from)?))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecoderError> {
        let mut c = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = c.take(4).map_err(|_| FormatError::BadMagic(pad4(bytes)))?.try_into().unwrap();
        if &magic != GWT1_MAGIC {
            return Err(FormatError::BadMagic(magic).into());
        }
        let version = c.u16()?;
        if version != GWT1_VERSION {
            return Err(FormatError::VersionMismatch { found: version, expected: GWT1_VERSION }.into());
        }
        let count = c.u16()? as usize;
        let mut layers = Vec::with_capacity(count);
        for i in 0..count {
            let kind = c.u8()?;
            let rank = c.u8()? as usize;
            let dims = (0..rank).map(|_| c.u16().map(usize::from)).collect::<Result<Vec<_>, _>>()?;
            let bad = |what: &str| FormatError::ShapeInconsistent(format!("layer {i}: {what} {dims:?}"));
            let layer = match (kind, dims.as_slice()) {
                (KIND_CONV, &[cout, cin, 3, 3]) => {
                    let weight = c.f32s(cout * cin * 9)?;
                    let bias = c.f32s(cout)?;
                    Layer::Conv(Conv2d { cout, cin, weight, bias })
                }
                (KIND_CONV, _) => return Err(bad("convolution dims").into()),
                (KIND_BN, &[4, ch]) => Layer::BatchNorm(BatchNorm {
                    gamma: c.f32s(ch)?,
                    beta: c.f32s(ch)?,
                    running_mean: c.f32s(ch)?,
                    running_var: c.f32s(ch)?,
                }),
                (KIND_BN, _) => return Err(bad("batch-norm dims").into()),
                (KIND_TRANSFORM, &[4]) => {
                    let v = c.f32s(4)?;
                    Layer::Transform([v[0], v[1], v[2], v[3]])
                }
                (KIND_TRANSFORM, _) => return Err(bad("transform dims").into()),
                (k, _) => return Err(FormatError::ShapeInconsistent(format!("layer {i}: unknown kind {k}")).into()),
            };
            layers.push(layer);
        }
        if c.pos != bytes.len() {
            return Err(FormatError::ShapeInconsistent(format!("{} trailing bytes", bytes.len() - c.pos)).into());
        }
        DecoderWeights::new(layers)
    }
}

fn pad4(bytes: &[u8]) -> [u8; 4] {
    let mut m = [0u8; 4];
    for (d, s) in m.iter_mut().zip(bytes) {
        *d = *s;
    }
    m
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            FormatError::ShapeInconsistent(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| FormatError::ShapeInconsistent("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }
}
