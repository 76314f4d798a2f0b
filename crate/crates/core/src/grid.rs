//! Regular 2D lattice storage and the `GGRD` record format.
//!
//! Cells are addressed by `(x, z)` with `x` the lateral index and `z` the depth
//! index. Storage is row-major with `z` fastest, which is also the on-disk order.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const GGRD_MAGIC: &[u8; 4] = b"GGRD";
pub const GGRD_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("inconsistent shape: {0}")]
    ShapeInconsistent(String),
}

/// Dense `nx × nz` field of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    nx: usize,
    nz: usize,
    data: Vec<f64>,
}

impl Grid2 {
    pub fn filled(nx: usize, nz: usize, value: f64) -> Self {
        Self { nx, nz, data: vec![value; nx * nz] }
    }

    pub fn zeros(nx: usize, nz: usize) -> Self {
        Self::filled(nx, nz, 0.0)
    }

    pub fn from_vec(nx: usize, nz: usize, data: Vec<f64>) -> Result<Self, FormatError> {
        if data.len() != nx * nz {
            return Err(FormatError::ShapeInconsistent(format!(
                "{} values for a {nx}x{nz} grid",
                data.len()
            )));
        }
        Ok(Self { nx, nz, data })
    }

    pub fn from_fn(nx: usize, nz: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nx * nz);
        for x in 0..nx {
            for z in 0..nz {
                data.push(f(x, z));
            }
        }
        Self { nx, nz, data }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && z < self.nz);
        x * self.nz + z
    }

    #[inline]
    pub fn get(&self, x: usize, z: usize) -> f64 {
        self.data[self.index(x, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, z: usize, value: f64) {
        let i = self.index(x, z);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Grid2) -> bool {
        self.nx == other.nx && self.nz == other.nz
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2 {
        Grid2 { nx: self.nx, nz: self.nz, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Writes one `GGRD` record holding `channels` grids of identical shape.
pub fn write_record<W: Write>(mut w: W, channels: &[&Grid2]) -> Result<(), FormatError> {
    let first = channels
        .first()
        .ok_or_else(|| FormatError::ShapeInconsistent("record without channels".into()))?;
    if channels.iter().any(|g| !g.same_shape(first)) {
        return Err(FormatError::ShapeInconsistent("channels differ in shape".into()));
    }
    if channels.len() > u8::MAX as usize {
        return Err(FormatError::ShapeInconsistent("too many channels".into()));
    }
    let nx = u16::try_from(first.nx)
        .map_err(|_| FormatError::ShapeInconsistent("nx exceeds u16".into()))?;
    let nz = u16::try_from(first.nz)
        .map_err(|_| FormatError::ShapeInconsistent("nz exceeds u16".into()))?;

    let mut buf = Vec::with_capacity(11 + channels.len() * first.len() * 4);
    buf.extend_from_slice(GGRD_MAGIC);
    buf.extend_from_slice(&GGRD_VERSION.to_le_bytes());
    buf.extend_from_slice(&nx.to_le_bytes());
    buf.extend_from_slice(&nz.to_le_bytes());
    buf.push(channels.len() as u8);
    for g in channels {
        for &v in &g.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one record. Returns `Ok(None)` on a clean end of stream.
pub fn read_record<R: Read>(mut r: R) -> Result<Option<Vec<Grid2>>, FormatError> {
    let mut magic = [0u8; 4];
    let got = read_full(&mut r, &mut magic)?;
    if got == 0 {
        return Ok(None);
    }
    if got < 4 || &magic != GGRD_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let mut head = [0u8; 7];
    if read_full(&mut r, &mut head)? != head.len() {
        return Err(FormatError::ShapeInconsistent("truncated header".into()));
    }
    let version = u16::from_le_bytes([head[0], head[1]]);
    if version != GGRD_VERSION {
        return Err(FormatError::VersionMismatch { found: version, expected: GGRD_VERSION });
    }
    let nx = u16::from_le_bytes([head[2], head[3]]) as usize;
    let nz = u16::from_le_bytes([head[4], head[5]]) as usize;
    let channels = head[6] as usize;
    if channels == 0 {
        return Err(FormatError::ShapeInconsistent("record without channels".into()));
    }
    let mut payload = vec![0u8; channels * nx * nz * 4];
    if read_full(&mut r, &mut payload)? != payload.len() {
        return Err(FormatError::ShapeInconsistent("truncated payload".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let grids = values
        .chunks_exact((nx * nz).max(1))
        .take(channels)
        .map(|c| Grid2 { nx, nz, data: if nx * nz == 0 { Vec::new() } else { c.to_vec() } })
        .collect();
    Ok(Some(grids))
}

/// Reads every record of a concatenated dataset stream.
pub fn read_all<R: Read>(mut r: R) -> Result<Vec<Vec<Grid2>>, FormatError> {
    let mut out = Vec::new();
    while let Some(rec) = read_record(&mut r)? {
        out.push(rec);
    }
    Ok(out)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_z_fastest() {
        let g = Grid2::from_fn(3, 2, |x, z| (10 * x + z) as f64);
        assert_eq!(g.as_slice(), &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
    }

    #[test]
    fn header_bytes() {
        let g = Grid2::filled(2, 1, 1.0);
        let mut buf = Vec::new();
        write_record(&mut buf, &[&g]).unwrap();
        assert_eq!(&buf[..4], b"GGRD");
        assert_eq!(&buf[4..11], &[1, 0, 2, 0, 1, 0, 1]);
        assert_eq!(buf.len(), 11 + 8);
        assert_eq!(&buf[11..15], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_and_bad_magic() {
        let g = Grid2::filled(4, 4, 0.5);
        let mut buf = Vec::new();
        write_record(&mut buf, &[&g]).unwrap();
        let err = read_record(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, FormatError::ShapeInconsistent(_)));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_record(&bad[..]).unwrap_err(), FormatError::BadMagic(_)));
        let mut ver = buf.clone();
        ver[4] = 9;
        assert!(matches!(
            read_record(&ver[..]).unwrap_err(),
            FormatError::VersionMismatch { found: 9, .. }
        ));
    }

    proptest! {
        #[test]
        fn f32_values_round_trip(nx in 1usize..12, nz in 1usize..12, seed in any::<u32>()) {
            let a = Grid2::from_fn(nx, nz, |x, z| ((x * 31 + z * 7) as f32 * 0.37 + seed as f32).sin() as f64);
            let b = a.map(|v| -2.0 * v);
            let mut buf = Vec::new();
            write_record(&mut buf, &[&a, &b]).unwrap();
            write_record(&mut buf, &[&b]).unwrap();
            let recs = read_all(&buf[..]).unwrap();
            prop_assert_eq!(recs.len(), 2);
            prop_assert_eq!(&recs[0][0], &a);
            prop_assert_eq!(&recs[0][1], &b);
            prop_assert_eq!(&recs[1][0], &b);
        }
    }
}
