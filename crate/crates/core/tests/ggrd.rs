use ganvert_core::grid::{read_all, read_record, write_record};
use ganvert_core::{FormatError, Grid2};
use proptest::prelude::*;

/// Record assembled byte by byte as an external producer would write it.
fn handmade(nx: u16, nz: u16, channels: &[Vec<f32>]) -> Vec<u8> {
    let mut b = b"GGRD".to_vec();
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&nx.to_le_bytes());
    b.extend_from_slice(&nz.to_le_bytes());
    b.push(channels.len() as u8);
    for c in channels {
        for v in c {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

#[test]
fn reads_externally_written_records() {
    let facies: Vec<f32> = (0..6).map(|i| i as f32 / 5.0).collect();
    let driver: Vec<f32> = (0..6).map(|i| 1.0 - i as f32 / 10.0).collect();
    let mut bytes = handmade(3, 2, &[facies.clone(), driver.clone()]);
    bytes.extend(handmade(1, 1, &[vec![0.25]]));
    let recs = read_all(bytes.as_slice()).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].len(), 2);
    let g = &recs[0][0];
    assert_eq!((g.nx(), g.nz()), (3, 2));
    // z varies fastest
    assert_eq!(g.get(1, 0), facies[2] as f64);
    assert_eq!(g.get(2, 1), facies[5] as f64);
    assert_eq!(recs[0][1].get(0, 1), driver[1] as f64);
    assert_eq!(recs[1][0].as_slice(), &[0.25]);
}

#[test]
fn writes_byte_identical_records() {
    let g = Grid2::from_fn(3, 2, |x, z| (x * 2 + z) as f64 * 0.5);
    let mut out = Vec::new();
    write_record(&mut out, &[&g]).unwrap();
    let expected = handmade(3, 2, &[(0..6).map(|i| i as f32 * 0.5).collect()]);
    assert_eq!(out, expected);
}

#[test]
fn rejects_malformed_streams() {
    let good = handmade(2, 2, &[vec![0.0; 4]]);
    let mut magic = good.clone();
    magic[3] = b'X';
    assert!(matches!(read_record(magic.as_slice()), Err(FormatError::BadMagic(_))));
    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(read_record(version.as_slice()), Err(FormatError::VersionMismatch { found: 2, expected: 1 })));
    assert!(matches!(read_record(&good[..good.len() - 1]), Err(FormatError::ShapeInconsistent(_))));
    assert!(matches!(read_record(&good[..7]), Err(FormatError::ShapeInconsistent(_))));
    let mut zero = good.clone();
    zero[10] = 0;
    assert!(read_record(&zero[..11]).is_err());
    assert!(read_record(&[][..]).unwrap().is_none());
    assert!(write_record(Vec::new(), &[&Grid2::zeros(2, 2), &Grid2::zeros(2, 3)]).is_err());
    assert!(write_record(Vec::new(), &[]).is_err());
}

proptest! {
    #[test]
    fn round_trip_at_single_precision(nx in 1usize..6, nz in 1usize..6, k in 1usize..4, seed in any::<u32>()) {
        let grids: Vec<Grid2> = (0..k)
            .map(|c| Grid2::from_fn(nx, nz, |x, z| ((seed as usize + c * 31 + x * 7 + z) % 97) as f64 / 97.0 - 0.3))
            .collect();
        let refs: Vec<&Grid2> = grids.iter().collect();
        let mut buf = Vec::new();
        write_record(&mut buf, &refs).unwrap();
        write_record(&mut buf, &refs).unwrap();
        prop_assert_eq!(buf.len(), 2 * (11 + 4 * k * nx * nz));
        let back = read_all(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 2);
        for (a, b) in back[1].iter().zip(&grids) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert_eq!(*x, *y as f32 as f64);
            }
        }
    }
}
