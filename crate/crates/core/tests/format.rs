mod common;

use proptest::prelude::*;
use slash_core::format::*;

proptest! {
    #[test]
    fn slsh_round_trip_is_bit_exact(seed in any::<u64>(), layers in 1usize..4, heads in 1usize..4, n in 1usize..20) {
        let t = common::random_tensor(layers, heads, n, &mut common::rng(seed));
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        prop_assert_eq!(buf.len(), HEADER_LEN + layers * heads * n * n * 8);
        let back = read_tensor(buf.as_slice()).unwrap();
        prop_assert_eq!((back.layers, back.heads, back.n), (layers, heads, n));
        prop_assert_eq!(&back.meta.span_start, &t.meta.span_start);
        for (a, b) in t.maps.iter().zip(&back.maps) {
            let same = a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
    }
}

fn sample() -> Vec<u8> {
    let t = common::random_tensor(1, 2, 4, &mut common::rng(0));
    let mut buf = Vec::new();
    write_tensor(&t, &mut buf).unwrap();
    buf
}

#[test]
fn corrupt_files_are_rejected() {
    let good = sample();
    assert!(read_tensor(good.as_slice()).is_ok());

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(read_tensor(bad_magic.as_slice()).is_err());

    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(read_tensor(bad_version.as_slice()).is_err());

    assert!(read_tensor(&good[..good.len() - 1]).is_err());
    assert!(read_tensor(&good[..10]).is_err());

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(read_tensor(trailing.as_slice()).is_err());

    let mut huge = good[..HEADER_LEN].to_vec();
    huge[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(read_tensor(huge.as_slice()).is_err());
}

#[test]
fn reading_is_structural_and_validation_is_separate() {
    let mut buf = sample();
    // first map, row 0 col 0
    buf[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&0.5f64.to_le_bytes());
    let t = read_tensor(buf.as_slice()).unwrap();
    let report = slash_core::attnops::validate_tensor(&t);
    assert_eq!(report.violations.len(), 1);
    assert_eq!((report.violations[0].row, report.violations[0].col), (0, None));
}

#[test]
fn csv_and_pgm_exports() {
    let t = common::random_tensor(1, 1, 3, &mut common::rng(5));
    let mut csv = Vec::new();
    write_csv(&t.maps[0], &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.as_slice(), t.maps[0].row(i));
    }

    let mut pgm = Vec::new();
    write_pgm(&[0.0, 0.5, 1.0, 0.25], 2, 2, &mut pgm).unwrap();
    assert_eq!(&pgm[..11], b"P5\n2 2\n255\n");
    assert_eq!(&pgm[11..], &[0, 128, 255, 64]);
    assert!(write_pgm(&[0.0; 3], 2, 2, Vec::new()).is_err());

    let mut mask = Vec::new();
    write_mask_pgm(&[true, false], 2, 1, &mut mask).unwrap();
    assert_eq!(&mask[mask.len() - 2..], &[255, 0]);
}
