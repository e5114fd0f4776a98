use deepwarp_core::warpfield::*;
use deepwarp_core::*;
use proptest::prelude::*;

fn ramp(h: usize, w: usize) -> Image<f64> {
    Image::from_fn(h, w, |i, j| (i as f64 * 0.3 + j as f64) / (h + w) as f64)
}

fn texture(h: usize, w: usize) -> Image<f64> {
    Image::from_fn(h, w, |i, j| {
        let (y, x) = (i as f64, j as f64);
        0.5 + 0.25 * (0.31 * y).sin() * (0.23 * x).cos() + 0.2 * (0.11 * (x + y)).sin()
    })
}

fn sinusoid(h: usize, w: usize, amp: f64) -> WarpField<f64> {
    WarpField::from_fn(h, w, |i, j| {
        let y = i as f64 / h as f64;
        let x = j as f64 / w as f64;
        (
            amp * (std::f64::consts::TAU * y + 0.4).sin(),
            amp * (std::f64::consts::TAU * x + 1.1).sin(),
        )
    })
}

#[test]
fn zero_field_is_identity() {
    let a = texture(12, 10);
    assert_eq!(WarpField::zeros(12, 10).apply(&a).unwrap(), a);
}

#[test]
fn unit_column_shift_pulls_from_left() {
    let a = ramp(6, 7);
    let out = WarpField::constant(6, 7, 0.0, 1.0).apply(&a).unwrap();
    for i in 0..6 {
        assert_eq!(out.get(i, 0), a.get(i, 0));
        for j in 1..7 {
            assert_eq!(out.get(i, j), a.get(i, j - 1));
        }
    }
}

#[test]
fn warping_constant_stays_constant() {
    let c = Image::filled(16, 16, 0.37);
    let out = sinusoid(16, 16, 2.3).apply(&c).unwrap();
    assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
}

#[test]
fn apply_rejects_shape_mismatch() {
    assert!(WarpField::<f64>::zeros(4, 4).apply(&ramp(4, 5)).is_err());
}

#[test]
fn compose_identity_elements() {
    let g = sinusoid(16, 12, 1.5);
    let z = WarpField::zeros(16, 12);
    assert_eq!(z.compose(&g).unwrap(), g);
    assert_eq!(g.compose(&z).unwrap(), g);
}

#[test]
fn compose_translations_matches_sequential_apply() {
    let a = WarpField::constant(20, 20, 1.25f64, -0.5);
    let b = WarpField::constant(20, 20, -0.75, 2.0);
    let h = a.compose(&b).unwrap();
    assert!(h.phi_i().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    assert!(h.phi_j().iter().all(|&v| (v - 1.5).abs() < 1e-12));
    // Bilinear sampling is exact on a ramp, so double interpolation adds no blur.
    let img = Image::from_fn(20, 20, |i, j| 0.1 + 0.02 * i as f64 + 0.015 * j as f64);
    let seq = a.apply(&b.apply(&img).unwrap()).unwrap();
    let direct = h.apply(&img).unwrap();
    for i in 5..15 {
        for j in 5..15 {
            assert!((seq.get(i, j) - direct.get(i, j)).abs() < 1e-5);
        }
    }
}

#[test]
fn compose_integer_translations_exact_everywhere_inside() {
    let a = WarpField::constant(16, 16, 2.0, 0.0);
    let b = WarpField::constant(16, 16, 1.0, -3.0);
    let img = texture(16, 16);
    let seq = a.apply(&b.apply(&img).unwrap()).unwrap();
    let direct = a.compose(&b).unwrap().apply(&img).unwrap();
    for i in 3..16 {
        for j in 0..13 {
            assert!((seq.get(i, j) - direct.get(i, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn invert_translation_and_zero() {
    assert_eq!(WarpField::<f64>::zeros(5, 5).invert(3), WarpField::zeros(5, 5));
    let inv = WarpField::constant(9, 9, 1.5, -2.0).invert(4);
    assert!(inv.phi_i().iter().all(|&v| v == -1.5));
    assert!(inv.phi_j().iter().all(|&v| v == 2.0));
}

#[test]
fn invert_satisfies_fixed_point() {
    let f = sinusoid(32, 32, 2.0);
    let v = f.invert(DEFAULT_INVERT_ITERATIONS);
    for i in 4..28 {
        for j in 4..28 {
            let (vi, vj) = v.at(i, j);
            let (fi, fj) = f.sample(i as f64 - vi, j as f64 - vj);
            assert!((vi + fi).abs() < 1e-6 && (vj + fj).abs() < 1e-6);
        }
    }
}

#[test]
fn invert_round_trip_sinusoid() {
    let f = sinusoid(64, 64, 2.0);
    let img = texture(64, 64);
    let back = f
        .invert(DEFAULT_INVERT_ITERATIONS)
        .apply(&f.apply(&img).unwrap())
        .unwrap();
    let err = mean_abs_interior(&img, &back, 4).unwrap();
    assert!(err < 0.02, "round trip error {err}");
}

#[test]
fn upsample_doubles_translation() {
    let f = WarpField::constant(4, 6, 0.5f64, -1.0).upsample2(8, 12);
    assert!(f.phi_i().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!(f.phi_j().iter().all(|&v| (v + 2.0).abs() < 1e-12));
}

#[test]
fn jacobian_of_identity_is_one() {
    let j = WarpField::<f64>::zeros(5, 5).jacobian_determinant();
    assert!(j.data().iter().all(|&v| v == 1.0));
}

#[test]
fn decode_rejects_bad_magic_and_truncation() {
    let f = sinusoid(4, 3, 1.0).cast::<f32>();
    let mut bytes = f.encode();
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(WarpField::<f32>::decode(&bad), Err(Error::Format(_))));
    bytes.truncate(bytes.len() - 5);
    let err = WarpField::<f32>::decode(&bytes).unwrap_err().to_string();
    assert!(err.contains("expected 108") && err.contains("got 103"), "{err}");
}

#[test]
fn save_load_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.wrp1");
    let f = sinusoid(7, 5, 1.3).cast::<f32>();
    f.save(&p).unwrap();
    assert_eq!(WarpField::<f32>::load(&p).unwrap(), f);
}

proptest! {
    #[test]
    fn encode_decode_bit_exact(vals in proptest::collection::vec(-50.0f32..50.0, 2 * 15)) {
        let (a, b) = vals.split_at(15);
        let f = WarpField::from_parts(3, 5, a.to_vec(), b.to_vec()).unwrap();
        let g = WarpField::<f32>::decode(&f.encode()).unwrap();
        for (x, y) in f.phi_i().iter().chain(f.phi_j()).zip(g.phi_i().iter().chain(g.phi_j())) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn warp_preserves_intensity_range(
        vals in proptest::collection::vec(0.0f32..1.0, 64),
        disp in proptest::collection::vec(-6.0f32..6.0, 128),
    ) {
        let img = Image::from_vec(8, 8, vals).unwrap();
        let (lo, hi) = img.min_max();
        let f = WarpField::from_parts(8, 8, disp[..64].to_vec(), disp[64..].to_vec()).unwrap();
        let out = f.apply(&img).unwrap();
        prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
    }
}
