//! Resampling against direct evaluation of the Keys (a = -0.5) kernel.

use pathosr_core::resample::{synthesize_lr, upsample_bicubic, upsample_nearest};
use pathosr_core::{Image, LinearScale};
use proptest::prelude::*;

/// Keys cubic convolution kernel, written from its textbook form.
fn keys(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t < 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// 1-d upsampling weight of source sample `j` for output `i` away from
/// borders, where no reflection or renormalization applies.
fn up_weight(i: usize, j: usize, s: usize) -> f64 {
    let centre = (i as f64 + 0.5) / s as f64 - 0.5;
    keys(j as f64 - centre)
}

/// Kernel stretched by `s`, renormalized over the integer taps it covers.
fn down_weight(i: usize, j: usize, s: usize) -> f64 {
    let centre = (i as f64 + 0.5) * s as f64 - 0.5;
    let tap = |k: f64| keys((k - centre) / s as f64);
    let total: f64 = (-100..100).map(|k| tap(centre.floor() + k as f64)).sum();
    tap(j as f64) / total
}

#[test]
fn bicubic_upsampling_of_an_impulse_is_the_kernel() {
    let n = 12;
    let (r0, c0) = (6, 5);
    let lr = Image::from_fn(n, n, 1, |r, c, _| if (r, c) == (r0, c0) { 1.0 } else { 0.0 }).unwrap();
    for s in [2usize, 3, 4] {
        let up = upsample_bicubic(&lr, s);
        for y in 3 * s..(n - 3) * s {
            for x in 3 * s..(n - 3) * s {
                let expected = (up_weight(y, r0, s) * up_weight(x, c0, s)).clamp(0.0, 1.0);
                let got = up.get(y, x, 0) as f64;
                assert!((got - expected).abs() < 1e-6, "s={s} ({y},{x}): {got} vs {expected}");
            }
        }
    }
}

#[test]
fn antialiased_downsampling_of_an_impulse_is_the_stretched_kernel() {
    let n = 48;
    let (r0, c0) = (23, 26);
    let hr = Image::from_fn(n, n, 1, |r, c, _| if (r, c) == (r0, c0) { 0.5 } else { 0.0 }).unwrap();
    for s in [2usize, 3, 4] {
        let lr = synthesize_lr(&hr, LinearScale::new(s as u32).unwrap()).unwrap();
        for y in 0..lr.height() {
            for x in 0..lr.width() {
                let expected = 0.5 * down_weight(y, r0, s) * down_weight(x, c0, s);
                let got = lr.get(y, x, 0) as f64;
                // negative lobes are clamped to zero in the synthesized image
                assert!((got - expected.max(0.0)).abs() < 1e-6, "s={s} ({y},{x}): {got} vs {expected}");
            }
        }
    }
}

#[test]
fn nearest_replicates_pixels() {
    let lr = Image::from_fn(5, 4, 3, |r, c, ch| (r * 15 + c * 3 + ch) as f32 / 60.0).unwrap();
    let up = upsample_nearest(&lr, 4);
    for y in 0..16 {
        for x in 0..20 {
            for ch in 0..3 {
                assert_eq!(up.get(y, x, ch), lr.get(y / 4, x / 4, ch));
            }
        }
    }
}

proptest! {
    #[test]
    fn lr_shape_is_ceiling_division(w in 8usize..70, h in 8usize..70, si in 0usize..4) {
        let s = LinearScale::SUPPORTED[si];
        let hr = Image::filled(w, h, 3, 0.25).unwrap();
        let lr = synthesize_lr(&hr, LinearScale::new(s).unwrap()).unwrap();
        let s = s as usize;
        prop_assert_eq!((lr.width(), lr.height()), (w.div_ceil(s), h.div_ceil(s)));
        prop_assert!(lr.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn synthesized_lr_stays_in_range(data in proptest::collection::vec(0.0f32..=1.0, 24 * 20 * 3), si in 0usize..4) {
        let hr = Image::new(24, 20, 3, data).unwrap();
        let lr = synthesize_lr(&hr, LinearScale::new(LinearScale::SUPPORTED[si]).unwrap()).unwrap();
        prop_assert!(lr.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
