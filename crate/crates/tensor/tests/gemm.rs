use pathosr_tensor::Float;
use proptest::prelude::*;

fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    c
}

fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

fn matrices() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..9, 1usize..9, 1usize..9).prop_flat_map(|(m, k, n)| {
        (
            Just(m),
            Just(k),
            Just(n),
            proptest::collection::vec(-2.0f64..2.0, m * k),
            proptest::collection::vec(-2.0f64..2.0, k * n),
        )
    })
}

proptest! {
    #[test]
    fn gemm_agrees_with_the_naive_product((m, k, n, a, b) in matrices(), ta: bool, tb: bool) {
        let want = naive(m, k, n, &a, &b);
        let sa = if ta { transpose(m, k, &a) } else { a.clone() };
        let sb = if tb { transpose(k, n, &b) } else { b.clone() };
        let mut c = vec![1.0; m * n];
        f64::gemm(m, k, n, &sa, ta, &sb, tb, &mut c, true);
        for (got, w) in c.iter().zip(&want) {
            prop_assert!((got - (w + 1.0)).abs() < 1e-12);
        }
        let a32: Vec<f32> = sa.iter().map(|&v| v as f32).collect();
        let b32: Vec<f32> = sb.iter().map(|&v| v as f32).collect();
        let mut c32 = vec![0.0f32; m * n];
        f32::gemm(m, k, n, &a32, ta, &b32, tb, &mut c32, false);
        for (got, w) in c32.iter().zip(&want) {
            prop_assert!((*got as f64 - w).abs() < 1e-4);
        }
    }
}
