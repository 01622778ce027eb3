//! Dense f64 matrix kernels used by the autodiff primitives.
//!
//! Layout is row-major everywhere. The three variants cover the forward
//! product and both backward products of `MatMul` without materializing
//! transposes.

/// c[m,n] = a[m,k] * b[k,n]
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
    c
}

/// c[m,r] = a[m,k] * b[r,k]^T  (rows of `b` are dotted against rows of `a`)
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, r: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), r * k);
    let mut c = vec![0.0; m * r];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * r..(i + 1) * r];
        for (j, c_v) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            // four independent accumulators to expose ILP to the vectorizer
            let mut acc = [0.0f64; 4];
            let chunks = k / 4;
            for q in 0..chunks {
                let o = q * 4;
                acc[0] += a_row[o] * b_row[o];
                acc[1] += a_row[o + 1] * b_row[o + 1];
                acc[2] += a_row[o + 2] * b_row[o + 2];
                acc[3] += a_row[o + 3] * b_row[o + 3];
            }
            let mut tail = 0.0;
            for o in chunks * 4..k {
                tail += a_row[o] * b_row[o];
            }
            *c_v = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
        }
    }
    c
}

/// c[k,n] = a[m,k]^T * b[m,n]
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut c = vec![0.0; k * n];
    for p in 0..m {
        let a_row = &a[p * k..(p + 1) * k];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_pi * b_v;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn variants_agree_with_naive() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        assert_eq!(matmul_nn(&a, &b, m, k, n), want);

        let bt = transpose(&b, k, n); // [n,k]
        let got_nt = matmul_nt(&a, &bt, m, k, n);
        for (x, y) in got_nt.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let at = transpose(&a, m, k); // [k,m]
        let got_tn = matmul_tn(&at, &b, k, m, n);
        for (x, y) in got_tn.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
