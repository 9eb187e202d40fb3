// Dense row-major kernels. Every output element is accumulated sequentially
// along the contraction axis, so results do not depend on the sizes of
// unrelated rows or columns. Exact-zero terms are skipped; inputs are finite.

/// `c += a[m,k] · b[k,n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c += a[m,k]ᵀ · b[m,n]`, giving `[k,n]`.
pub(crate) fn matmul_at_b(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c += a[m,k] · b[n,k]ᵀ`, giving `[m,n]`.
pub(crate) fn matmul_a_bt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut bt = vec![0.0; k * n];
    transpose(b, &mut bt, n, k);
    matmul(a, &bt, c, m, k, n);
}

pub(crate) fn transpose(a: &[f64], out: &mut [f64], m: usize, n: usize) {
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
}
