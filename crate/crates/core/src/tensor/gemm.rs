//! Row-major dense kernels. All of them accumulate into `c`.

/// `c[p×r] += a[p×q] · b[q×r]`
pub(crate) fn nn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let c_row = &mut c[i * r..(i + 1) * r];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (cj, &bkj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bkj;
            }
        }
    }
}

/// `c[p×q] += g[p×r] · b[q×r]ᵀ`
pub(crate) fn nt(g: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let g_row = &g[i * r..(i + 1) * r];
        for k in 0..q {
            let b_row = &b[k * r..(k + 1) * r];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            c[i * q + k] += dot;
        }
    }
}

/// `c[q×r] += a[p×q]ᵀ · g[p×r]`
pub(crate) fn tn(a: &[f64], g: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let g_row = &g[i * r..(i + 1) * r];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let c_row = &mut c[k * r..(k + 1) * r];
            for (cj, &gj) in c_row.iter_mut().zip(g_row) {
                *cj += aik * gj;
            }
        }
    }
}
