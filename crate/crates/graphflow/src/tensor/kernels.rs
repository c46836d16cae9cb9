//! Inner loops for the tape ops. All take raw slices so the tape layer owns
//! every shape check. The i-k-j ordering keeps the j loop contiguous for both
//! output and rhs rows, which lets the compiler vectorize it.

/// out[m x n] = a[m x k] * b[k x n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = av.mul_add(bv, *o);
            }
        }
    }
    out
}

/// out[k x n] = a^T[k x m] * b[m x n] with a stored as m x k.
pub fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = av.mul_add(bv, *o);
            }
        }
    }
    out
}

/// out[m x r] = a[m x n] * b^T[n x r] with b stored as r x n.
pub fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * r];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * r..(i + 1) * r];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = av.mul_add(bv, acc);
            }
            *o = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_2x3_3x2() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let a = [1.0, -2.0, 0.5, 3.0, 4.0, -1.0]; // 2 x 3
        let b = [2.0, 1.0, 0.0, -1.0, 1.0, 5.0]; // 2 x 3
        // a^T b : (3 x 2)(2 x 3)
        let atb = matmul_at_b(&a, &b, 2, 3, 3);
        let at = [1.0, 3.0, -2.0, 4.0, 0.5, -1.0];
        assert_eq!(atb, matmul(&at, &b, 3, 2, 3));
        // a b^T : (2 x 3)(3 x 2)
        let abt = matmul_a_bt(&a, &b, 2, 3, 2);
        let bt = [2.0, -1.0, 1.0, 1.0, 0.0, 5.0];
        assert_eq!(abt, matmul(&a, &bt, 2, 3, 2));
    }
}
