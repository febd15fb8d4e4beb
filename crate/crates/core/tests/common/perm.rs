//! Dense permutation matrices of the patch transformations, built from basis vectors.

use lgm_core::{npt_op1, npt_op2, npt_op3, PatchDims, Tensor};

fn matrix(n: usize, f: impl Fn(&Tensor<f64>) -> Tensor<f64>, shape: &[usize]) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| f(&Tensor::from_fn(shape.to_vec(), |i| if i == j { 1.0 } else { 0.0 })).data().to_vec())
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

fn is_permutation(m: &[Vec<f64>]) -> bool {
    let n = m.len();
    (0..n).all(|i| m[i].iter().filter(|v| **v == 1.0).count() == 1 && m[i].iter().all(|v| *v == 0.0 || *v == 1.0))
        && (0..n).all(|j| (0..n).filter(|i| m[*i][j] == 1.0).count() == 1)
}

fn product(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

/// Each op is a permutation and `M3 M2 M1` is the identity on a `d x 4 x 4` map.
pub fn composes_to_identity(d: usize, ph: usize, pw: usize) -> bool {
    let dims = PatchDims::new(4, 4, d, ph, pw).unwrap();
    let n = 16 * d;
    let m1 = matrix(n, |x| npt_op1(x, &dims).unwrap(), &[d, 4, 4]);
    let m2 = matrix(n, |x| npt_op2(x).unwrap(), &[dims.patch_pixels(), d, dims.patch_count()]);
    let m3 = matrix(n, |x| npt_op3(x, &dims).unwrap(), &[dims.patch_count(), d, dims.patch_pixels()]);
    if !(is_permutation(&m1) && is_permutation(&m2) && is_permutation(&m3)) {
        return false;
    }
    let total = product(&m3, &product(&m2, &m1));
    total.iter().enumerate().all(|(i, row)| row.iter().enumerate().all(|(j, v)| *v == if i == j { 1.0 } else { 0.0 }))
}

pub const PATCHES_4X4: [(usize, usize); 9] = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 4), (4, 1), (2, 4), (4, 2), (4, 4)];
