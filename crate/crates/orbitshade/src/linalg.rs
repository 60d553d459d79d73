//! Eigen machinery for hyperbolicity certificates: complex spectra of real
//! matrices, invariant-subspace frames, eigenbasis conditioning and the
//! matrix exponential.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

pub struct EigenDecomposition {
    /// Eigenvalues sorted by real part (ascending), conjugate pairs adjacent.
    pub values: Vec<Complex64>,
    /// Matching eigenvectors as columns (unit norm).
    pub vectors: DMatrix<Complex64>,
}

fn to_complex(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| Complex64::new(a[(r, c)], 0.0))
}

/// Null-space basis of a complex matrix via SVD, using `cutoff` relative to
/// the largest singular value.
fn null_space(m: &DMatrix<Complex64>, cutoff: f64) -> Vec<DVector<Complex64>> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let thresh = cutoff * smax.max(1e-300);
    let mut out = Vec::new();
    for i in 0..n {
        let s = if i < svd.singular_values.len() { svd.singular_values[i] } else { 0.0 };
        if s <= thresh {
            out.push(vt.row(i).conjugate().transpose().into_owned());
        }
    }
    out
}

/// Full eigen decomposition of a real matrix, requiring a semisimple
/// spectrum (geometric multiplicity = algebraic for every eigenvalue).
pub fn eigen_decompose(a: &DMatrix<f64>) -> Result<EigenDecomposition> {
    let n = a.nrows();
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut values: Vec<Complex64> = a.clone().complex_eigenvalues().iter().cloned().collect();
    values.sort_by(|p, q| {
        p.re.partial_cmp(&q.re)
            .unwrap()
            .then(p.im.abs().partial_cmp(&q.im.abs()).unwrap())
            .then(p.im.partial_cmp(&q.im).unwrap())
    });

    // group numerically equal eigenvalues
    let group_tol = 1e-8 * scale.max(1.0);
    let ac = to_complex(a);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut col = 0usize;
    let mut i = 0usize;
    while i < values.len() {
        let mut j = i + 1;
        while j < values.len() && (values[j] - values[i]).norm() <= group_tol {
            j += 1;
        }
        let mult = j - i;
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * values[i];
        let kernel = null_space(&shifted, 1e-9);
        if kernel.len() < mult {
            return Err(Error::NonSemisimple { re: values[i].re, im: values[i].im });
        }
        for v in kernel.iter().take(mult) {
            let nv = v.norm();
            vectors.set_column(col, &(v / Complex64::new(nv, 0.0)));
            col += 1;
        }
        i = j;
    }
    Ok(EigenDecomposition { values, vectors })
}

/// 2-norm condition number of a complex matrix.
pub fn cond2(m: &DMatrix<Complex64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Real orthonormal basis of the invariant subspace spanned by the
/// eigenvectors selected by `pick` (conjugate pairs contribute their real
/// and imaginary parts once).
pub fn real_invariant_frame(
    eig: &EigenDecomposition,
    pick: impl Fn(Complex64) -> bool,
) -> DMatrix<f64> {
    let n = eig.vectors.nrows();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut skip_next = false;
    for (idx, &val) in eig.values.iter().enumerate() {
        if skip_next {
            skip_next = false;
            continue;
        }
        if !pick(val) {
            continue;
        }
        let v = eig.vectors.column(idx);
        if val.im.abs() > 1e-12 {
            // conjugate pair: take Re and Im once, skip the partner
            cols.push(DVector::from_iterator(n, v.iter().map(|z| z.re)));
            cols.push(DVector::from_iterator(n, v.iter().map(|z| z.im)));
            if idx + 1 < eig.values.len()
                && (eig.values[idx + 1] - val.conj()).norm() < 1e-8 * (1.0 + val.norm())
            {
                skip_next = true;
            }
        } else {
            cols.push(DVector::from_iterator(n, v.iter().map(|z| z.re)));
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    let m = DMatrix::from_columns(&cols);
    // thin QR for an orthonormal frame
    let qr = m.qr();
    let q = qr.q();
    q.columns(0, cols.len()).into_owned()
}

/// Matrix exponential by scaling and squaring with a 6th-order Pade
/// approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil().max(0.0) as i32 } else { 0 };
    let x = a / 2f64.powi(s);
    // Pade(6,6)
    let c = [
        1.0,
        1.0 / 2.0,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let id = DMatrix::<f64>::identity(n, n);
    let x2 = &x * &x;
    let x4 = &x2 * &x2;
    let x6 = &x4 * &x2;
    let even = &id * c[0] + &x2 * c[2] + &x4 * c[4] + &x6 * c[6];
    let odd = &x * (&id * c[1] + &x2 * c[3] + &x4 * c[5]);
    let p = &even + &odd;
    let q = &even - &odd;
    let mut e = q.lu().solve(&p).unwrap_or_else(|| id.clone());
    for _ in 0..s {
        e = &e * &e;
    }
    e
}
