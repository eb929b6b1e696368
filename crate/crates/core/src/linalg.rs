//! Thin wrappers around LAPACK's divide-and-conquer symmetric and Hermitian
//! eigensolvers, plus the memory guard shared by every dense allocation.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Upper bound on bytes a single dense workload may allocate.
///
/// The default (4 GiB) admits `L = 8` (one 6561 x 6561 real matrix is
/// ~344 MB) and refuses full dense work at `L = 9`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryCap {
    pub bytes: u64,
}

impl Default for MemoryCap {
    fn default() -> Self {
        Self { bytes: 4 << 30 }
    }
}

impl MemoryCap {
    pub fn new(bytes: u64) -> Self {
        Self { bytes }
    }

    pub fn unlimited() -> Self {
        Self { bytes: u64::MAX }
    }

    /// Checks that `count` square matrices of side `dimension` with
    /// `elem_bytes`-byte entries fit under the cap.
    pub fn check(&self, dimension: usize, count: u64, elem_bytes: u64) -> Result<()> {
        let required = (dimension as u64)
            .saturating_mul(dimension as u64)
            .saturating_mul(elem_bytes)
            .saturating_mul(count);
        if required > self.bytes {
            return Err(Error::ResourceLimit {
                dimension,
                required,
                cap: self.bytes,
            });
        }
        Ok(())
    }
}

/// Eigen-decomposition of a real symmetric matrix.
///
/// Returns ascending eigenvalues and a matrix whose columns are the
/// corresponding orthonormal eigenvectors. Only the lower triangle of
/// `matrix` is read.
pub fn symmetric_eigen(matrix: Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = square_dim(matrix.view())?;
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    // Row-major storage is the column-major transpose, which for a
    // symmetric matrix is the matrix itself.
    let mut a = matrix.as_standard_layout().into_owned();
    let nn = n as i32;
    let mut w = vec![0.0; n];
    let mut info = 0;
    let mut work_query = [0.0f64];
    let mut iwork_query = [0i32];
    unsafe {
        lapack_sys::dsyevd_(
            c"V".as_ptr(),
            c"U".as_ptr(),
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &-1,
            iwork_query.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevd", info });
    }
    let lwork = work_query[0] as i32;
    let liwork = iwork_query[0];
    let mut work = vec![0.0; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            c"V".as_ptr(),
            c"U".as_ptr(),
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevd", info });
    }
    // Column-major eigenvectors are the rows of the row-major buffer.
    let vectors = a.reversed_axes().as_standard_layout().into_owned();
    Ok((w, vectors))
}

/// Eigen-decomposition of a complex Hermitian matrix.
///
/// Same conventions as [`symmetric_eigen`]; the full matrix must be
/// Hermitian (the row-major buffer is read by LAPACK as its conjugate).
pub fn hermitian_eigen(matrix: Array2<Complex64>) -> Result<(Vec<f64>, Array2<Complex64>)> {
    let n = square_dim(matrix.view())?;
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let mut a = matrix.as_standard_layout().into_owned();
    let nn = n as i32;
    let mut w = vec![0.0; n];
    let mut info = 0;
    let mut work_query = [lapack_sys::__BindgenComplex { re: 0.0, im: 0.0 }];
    let mut rwork_query = [0.0f64];
    let mut iwork_query = [0i32];
    unsafe {
        lapack_sys::zheevd_(
            c"V".as_ptr(),
            c"U".as_ptr(),
            &nn,
            a.as_mut_ptr() as *mut _,
            &nn,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &-1,
            rwork_query.as_mut_ptr(),
            &-1,
            iwork_query.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zheevd", info });
    }
    let lwork = work_query[0].re as i32;
    let lrwork = rwork_query[0] as i32;
    let liwork = iwork_query[0];
    let mut work = vec![lapack_sys::__BindgenComplex { re: 0.0, im: 0.0 }; lwork.max(1) as usize];
    let mut rwork = vec![0.0; lrwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::zheevd_(
            c"V".as_ptr(),
            c"U".as_ptr(),
            &nn,
            a.as_mut_ptr() as *mut _,
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zheevd", info });
    }
    // LAPACK diagonalized conj(A); its eigenvectors are conj(v), stored
    // column-major, i.e. as rows of the row-major buffer.
    let vectors = a.reversed_axes().mapv(|z| z.conj());
    Ok((w, vectors))
}

fn square_dim<T>(m: ArrayView2<T>) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::DimensionMismatch { expected: r, found: c });
    }
    if r > i32::MAX as usize {
        return Err(Error::InvalidParameter(format!("matrix side {r} exceeds LAPACK range")));
    }
    Ok(r)
}

/// `max |A - A^T|` for a real matrix.
pub fn symmetry_residual(m: ArrayView2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// `max |A - A^dagger|` for a complex matrix.
pub fn hermiticity_residual(m: ArrayView2<Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

/// `max |V^T V - I|` over the columns of `v`.
pub fn orthonormality_residual(v: ArrayView2<f64>) -> f64 {
    let g = v.t().dot(&v);
    max_identity_deviation(g.view())
}

/// `max |V^dagger V - I|` over the columns of `v`.
pub fn orthonormality_residual_complex(v: ArrayView2<Complex64>) -> f64 {
    let g = v.t().mapv(|z| z.conj()).dot(&v);
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[[i, j]] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

fn max_identity_deviation(g: ArrayView2<f64>) -> f64 {
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[[i, j]] - target).abs());
        }
    }
    worst
}
