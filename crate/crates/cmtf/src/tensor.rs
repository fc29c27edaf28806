//! Tensor and matrix value types plus the multilinear kernels the solvers
//! are built from: mode unfoldings, Khatri-Rao and Hadamard products, and
//! Frobenius norms.
//!
//! Indices are 0-based everywhere in this crate; the 1-based convention of
//! the on-disk formats is converted at the I/O boundary only.

use std::borrow::Cow;
use std::ops::Index;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Tensors denser than this are stored densely when built from coordinates.
pub const SPARSE_DENSITY_THRESHOLD: f64 = 0.25;

#[derive(Clone, Debug)]
enum Storage {
    /// Row-major values, `(i, j, k)` at `(i * J + j) * K + k`.
    Dense(Vec<f64>),
    /// Strictly increasing lexicographic `(i, j, k)` keys.
    Sparse(Vec<(usize, usize, usize, f64)>),
}

/// A 3-mode numeric array, dense or coordinate-sparse.
///
/// Both storages are interchangeable: every operation produces the same
/// result on either representation of the same data.
#[derive(Clone, Debug)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    storage: Storage,
}

impl Tensor3 {
    pub fn dense(dims: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let (i, j, k) = dims;
        if values.len() != i * j * k {
            return Err(Error::DimMismatch(format!(
                "dense tensor {}x{}x{} needs {} values, got {}",
                i,
                j,
                k,
                i * j * k,
                values.len()
            )));
        }
        Ok(Tensor3 {
            dims,
            storage: Storage::Dense(values),
        })
    }

    /// Builds coordinate-sparse storage. Entries may arrive in any order;
    /// they are sorted and checked for bounds and duplicates.
    pub fn sparse(
        dims: (usize, usize, usize),
        mut entries: Vec<(usize, usize, usize, f64)>,
    ) -> Result<Self> {
        let (di, dj, dk) = dims;
        for &(i, j, k, _) in &entries {
            if i >= di || j >= dj || k >= dk {
                return Err(Error::OutOfBounds(format!(
                    "entry ({}, {}, {}) outside {}x{}x{}",
                    i, j, k, di, dj, dk
                )));
            }
        }
        entries.sort_by_key(|&(i, j, k, _)| (i, j, k));
        for w in entries.windows(2) {
            if (w[0].0, w[0].1, w[0].2) == (w[1].0, w[1].1, w[1].2) {
                return Err(Error::DuplicateCoordinate(format!(
                    "({}, {}, {})",
                    w[0].0, w[0].1, w[0].2
                )));
            }
        }
        Ok(Tensor3 {
            dims,
            storage: Storage::Sparse(entries),
        })
    }

    /// Coordinate entries with storage picked by the load-time density rule:
    /// sparse below [`SPARSE_DENSITY_THRESHOLD`], dense otherwise.
    pub fn from_entries_auto(
        dims: (usize, usize, usize),
        entries: Vec<(usize, usize, usize, f64)>,
    ) -> Result<Self> {
        let total = dims.0 * dims.1 * dims.2;
        let density = if total == 0 {
            1.0
        } else {
            entries.len() as f64 / total as f64
        };
        if density < SPARSE_DENSITY_THRESHOLD {
            Self::sparse(dims, entries)
        } else {
            let sparse = Self::sparse(dims, entries)?;
            Ok(Self {
                dims,
                storage: Storage::Dense(sparse.dense_values().into_owned()),
            })
        }
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Tensor3 {
            dims,
            storage: Storage::Dense(vec![0.0; dims.0 * dims.1 * dims.2]),
        }
    }

    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let (di, dj, dk) = dims;
        let mut values = Vec::with_capacity(di * dj * dk);
        for i in 0..di {
            for j in 0..dj {
                for k in 0..dk {
                    values.push(f(i, j, k));
                }
            }
        }
        Tensor3 {
            dims,
            storage: Storage::Dense(values),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Total number of cells, `I * J * K`.
    pub fn len(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    /// Number of explicitly stored entries (all cells for dense storage).
    pub fn stored_len(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.len(),
            Storage::Sparse(e) => e.len(),
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (di, dj, dk) = self.dims;
        assert!(i < di && j < dj && k < dk, "tensor index out of bounds");
        match &self.storage {
            Storage::Dense(v) => v[(i * dj + j) * dk + k],
            Storage::Sparse(e) => match e.binary_search_by_key(&(i, j, k), |&(a, b, c, _)| (a, b, c)) {
                Ok(pos) => e[pos].3,
                Err(_) => 0.0,
            },
        }
    }

    /// All cells in row-major order; borrows for dense storage.
    pub fn dense_values(&self) -> Cow<'_, [f64]> {
        match &self.storage {
            Storage::Dense(v) => Cow::Borrowed(v),
            Storage::Sparse(entries) => {
                let (_, dj, dk) = self.dims;
                let mut out = vec![0.0; self.len()];
                for &(i, j, k, v) in entries {
                    out[(i * dj + j) * dk + k] = v;
                }
                Cow::Owned(out)
            }
        }
    }

    /// Stored entries in lexicographic coordinate order. Dense storage
    /// yields every cell, including zeros.
    pub fn iter_stored(&self) -> Box<dyn Iterator<Item = (usize, usize, usize, f64)> + '_> {
        match &self.storage {
            Storage::Dense(v) => {
                let (_, dj, dk) = self.dims;
                Box::new(v.iter().enumerate().map(move |(idx, &val)| {
                    let k = idx % dk;
                    let j = (idx / dk) % dj;
                    let i = idx / (dj * dk);
                    (i, j, k, val)
                }))
            }
            Storage::Sparse(e) => Box::new(e.iter().copied()),
        }
    }

    /// Sum of squared entries. Only stored entries contribute, which is the
    /// same value on either storage since absent cells are zero.
    pub fn frobenius_norm_sq(&self) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v.iter().map(|x| x * x).sum(),
            Storage::Sparse(e) => e.iter().map(|&(_, _, _, v)| v * v).sum(),
        }
    }

    /// Entries with magnitude at least `tol`; exact zeros never count.
    pub fn nnz(&self, tol: f64) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.iter().filter(|x| **x != 0.0 && x.abs() >= tol).count(),
            Storage::Sparse(e) => e
                .iter()
                .filter(|&&(_, _, _, v)| v != 0.0 && v.abs() >= tol)
                .count(),
        }
    }
}

impl PartialEq for Tensor3 {
    /// Logical equality: dims and every cell value, across storage kinds.
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && *self.dense_values() == *other.dense_values()
    }
}

/// A dense matrix with finite entries, column-accessible.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    data: Array2<f64>,
}

impl Matrix {
    /// Rejects NaN and infinite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for ((r, c), &v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("matrix entry ({}, {}) = {}", r, c, v)));
            }
        }
        Ok(Matrix { data })
    }

    /// Wraps computed results whose finiteness is the caller's concern.
    pub(crate) fn from_raw(data: Array2<f64>) -> Self {
        Matrix { data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimMismatch("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((r, c), flat)
            .map_err(|e| Error::DimMismatch(e.to_string()))?;
        Self::new(arr)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn eye(n: usize) -> Self {
        Matrix {
            data: Array2::eye(n),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix {
            data: self.data.t().to_owned(),
        }
    }

    pub fn dot(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.rows() {
            return Err(Error::DimMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(Matrix {
            data: self.data.dot(&other.data),
        })
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Entries with magnitude at least `tol`; exact zeros never count.
    pub fn nnz(&self, tol: f64) -> usize {
        self.data
            .iter()
            .filter(|x| **x != 0.0 && x.abs() >= tol)
            .count()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.data[idx]
    }
}

/// A tensor with up to three side matrices coupled on modes 1-3: the side
/// matrix on mode `m` shares its rows with the tensor's `m`-th dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledData {
    pub x: Tensor3,
    sides: [Option<Matrix>; 3],
}

impl CoupledData {
    pub fn new(
        x: Tensor3,
        y1: Option<Matrix>,
        y2: Option<Matrix>,
        y3: Option<Matrix>,
    ) -> Result<Self> {
        let (i, j, k) = x.dims();
        let coupled = [i, j, k];
        let sides = [y1, y2, y3];
        for (m, side) in sides.iter().enumerate() {
            if let Some(y) = side {
                if y.rows() != coupled[m] {
                    return Err(Error::DimMismatch(format!(
                        "side matrix on mode {} has {} rows, tensor dimension is {}",
                        m + 1,
                        y.rows(),
                        coupled[m]
                    )));
                }
            }
        }
        Ok(CoupledData { x, sides })
    }

    pub fn tensor_only(x: Tensor3) -> Self {
        CoupledData {
            x,
            sides: [None, None, None],
        }
    }

    /// Side matrix coupled on tensor mode `m` (0-based).
    pub fn side(&self, m: usize) -> Option<&Matrix> {
        self.sides[m].as_ref()
    }

    pub fn has_sides(&self) -> bool {
        self.sides.iter().any(Option::is_some)
    }

    /// Squared Frobenius norm of the tensor plus all present side matrices.
    pub fn energy(&self) -> f64 {
        self.x.frobenius_norm_sq()
            + self
                .sides
                .iter()
                .flatten()
                .map(Matrix::frobenius_norm_sq)
                .sum::<f64>()
    }
}

/// Mode-n matricization.
///
/// Column orders are fixed so that the unfolded tensor factors as
/// `X1 = A (B ⊙ C)^T`, `X2 = B (C ⊙ A)^T`, `X3 = C (A ⊙ B)^T`:
/// mode 1 is `I x (J*K)` with `(i, j, k)` at column `j*K + k`, mode 2 is
/// `J x (K*I)` with column `k*I + i`, mode 3 is `K x (I*J)` with column
/// `i*J + j`.
pub fn unfold(x: &Tensor3, mode: usize) -> Result<Matrix> {
    let (di, dj, dk) = x.dims();
    let (rows, cols) = match mode {
        1 => (di, dj * dk),
        2 => (dj, dk * di),
        3 => (dk, di * dj),
        _ => return Err(Error::InvalidMode(mode)),
    };
    let mut out = Array2::zeros((rows, cols));
    for (i, j, k, v) in x.iter_stored() {
        let (r, c) = match mode {
            1 => (i, j * dk + k),
            2 => (j, k * di + i),
            _ => (k, i * dj + j),
        };
        out[(r, c)] = v;
    }
    Ok(Matrix::from_raw(out))
}

/// Inverse of [`unfold`]: `refold(unfold(x, mode), mode, x.dims()) == x`.
pub fn refold(m: &Matrix, mode: usize, dims: (usize, usize, usize)) -> Result<Tensor3> {
    let (di, dj, dk) = dims;
    let expected = match mode {
        1 => (di, dj * dk),
        2 => (dj, dk * di),
        3 => (dk, di * dj),
        _ => return Err(Error::InvalidMode(mode)),
    };
    if m.dims() != expected {
        return Err(Error::DimMismatch(format!(
            "mode-{} refold to {}x{}x{} expects a {}x{} matrix, got {}x{}",
            mode, di, dj, dk, expected.0, expected.1, m.rows(), m.cols()
        )));
    }
    let mut values = vec![0.0; di * dj * dk];
    for ((r, c), &v) in m.as_array().indexed_iter() {
        let (i, j, k) = match mode {
            1 => (r, c / dk, c % dk),
            2 => (c % di, r, c / di),
            _ => (c / dj, c % dj, r),
        };
        values[(i * dj + j) * dk + k] = v;
    }
    Tensor3::dense(dims, values)
}

/// Khatri-Rao (column-wise Kronecker) product: for matrices with equal
/// column counts, row `i * b.rows + r` of column `f` is `a[i,f] * b[r,f]`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimMismatch(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let f = a.cols();
    let (ra, rb) = (a.rows(), b.rows());
    let mut out = Array2::zeros((ra * rb, f));
    for i in 0..ra {
        for r in 0..rb {
            for c in 0..f {
                out[(i * rb + r, c)] = a[(i, c)] * b[(r, c)];
            }
        }
    }
    Ok(Matrix::from_raw(out))
}

/// Elementwise product of same-shaped matrices.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch(format!(
            "hadamard needs equal shapes, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(Matrix::from_raw(a.as_array() * b.as_array()))
}
