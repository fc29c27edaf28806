//! Baseline alternating-least-squares solvers: plain PARAFAC (used for
//! initialization and as the uncoupled special case) and the full coupled
//! solver [`cmtf_als`].
//!
//! Each factor update is an exact least-squares minimization of its block,
//! so the objective trace is non-increasing. Every run is deterministic
//! given the seed in [`SolverOptions`].

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{pinv, stacked_kr_pinv_apply, PinvOptions};
use crate::tensor::{khatri_rao, unfold, CoupledData, Matrix, Tensor3};

/// The CMTF model: tensor factors `a`, `b`, `c`, coupled side factors
/// `d`, `e`, `g` (present exactly when the corresponding side matrix was
/// fitted), and per-column scale vectors.
///
/// The model reconstructs the tensor as
/// `sum_k la(k) lb(k) lc(k) a_k ∘ b_k ∘ c_k` and the side matrices as
/// `A diag(la ∗ ld) D^T` (and likewise for modes 2 and 3). With all scales
/// at one this is the plain unscaled model.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSet {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Option<Matrix>,
    pub e: Option<Matrix>,
    pub g: Option<Matrix>,
    pub lambda_a: Vec<f64>,
    pub lambda_b: Vec<f64>,
    pub lambda_c: Vec<f64>,
    pub lambda_d: Vec<f64>,
    pub lambda_e: Vec<f64>,
    pub lambda_g: Vec<f64>,
}

impl FactorSet {
    /// Builds a factor set with all scale vectors set to one.
    pub fn new(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        d: Option<Matrix>,
        e: Option<Matrix>,
        g: Option<Matrix>,
    ) -> Result<Self> {
        let f = a.cols();
        for (name, m) in [("b", Some(&b)), ("c", Some(&c)), ("d", d.as_ref()), ("e", e.as_ref()), ("g", g.as_ref())]
        {
            if let Some(m) = m {
                if m.cols() != f {
                    return Err(Error::DimMismatch(format!(
                        "factor {} has {} columns, expected {}",
                        name,
                        m.cols(),
                        f
                    )));
                }
            }
        }
        let ones = vec![1.0; f];
        Ok(FactorSet {
            a,
            b,
            c,
            d,
            e,
            g,
            lambda_a: ones.clone(),
            lambda_b: ones.clone(),
            lambda_c: ones.clone(),
            lambda_d: ones.clone(),
            lambda_e: ones.clone(),
            lambda_g: ones,
        })
    }

    /// Number of factors (columns of every matrix).
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// Tensor-mode factor by 0-based mode index.
    pub fn tensor_factor(&self, mode: usize) -> &Matrix {
        match mode {
            0 => &self.a,
            1 => &self.b,
            _ => &self.c,
        }
    }

    /// Coupled factor paired with the side matrix of 0-based mode index.
    pub fn side_factor(&self, mode: usize) -> Option<&Matrix> {
        match mode {
            0 => self.d.as_ref(),
            1 => self.e.as_ref(),
            _ => self.g.as_ref(),
        }
    }

    pub fn lambda_tensor(&self, mode: usize) -> &[f64] {
        match mode {
            0 => &self.lambda_a,
            1 => &self.lambda_b,
            _ => &self.lambda_c,
        }
    }

    pub fn lambda_side(&self, mode: usize) -> &[f64] {
        match mode {
            0 => &self.lambda_d,
            1 => &self.lambda_e,
            _ => &self.lambda_g,
        }
    }

    fn check_lambdas(&self) -> Result<()> {
        let f = self.rank();
        for (name, l) in [
            ("lambda_a", &self.lambda_a),
            ("lambda_b", &self.lambda_b),
            ("lambda_c", &self.lambda_c),
            ("lambda_d", &self.lambda_d),
            ("lambda_e", &self.lambda_e),
            ("lambda_g", &self.lambda_g),
        ] {
            if l.len() != f {
                return Err(Error::DimMismatch(format!(
                    "{} has length {}, expected {}",
                    name,
                    l.len(),
                    f
                )));
            }
        }
        Ok(())
    }

    /// Dense tensor `sum_k la(k) lb(k) lc(k) a_k ∘ b_k ∘ c_k`.
    pub fn reconstruct_tensor(&self) -> Result<Tensor3> {
        self.check_lambdas()?;
        let f = self.rank();
        let scale: Vec<f64> = (0..f)
            .map(|k| self.lambda_a[k] * self.lambda_b[k] * self.lambda_c[k])
            .collect();
        let mut a_scaled = self.a.as_array().clone();
        for (k, s) in scale.iter().enumerate() {
            a_scaled.column_mut(k).mapv_inplace(|v| v * s);
        }
        // Row-major mode-1 layout coincides with the dense cell layout.
        let kr = khatri_rao(&self.b, &self.c)?;
        let mode1 = a_scaled.dot(&kr.as_array().t());
        let dims = (self.a.rows(), self.b.rows(), self.c.rows());
        let values = mode1.into_iter().collect();
        Tensor3::dense(dims, values)
    }

    /// Side-matrix reconstruction `A diag(la ∗ ld) D^T` for 0-based mode.
    pub fn reconstruct_side(&self, mode: usize) -> Result<Matrix> {
        self.check_lambdas()?;
        let names = ["d", "e", "g"];
        let side = self.side_factor(mode).ok_or(Error::MissingFactor(names[mode]))?;
        let row_factor = self.tensor_factor(mode);
        let lt = self.lambda_tensor(mode);
        let ls = self.lambda_side(mode);
        let mut scaled = row_factor.as_array().clone();
        for k in 0..self.rank() {
            let s = lt[k] * ls[k];
            scaled.column_mut(k).mapv_inplace(|v| v * s);
        }
        Ok(Matrix::from_raw(scaled.dot(&side.as_array().t())))
    }

    /// Nonzero entries across all factor matrices, treating magnitudes
    /// below `tol` as zero.
    pub fn nnz(&self, tol: f64) -> usize {
        let mut total = self.a.nnz(tol) + self.b.nnz(tol) + self.c.nnz(tol);
        for m in [&self.d, &self.e, &self.g].into_iter().flatten() {
            total += m.nnz(tol);
        }
        total
    }
}

/// Options shared by all solvers in this crate.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub rank: usize,
    pub max_iters: usize,
    /// Convergence threshold on the relative objective change between two
    /// iterations.
    pub rel_change_tol: f64,
    pub seed: u64,
    pub pinv: PinvOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rank: 1,
            max_iters: 500,
            rel_change_tol: 1e-6,
            seed: 0,
            pinv: PinvOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.rank < 1 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.rel_change_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "rel_change_tol must be positive".into(),
            ));
        }
        self.pinv.validate()
    }
}

/// Model cost: squared tensor residual plus squared residuals of every
/// present side matrix, with the factor set's scale vectors applied.
/// Missing side matrices contribute zero.
pub fn objective(data: &CoupledData, f: &FactorSet) -> Result<f64> {
    let dims = data.x.dims();
    if (f.a.rows(), f.b.rows(), f.c.rows()) != dims {
        return Err(Error::DimMismatch(format!(
            "factors are {}x{}x{} rows, tensor is {}x{}x{}",
            f.a.rows(),
            f.b.rows(),
            f.c.rows(),
            dims.0,
            dims.1,
            dims.2
        )));
    }
    let recon = f.reconstruct_tensor()?;
    let expected = recon.dense_values();
    let actual = data.x.dense_values();
    let mut total: f64 = actual
        .iter()
        .zip(expected.iter())
        .map(|(x, r)| (x - r) * (x - r))
        .sum();

    let names = ["d", "e", "g"];
    for mode in 0..3 {
        if let Some(y) = data.side(mode) {
            let side = f.side_factor(mode).ok_or(Error::MissingFactor(names[mode]))?;
            if side.rows() != y.cols() {
                return Err(Error::DimMismatch(format!(
                    "side factor {} has {} rows, side matrix has {} columns",
                    names[mode],
                    side.rows(),
                    y.cols()
                )));
            }
            let recon = f.reconstruct_side(mode)?;
            total += y
                .as_array()
                .iter()
                .zip(recon.as_array().iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    Ok(total)
}

/// Initial estimate for a coupled factor: the exact least-squares solution
/// `D` of `Y ≈ A D^T`, computed through the thresholded pseudoinverse of
/// `A`.
pub fn init_coupled_factor(y: &Matrix, a: &Matrix, opts: &PinvOptions) -> Result<Matrix> {
    if y.rows() != a.rows() {
        return Err(Error::DimMismatch(format!(
            "coupled matrix has {} rows, factor has {}",
            y.rows(),
            a.rows()
        )));
    }
    Ok(pinv(a, opts)?.dot(y)?.transpose())
}

/// Mode-wise transposed unfoldings and stacked right-hand sides, fixed for
/// the whole solve.
struct Precomputed {
    /// vstack(unfold(x, m)^T, Y_m^T) per mode; just the unfolding when the
    /// side matrix is absent.
    rhs: [Matrix; 3],
}

impl Precomputed {
    fn build(data: &CoupledData) -> Result<Self> {
        let mut rhs = Vec::with_capacity(3);
        for mode in 0..3 {
            let unf_t = unfold(&data.x, mode + 1)?.transpose();
            let stacked = match data.side(mode) {
                Some(y) => Matrix::from_raw(concatenate(
                    Axis(0),
                    &[unf_t.as_array().view(), y.as_array().t()],
                )
                .expect("row counts agree by construction")),
                None => unf_t,
            };
            rhs.push(stacked);
        }
        let mut it = rhs.into_iter();
        Ok(Precomputed {
            rhs: [
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
            ],
        })
    }
}

/// One exact block update of tensor factor `mode`, solving the stacked
/// least-squares problem over the unfolded tensor and the mode's side
/// matrix (when present).
fn update_tensor_factor(
    data: &CoupledData,
    pre: &Precomputed,
    f: &mut FactorSet,
    mode: usize,
    opts: &PinvOptions,
) -> Result<()> {
    // Khatri-Rao pairs per mode: X1 = A (B ⊙ C)^T, X2 = B (C ⊙ A)^T,
    // X3 = C (A ⊙ B)^T.
    let (first, second) = match mode {
        0 => (&f.b, &f.c),
        1 => (&f.c, &f.a),
        _ => (&f.a, &f.b),
    };
    let empty = Matrix::zeros(0, f.rank());
    let coupled = if data.side(mode).is_some() {
        f.side_factor(mode).unwrap_or(&empty)
    } else {
        &empty
    };
    let solved = stacked_kr_pinv_apply(first, second, coupled, &pre.rhs[mode], opts)?.transpose();
    match mode {
        0 => f.a = solved,
        1 => f.b = solved,
        _ => f.c = solved,
    }
    Ok(())
}

/// One full sweep of Algorithm-style updates: A, B, C by stacked least
/// squares, then each present coupled factor by its closed-form solve.
fn cmtf_sweep(data: &CoupledData, pre: &Precomputed, f: &mut FactorSet, opts: &PinvOptions) -> Result<()> {
    for mode in 0..3 {
        update_tensor_factor(data, pre, f, mode, opts)?;
    }
    if let Some(y) = data.side(0) {
        f.d = Some(init_coupled_factor(y, &f.a, opts)?);
    }
    if let Some(y) = data.side(1) {
        f.e = Some(init_coupled_factor(y, &f.b, opts)?);
    }
    if let Some(y) = data.side(2) {
        f.g = Some(init_coupled_factor(y, &f.c, opts)?);
    }
    Ok(())
}

/// Iterates sweeps until the relative objective change drops below the
/// tolerance or `max_iters` is reached. The trace starts with the objective
/// of the initial factors.
fn iterate(
    data: &CoupledData,
    pre: &Precomputed,
    mut f: FactorSet,
    opts: &SolverOptions,
) -> Result<(FactorSet, Vec<f64>)> {
    let mut trace = vec![check_finite(objective(data, &f)?, 0)?];
    for iter in 1..=opts.max_iters {
        cmtf_sweep(data, pre, &mut f, &opts.pinv)?;
        let obj = check_finite(objective(data, &f)?, iter)?;
        let prev = *trace.last().unwrap();
        trace.push(obj);
        let rel = if prev > 0.0 {
            (prev - obj).abs() / prev
        } else {
            0.0
        };
        if rel < opts.rel_change_tol {
            break;
        }
    }
    Ok((f, trace))
}

fn check_finite(obj: f64, iter: usize) -> Result<f64> {
    if obj.is_finite() {
        Ok(obj)
    } else {
        Err(Error::Numeric(format!(
            "objective became {} at iteration {}",
            obj, iter
        )))
    }
}

/// Uniform [0, 1) factor matrix, filled row-major.
fn random_factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    Matrix::from_raw(Array2::from_shape_vec((rows, cols), values).expect("shape from length"))
}

fn column_norm(m: &Matrix, col: usize) -> f64 {
    m.as_array()
        .column(col)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn scale_column(m: &mut Matrix, col: usize, s: f64) {
    let mut arr = std::mem::replace(m, Matrix::zeros(0, 0)).into_array();
    arr.column_mut(col).mapv_inplace(|v| v * s);
    *m = Matrix::from_raw(arr);
}

/// Evens out each column's arbitrary scale split across the tensor-mode
/// factors (all three get the geometric-mean norm), rescaling coupled
/// factors so every reconstruction is unchanged. Alternating least squares
/// leaves this split to the trajectory; pinning it makes factor scales
/// comparable across runs, which the merging stage's scale averaging
/// relies on.
pub(crate) fn canonicalize_scales(f: &mut FactorSet) {
    for t in 0..f.rank() {
        let na = column_norm(&f.a, t);
        let nb = column_norm(&f.b, t);
        let nc = column_norm(&f.c, t);
        if na <= 0.0 || nb <= 0.0 || nc <= 0.0 {
            continue;
        }
        let target = (na * nb * nc).cbrt();
        scale_column(&mut f.a, t, target / na);
        scale_column(&mut f.b, t, target / nb);
        scale_column(&mut f.c, t, target / nc);
        if let Some(d) = f.d.as_mut() {
            scale_column(d, t, na / target);
        }
        if let Some(e) = f.e.as_mut() {
            scale_column(e, t, nb / target);
        }
        if let Some(g) = f.g.as_mut() {
            scale_column(g, t, nc / target);
        }
    }
}

/// Plain PARAFAC by alternating least squares. `B` and `C` start uniform
/// [0, 1) from the seeded generator; `A` is solved in the first
/// half-iteration. Returns the fitted factors and the objective trace.
pub fn parafac_als(x: &Tensor3, opts: &SolverOptions) -> Result<(FactorSet, Vec<f64>)> {
    opts.validate()?;
    let data = CoupledData::tensor_only(x.clone());
    cmtf_als_inner(&data, opts)
}

/// Coupled alternating least squares. `A`, `B`, `C` are initialized by a
/// PARAFAC fit of the tensor, coupled factors by their closed-form least
/// squares given that fit; the main loop then alternates exact block
/// updates. With no side matrices this is exactly [`parafac_als`].
pub fn cmtf_als(data: &CoupledData, opts: &SolverOptions) -> Result<(FactorSet, Vec<f64>)> {
    opts.validate()?;
    cmtf_als_inner(data, opts)
}

fn cmtf_als_inner(data: &CoupledData, opts: &SolverOptions) -> Result<(FactorSet, Vec<f64>)> {
    let (i_dim, j_dim, k_dim) = data.x.dims();
    if i_dim == 0 || j_dim == 0 || k_dim == 0 {
        return Err(Error::InvalidArgument("empty tensor".into()));
    }

    // PARAFAC initialization of the tensor factors.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let b0 = random_factor(&mut rng, j_dim, opts.rank);
    let c0 = random_factor(&mut rng, k_dim, opts.rank);
    let a0 = Matrix::zeros(i_dim, opts.rank);

    let tensor_data = CoupledData::tensor_only(data.x.clone());
    let tensor_pre = Precomputed::build(&tensor_data)?;
    let mut init = FactorSet::new(a0, b0, c0, None, None, None)?;
    // A is solved before the first objective is ever read, so the zero
    // placeholder never influences the fit.
    update_tensor_factor(&tensor_data, &tensor_pre, &mut init, 0, &opts.pinv)?;
    let (parafac, parafac_trace) = iterate(&tensor_data, &tensor_pre, init, opts)?;

    if !data.has_sides() {
        let mut parafac = parafac;
        canonicalize_scales(&mut parafac);
        return Ok((parafac, parafac_trace));
    }

    let mut f = parafac;
    f.d = match data.side(0) {
        Some(y) => Some(init_coupled_factor(y, &f.a, &opts.pinv)?),
        None => None,
    };
    f.e = match data.side(1) {
        Some(y) => Some(init_coupled_factor(y, &f.b, &opts.pinv)?),
        None => None,
    };
    f.g = match data.side(2) {
        Some(y) => Some(init_coupled_factor(y, &f.c, &opts.pinv)?),
        None => None,
    };

    let pre = Precomputed::build(data)?;
    let (mut fitted, trace) = iterate(data, &pre, f, opts)?;
    canonicalize_scales(&mut fitted);
    Ok((fitted, trace))
}

#[cfg(test)]
pub(crate) fn single_sweep_for_tests(data: &CoupledData, f: &mut FactorSet, opts: &PinvOptions) -> Result<()> {
    let pre = Precomputed::build(data)?;
    cmtf_sweep(data, &pre, f, opts)
}

#[cfg(test)]
pub(crate) fn single_a_update_for_tests(data: &CoupledData, f: &mut FactorSet, opts: &PinvOptions) -> Result<()> {
    let pre = Precomputed::build(data)?;
    update_tensor_factor(data, &pre, f, 0, opts)
}
