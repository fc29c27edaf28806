//! Missing-data handling: binary observation masks, the masked objective,
//! and a weighted solver whose block least-squares are solved by
//! element-wise coordinate descent.
//!
//! A zero mask entry means "missing", which is not the same as observing a
//! zero: masked cells are excluded from every sum, never substituted.
//! Masking is implemented by selection (`if observed { x } else { 0 }`)
//! rather than multiplication, so arbitrary garbage at masked coordinates
//! can never leak into results.

use ndarray::{concatenate, Array2, Axis};

use crate::als::{init_coupled_factor, parafac_als, FactorSet, SolverOptions};
use crate::error::{Error, Result};
use crate::tensor::{khatri_rao, unfold, CoupledData, Matrix, Tensor3};

/// Coordinate-descent sweeps per block solve inside [`cmtf_wals`].
pub const DEFAULT_WLS_SWEEPS: usize = 10;

/// Denominators below this count as "no observed support".
const SUPPORT_FLOOR: f64 = 1e-300;

/// Binary observation masks for a coupled dataset: 1 marks an observed
/// entry, 0 a missing one. Side masks default to fully observed when
/// absent.
#[derive(Clone, Debug)]
pub struct WeightMask {
    pub w: Tensor3,
    sides: [Option<Matrix>; 3],
}

impl WeightMask {
    pub fn new(
        w: Tensor3,
        w1: Option<Matrix>,
        w2: Option<Matrix>,
        w3: Option<Matrix>,
    ) -> Result<Self> {
        for (_, _, _, v) in w.iter_stored() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "mask tensor holds non-binary value {}",
                    v
                )));
            }
        }
        let sides = [w1, w2, w3];
        for (m, side) in sides.iter().enumerate() {
            if let Some(mask) = side {
                if mask.as_array().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "mask for side matrix {} holds non-binary values",
                        m + 1
                    )));
                }
            }
        }
        Ok(WeightMask { w, sides })
    }

    /// Fully observed mask matching the data's shapes.
    pub fn all_observed(data: &CoupledData) -> Self {
        let w = Tensor3::from_fn(data.x.dims(), |_, _, _| 1.0);
        let sides = [0, 1, 2].map(|m| {
            data.side(m)
                .map(|y| Matrix::from_raw(Array2::ones((y.rows(), y.cols()))))
        });
        WeightMask { w, sides }
    }

    pub fn side(&self, m: usize) -> Option<&Matrix> {
        self.sides[m].as_ref()
    }

    /// Checks that every mask matches the data's shapes and that no side
    /// mask exists without its side matrix.
    pub fn validate_for(&self, data: &CoupledData) -> Result<()> {
        if self.w.dims() != data.x.dims() {
            return Err(Error::DimMismatch(format!(
                "mask tensor is {:?}, data tensor is {:?}",
                self.w.dims(),
                data.x.dims()
            )));
        }
        for m in 0..3 {
            match (self.sides[m].as_ref(), data.side(m)) {
                (Some(mask), Some(y)) => {
                    if mask.dims() != y.dims() {
                        return Err(Error::DimMismatch(format!(
                            "mask for side matrix {} is {:?}, matrix is {:?}",
                            m + 1,
                            mask.dims(),
                            y.dims()
                        )));
                    }
                }
                (Some(_), None) => {
                    return Err(Error::DimMismatch(format!(
                        "mask given for absent side matrix {}",
                        m + 1
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Fraction of observed tensor cells.
    pub fn observed_fraction(&self) -> f64 {
        let total = self.w.len();
        if total == 0 {
            return 1.0;
        }
        let observed = self
            .w
            .iter_stored()
            .filter(|&(_, _, _, v)| v != 0.0)
            .count();
        observed as f64 / total as f64
    }
}

fn select(x: f64, w: f64) -> f64 {
    if w != 0.0 {
        x
    } else {
        0.0
    }
}

/// Tensor with masked cells replaced by exact zeros.
fn select_tensor(x: &Tensor3, w: &Tensor3) -> Tensor3 {
    let xs = x.dense_values();
    let ws = w.dense_values();
    let values = xs
        .iter()
        .zip(ws.iter())
        .map(|(&x, &w)| select(x, w))
        .collect();
    Tensor3::dense(x.dims(), values).expect("dims preserved")
}

fn select_matrix(y: &Matrix, w: Option<&Matrix>) -> Matrix {
    match w {
        Some(w) => {
            let out = ndarray::Zip::from(y.as_array())
                .and(w.as_array())
                .map_collect(|&y, &w| select(y, w));
            Matrix::from_raw(out)
        }
        None => y.clone(),
    }
}

/// Squared model error summed over observed entries only, with the factor
/// set's scale vectors applied.
pub fn weighted_objective(data: &CoupledData, mask: &WeightMask, f: &FactorSet) -> Result<f64> {
    mask.validate_for(data)?;
    let recon = f.reconstruct_tensor()?;
    if recon.dims() != data.x.dims() {
        return Err(Error::DimMismatch(format!(
            "factors reconstruct {:?}, data tensor is {:?}",
            recon.dims(),
            data.x.dims()
        )));
    }
    let xs = data.x.dense_values();
    let ws = mask.w.dense_values();
    let rs = recon.dense_values();
    let mut total = 0.0;
    for idx in 0..xs.len() {
        if ws[idx] != 0.0 {
            let d = xs[idx] - rs[idx];
            total += d * d;
        }
    }
    let names = ["d", "e", "g"];
    for mode in 0..3 {
        if let Some(y) = data.side(mode) {
            if f.side_factor(mode).is_none() {
                return Err(Error::MissingFactor(names[mode]));
            }
            let recon = f.reconstruct_side(mode)?;
            match mask.side(mode) {
                Some(w) => {
                    for ((r, c), &wv) in w.as_array().indexed_iter() {
                        if wv != 0.0 {
                            let d = y[(r, c)] - recon[(r, c)];
                            total += d * d;
                        }
                    }
                }
                None => {
                    total += y
                        .as_array()
                        .iter()
                        .zip(recon.as_array().iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                }
            }
        }
    }
    Ok(total)
}

/// Closed-form scalar weighted least squares: minimizes
/// `|| w∗x - (w∗a) b ||` over the scalar `b`, returning 0 when the masked
/// `a` has no support.
pub fn scalar_wls(x: &[f64], a: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != a.len() || x.len() != w.len() {
        return Err(Error::DimMismatch(format!(
            "scalar_wls lengths differ: x={}, a={}, w={}",
            x.len(),
            a.len(),
            w.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        if w[i] != 0.0 {
            num += x[i] * a[i];
            den += a[i] * a[i];
        }
    }
    if den < SUPPORT_FLOOR {
        Ok(0.0)
    } else {
        Ok(num / den)
    }
}

/// Solves `min_B || W ∗ (X - A B^T) ||` by element-wise coordinate descent,
/// starting from `b_init` and sweeping coefficients in column-major `(f, j)`
/// order. Every coordinate update is the exact scalar minimizer, so the
/// masked objective never increases; sweeps stop at `tol` relative change
/// or `max_sweeps`.
pub fn wls_factor(
    x: &Matrix,
    w: &Matrix,
    a: &Matrix,
    b_init: &Matrix,
    tol: f64,
    max_sweeps: usize,
) -> Result<Matrix> {
    let (n, m) = x.dims();
    if w.dims() != (n, m) {
        return Err(Error::DimMismatch(format!(
            "weight matrix is {:?}, data is {:?}",
            w.dims(),
            x.dims()
        )));
    }
    if a.rows() != n {
        return Err(Error::DimMismatch(format!(
            "left factor has {} rows, data has {}",
            a.rows(),
            n
        )));
    }
    let rank = a.cols();
    if b_init.dims() != (m, rank) {
        return Err(Error::DimMismatch(format!(
            "initial factor is {:?}, expected ({}, {})",
            b_init.dims(),
            m,
            rank
        )));
    }

    let xa = x.as_array();
    let wa = w.as_array();
    let aa = a.as_array();
    let mut b = b_init.as_array().clone();

    // Masked residual R(:,j) = w_j ∗ x_j - sum_f (w_j ∗ a_f) B(j,f).
    let mut residual = Array2::zeros((n, m));
    for j in 0..m {
        for i in 0..n {
            if wa[(i, j)] != 0.0 {
                let mut fit = 0.0;
                for f in 0..rank {
                    fit += aa[(i, f)] * b[(j, f)];
                }
                residual[(i, j)] = xa[(i, j)] - fit;
            }
        }
    }
    let mut prev_obj: f64 = residual.iter().map(|r| r * r).sum();

    let mut partial = vec![0.0; n];
    let mut a_col = vec![0.0; n];
    let mut w_col = vec![0.0; n];
    for _ in 0..max_sweeps {
        for f in 0..rank {
            for j in 0..m {
                let old = b[(j, f)];
                for i in 0..n {
                    w_col[i] = wa[(i, j)];
                    a_col[i] = aa[(i, f)];
                    partial[i] = residual[(i, j)] + select(a_col[i], w_col[i]) * old;
                }
                let new = scalar_wls(&partial, &a_col, &w_col)?;
                if new != old {
                    b[(j, f)] = new;
                    for i in 0..n {
                        if w_col[i] != 0.0 {
                            residual[(i, j)] = partial[i] - a_col[i] * new;
                        }
                    }
                }
            }
        }
        let obj: f64 = residual.iter().map(|r| r * r).sum();
        let rel = if prev_obj > 0.0 {
            (prev_obj - obj).abs() / prev_obj
        } else {
            0.0
        };
        prev_obj = obj;
        if rel < tol {
            break;
        }
    }
    Ok(Matrix::from_raw(b))
}

/// Stacked data, mask, and left-factor blocks for one tensor-mode update.
struct WlsBlocks {
    x: [Matrix; 3],
    w: [Matrix; 3],
}

fn build_blocks(data: &CoupledData, mask: &WeightMask) -> Result<WlsBlocks> {
    let mut xs = Vec::with_capacity(3);
    let mut ws = Vec::with_capacity(3);
    for mode in 0..3 {
        let xt = unfold(&data.x, mode + 1)?.transpose();
        let wt = unfold(&mask.w, mode + 1)?.transpose();
        match data.side(mode) {
            Some(y) => {
                let w_side = match mask.side(mode) {
                    Some(w) => w.clone(),
                    None => Matrix::from_raw(Array2::ones((y.rows(), y.cols()))),
                };
                xs.push(Matrix::from_raw(
                    concatenate(Axis(0), &[xt.as_array().view(), y.as_array().t()])
                        .expect("column counts agree"),
                ));
                ws.push(Matrix::from_raw(
                    concatenate(Axis(0), &[wt.as_array().view(), w_side.as_array().t()])
                        .expect("column counts agree"),
                ));
            }
            None => {
                xs.push(xt);
                ws.push(wt);
            }
        }
    }
    let mut xi = xs.into_iter();
    let mut wi = ws.into_iter();
    Ok(WlsBlocks {
        x: [xi.next().unwrap(), xi.next().unwrap(), xi.next().unwrap()],
        w: [wi.next().unwrap(), wi.next().unwrap(), wi.next().unwrap()],
    })
}

/// Weighted coupled ALS: the alternating structure of the unweighted solver
/// with every block least-squares replaced by masked coordinate descent.
/// Returns the fitted factors and the weighted-objective trace.
pub fn cmtf_wals(
    data: &CoupledData,
    mask: &WeightMask,
    opts: &SolverOptions,
) -> Result<(FactorSet, Vec<f64>)> {
    opts.validate()?;
    mask.validate_for(data)?;

    // Initialization sees only observed entries: masked cells are zeroed
    // before the PARAFAC bootstrap and the coupled closed-form solves.
    let x_sel = select_tensor(&data.x, &mask.w);
    let (mut f, _) = parafac_als(&x_sel, opts)?;
    let y_sel: [Option<Matrix>; 3] =
        [0, 1, 2].map(|m| data.side(m).map(|y| select_matrix(y, mask.side(m))));
    if let Some(y) = &y_sel[0] {
        f.d = Some(init_coupled_factor(y, &f.a, &opts.pinv)?);
    }
    if let Some(y) = &y_sel[1] {
        f.e = Some(init_coupled_factor(y, &f.b, &opts.pinv)?);
    }
    if let Some(y) = &y_sel[2] {
        f.g = Some(init_coupled_factor(y, &f.c, &opts.pinv)?);
    }

    let blocks = build_blocks(data, mask)?;
    let rank = opts.rank;
    let empty = Matrix::zeros(0, rank);

    let mut trace = vec![weighted_objective(data, mask, &f)?];
    for iter in 1..=opts.max_iters {
        for mode in 0..3 {
            let (first, second) = match mode {
                0 => (&f.b, &f.c),
                1 => (&f.c, &f.a),
                _ => (&f.a, &f.b),
            };
            let kr = khatri_rao(first, second)?;
            let coupled = if data.side(mode).is_some() {
                f.side_factor(mode).unwrap_or(&empty)
            } else {
                &empty
            };
            let left = if coupled.rows() > 0 {
                Matrix::from_raw(
                    concatenate(Axis(0), &[kr.as_array().view(), coupled.as_array().view()])
                        .expect("column counts agree"),
                )
            } else {
                kr
            };
            let current = f.tensor_factor(mode);
            let updated = wls_factor(
                &blocks.x[mode],
                &blocks.w[mode],
                &left,
                current,
                opts.rel_change_tol,
                DEFAULT_WLS_SWEEPS,
            )?;
            match mode {
                0 => f.a = updated,
                1 => f.b = updated,
                _ => f.c = updated,
            }
        }
        for mode in 0..3 {
            if let Some(y) = data.side(mode) {
                let w_side = match mask.side(mode) {
                    Some(w) => w.clone(),
                    None => Matrix::from_raw(Array2::ones((y.rows(), y.cols()))),
                };
                let row_factor = f.tensor_factor(mode).clone();
                let current = f.side_factor(mode).expect("initialized above").clone();
                let updated = wls_factor(
                    y,
                    &w_side,
                    &row_factor,
                    &current,
                    opts.rel_change_tol,
                    DEFAULT_WLS_SWEEPS,
                )?;
                match mode {
                    0 => f.d = Some(updated),
                    1 => f.e = Some(updated),
                    _ => f.g = Some(updated),
                }
            }
        }
        let obj = weighted_objective(data, mask, &f)?;
        if !obj.is_finite() {
            return Err(Error::Numeric(format!(
                "weighted objective became {} at iteration {}",
                obj, iter
            )));
        }
        let prev = *trace.last().unwrap();
        trace.push(obj);
        let rel = if prev > 0.0 { (prev - obj).abs() / prev } else { 0.0 };
        if rel < opts.rel_change_tol {
            break;
        }
    }
    crate::als::canonicalize_scales(&mut f);
    Ok((f, trace))
}
