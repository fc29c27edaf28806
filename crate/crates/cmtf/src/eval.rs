//! Evaluation metrics (relative cost, relative sparsity, reconstruction
//! SNR) and the prediction-by-projection task with its leave-two-out
//! pairwise classification scheme.

use crate::als::{objective, FactorSet};
use crate::driver::{turbo_cmtf, TurboOptions};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{CoupledData, Matrix, Tensor3};

/// Entries below this magnitude count as zero when measuring sparsity.
pub const NNZ_TOL: f64 = 1e-12;

/// Guard against division by a vanishing denominator.
const DENOM_FLOOR: f64 = 1e-300;

/// Headline metrics of a fast run against a baseline.
#[derive(Clone, Copy, Debug)]
pub struct MetricsReport {
    /// Fast-method model cost divided by the baseline's.
    pub relative_cost: f64,
    /// Baseline output nonzeros divided by the fast method's.
    pub relative_sparsity: f64,
    /// Reconstruction signal-to-noise ratio (infinite when identical).
    pub snr: f64,
    /// Fast wall clock divided by baseline wall clock (NaN when unknown).
    pub wall_clock_fraction: f64,
}

/// Objectives below this fraction of the data energy count as an exact fit
/// when forming the cost ratio.
pub const EXACT_FIT_FLOOR: f64 = 1e-12;

/// Model cost of the fast factors divided by the baseline's on the same
/// data. Both costs zero (below a floor relative to the data energy, so
/// that converged noiseless fits register as exact) gives 1; a zero
/// baseline with a nonzero fast cost gives infinity.
pub fn relative_cost(data: &CoupledData, f_fast: &FactorSet, f_base: &FactorSet) -> Result<f64> {
    let fast = objective(data, f_fast)?;
    let base = objective(data, f_base)?;
    let floor = (EXACT_FIT_FLOOR * data.energy()).max(DENOM_FLOOR);
    if base < floor {
        if fast < floor {
            Ok(1.0)
        } else {
            Ok(f64::INFINITY)
        }
    } else {
        Ok(fast / base)
    }
}

/// Total baseline nonzeros across all factor matrices divided by the fast
/// method's, counting magnitudes below [`NNZ_TOL`] as zero.
pub fn relative_sparsity(f_base: &FactorSet, f_fast: &FactorSet) -> Result<f64> {
    for (name, base, fast) in [
        ("a", Some(&f_base.a), Some(&f_fast.a)),
        ("b", Some(&f_base.b), Some(&f_fast.b)),
        ("c", Some(&f_base.c), Some(&f_fast.c)),
        ("d", f_base.d.as_ref(), f_fast.d.as_ref()),
        ("e", f_base.e.as_ref(), f_fast.e.as_ref()),
        ("g", f_base.g.as_ref(), f_fast.g.as_ref()),
    ] {
        match (base, fast) {
            (Some(x), Some(y)) if x.dims() == y.dims() => {}
            (None, None) => {}
            _ => {
                return Err(Error::DimMismatch(format!(
                    "factor {} differs between the two sets",
                    name
                )))
            }
        }
    }
    let base = f_base.nnz(NNZ_TOL);
    let fast = f_fast.nnz(NNZ_TOL);
    if fast == 0 {
        Ok(f64::INFINITY)
    } else {
        Ok(base as f64 / fast as f64)
    }
}

/// Signal-to-noise ratio of a reconstruction fitted with missing data
/// against one fitted with none: `||X_m||^2 / ||X_m - X_0||^2`.
pub fn snr(x_m: &Tensor3, x_0: &Tensor3) -> Result<f64> {
    if x_m.dims() != x_0.dims() {
        return Err(Error::DimMismatch(format!(
            "{:?} vs {:?}",
            x_m.dims(),
            x_0.dims()
        )));
    }
    let signal = x_m.frobenius_norm_sq();
    let m = x_m.dense_values();
    let z = x_0.dense_values();
    let noise: f64 = m
        .iter()
        .zip(z.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if noise < DENOM_FLOOR {
        Ok(f64::INFINITY)
    } else {
        Ok(signal / noise)
    }
}

/// Whether prediction applies the factor scale vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictScaling {
    /// `v = B diag(lb ∗ ld) D^T q`, consistent with the scaled model.
    Scaled,
    /// `v = B D^T q` on the raw factors.
    Unscaled,
}

/// Projects a side-matrix row vector `q` into the latent space through `D`
/// and expands it into the tensor's second mode through `B`.
pub fn predict_from_side(f: &FactorSet, q: &[f64], scaling: PredictScaling) -> Result<Vec<f64>> {
    let d = f.d.as_ref().ok_or(Error::MissingFactor("d"))?;
    if q.len() != d.rows() {
        return Err(Error::DimMismatch(format!(
            "query has length {}, coupled factor has {} rows",
            q.len(),
            d.rows()
        )));
    }
    let rank = f.rank();
    let mut latent = vec![0.0; rank];
    for t in 0..rank {
        let mut acc = 0.0;
        for (row, &qv) in q.iter().enumerate() {
            acc += d[(row, t)] * qv;
        }
        if scaling == PredictScaling::Scaled {
            acc *= f.lambda_b[t] * f.lambda_d[t];
        }
        latent[t] = acc;
    }
    let b = &f.b;
    let mut out = vec![0.0; b.rows()];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (t, &l) in latent.iter().enumerate() {
            acc += b[(j, t)] * l;
        }
        *o = acc;
    }
    Ok(out)
}

fn mean_centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
    v.iter().map(|x| x - mean).collect()
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The pairwise assignment rule on mean-centered vectors: the matched
/// pairing must be strictly closer than the crossed one; ties count as
/// incorrect.
pub fn pairwise_rule(v1: &[f64], v2: &[f64], p1: &[f64], p2: &[f64]) -> bool {
    let (v1, v2) = (mean_centered(v1), mean_centered(v2));
    let (p1, p2) = (mean_centered(p1), mean_centered(p2));
    let matched = l2_distance(&v1, &p1) + l2_distance(&v2, &p2);
    let crossed = l2_distance(&v1, &p2) + l2_distance(&v2, &p1);
    matched < crossed
}

const LOO_SOLVER_DOMAIN: u64 = 0x1001;
const LOO_SAMPLING_DOMAIN: u64 = 0x1002;

/// Leave-two-out evaluation: removes the pair of first-mode rows from the
/// tensor and its coupled matrix, refits, predicts both held-out
/// second-mode vectors from their side rows, and scores the pairwise rule
/// per third-mode slice. The 0/1 outcomes are averaged over `trials`
/// reseeded runs.
pub fn leave_two_out(
    data: &CoupledData,
    pair: (usize, usize),
    opts: &TurboOptions,
    trials: usize,
) -> Result<f64> {
    let (di, dj, dk) = data.x.dims();
    let (p1, p2) = pair;
    if p1 == p2 {
        return Err(Error::InvalidArgument("pair indices must differ".into()));
    }
    if p1 >= di || p2 >= di {
        return Err(Error::OutOfBounds(format!(
            "pair ({}, {}) outside first-mode dimension {}",
            p1, p2, di
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let y1 = data
        .side(0)
        .ok_or(Error::MissingFactor("d"))?;
    let rank = opts.solver.rank;
    if rank > di - 2 || rank > dj.min(dk) {
        return Err(Error::InvalidArgument(format!(
            "rank {} exceeds what the held-out data supports",
            rank
        )));
    }

    // Training data without the pair's rows.
    let keep: Vec<usize> = (0..di).filter(|&i| i != p1 && i != p2).collect();
    let x_train = Tensor3::from_fn((di - 2, dj, dk), |i, j, k| data.x.get(keep[i], j, k));
    let y_train = {
        let mut m = ndarray::Array2::zeros((di - 2, y1.cols()));
        for (r, &orig) in keep.iter().enumerate() {
            for c in 0..y1.cols() {
                m[(r, c)] = y1[(orig, c)];
            }
        }
        Matrix::from_raw(m)
    };
    let train = CoupledData::new(
        x_train,
        Some(y_train),
        data.side(1).cloned(),
        data.side(2).cloned(),
    )?;

    let q1: Vec<f64> = (0..y1.cols()).map(|c| y1[(p1, c)]).collect();
    let q2: Vec<f64> = (0..y1.cols()).map(|c| y1[(p2, c)]).collect();

    let mut correct = 0usize;
    let mut total = 0usize;
    for trial in 0..trials {
        let mut topts = *opts;
        topts.solver.seed = seeds::mix(opts.solver.seed, LOO_SOLVER_DOMAIN, trial as u64);
        topts.sampling.seed = seeds::mix(opts.sampling.seed, LOO_SAMPLING_DOMAIN, trial as u64);
        let (f, _) = turbo_cmtf(&train, None, &topts)?;
        let pred1 = predict_from_side(&f, &q1, PredictScaling::Scaled)?;
        let pred2 = predict_from_side(&f, &q2, PredictScaling::Scaled)?;
        for k in 0..dk {
            let v1: Vec<f64> = (0..dj).map(|j| data.x.get(p1, j, k)).collect();
            let v2: Vec<f64> = (0..dj).map(|j| data.x.get(p2, j, k)).collect();
            if pairwise_rule(&v1, &v2, &pred1, &pred2) {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
