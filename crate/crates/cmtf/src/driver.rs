//! End-to-end sampled CMTF: draw biased samples with a shared common block,
//! fit the core solver to each sample (optionally in parallel), redistribute
//! the partial factors to the full index space, normalize their common
//! parts, and merge.
//!
//! Repetitions are data-parallel over read-only input; every RNG stream is
//! keyed by repetition index, never by execution order, so the output is
//! bitwise identical for any level of parallelism.

use std::time::Instant;

use rayon::prelude::*;

use crate::als::{cmtf_als, objective, FactorSet, SolverOptions};
use crate::error::{Error, Result};
use crate::merge::{average_lambdas, merge, normalize_common, Ambiguity, PartialFactor};
use crate::missing::{cmtf_wals, weighted_objective, WeightMask};
use crate::sampler::{
    density_profile, draw_common, draw_repetition, extract, SampleSpec, SamplingOptions,
};
use crate::tensor::{CoupledData, Matrix};

/// Which solver fits each sampled subproblem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoreSolver {
    /// Plain coupled alternating least squares.
    Als,
    /// Weighted (missing-data) coupled ALS.
    Wals,
}

/// Options for the sampled pipeline.
#[derive(Clone, Copy, Debug)]
pub struct TurboOptions {
    pub solver: SolverOptions,
    pub sampling: SamplingOptions,
    /// Maximum number of repetitions fitted concurrently.
    pub parallel: usize,
    pub core: CoreSolver,
}

impl Default for TurboOptions {
    fn default() -> Self {
        TurboOptions {
            solver: SolverOptions::default(),
            sampling: SamplingOptions::default(),
            parallel: std::thread::available_parallelism().map_or(1, |n| n.get()),
            core: CoreSolver::Als,
        }
    }
}

impl TurboOptions {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.sampling.validate()?;
        if self.parallel < 1 {
            return Err(Error::InvalidArgument("parallel must be >= 1".into()));
        }
        Ok(())
    }
}

/// A merge-stage flag tagged with the factor it occurred in.
#[derive(Clone, Debug)]
pub struct FactorAmbiguity {
    pub factor: &'static str,
    pub ambiguity: Ambiguity,
}

/// A column whose common part was numerically zero at normalization time.
#[derive(Clone, Debug)]
pub struct DegenerateColumn {
    pub factor: &'static str,
    pub repetition: usize,
    pub column: usize,
}

/// Everything observable about one pipeline run.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    /// Objective trace of each repetition's core solve (on its sample).
    pub rep_traces: Vec<Vec<f64>>,
    /// Sampled tensor dimensions per repetition.
    pub rep_dims: Vec<(usize, usize, usize)>,
    /// Wall-clock seconds: sampling/extraction, fitting, merging.
    pub phase_seconds: [f64; 3],
    pub ambiguities: Vec<FactorAmbiguity>,
    pub degenerate_columns: Vec<DegenerateColumn>,
    /// Cost of the merged model on the full data (weighted when a mask was
    /// supplied).
    pub final_objective: f64,
}

impl RunReport {
    pub fn total_seconds(&self) -> f64 {
        self.phase_seconds.iter().sum()
    }
}

struct RepFit {
    factors: FactorSet,
    trace: Vec<f64>,
    dims: (usize, usize, usize),
}

/// Scatters a sampled factor back to the full index space: row `r` of the
/// sample lands in row `rows[r]`, everything else stays zero.
fn redistribute(sub: &Matrix, rows: &[usize], full_rows: usize) -> Matrix {
    let mut out = ndarray::Array2::zeros((full_rows, sub.cols()));
    for (r, &row) in rows.iter().enumerate() {
        for c in 0..sub.cols() {
            out[(row, c)] = sub[(r, c)];
        }
    }
    Matrix::from_raw(out)
}

/// Restricts a weight mask to the sampled index sets, mirroring the data
/// extraction.
fn extract_mask(mask: &WeightMask, data: &CoupledData, spec: &SampleSpec) -> Result<WeightMask> {
    let as_data = CoupledData::new(
        mask.w.clone(),
        mask.side(0).cloned(),
        mask.side(1).cloned(),
        mask.side(2).cloned(),
    )?;
    // A side mask may be absent while the side matrix is present; extraction
    // must still know the side's column sample, so the effective mask side
    // is materialized only when it exists.
    let sub = extract(&as_data, spec)?;
    let _ = data;
    WeightMask::new(
        sub.x.clone(),
        sub.side(0).cloned(),
        sub.side(1).cloned(),
        sub.side(2).cloned(),
    )
}

/// Runs the sampled pipeline and returns the merged factor set (with its
/// scale vectors) plus a run report.
pub fn turbo_cmtf(
    data: &CoupledData,
    mask: Option<&WeightMask>,
    opts: &TurboOptions,
) -> Result<(FactorSet, RunReport)> {
    opts.validate()?;
    if mask.is_some() && opts.core != CoreSolver::Wals {
        return Err(Error::InvalidArgument(
            "a weight mask requires the weighted core solver".into(),
        ));
    }
    if let Some(m) = mask {
        m.validate_for(data)?;
    }
    let rank = opts.solver.rank;
    let r = opts.sampling.r;

    // Phase 1: densities, common block, per-repetition samples.
    let t0 = Instant::now();
    let dp = density_profile(data);
    let common = draw_common(&dp, &opts.sampling, rank)?;
    let mut specs = Vec::with_capacity(r);
    let mut samples = Vec::with_capacity(r);
    let mut sample_masks = Vec::with_capacity(r);
    for rep in 0..r {
        let spec = draw_repetition(&dp, &common, &opts.sampling, rank, rep)?;
        for m in 0..3 {
            debug_assert_eq!(spec.tensor_modes[m].common, common.tensor_modes[m].common);
        }
        samples.push(extract(data, &spec)?);
        sample_masks.push(match mask {
            Some(mask) => Some(extract_mask(mask, data, &spec)?),
            None => None,
        });
        specs.push(spec);
    }
    let phase1 = t0.elapsed().as_secs_f64();

    // Phase 2: fit the core solver per repetition. Repetition `rep` uses
    // solver seed `seed + rep`, so a single degenerate repetition
    // reproduces the plain solver exactly.
    let t1 = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {}", e)))?;
    let fits: Result<Vec<RepFit>> = pool.install(|| {
        samples
            .par_iter()
            .zip(sample_masks.par_iter())
            .enumerate()
            .map(|(rep, (sample, sample_mask))| {
                let mut sopts = opts.solver;
                sopts.seed = opts.solver.seed.wrapping_add(rep as u64);
                let fit = match opts.core {
                    CoreSolver::Als => cmtf_als(sample, &sopts),
                    CoreSolver::Wals => {
                        let owned;
                        let m = match sample_mask {
                            Some(m) => m,
                            None => {
                                owned = WeightMask::all_observed(sample);
                                &owned
                            }
                        };
                        cmtf_wals(sample, m, &sopts)
                    }
                };
                match fit {
                    Ok((factors, trace)) => Ok(RepFit {
                        factors,
                        trace,
                        dims: sample.x.dims(),
                    }),
                    Err(e) => Err(Error::RepetitionFailed {
                        rep,
                        source: Box::new(e),
                    }),
                }
            })
            .collect()
    });
    let fits = fits?;
    let phase2 = t1.elapsed().as_secs_f64();

    // Phase 3: redistribute, normalize common parts, merge, average scales.
    let t2 = Instant::now();
    let dims = data.x.dims();
    let mut ambiguities = Vec::new();
    let mut degenerate = Vec::new();

    struct Slot<'a> {
        name: &'static str,
        full_rows: usize,
        rows_per_rep: Vec<Vec<usize>>,
        common: &'a [usize],
        subs: Vec<Option<&'a Matrix>>,
    }

    let tensor_rows = [dims.0, dims.1, dims.2];
    let mut slots = Vec::new();
    for (m, name) in ["A", "B", "C"].into_iter().enumerate() {
        slots.push(Slot {
            name,
            full_rows: tensor_rows[m],
            rows_per_rep: specs.iter().map(|s| s.tensor_modes[m].union()).collect(),
            common: &common.tensor_modes[m].common,
            subs: fits.iter().map(|f| Some(f.factors.tensor_factor(m))).collect(),
        });
    }
    for (m, name) in ["D", "E", "G"].into_iter().enumerate() {
        if let Some(y) = data.side(m) {
            let common_side = common.side_cols[m]
                .as_ref()
                .map(|s| s.common.as_slice())
                .unwrap_or(&[]);
            slots.push(Slot {
                name,
                full_rows: y.cols(),
                rows_per_rep: specs
                    .iter()
                    .map(|s| {
                        s.side_cols[m]
                            .as_ref()
                            .map(|c| c.union())
                            .unwrap_or_else(|| (0..y.cols()).collect())
                    })
                    .collect(),
                common: common_side,
                subs: fits
                    .iter()
                    .map(|f| f.factors.side_factor(m))
                    .collect(),
            });
        }
    }

    // Redistribute and normalize every factor of every repetition.
    let mut norm_matrices: Vec<Vec<Matrix>> = Vec::with_capacity(slots.len());
    let mut norm_lambdas: Vec<Vec<Vec<f64>>> = Vec::with_capacity(slots.len());
    for slot in &slots {
        let mut mats = Vec::with_capacity(r);
        let mut lams = Vec::with_capacity(r);
        for rep in 0..r {
            let sub = slot.subs[rep].ok_or(Error::MissingFactor(slot.name))?;
            let full = redistribute(sub, &slot.rows_per_rep[rep], slot.full_rows);
            let (matrix, lambda, flagged) = if slot.common.is_empty() {
                // No common block (p = 0): scales stay at one and merging
                // has nothing to align on.
                let f = full.cols();
                (full, vec![1.0; f], Vec::new())
            } else {
                normalize_common(&full, slot.common)?
            };
            for col in flagged {
                degenerate.push(DegenerateColumn {
                    factor: slot.name,
                    repetition: rep,
                    column: col,
                });
            }
            mats.push(matrix);
            lams.push(lambda);
        }
        norm_matrices.push(mats);
        norm_lambdas.push(lams);
    }

    // Rebalance each repetition's scale split before averaging: the split
    // of a component's scale across the three tensor-mode lambdas is an
    // artifact of that repetition's sample, while their product is not.
    // Setting all three to the geometric mean (and compensating the
    // coupled-factor lambdas) leaves every repetition's reconstruction
    // unchanged and makes the cross-repetition average meaningful.
    let slot_index = |name: &str| slots.iter().position(|s| s.name == name);
    for rep in 0..r {
        for f in 0..rank {
            let la = norm_lambdas[0][rep][f];
            let lb = norm_lambdas[1][rep][f];
            let lc = norm_lambdas[2][rep][f];
            let gmean = (la * lb * lc).cbrt();
            if !(gmean > 0.0) {
                continue;
            }
            for (side, tensor_slot) in [("D", 0usize), ("E", 1), ("G", 2)] {
                if let Some(si) = slot_index(side) {
                    let lt = norm_lambdas[tensor_slot][rep][f];
                    norm_lambdas[si][rep][f] *= lt / gmean;
                }
            }
            norm_lambdas[0][rep][f] = gmean;
            norm_lambdas[1][rep][f] = gmean;
            norm_lambdas[2][rep][f] = gmean;
        }
    }

    let mut merged: Vec<(&'static str, Matrix, Vec<f64>)> = Vec::new();
    for (si, slot) in slots.iter().enumerate() {
        let partials: Vec<PartialFactor> = (0..r)
            .map(|rep| PartialFactor {
                matrix: norm_matrices[si][rep].clone(),
                common_indices: slot.common.to_vec(),
                lambda: norm_lambdas[si][rep].clone(),
            })
            .collect();
        let outcome = merge(&partials)?;
        for amb in outcome.ambiguities {
            ambiguities.push(FactorAmbiguity {
                factor: slot.name,
                ambiguity: amb,
            });
        }
        let aligned: Vec<Vec<f64>> = partials
            .iter()
            .zip(&outcome.assignments)
            .map(|(p, asg)| crate::merge::align_lambda(&p.lambda, asg))
            .collect();
        let lambda = average_lambdas(&aligned)?;
        merged.push((slot.name, outcome.matrix, lambda));
    }

    let take = |name: &str| -> Option<(Matrix, Vec<f64>)> {
        merged
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, m, l)| (m.clone(), l.clone()))
    };
    let (a, la) = take("A").expect("tensor factors always merged");
    let (b, lb) = take("B").expect("tensor factors always merged");
    let (c, lc) = take("C").expect("tensor factors always merged");
    let d = take("D");
    let e = take("E");
    let g = take("G");

    let mut factors = FactorSet::new(
        a,
        b,
        c,
        d.as_ref().map(|(m, _)| m.clone()),
        e.as_ref().map(|(m, _)| m.clone()),
        g.as_ref().map(|(m, _)| m.clone()),
    )?;
    factors.lambda_a = la;
    factors.lambda_b = lb;
    factors.lambda_c = lc;
    if let Some((_, l)) = d {
        factors.lambda_d = l;
    }
    if let Some((_, l)) = e {
        factors.lambda_e = l;
    }
    if let Some((_, l)) = g {
        factors.lambda_g = l;
    }

    let final_objective = match mask {
        Some(m) => weighted_objective(data, m, &factors)?,
        None => objective(data, &factors)?,
    };
    let phase3 = t2.elapsed().as_secs_f64();

    let report = RunReport {
        rep_traces: fits.iter().map(|f| f.trace.clone()).collect(),
        rep_dims: fits.iter().map(|f| f.dims).collect(),
        phase_seconds: [phase1, phase2, phase3],
        ambiguities,
        degenerate_columns: degenerate,
        final_objective,
    };
    Ok((factors, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_raw(Array2::from_shape_fn((r, c), |_| rng.random::<f64>()))
    }

    fn planted(seed: u64, dims: (usize, usize, usize), side: Option<usize>) -> CoupledData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, dims.0, 2);
        let b = random_matrix(&mut rng, dims.1, 2);
        let c = random_matrix(&mut rng, dims.2, 2);
        let d = side.map(|n| random_matrix(&mut rng, n, 2));
        let f = FactorSet::new(a, b, c, d, None, None).unwrap();
        let x = f.reconstruct_tensor().unwrap();
        let y1 = f.d.as_ref().map(|_| f.reconstruct_side(0).unwrap());
        CoupledData::new(x, y1, None, None).unwrap()
    }

    fn degenerate_opts(seed: u64) -> TurboOptions {
        TurboOptions {
            solver: SolverOptions {
                rank: 2,
                max_iters: 40,
                seed,
                ..Default::default()
            },
            sampling: SamplingOptions {
                s_tensor: [1.0; 3],
                s_side: [1.0; 3],
                p: 0.0,
                r: 1,
                seed,
            },
            parallel: 1,
            core: CoreSolver::Als,
        }
    }

    #[test]
    fn degenerate_sampling_equals_plain_solver() {
        let data = planted(70, (8, 7, 6), Some(5));
        let opts = degenerate_opts(123);
        let (turbo_f, report) = turbo_cmtf(&data, None, &opts).unwrap();
        let (als_f, als_trace) = cmtf_als(&data, &opts.solver).unwrap();
        assert_eq!(turbo_f, als_f);
        assert_eq!(report.rep_traces, vec![als_trace]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let data = planted(71, (4, 4, 4), None);
        let mut opts = degenerate_opts(1);
        opts.sampling.r = 0;
        assert!(turbo_cmtf(&data, None, &opts).is_err());
        let mut opts = degenerate_opts(1);
        opts.parallel = 0;
        assert!(turbo_cmtf(&data, None, &opts).is_err());
        // Mask with the unweighted core is rejected.
        let opts = degenerate_opts(1);
        let mask = WeightMask::all_observed(&data);
        assert!(turbo_cmtf(&data, Some(&mask), &opts).is_err());
    }

    #[test]
    fn outputs_identical_across_parallelism() {
        let data = planted(72, (18, 16, 14), Some(8));
        let mut opts = TurboOptions {
            solver: SolverOptions {
                rank: 2,
                max_iters: 30,
                seed: 5,
                ..Default::default()
            },
            sampling: SamplingOptions {
                s_tensor: [2.0; 3],
                s_side: [1.0; 3],
                p: 0.4,
                r: 4,
                seed: 5,
            },
            parallel: 1,
            core: CoreSolver::Als,
        };
        let (f1, _) = turbo_cmtf(&data, None, &opts).unwrap();
        opts.parallel = 4;
        let (f4, _) = turbo_cmtf(&data, None, &opts).unwrap();
        assert_eq!(f1, f4);
    }

    #[test]
    fn unsampled_rows_are_exactly_zero() {
        let data = planted(73, (20, 18, 16), Some(10));
        let opts = TurboOptions {
            solver: SolverOptions {
                rank: 2,
                max_iters: 25,
                seed: 9,
                ..Default::default()
            },
            sampling: SamplingOptions {
                s_tensor: [4.0; 3],
                s_side: [2.0; 3],
                p: 0.5,
                r: 3,
                seed: 9,
            },
            parallel: 1,
            core: CoreSolver::Als,
        };
        let (f, _) = turbo_cmtf(&data, None, &opts).unwrap();

        // Recompute the union of sampled rows independently.
        let dp = density_profile(&data);
        let common = draw_common(&dp, &opts.sampling, 2).unwrap();
        let mut sampled = vec![false; 20];
        let mut total_rows = 0usize;
        for rep in 0..3 {
            let spec = draw_repetition(&dp, &common, &opts.sampling, 2, rep).unwrap();
            for m in 0..3 {
                assert_eq!(spec.tensor_modes[m].common, common.tensor_modes[m].common);
            }
            let union = spec.tensor_modes[0].union();
            total_rows += union.len();
            for i in union {
                sampled[i] = true;
            }
        }
        for i in 0..20 {
            if !sampled[i] {
                for c in 0..2 {
                    assert_eq!(f.a[(i, c)], 0.0, "row {} should be zero", i);
                }
            }
        }
        let nonzeros = f.a.as_array().iter().filter(|&&v| v != 0.0).count();
        assert!(nonzeros <= total_rows * 2);
    }

    #[test]
    fn report_objective_matches_recomputation() {
        let data = planted(74, (12, 11, 10), Some(6));
        let opts = TurboOptions {
            solver: SolverOptions {
                rank: 2,
                max_iters: 30,
                seed: 2,
                ..Default::default()
            },
            sampling: SamplingOptions {
                s_tensor: [2.0; 3],
                s_side: [1.0; 3],
                p: 0.4,
                r: 2,
                seed: 2,
            },
            parallel: 2,
            core: CoreSolver::Als,
        };
        let (f, report) = turbo_cmtf(&data, None, &opts).unwrap();
        let recomputed = objective(&data, &f).unwrap();
        assert!((report.final_objective - recomputed).abs() <= 1e-10 * recomputed.max(1.0));
        assert_eq!(report.rep_traces.len(), 2);
        assert_eq!(report.rep_dims.len(), 2);
    }

    #[test]
    fn weighted_core_runs_with_extracted_masks() {
        let data = planted(75, (10, 9, 8), Some(5));
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = crate::tensor::Tensor3::from_fn((10, 9, 8), |_, _, _| {
            if rng.random::<f64>() < 0.85 {
                1.0
            } else {
                0.0
            }
        });
        let mask = WeightMask::new(w, None, None, None).unwrap();
        let opts = TurboOptions {
            solver: SolverOptions {
                rank: 2,
                max_iters: 25,
                seed: 3,
                ..Default::default()
            },
            sampling: SamplingOptions {
                s_tensor: [2.0; 3],
                s_side: [1.0; 3],
                p: 0.4,
                r: 2,
                seed: 3,
            },
            parallel: 1,
            core: CoreSolver::Wals,
        };
        let (f, report) = turbo_cmtf(&data, Some(&mask), &opts).unwrap();
        let recomputed = weighted_objective(&data, &mask, &f).unwrap();
        assert!((report.final_objective - recomputed).abs() <= 1e-10 * recomputed.max(1.0));
    }

    #[test]
    fn repetition_failure_is_attributed() {
        // Values around 1e200 overflow the squared objective to infinity,
        // which every repetition's solver reports; the error must carry the
        // repetition index.
        let x = crate::tensor::Tensor3::from_fn((4, 4, 4), |_, _, _| 1e200);
        let data = CoupledData::tensor_only(x);
        let opts = TurboOptions {
            solver: SolverOptions {
                rank: 2,
                max_iters: 5,
                seed: 1,
                ..Default::default()
            },
            sampling: SamplingOptions {
                s_tensor: [2.0; 3],
                p: 0.4,
                r: 2,
                seed: 1,
                ..Default::default()
            },
            parallel: 1,
            core: CoreSolver::Als,
        };
        match turbo_cmtf(&data, None, &opts) {
            Err(Error::RepetitionFailed { rep, source }) => {
                assert!(rep < 2);
                assert!(source.is_numeric(), "source: {}", source);
            }
            other => panic!("expected repetition failure, got {:?}", other.map(|_| ())),
        }
    }
}
