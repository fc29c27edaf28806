//! Density-biased index sampling: marginal density vectors, a common index
//! block shared by all repetitions, per-repetition fresh blocks, and
//! coupled sub-dataset extraction.
//!
//! Coupled modes always reuse the tensor-mode index set, so the coupling
//! survives sampling. All draws are reproducible: streams are keyed by
//! (seed, phase, mode, repetition), never by execution order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{CoupledData, Matrix, Tensor3};

/// Per-index marginal absolute sums: tensor-mode densities fold in the
/// coupled side matrix, uncoupled matrix modes get their own vectors.
#[derive(Clone, Debug)]
pub struct DensityProfile {
    /// Tensor mode densities; `tensor[0][i] = sum |X(i,:,:)| + sum |Y1(i,:)|`.
    pub tensor: [Vec<f64>; 3],
    /// Uncoupled matrix-mode densities; `side[0][j] = sum |Y1(:,j)|`.
    pub side: [Option<Vec<f64>>; 3],
}

/// One sampled index set: a block common to all repetitions plus a fresh
/// block disjoint from it. Both are sorted ascending.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexSample {
    pub common: Vec<usize>,
    pub fresh: Vec<usize>,
}

impl IndexSample {
    /// Sorted union of the common and fresh blocks.
    pub fn union(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .common
            .iter()
            .chain(self.fresh.iter())
            .copied()
            .collect();
        all.sort_unstable();
        all
    }

    pub fn len(&self) -> usize {
        self.common.len() + self.fresh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Index sets for one repetition: one per tensor mode (reused by the
/// coupled side-matrix rows) and one per present uncoupled matrix mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    pub tensor_modes: [IndexSample; 3],
    pub side_cols: [Option<IndexSample>; 3],
}

/// Sampling controls: per-mode reduction factors, the common fraction,
/// repetition count, and the master seed.
#[derive(Clone, Copy, Debug)]
pub struct SamplingOptions {
    /// Tensor-mode sampling factors; a mode keeps about `dim / s` indices.
    pub s_tensor: [f64; 3],
    /// Sampling factors for the uncoupled mode of each side matrix.
    pub s_side: [f64; 3],
    /// Fraction of each sample shared by every repetition, in [0, 1).
    pub p: f64,
    /// Number of sampling repetitions.
    pub r: usize,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            s_tensor: [1.0; 3],
            s_side: [1.0; 3],
            p: 0.35,
            r: 1,
            seed: 0,
        }
    }
}

impl SamplingOptions {
    pub fn validate(&self) -> Result<()> {
        for s in self.s_tensor.iter().chain(self.s_side.iter()) {
            if !(*s >= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "sampling factor must be >= 1, got {}",
                    s
                )));
            }
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::InvalidArgument(format!(
                "common fraction p must lie in [0, 1), got {}",
                self.p
            )));
        }
        if self.r < 1 {
            return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Target sample size for one mode: about `dim / s`, never below the rank
/// (so subproblems stay solvable), never above the dimension.
pub fn target_size(dim: usize, s: f64, rank: usize) -> usize {
    let base = (dim as f64 / s).round() as usize;
    base.max(rank).max(1).min(dim)
}

fn common_size(total: usize, p: f64) -> usize {
    if p == 0.0 {
        0
    } else {
        ((p * total as f64).ceil() as usize).min(total)
    }
}

/// Marginal absolute sums: tensor modes sum `|X|` over the other two modes
/// plus `|Y_m|` over its uncoupled mode; uncoupled matrix modes sum `|Y_m|`
/// over the coupled mode.
pub fn density_profile(data: &CoupledData) -> DensityProfile {
    let (di, dj, dk) = data.x.dims();
    let mut tensor = [vec![0.0; di], vec![0.0; dj], vec![0.0; dk]];
    for (i, j, k, v) in data.x.iter_stored() {
        let a = v.abs();
        tensor[0][i] += a;
        tensor[1][j] += a;
        tensor[2][k] += a;
    }
    let mut side: [Option<Vec<f64>>; 3] = [None, None, None];
    for mode in 0..3 {
        if let Some(y) = data.side(mode) {
            let mut cols = vec![0.0; y.cols()];
            for ((r, c), &v) in y.as_array().indexed_iter() {
                tensor[mode][r] += v.abs();
                cols[c] += v.abs();
            }
            side[mode] = Some(cols);
        }
    }
    DensityProfile { tensor, side }
}

/// Draws `k` indices without replacement, biased by the (non-negative)
/// weights, by successive draws with renormalization. Falls back to uniform
/// draws once the remaining weight mass is zero.
fn weighted_sample_without_replacement(
    weights: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
    what: &str,
) -> Vec<usize> {
    let mut alive: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let k = k.min(alive.len());
    let mut chosen = Vec::with_capacity(k);
    let mut warned = false;
    for _ in 0..k {
        let total: f64 = alive.iter().map(|&(_, w)| w).sum();
        let pos = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = alive.len() - 1;
            for (idx, &(_, w)) in alive.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = idx;
                    break;
                }
            }
            pick
        } else {
            if !warned {
                log::warn!("degenerate (all-zero) density for {}; sampling uniformly", what);
                warned = true;
            }
            rng.random_range(0..alive.len())
        };
        chosen.push(alive.remove(pos).0);
    }
    chosen.sort_unstable();
    chosen
}

const PHASE_COMMON: u64 = 0x100;
const PHASE_FRESH: u64 = 0x200;

/// Slot 0-2: tensor modes; slot 3-5: uncoupled matrix modes.
fn slot_rng(opts: &SamplingOptions, phase: u64, slot: usize, rep: usize) -> ChaCha8Rng {
    seeds::rng_for(opts.seed, phase | slot as u64, rep as u64)
}

/// Draws the common index block (shared by all repetitions) for every mode,
/// biased by density. The fresh blocks of the returned spec are empty.
pub fn draw_common(dp: &DensityProfile, opts: &SamplingOptions, rank: usize) -> Result<SampleSpec> {
    opts.validate()?;
    let mut tensor_modes: [IndexSample; 3] = Default::default();
    for (mode, sample) in tensor_modes.iter_mut().enumerate() {
        let dim = dp.tensor[mode].len();
        let total = target_size(dim, opts.s_tensor[mode], rank);
        let k = common_size(total, opts.p);
        let mut rng = slot_rng(opts, PHASE_COMMON, mode, 0);
        sample.common = weighted_sample_without_replacement(
            &dp.tensor[mode],
            k,
            &mut rng,
            &format!("tensor mode {}", mode + 1),
        );
    }
    let mut side_cols: [Option<IndexSample>; 3] = [None, None, None];
    for mode in 0..3 {
        if let Some(density) = &dp.side[mode] {
            let total = target_size(density.len(), opts.s_side[mode], rank);
            let k = common_size(total, opts.p);
            let mut rng = slot_rng(opts, PHASE_COMMON, 3 + mode, 0);
            side_cols[mode] = Some(IndexSample {
                common: weighted_sample_without_replacement(
                    density,
                    k,
                    &mut rng,
                    &format!("side matrix {} columns", mode + 1),
                ),
                fresh: Vec::new(),
            });
        }
    }
    Ok(SampleSpec {
        tensor_modes,
        side_cols,
    })
}

/// Draws one repetition's fresh blocks, biased by density, from the
/// complement of the common block. Fresh draws use a stream keyed by
/// (seed, mode, repetition), so repetitions are independent and may be
/// drawn concurrently.
pub fn draw_repetition(
    dp: &DensityProfile,
    common: &SampleSpec,
    opts: &SamplingOptions,
    rank: usize,
    rep_index: usize,
) -> Result<SampleSpec> {
    opts.validate()?;
    let draw_fresh = |density: &[f64],
                      base: &IndexSample,
                      s: f64,
                      slot: usize,
                      what: &str|
     -> IndexSample {
        let dim = density.len();
        let total = target_size(dim, s, rank);
        let want = total.saturating_sub(base.common.len());
        let mut in_common = vec![false; dim];
        for &i in &base.common {
            in_common[i] = true;
        }
        let complement: Vec<usize> = (0..dim).filter(|&i| !in_common[i]).collect();
        let k = if want > complement.len() {
            log::warn!(
                "requested {} fresh indices for {} but only {} remain; clamping",
                want,
                what,
                complement.len()
            );
            complement.len()
        } else {
            want
        };
        let weights: Vec<f64> = complement.iter().map(|&i| density[i]).collect();
        let mut rng = slot_rng(opts, PHASE_FRESH, slot, rep_index);
        let picked = weighted_sample_without_replacement(&weights, k, &mut rng, what);
        let mut fresh: Vec<usize> = picked.into_iter().map(|pos| complement[pos]).collect();
        fresh.sort_unstable();
        IndexSample {
            common: base.common.clone(),
            fresh,
        }
    };

    let mut tensor_modes: [IndexSample; 3] = Default::default();
    for (mode, out) in tensor_modes.iter_mut().enumerate() {
        *out = draw_fresh(
            &dp.tensor[mode],
            &common.tensor_modes[mode],
            opts.s_tensor[mode],
            mode,
            &format!("tensor mode {}", mode + 1),
        );
    }
    let mut side_cols: [Option<IndexSample>; 3] = [None, None, None];
    for mode in 0..3 {
        if let Some(density) = &dp.side[mode] {
            let base = common.side_cols[mode].as_ref().cloned().unwrap_or_default();
            side_cols[mode] = Some(draw_fresh(
                density,
                &base,
                opts.s_side[mode],
                3 + mode,
                &format!("side matrix {} columns", mode + 1),
            ));
        }
    }
    Ok(SampleSpec {
        tensor_modes,
        side_cols,
    })
}

/// Restricts the coupled data to the spec's index sets. Coupled side
/// matrices reuse the tensor-mode set for their rows, so the coupling is
/// preserved; the spec itself is the index map for redistributing factors.
pub fn extract(data: &CoupledData, spec: &SampleSpec) -> Result<CoupledData> {
    let dims = data.x.dims();
    let bounds = [dims.0, dims.1, dims.2];
    let rows: Vec<Vec<usize>> = (0..3).map(|m| spec.tensor_modes[m].union()).collect();
    for (m, set) in rows.iter().enumerate() {
        if let Some(&max) = set.iter().max() {
            if max >= bounds[m] {
                return Err(Error::OutOfBounds(format!(
                    "index {} on mode {} exceeds dimension {}",
                    max,
                    m + 1,
                    bounds[m]
                )));
            }
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "empty index set for tensor mode {}",
                m + 1
            )));
        }
    }

    let sub_dims = (rows[0].len(), rows[1].len(), rows[2].len());
    let x = if data.x.is_sparse() {
        let mut pos: Vec<Vec<Option<usize>>> = (0..3).map(|m| vec![None; bounds[m]]).collect();
        for m in 0..3 {
            for (new, &old) in rows[m].iter().enumerate() {
                pos[m][old] = Some(new);
            }
        }
        let entries: Vec<_> = data
            .x
            .iter_stored()
            .filter_map(|(i, j, k, v)| match (pos[0][i], pos[1][j], pos[2][k]) {
                (Some(a), Some(b), Some(c)) => Some((a, b, c, v)),
                _ => None,
            })
            .collect();
        Tensor3::sparse(sub_dims, entries)?
    } else {
        let mut values = Vec::with_capacity(sub_dims.0 * sub_dims.1 * sub_dims.2);
        for &i in &rows[0] {
            for &j in &rows[1] {
                for &k in &rows[2] {
                    values.push(data.x.get(i, j, k));
                }
            }
        }
        Tensor3::dense(sub_dims, values)?
    };

    let mut sides: [Option<Matrix>; 3] = [None, None, None];
    for mode in 0..3 {
        if let Some(y) = data.side(mode) {
            let cols: Vec<usize> = match &spec.side_cols[mode] {
                Some(sample) => sample.union(),
                None => (0..y.cols()).collect(),
            };
            if let Some(&max) = cols.iter().max() {
                if max >= y.cols() {
                    return Err(Error::OutOfBounds(format!(
                        "column index {} exceeds side matrix {} width {}",
                        max,
                        mode + 1,
                        y.cols()
                    )));
                }
            }
            let mut sub = ndarray::Array2::zeros((rows[mode].len(), cols.len()));
            for (rr, &r) in rows[mode].iter().enumerate() {
                for (cc, &c) in cols.iter().enumerate() {
                    sub[(rr, cc)] = y[(r, c)];
                }
            }
            sides[mode] = Some(Matrix::from_raw(sub));
        }
    }
    CoupledData::new(x, sides[0].take(), sides[1].take(), sides[2].take())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_chacha::rand_core::SeedableRng;

    fn ones_data() -> CoupledData {
        let x = Tensor3::from_fn((2, 2, 2), |_, _, _| 1.0);
        let y1 = Matrix::new(Array2::ones((2, 3))).unwrap();
        CoupledData::new(x, Some(y1), None, None).unwrap()
    }

    #[test]
    fn density_all_ones_example() {
        let dp = density_profile(&ones_data());
        // 4 tensor cells + 3 matrix entries per first-mode index.
        assert_eq!(dp.tensor[0], vec![7.0, 7.0]);
        assert_eq!(dp.tensor[1], vec![4.0, 4.0]);
        assert_eq!(dp.tensor[2], vec![4.0, 4.0]);
        assert_eq!(dp.side[0], Some(vec![2.0, 2.0, 2.0]));
        assert!(dp.side[1].is_none() && dp.side[2].is_none());
    }

    #[test]
    fn density_single_negative_entry() {
        // One nonzero of value -5 at 1-based (2, 1, 1).
        let x = Tensor3::sparse((2, 2, 2), vec![(1, 0, 0, -5.0)]).unwrap();
        let dp = density_profile(&CoupledData::tensor_only(x));
        assert_eq!(dp.tensor[0], vec![0.0, 5.0]);
        assert_eq!(dp.tensor[1], vec![5.0, 0.0]);
        assert_eq!(dp.tensor[2], vec![5.0, 0.0]);
    }

    #[test]
    fn density_sparse_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dense = Tensor3::from_fn((6, 5, 4), |_, _, _| {
            if rng.random::<f64>() < 0.15 {
                rng.random::<f64>() * 2.0 - 1.0
            } else {
                0.0
            }
        });
        let entries: Vec<_> = dense.iter_stored().filter(|&(_, _, _, v)| v != 0.0).collect();
        let sparse = Tensor3::sparse((6, 5, 4), entries).unwrap();
        let dp_dense = density_profile(&CoupledData::tensor_only(dense.clone()));
        let dp_sparse = density_profile(&CoupledData::tensor_only(sparse));
        // Brute-force marginal for the first mode.
        let mut want = vec![0.0; 6];
        for i in 0..6 {
            for j in 0..5 {
                for k in 0..4 {
                    want[i] += dense.get(i, j, k).abs();
                }
            }
        }
        assert_eq!(dp_dense.tensor[0], want);
        assert_eq!(dp_sparse.tensor[0], want);
        assert_eq!(dp_sparse.tensor[1], dp_dense.tensor[1]);
        assert_eq!(dp_sparse.tensor[2], dp_dense.tensor[2]);
    }

    #[test]
    fn common_empty_when_p_zero() {
        let dp = density_profile(&ones_data());
        let opts = SamplingOptions {
            p: 0.0,
            ..Default::default()
        };
        let spec = draw_common(&dp, &opts, 1).unwrap();
        assert!(spec.tensor_modes.iter().all(|s| s.common.is_empty()));
        assert!(spec.side_cols[0].as_ref().unwrap().common.is_empty());
    }

    #[test]
    fn common_point_mass_density() {
        let dp = DensityProfile {
            tensor: [vec![0.0, 0.0, 9.0, 0.0], vec![1.0; 4], vec![1.0; 4]],
            side: [None, None, None],
        };
        for seed in 0..30 {
            let opts = SamplingOptions {
                s_tensor: [4.0; 3],
                p: 0.9,
                seed,
                ..Default::default()
            };
            let spec = draw_common(&dp, &opts, 1).unwrap();
            assert_eq!(spec.tensor_modes[0].common, vec![2]);
        }
    }

    #[test]
    fn common_uniform_density_is_hypergeometric() {
        // dim 100, sample 20 per seed; per-index selection frequency over
        // many seeds must sit within 3 sigma of 0.2.
        let dp = DensityProfile {
            tensor: [vec![1.0; 100], vec![1.0; 4], vec![1.0; 4]],
            side: [None, None, None],
        };
        let trials = 10_000;
        let mut counts = vec![0usize; 100];
        for seed in 0..trials {
            let opts = SamplingOptions {
                s_tensor: [2.5, 1.0, 1.0],
                p: 0.5,
                seed,
                ..Default::default()
            };
            let spec = draw_common(&dp, &opts, 1).unwrap();
            assert_eq!(spec.tensor_modes[0].common.len(), 20);
            for &i in &spec.tensor_modes[0].common {
                counts[i] += 1;
            }
        }
        let sigma = (0.2 * 0.8 / trials as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / trials as f64;
            assert!(
                (freq - 0.2).abs() <= 3.0 * sigma,
                "index {} frequency {} outside 0.2 +/- {}",
                i,
                freq,
                3.0 * sigma
            );
        }
    }

    #[test]
    fn single_draw_bias_frequencies() {
        let weights = [1.0, 2.0, 3.0];
        let mut counts = [0usize; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let trials = 100_000;
        for _ in 0..trials {
            let picked = weighted_sample_without_replacement(&weights, 1, &mut rng, "test");
            counts[picked[0]] += 1;
        }
        for (i, want) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
            let freq = counts[i] as f64 / trials as f64;
            assert!((freq - want).abs() < 0.01, "index {}: {} vs {}", i, freq, want);
        }
    }

    #[test]
    fn repetition_sizes_and_composition() {
        // p = 0.5, dim = 40, s = 4: 5 common + 5 fresh = 10 per repetition.
        let dp = DensityProfile {
            tensor: [vec![1.0; 40], vec![1.0; 40], vec![1.0; 40]],
            side: [None, None, None],
        };
        let opts = SamplingOptions {
            s_tensor: [4.0; 3],
            p: 0.5,
            seed: 7,
            ..Default::default()
        };
        let common = draw_common(&dp, &opts, 2).unwrap();
        let spec = draw_repetition(&dp, &common, &opts, 2, 0).unwrap();
        for m in 0..3 {
            assert_eq!(spec.tensor_modes[m].common.len(), 5);
            assert_eq!(spec.tensor_modes[m].fresh.len(), 5);
            assert_eq!(spec.tensor_modes[m].union().len(), 10);
        }
    }

    #[test]
    fn degenerate_sampling_keeps_everything() {
        let dp = density_profile(&ones_data());
        let opts = SamplingOptions {
            p: 0.0,
            ..Default::default()
        };
        let common = draw_common(&dp, &opts, 1).unwrap();
        let spec = draw_repetition(&dp, &common, &opts, 1, 0).unwrap();
        assert_eq!(spec.tensor_modes[0].union(), vec![0, 1]);
        assert_eq!(spec.tensor_modes[1].union(), vec![0, 1]);
        assert_eq!(spec.side_cols[0].as_ref().unwrap().union(), vec![0, 1, 2]);
    }

    #[test]
    fn repetitions_share_common_but_not_fresh() {
        let dp = DensityProfile {
            tensor: [vec![1.0; 60], vec![1.0; 60], vec![1.0; 60]],
            side: [None, None, None],
        };
        let opts = SamplingOptions {
            s_tensor: [3.0; 3],
            p: 0.4,
            seed: 11,
            r: 4,
            ..Default::default()
        };
        let common = draw_common(&dp, &opts, 2).unwrap();
        let specs: Vec<SampleSpec> = (0..100)
            .map(|rep| draw_repetition(&dp, &common, &opts, 2, rep).unwrap())
            .collect();
        let mut any_differ = false;
        for spec in &specs {
            for m in 0..3 {
                assert_eq!(spec.tensor_modes[m].common, common.tensor_modes[m].common);
                let fresh = &spec.tensor_modes[m].fresh;
                assert!(fresh.iter().all(|i| !common.tensor_modes[m].common.contains(i)));
                let mut dedup = fresh.clone();
                dedup.dedup();
                assert_eq!(&dedup, fresh, "duplicates in fresh set");
            }
            if spec.tensor_modes[0].fresh != specs[0].tensor_modes[0].fresh {
                any_differ = true;
            }
        }
        assert!(any_differ, "all 100 repetitions drew identical fresh sets");
    }

    #[test]
    fn draws_are_deterministic() {
        let dp = density_profile(&ones_data());
        let opts = SamplingOptions {
            s_tensor: [2.0; 3],
            p: 0.3,
            seed: 99,
            ..Default::default()
        };
        let c1 = draw_common(&dp, &opts, 1).unwrap();
        let c2 = draw_common(&dp, &opts, 1).unwrap();
        assert_eq!(c1, c2);
        let r1 = draw_repetition(&dp, &c1, &opts, 1, 3).unwrap();
        let r2 = draw_repetition(&dp, &c2, &opts, 1, 3).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn extract_full_range_is_identity() {
        let data = ones_data();
        let spec = SampleSpec {
            tensor_modes: [
                IndexSample { common: vec![], fresh: vec![0, 1] },
                IndexSample { common: vec![0, 1], fresh: vec![] },
                IndexSample { common: vec![0], fresh: vec![1] },
            ],
            side_cols: [
                Some(IndexSample { common: vec![], fresh: vec![0, 1, 2] }),
                None,
                None,
            ],
        };
        let sub = extract(&data, &spec).unwrap();
        assert_eq!(sub, data);
    }

    #[test]
    fn extract_single_cell() {
        // x(i,j,k) = i + 2j + 4k (1-based); cell (2,1,1) holds 8.
        let x = Tensor3::from_fn((2, 2, 2), |i, j, k| ((i + 1) + 2 * (j + 1) + 4 * (k + 1)) as f64);
        let spec = SampleSpec {
            tensor_modes: [
                IndexSample { common: vec![], fresh: vec![1] },
                IndexSample { common: vec![], fresh: vec![0] },
                IndexSample { common: vec![], fresh: vec![0] },
            ],
            side_cols: [None, None, None],
        };
        let sub = extract(&CoupledData::tensor_only(x), &spec).unwrap();
        assert_eq!(sub.x.dims(), (1, 1, 1));
        assert_eq!(sub.x.get(0, 0, 0), 8.0);
    }

    #[test]
    fn extract_preserves_coupling_rows() {
        // Marker values: Y1(i, c) = 100 i + c identifies the source row.
        let x = Tensor3::from_fn((6, 3, 3), |i, j, k| (i + j + k) as f64);
        let y1 = Matrix::new(Array2::from_shape_fn((6, 4), |(r, c)| (100 * r + c) as f64)).unwrap();
        let data = CoupledData::new(x, Some(y1), None, None).unwrap();
        let spec = SampleSpec {
            tensor_modes: [
                IndexSample { common: vec![1], fresh: vec![4] },
                IndexSample { common: vec![], fresh: vec![0, 1, 2] },
                IndexSample { common: vec![], fresh: vec![0, 1, 2] },
            ],
            side_cols: [
                Some(IndexSample { common: vec![], fresh: vec![0, 1, 2, 3] }),
                None,
                None,
            ],
        };
        let sub = extract(&data, &spec).unwrap();
        let y = sub.side(0).unwrap();
        assert_eq!(y.rows(), 2);
        for (rr, &orig) in [1usize, 4].iter().enumerate() {
            for c in 0..4 {
                assert_eq!(y[(rr, c)], (100 * orig + c) as f64);
            }
        }
    }

    #[test]
    fn extract_rejects_out_of_bounds() {
        let data = ones_data();
        let spec = SampleSpec {
            tensor_modes: [
                IndexSample { common: vec![], fresh: vec![5] },
                IndexSample { common: vec![], fresh: vec![0] },
                IndexSample { common: vec![], fresh: vec![0] },
            ],
            side_cols: [None, None, None],
        };
        assert!(matches!(extract(&data, &spec), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn extract_sparse_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dense = Tensor3::from_fn((8, 7, 6), |_, _, _| {
            if rng.random::<f64>() < 0.2 {
                rng.random::<f64>()
            } else {
                0.0
            }
        });
        let entries: Vec<_> = dense.iter_stored().filter(|&(_, _, _, v)| v != 0.0).collect();
        let sparse = Tensor3::sparse((8, 7, 6), entries).unwrap();
        let spec = SampleSpec {
            tensor_modes: [
                IndexSample { common: vec![0], fresh: vec![2, 5] },
                IndexSample { common: vec![3], fresh: vec![1, 6] },
                IndexSample { common: vec![2], fresh: vec![0, 4] },
            ],
            side_cols: [None, None, None],
        };
        let a = extract(&CoupledData::tensor_only(dense), &spec).unwrap();
        let b = extract(&CoupledData::tensor_only(sparse), &spec).unwrap();
        assert!(b.x.is_sparse());
        assert_eq!(a.x, b.x);
    }
}
