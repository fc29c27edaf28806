//! Merging of per-repetition partial factors: common-part normalization
//! with scale extraction, greedy column correspondence by common-part inner
//! products, and scale averaging.
//!
//! The common index block is what makes correspondence possible: after
//! normalization the common part of each column has unit norm, so inner
//! products between matching columns peak at 1 and everything else stays
//! below by Cauchy-Schwarz.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Columns whose common-part norm falls below this are left unscaled.
pub const DEGENERATE_COMMON_NORM: f64 = 1e-12;

/// Similarity below this marks an assignment as ambiguous.
pub const AMBIGUOUS_SIMILARITY: f64 = 0.9;

/// Ties within this margin of the runner-up are reported.
pub const TIE_MARGIN: f64 = 1e-6;

/// One repetition's factor matrix, redistributed to the full index space
/// (zero outside the repetition's sampled rows) and normalized so its
/// common-part columns have unit norm.
#[derive(Clone, Debug)]
pub struct PartialFactor {
    pub matrix: Matrix,
    /// Sorted common indices shared by all repetitions of this mode.
    pub common_indices: Vec<usize>,
    /// Per-column scales extracted by the normalization.
    pub lambda: Vec<f64>,
}

/// Why an assignment was flagged during merging.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmbiguityKind {
    /// The winning similarity was below [`AMBIGUOUS_SIMILARITY`].
    LowSimilarity,
    /// The winner was within [`TIE_MARGIN`] of the runner-up.
    NearTie,
}

/// A flagged column assignment.
#[derive(Clone, Debug)]
pub struct Ambiguity {
    /// Position of the partial in the merge order (second partial = 1).
    pub partial: usize,
    /// Column of the partial being assigned.
    pub column: usize,
    /// Output column it was assigned to.
    pub assigned_to: usize,
    pub similarity: f64,
    pub runner_up: Option<f64>,
    pub kind: AmbiguityKind,
}

/// Result of a merge: the combined matrix, the per-partial column
/// assignments (`assignments[i][f]` is the output column that partial `i`'s
/// column `f` landed in), and all flagged assignments.
#[derive(Clone, Debug)]
pub struct MergeOutcome {
    pub matrix: Matrix,
    pub assignments: Vec<Vec<usize>>,
    pub ambiguities: Vec<Ambiguity>,
}

/// Divides each column by the l2 norm of its common-part rows and returns
/// the norms as the scale vector. Columns whose common part is numerically
/// zero are left unscaled with scale 1; their indices are returned as the
/// third element.
pub fn normalize_common(m: &Matrix, common: &[usize]) -> Result<(Matrix, Vec<f64>, Vec<usize>)> {
    if common.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot normalize with an empty common index set".into(),
        ));
    }
    if let Some(&max) = common.iter().max() {
        if max >= m.rows() {
            return Err(Error::OutOfBounds(format!(
                "common index {} exceeds {} rows",
                max,
                m.rows()
            )));
        }
    }
    let mut out = m.as_array().clone();
    let cols = m.cols();
    let mut lambda = Vec::with_capacity(cols);
    let mut degenerate = Vec::new();
    for f in 0..cols {
        let norm_sq: f64 = common.iter().map(|&i| out[(i, f)] * out[(i, f)]).sum();
        let norm = norm_sq.sqrt();
        if norm < DEGENERATE_COMMON_NORM {
            lambda.push(1.0);
            degenerate.push(f);
        } else {
            lambda.push(norm);
            out.column_mut(f).mapv_inplace(|v| v / norm);
        }
    }
    Ok((Matrix::from_raw(out), lambda, degenerate))
}

/// Greedy column correspondence: the first partial seeds the result; each
/// later partial's columns are matched to the not-yet-assigned result
/// column with the largest common-part inner product, and only zero entries
/// of the chosen column are filled in (first writer wins on conflicts).
pub fn merge(partials: &[PartialFactor]) -> Result<MergeOutcome> {
    let first = partials
        .first()
        .ok_or_else(|| Error::InvalidArgument("merge needs at least one partial".into()))?;
    let (rows, cols) = first.matrix.dims();
    for p in partials {
        if p.matrix.dims() != (rows, cols) {
            return Err(Error::DimMismatch(format!(
                "partial is {}x{}, expected {}x{}",
                p.matrix.rows(),
                p.matrix.cols(),
                rows,
                cols
            )));
        }
        if p.common_indices != first.common_indices {
            return Err(Error::InvalidArgument(
                "partials disagree on the common index set".into(),
            ));
        }
        if p.lambda.len() != cols {
            return Err(Error::DimMismatch(format!(
                "lambda has length {}, expected {}",
                p.lambda.len(),
                cols
            )));
        }
    }

    let common = &first.common_indices;
    let mut result = first.matrix.as_array().clone();
    let mut assignments = vec![(0..cols).collect::<Vec<usize>>()];
    let mut ambiguities = Vec::new();

    for (pi, partial) in partials.iter().enumerate().skip(1) {
        let pm = partial.matrix.as_array();
        let mut unassigned: Vec<usize> = (0..cols).collect();
        let mut assignment = vec![0usize; cols];
        for f1 in 0..cols {
            let score = |f2: usize| -> f64 {
                common.iter().map(|&i| result[(i, f2)] * pm[(i, f1)]).sum()
            };
            // Argmax over raw signed inner products; ties go to the lowest
            // candidate index (unassigned is kept ascending).
            let mut slot = 0;
            let mut best = score(unassigned[0]);
            for (idx, &cand) in unassigned.iter().enumerate().skip(1) {
                let v = score(cand);
                if v > best {
                    best = v;
                    slot = idx;
                }
            }
            let winner = unassigned[slot];
            let runner_up = unassigned
                .iter()
                .filter(|&&c| c != winner)
                .map(|&c| score(c))
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));

            if best < AMBIGUOUS_SIMILARITY {
                ambiguities.push(Ambiguity {
                    partial: pi,
                    column: f1,
                    assigned_to: winner,
                    similarity: best,
                    runner_up,
                    kind: AmbiguityKind::LowSimilarity,
                });
            } else if let Some(ru) = runner_up {
                if best - ru < TIE_MARGIN {
                    ambiguities.push(Ambiguity {
                        partial: pi,
                        column: f1,
                        assigned_to: winner,
                        similarity: best,
                        runner_up,
                        kind: AmbiguityKind::NearTie,
                    });
                }
            }

            // Fill only the zero entries of the chosen column.
            for r in 0..rows {
                if result[(r, winner)] == 0.0 {
                    result[(r, winner)] = pm[(r, f1)];
                }
            }
            assignment[f1] = winner;
            unassigned.remove(slot);
        }
        assignments.push(assignment);
    }

    Ok(MergeOutcome {
        matrix: Matrix::from_raw(result),
        assignments,
        ambiguities,
    })
}

/// Arithmetic mean of already-aligned scale vectors (each partial's lambda
/// must be permuted by its merge assignment before averaging).
pub fn average_lambdas(lambdas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = lambdas
        .first()
        .ok_or_else(|| Error::InvalidArgument("no lambda vectors to average".into()))?;
    let n = first.len();
    if lambdas.iter().any(|l| l.len() != n) {
        return Err(Error::DimMismatch("lambda vectors differ in length".into()));
    }
    let mut mean = vec![0.0; n];
    for l in lambdas {
        for (m, v) in mean.iter_mut().zip(l) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= lambdas.len() as f64;
    }
    Ok(mean)
}

/// Permutes a repetition's lambda by its merge assignment: entry `f` of the
/// input belongs to output column `assignment[f]`.
pub fn align_lambda(lambda: &[f64], assignment: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; lambda.len()];
    for (f, &dest) in assignment.iter().enumerate() {
        out[dest] = lambda[f];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn matrix_from(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let m = matrix_from(&[&[3.0], &[4.0], &[7.0]]);
        let (out, lambda, flagged) = normalize_common(&m, &[0, 1]).unwrap();
        assert_eq!(lambda, vec![5.0]);
        assert!(flagged.is_empty());
        assert!((out[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((out[(1, 0)] - 0.8).abs() < 1e-15);
        assert!((out[(2, 0)] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_common_is_identity() {
        let m = matrix_from(&[&[0.6], &[0.8], &[2.0]]);
        let (out, lambda, _) = normalize_common(&m, &[0, 1]).unwrap();
        assert!((lambda[0] - 1.0).abs() < 1e-15);
        for r in 0..3 {
            assert!((out[(r, 0)] - m[(r, 0)]).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_zero_common_is_flagged() {
        let m = matrix_from(&[&[0.0, 1.0], &[0.0, 2.0], &[5.0, 3.0]]);
        let (out, lambda, flagged) = normalize_common(&m, &[0, 1]).unwrap();
        assert_eq!(flagged, vec![0]);
        assert_eq!(lambda[0], 1.0);
        assert_eq!(out[(2, 0)], 5.0);
        assert!(normalize_common(&m, &[]).is_err());
    }

    /// Mutual coherence of the normalized common-part columns.
    fn common_coherence(m: &Array2<f64>, common: &[usize], cols: usize) -> f64 {
        let mut worst = 0.0f64;
        for f1 in 0..cols {
            for f2 in (f1 + 1)..cols {
                let dot: f64 = common.iter().map(|&i| m[(i, f1)] * m[(i, f2)]).sum();
                let n1: f64 = common.iter().map(|&i| m[(i, f1)] * m[(i, f1)]).sum();
                let n2: f64 = common.iter().map(|&i| m[(i, f2)] * m[(i, f2)]).sum();
                worst = worst.max(dot.abs() / (n1 * n2).sqrt().max(1e-300));
            }
        }
        worst
    }

    fn plant_partials(
        seed: u64,
        rows: usize,
        cols: usize,
        common_len: usize,
        perm: &[usize],
    ) -> (PartialFactor, PartialFactor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let common: Vec<usize> = (0..common_len).collect();
        // Shared common block plus disjoint fresh row blocks. The common
        // block is redrawn until its column coherence is below 0.7, the
        // regime the correspondence step is specified for.
        let fresh_each = (rows - common_len) / 2;
        let mut base = Array2::zeros((rows, cols));
        loop {
            for &i in &common {
                for f in 0..cols {
                    base[(i, f)] = rng.random::<f64>() * 2.0 - 1.0;
                }
            }
            if common_coherence(&base, &common, cols) < 0.7 {
                break;
            }
        }
        let mut first = base.clone();
        for i in common_len..common_len + fresh_each {
            for f in 0..cols {
                first[(i, f)] = rng.random::<f64>();
            }
        }
        let mut second_cols = Array2::zeros((rows, cols));
        for f in 0..cols {
            for &i in &common {
                second_cols[(i, f)] = base[(i, f)];
            }
            for i in common_len + fresh_each..rows {
                second_cols[(i, f)] = rng.random::<f64>();
            }
        }
        // Apply the planted permutation: column f of the second partial is
        // the component perm[f].
        let mut second = Array2::zeros((rows, cols));
        for f in 0..cols {
            for r in 0..rows {
                second[(r, f)] = second_cols[(r, perm[f])];
            }
        }
        let (m1, l1, _) = normalize_common(&Matrix::from_raw(first), &common).unwrap();
        let (m2, l2, _) = normalize_common(&Matrix::from_raw(second), &common).unwrap();
        (
            PartialFactor { matrix: m1, common_indices: common.clone(), lambda: l1 },
            PartialFactor { matrix: m2, common_indices: common, lambda: l2 },
        )
    }

    #[test]
    fn merge_single_partial_is_identity() {
        let (p, _) = plant_partials(1, 8, 3, 3, &[0, 1, 2]);
        let out = merge(std::slice::from_ref(&p)).unwrap();
        assert_eq!(out.matrix, p.matrix);
        assert_eq!(out.assignments, vec![vec![0, 1, 2]]);
        assert!(out.ambiguities.is_empty());
    }

    #[test]
    fn merge_recovers_planted_permutation() {
        let perm = [2usize, 0, 1];
        let (p1, p2) = plant_partials(3, 11, 3, 3, &perm);
        let out = merge(&[p1.clone(), p2.clone()]).unwrap();
        // Column f of the second partial holds component perm[f], so it must
        // be assigned to output column perm[f].
        assert_eq!(out.assignments[1], perm.to_vec());
        // Nonzero rows of the result are the union of both partials' rows.
        for r in 0..11 {
            for f in 0..3 {
                let want = if p1.matrix[(r, f)] != 0.0 {
                    p1.matrix[(r, f)]
                } else {
                    let src = perm.iter().position(|&x| x == f).unwrap();
                    p2.matrix[(r, src)]
                };
                assert_eq!(out.matrix[(r, f)], want);
            }
        }
    }

    #[test]
    fn merge_orthonormal_similarities_are_one() {
        // Orthonormal common parts, matching columns identical: every
        // winning similarity must equal 1 to machine precision.
        let common = vec![0, 1, 2];
        let mut first = Array2::zeros((6, 3));
        for f in 0..3 {
            first[(f, f)] = 1.0; // orthonormal common block
            first[(3 + f, f)] = 0.5;
        }
        let mut second = Array2::zeros((6, 3));
        for f in 0..3 {
            second[(f, f)] = 1.0;
        }
        let p1 = PartialFactor {
            matrix: Matrix::from_raw(first.clone()),
            common_indices: common.clone(),
            lambda: vec![1.0; 3],
        };
        let p2 = PartialFactor {
            matrix: Matrix::from_raw(second.clone()),
            common_indices: common.clone(),
            lambda: vec![1.0; 3],
        };
        let out = merge(&[p1, p2]).unwrap();
        assert_eq!(out.assignments[1], vec![0, 1, 2]);
        assert!(out.ambiguities.is_empty());
        // Re-derive the winning similarities independently.
        for f in 0..3 {
            let sim: f64 = common.iter().map(|&i| first[(i, f)] * second[(i, f)]).sum();
            assert!((sim - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_never_overwrites_nonzero() {
        let perm = [1usize, 0];
        let (p1, p2) = plant_partials(9, 10, 2, 4, &perm);
        let out = merge(&[p1.clone(), p2]).unwrap();
        for r in 0..10 {
            for f in 0..2 {
                if p1.matrix[(r, f)] != 0.0 {
                    assert_eq!(out.matrix[(r, f)], p1.matrix[(r, f)]);
                }
            }
        }
    }

    #[test]
    fn merge_assignment_is_bijection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..50 {
            let cols = 2 + (trial % 5);
            let mut perm: Vec<usize> = (0..cols).collect();
            perm.shuffle(&mut rng);
            let (p1, p2) = plant_partials(100 + trial as u64, 4 + 3 * cols, cols, cols + 2, &perm);
            let out = merge(&[p1, p2]).unwrap();
            let mut seen = vec![false; cols];
            for &dest in &out.assignments[1] {
                assert!(!seen[dest], "column assigned twice");
                seen[dest] = true;
            }
        }
    }

    #[test]
    fn merge_low_similarity_is_reported() {
        // Second partial's common part is the first's rotated by 45
        // degrees: every similarity is at most 1/sqrt(2), so every
        // assignment is flagged.
        let common = vec![0, 1];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let m1 = matrix_from(&[&[1.0, 0.0], &[0.0, 1.0], &[0.3, 0.4]]);
        let m2 = matrix_from(&[&[h, -h], &[h, h], &[0.7, 0.1]]);
        let p1 = PartialFactor { matrix: m1, common_indices: common.clone(), lambda: vec![1.0; 2] };
        let p2 = PartialFactor { matrix: m2, common_indices: common, lambda: vec![1.0; 2] };
        let out = merge(&[p1, p2]).unwrap();
        assert_eq!(out.ambiguities.len(), 2);
        assert!(out
            .ambiguities
            .iter()
            .all(|a| a.kind == AmbiguityKind::LowSimilarity));
    }

    #[test]
    fn merge_rejects_mismatched_partials() {
        let (p1, _) = plant_partials(5, 8, 2, 3, &[0, 1]);
        let (p2, _) = plant_partials(6, 9, 2, 3, &[0, 1]);
        assert!(merge(&[p1.clone(), p2]).is_err());
        let (mut p3, _) = plant_partials(7, 8, 2, 4, &[0, 1]);
        p3.common_indices = vec![0, 1];
        assert!(merge(&[p1, p3]).is_err());
    }

    #[test]
    fn lambda_alignment_and_average() {
        assert_eq!(average_lambdas(&[vec![2.0, 4.0]]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(
            average_lambdas(&[vec![1.0, 3.0], vec![1.0, 3.0]]).unwrap(),
            vec![1.0, 3.0]
        );
        // Second partial's columns were swapped by merge: its lambda [3, 1]
        // aligns back to [1, 3] before averaging.
        let aligned = align_lambda(&[3.0, 1.0], &[1, 0]);
        assert_eq!(aligned, vec![1.0, 3.0]);
        assert_eq!(
            average_lambdas(&[vec![1.0, 3.0], aligned]).unwrap(),
            vec![1.0, 3.0]
        );
        assert!(average_lambdas(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(average_lambdas(&[]).is_err());
    }

    #[test]
    fn permutation_recovery_sweep() {
        // Random permutations with common-part coherence below 0.7 must be
        // recovered exactly across many seeded trials.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..500u64 {
            let cols = 2 + (trial as usize % 7); // up to 8 columns
            let rows = 3 * cols + 6;
            let mut perm: Vec<usize> = (0..cols).collect();
            perm.shuffle(&mut rng);
            let (p1, p2) = plant_partials(5_000 + trial, rows, cols, cols + 3, &perm);
            let out = merge(&[p1, p2]).unwrap();
            assert_eq!(out.assignments[1], perm, "trial {} failed", trial);
        }
    }
}
