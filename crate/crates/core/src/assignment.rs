//! Minimum-cost perfect assignment (Hungarian algorithm, O(n³)).
//!
//! The shortest-augmenting-path variant with row/column potentials. Among
//! all optimal assignments the lexicographically smallest row→column mapping
//! is returned: after the solve, rows are fixed one at a time to the
//! smallest column that still admits a perfect matching on zero-reduced-cost
//! edges.

use nalgebra::DMatrix;

use crate::error::{precondition, Result};
use crate::scalar::Scalar;

/// A perfect assignment of rows to columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T: Scalar> {
    /// `mapping[row] = column`.
    pub mapping: Vec<usize>,
    /// `Σ_row cost[row, mapping[row]]`, summed in row order.
    pub total_cost: T,
}

/// Solves the square linear assignment problem.
pub fn hungarian<T: Scalar>(cost: &DMatrix<T>) -> Result<Assignment<T>> {
    let n = cost.nrows();
    if n != cost.ncols() {
        return Err(precondition(format!("cost matrix must be square, got {}x{}", n, cost.ncols())));
    }
    if cost.iter().any(|v| !v.finite()) {
        return Err(precondition("cost matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok(Assignment { mapping: Vec::new(), total_cost: T::zero() });
    }

    let inf = T::lit(f64::INFINITY);
    // 1-based potentials; column 0 is the virtual source
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0usize; n];
    for j in 1..=n {
        mapping[owner[j] - 1] = j - 1;
    }

    let scale = cost.iter().fold(T::one(), |acc, c| acc.max(c.abs()));
    let eps = scale * T::from_count(n) * T::lit(1e-12);
    let tight = DMatrix::from_fn(n, n, |r, c| cost[(r, c)] - u[r + 1] - v[c + 1] <= eps);
    lexicographic_refine(&tight, &mut mapping);

    let total_cost = (0..n).fold(T::zero(), |acc, r| acc + cost[(r, mapping[r])]);
    Ok(Assignment { mapping, total_cost })
}

/// Rewrites a perfect matching on `tight` edges into the lexicographically
/// smallest one.
fn lexicographic_refine(tight: &DMatrix<bool>, mapping: &mut [usize]) {
    let n = mapping.len();
    let mut col_owner = vec![0usize; n];
    for (r, &c) in mapping.iter().enumerate() {
        col_owner[c] = r;
    }
    for r in 0..n {
        for c in 0..mapping[r] {
            // columns held by fixed rows are never offered
            if !tight[(r, c)] || col_owner[c] < r {
                continue;
            }
            let freed = mapping[r];
            let displaced = col_owner[c];
            let mut visited = vec![false; n];
            visited[c] = true;
            if augment(tight, displaced, r, freed, mapping, &mut col_owner, &mut visited) {
                mapping[r] = c;
                col_owner[c] = r;
                break;
            }
        }
    }
}

/// Finds an alternating path that rematches `row` (not fixed, `> fixed`) so
/// that it ends in column `free`. Updates the matching on success.
fn augment(
    tight: &DMatrix<bool>,
    row: usize,
    fixed: usize,
    free: usize,
    mapping: &mut [usize],
    col_owner: &mut [usize],
    visited: &mut [bool],
) -> bool {
    for c in 0..mapping.len() {
        if !tight[(row, c)] || visited[c] {
            continue;
        }
        let holder = col_owner[c];
        if c != free && holder <= fixed {
            continue;
        }
        visited[c] = true;
        if c == free || augment(tight, holder, fixed, free, mapping, col_owner, visited) {
            mapping[row] = c;
            col_owner[c] = row;
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Lexicographically first permutation attaining the minimum, by
    /// enumeration.
    fn brute_force(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
        let n = cost.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = (perm.clone(), f64::INFINITY);
        loop {
            let total = (0..n).fold(0.0, |acc, r| acc + cost[(r, perm[r])]);
            if total < best.1 {
                best = (perm.clone(), total);
            }
            // next permutation
            let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else {
                break;
            };
            let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
            perm.swap(i, j);
            perm[i + 1..].reverse();
        }
        best
    }

    #[test]
    fn zero_diagonal() {
        let cost = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 + (i * j) as f64 });
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.mapping, vec![0, 1, 2, 3]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn two_by_two() {
        let a = hungarian(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert_eq!(a.mapping, vec![0, 1]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn ties_resolve_to_smallest_mapping() {
        let a = hungarian(&DMatrix::from_element(3, 3, 1.0)).unwrap();
        assert_eq!(a.mapping, vec![0, 1, 2]);
        let b = hungarian(&DMatrix::from_row_slice(3, 3, &[5.0, 1.0, 1.0, 1.0, 5.0, 1.0, 1.0, 1.0, 5.0])).unwrap();
        assert_eq!(b.mapping, vec![1, 2, 0]);
    }

    #[test]
    fn bad_input() {
        assert!(hungarian(&DMatrix::<f64>::zeros(2, 3)).is_err());
        assert!(hungarian(&DMatrix::from_element(2, 2, f64::NAN)).is_err());
        assert!(hungarian(&DMatrix::<f64>::zeros(0, 0)).unwrap().mapping.is_empty());
    }

    proptest! {
        #[test]
        fn matches_enumeration(n in 1usize..=6, entries in prop::collection::vec(-10.0f64..10.0, 36)) {
            let cost = DMatrix::from_fn(n, n, |i, j| entries[i * 6 + j]);
            let a = hungarian(&cost).unwrap();
            let (perm, best) = brute_force(&cost);
            prop_assert_eq!(a.mapping, perm);
            prop_assert_eq!(a.total_cost, best);
        }

        #[test]
        fn integer_ties_match_enumeration(n in 1usize..=6, entries in prop::collection::vec(0u8..3, 36)) {
            let cost = DMatrix::from_fn(n, n, |i, j| entries[i * 6 + j] as f64);
            let a = hungarian(&cost).unwrap();
            let (perm, best) = brute_force(&cost);
            prop_assert_eq!(a.mapping, perm);
            prop_assert_eq!(a.total_cost, best);
        }
    }
}
