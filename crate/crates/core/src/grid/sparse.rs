//! Small sparse LU used for the Newton–Raphson Jacobian.
//!
//! Factorization is row-oriented Doolittle with diagonal pivots in the order
//! the caller numbers the unknowns; callers number unknowns by a minimum-degree
//! elimination order of the bus graph. A pivot that is too small relative to
//! its row falls back to dense LU with partial pivoting.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Singular;

/// Minimum-degree elimination order of an undirected graph given as
/// adjacency lists. Ties go to the lowest node index.
pub(crate) fn min_degree_order(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut graph: Vec<BTreeSet<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, nbrs)| nbrs.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let node = (0..n)
            .filter(|&i| alive[i])
            .min_by_key(|&i| (graph[i].len(), i))
            .expect("a node remains");
        alive[node] = false;
        order.push(node);
        let nbrs: Vec<usize> = std::mem::take(&mut graph[node]).into_iter().collect();
        for &a in &nbrs {
            graph[a].remove(&node);
            for &b in &nbrs {
                if a != b {
                    graph[a].insert(b);
                }
            }
        }
    }
    order
}

/// Solves A·x = rhs in place. `entries` are (row, col, value) triplets;
/// duplicates are summed.
pub(crate) fn solve(n: usize, entries: &[(usize, usize, f64)], rhs: &mut [f64]) -> Result<(), Singular> {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, v) in entries {
        rows[i].push((j, v));
    }
    for row in rows.iter_mut() {
        row.sort_by_key(|&(c, _)| c);
        row.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
    }
    match factor(n, &rows) {
        Some((lower, upper)) => {
            substitute(&lower, &upper, rhs);
            if rhs.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Singular)
            }
        }
        None => dense_solve(n, &rows, rhs),
    }
}

type Rows = Vec<Vec<(usize, f64)>>;

fn factor(n: usize, rows: &Rows) -> Option<(Rows, Rows)> {
    let mut lower: Rows = Vec::with_capacity(n);
    let mut upper: Rows = Vec::with_capacity(n);
    let mut work = vec![0.0; n];
    let mut marked = vec![false; n];
    let mut touched = Vec::new();
    let mut pending = BinaryHeap::new();
    let mut right = Vec::new();

    for (i, row) in rows.iter().enumerate() {
        let scale = row.iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()));
        for &(j, v) in row {
            work[j] = v;
            marked[j] = true;
            touched.push(j);
            if j < i {
                pending.push(Reverse(j));
            } else {
                right.push(j);
            }
        }
        let mut l_row = Vec::new();
        while let Some(Reverse(j)) = pending.pop() {
            let pivot_row: &Vec<(usize, f64)> = &upper[j];
            let factor = work[j] / pivot_row[0].1;
            work[j] = 0.0;
            if factor == 0.0 {
                continue;
            }
            l_row.push((j, factor));
            for &(c, u) in &pivot_row[1..] {
                if !marked[c] {
                    marked[c] = true;
                    touched.push(c);
                    if c < i {
                        pending.push(Reverse(c));
                    } else {
                        right.push(c);
                    }
                }
                work[c] -= factor * u;
            }
        }
        right.sort_unstable();
        let diag = if marked[i] { work[i] } else { 0.0 };
        let ok = diag.is_finite() && diag.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE);
        let mut u_row = Vec::with_capacity(right.len());
        u_row.push((i, diag));
        u_row.extend(right.iter().filter(|&&c| c != i).map(|&c| (c, work[c])));
        for &c in &touched {
            work[c] = 0.0;
            marked[c] = false;
        }
        touched.clear();
        right.clear();
        if !ok {
            return None;
        }
        lower.push(l_row);
        upper.push(u_row);
    }
    Some((lower, upper))
}

fn substitute(lower: &Rows, upper: &Rows, x: &mut [f64]) {
    for (i, row) in lower.iter().enumerate() {
        let s: f64 = row.iter().map(|&(j, l)| l * x[j]).sum();
        x[i] -= s;
    }
    for i in (0..upper.len()).rev() {
        let row = &upper[i];
        let s: f64 = row[1..].iter().map(|&(j, u)| u * x[j]).sum();
        x[i] = (x[i] - s) / row[0].1;
    }
}

fn dense_solve(n: usize, rows: &Rows, rhs: &mut [f64]) -> Result<(), Singular> {
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            a[(i, j)] = v;
        }
    }
    let b = DVector::from_column_slice(rhs);
    let x = a.lu().solve(&b).ok_or(Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Singular);
    }
    rhs.copy_from_slice(x.as_slice());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_against_dense_reference() {
        // Tridiagonal-plus-corner system with a known solution.
        let n = 7;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, 4.0 + i as f64));
            if i + 1 < n {
                entries.push((i, i + 1, -1.0));
                entries.push((i + 1, i, -1.5));
            }
        }
        entries.push((0, n - 1, 0.5));
        entries.push((n - 1, 0, 0.25));
        let x_true: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.3).collect();
        let mut b = vec![0.0; n];
        for &(i, j, v) in &entries {
            b[i] += v * x_true[j];
        }
        solve(n, &entries, &mut b).unwrap();
        for (x, t) in b.iter().zip(&x_true) {
            assert!((x - t).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_uses_dense_fallback() {
        // [[0, 1], [1, 0]] needs a row swap.
        let entries = [(0, 1, 1.0), (1, 0, 1.0)];
        let mut b = [2.0, 3.0];
        solve(2, &entries, &mut b).unwrap();
        assert_eq!(b, [3.0, 2.0]);
    }

    #[test]
    fn singular_is_reported() {
        let entries = [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)];
        let mut b = [1.0, 2.0];
        assert_eq!(solve(2, &entries, &mut b), Err(Singular));
    }

    #[test]
    fn min_degree_eliminates_leaves_first() {
        // Star: centre 0 with leaves 1..4.
        let adj = vec![vec![1, 2, 3, 4], vec![0], vec![0], vec![0], vec![0]];
        let order = min_degree_order(&adj);
        assert_eq!(order, vec![1, 2, 3, 0, 4]);
    }
}
