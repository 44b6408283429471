//! Brute-force reference for small transport problems: every basic
//! feasible solution corresponds to a spanning tree of the bipartite
//! row/column graph, so the optimum is the cheapest feasible tree.

use super::DistanceMatrix;
use crate::error::{Error, Result};

pub const MAX_SIDE: usize = 4;

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

/// Flows on a spanning tree by repeatedly peeling leaves, or `None` if the
/// tree forces a negative flow.
fn tree_flows(cells: &[(usize, usize)], m: usize, mut mass: Vec<i64>) -> Option<Vec<i64>> {
    let nodes = mass.len();
    let mut degree = vec![0; nodes];
    for &(i, j) in cells {
        degree[i] += 1;
        degree[m + j] += 1;
    }
    let mut flow = vec![0i64; cells.len()];
    let mut done = vec![false; cells.len()];
    for _ in 0..cells.len() {
        let (k, leaf) = cells.iter().enumerate().find_map(|(k, &(i, j))| {
            if done[k] {
                None
            } else if degree[i] == 1 {
                Some((k, i))
            } else if degree[m + j] == 1 {
                Some((k, m + j))
            } else {
                None
            }
        })?;
        let (i, j) = cells[k];
        let other = if leaf == i { m + j } else { i };
        let f = mass[leaf];
        if f < 0 {
            return None;
        }
        flow[k] = f;
        mass[leaf] = 0;
        mass[other] -= f;
        degree[i] -= 1;
        degree[m + j] -= 1;
        done[k] = true;
    }
    mass.iter().all(|&x| x == 0).then_some(flow)
}

/// Optimal EMD value by exhaustive enumeration of spanning-tree bases.
pub fn emd_oracle(d: &DistanceMatrix) -> Result<f64> {
    let (m, n) = (d.rows, d.cols);
    if m > MAX_SIDE || n > MAX_SIDE {
        return Err(Error::UnsupportedSize(format!(
            "oracle handles up to {MAX_SIDE}×{MAX_SIDE}, got {m}×{n}"
        )));
    }
    let all: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    // supplies n per row, demands m per column: total m·n
    let mut mass = vec![n as i64; m];
    mass.extend(std::iter::repeat(m as i64).take(n));
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let cells: Vec<(usize, usize)> = pick.iter().map(|&p| all[p]).collect();
        let mut parent: Vec<usize> = (0..m + n).collect();
        let acyclic = cells.iter().all(|&(i, j)| {
            let (a, b) = (find(&mut parent, i), find(&mut parent, m + j));
            parent[a] = b;
            a != b
        });
        if acyclic {
            if let Some(flow) = tree_flows(&cells, m, mass.clone()) {
                let cost: f64 = cells
                    .iter()
                    .zip(&flow)
                    .map(|(&(i, j), &f)| f as f64 * d.get(i, j))
                    .sum::<f64>()
                    / (m * n) as f64;
                best = best.min(cost);
            }
        }
        // next k-combination of all.len()
        let total = all.len();
        let Some(pos) = (0..k).rev().find(|&p| pick[p] < total - k + p) else { break };
        pick[pos] += 1;
        for q in pos + 1..k {
            pick[q] = pick[q - 1] + 1;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_on_forced_and_closed_form_cases() {
        let one = DistanceMatrix::new(1, 1, vec![0.3]).unwrap();
        assert_eq!(emd_oracle(&one).unwrap(), 0.3);
        let d = DistanceMatrix::new(2, 2, vec![0.1, 0.9, 0.8, 0.3]).unwrap();
        assert!((emd_oracle(&d).unwrap() - 0.2).abs() < 1e-15);
        let big = DistanceMatrix::new(5, 1, vec![0.0; 5]).unwrap();
        assert!(matches!(emd_oracle(&big), Err(Error::UnsupportedSize(_))));
    }
}
