//! Transportation simplex (u-v method) on integer masses.
//!
//! Integer supplies and demands keep every basic solution integral, so the
//! plan is exact; only the costs are floating point.

const EPS: f64 = 1e-12;
const BLAND_AFTER: usize = 1000;

struct Basis {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<i64>,
}

impl Basis {
    /// Northwest-corner start; degenerate zero-flow cells keep the basis a
    /// spanning tree with `m + n − 1` cells.
    fn northwest(supply: &[i64], demand: &[i64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let (mut s, mut d) = (supply.to_vec(), demand.to_vec());
        let mut b = Basis {
            m,
            n,
            cells: Vec::with_capacity(m + n - 1),
            flow: Vec::with_capacity(m + n - 1),
        };
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            b.cells.push((i, j));
            b.flow.push(x);
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if s[i] == 0 && i < m - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        b
    }

    /// Node ids: rows `0..m`, columns `m..m+n`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    /// Dual potentials with `u[0] = 0` and `u_i + v_j = c_ij` on the basis.
    fn potentials(&self, cost: &[f64], adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let mut pot = vec![f64::NAN; self.m + self.n];
        pot[0] = 0.0;
        let mut stack = vec![0];
        while let Some(node) = stack.pop() {
            for &(next, k) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j) = self.cells[k];
                    pot[next] = cost[i * self.n + j] - pot[node];
                    stack.push(next);
                }
            }
        }
        let v = pot.split_off(self.m);
        (pot, v)
    }

    /// Basis cells on the tree path from row `p` to column `q`, in order.
    fn path(&self, adj: &[Vec<(usize, usize)>], p: usize, q: usize) -> Vec<usize> {
        let target = self.m + q;
        let mut via: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[p] = true;
        let mut stack = vec![p];
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    via[next] = Some((node, k));
                    stack.push(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != p {
            let (prev, k) = via[node].expect("basis is a spanning tree");
            cells.push(k);
            node = prev;
        }
        cells.reverse();
        cells
    }
}

/// Minimum-cost flows (row-major `m × n`) shipping `supply` to `demand`.
/// Totals must agree.
pub(super) fn transport(cost: &[f64], m: usize, n: usize, supply: &[i64], demand: &[i64]) -> Vec<i64> {
    debug_assert_eq!(supply.iter().sum::<i64>(), demand.iter().sum::<i64>());
    let mut b = Basis::northwest(supply, demand);
    let mut in_basis = vec![false; m * n];
    for &(i, j) in &b.cells {
        in_basis[i * n + j] = true;
    }
    let mut iter = 0;
    loop {
        let adj = b.adjacency();
        let (u, v) = b.potentials(cost, &adj);
        let mut entering = None;
        let mut best = -EPS;
        'scan: for i in 0..m {
            for j in 0..n {
                if in_basis[i * n + j] {
                    continue;
                }
                let r = cost[i * n + j] - u[i] - v[j];
                if iter >= BLAND_AFTER {
                    if r < -EPS {
                        entering = Some((i, j));
                        break 'scan;
                    }
                } else if r < best {
                    best = r;
                    entering = Some((i, j));
                }
            }
        }
        let Some((p, q)) = entering else { break };
        let path = b.path(&adj, p, q);
        // Signs alternate along the cycle, starting with − next to row p.
        let (mut leave, mut theta) = (usize::MAX, i64::MAX);
        for &k in path.iter().step_by(2) {
            let better = b.flow[k] < theta
                || (b.flow[k] == theta && iter >= BLAND_AFTER && b.cells[k] < b.cells[leave]);
            if better {
                theta = b.flow[k];
                leave = k;
            }
        }
        for (pos, &k) in path.iter().enumerate() {
            b.flow[k] += if pos % 2 == 0 { -theta } else { theta };
        }
        let (li, lj) = b.cells[leave];
        in_basis[li * n + lj] = false;
        in_basis[p * n + q] = true;
        b.cells[leave] = (p, q);
        b.flow[leave] = theta;
        iter += 1;
    }
    let mut out = vec![0; m * n];
    for (&(i, j), &f) in b.cells.iter().zip(&b.flow) {
        out[i * n + j] = f;
    }
    out
}
