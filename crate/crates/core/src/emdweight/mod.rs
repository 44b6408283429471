//! Exact Earth Mover's Distance between sentences under cosine ground
//! costs, its token-level decomposition, and the inverse-distance weights
//! used to re-weight noisy pseudo pairs.

pub mod oracle;
mod simplex;

use numkit::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine distances `D[i][j] = 1 − cos(W_x[x_i], W_y[y_j])`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "distance matrix {rows}×{cols} with {} entries",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Optimal transport plan `A` with uniform marginals and its cost `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
    pub d: f64,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.a.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn nonzeros(&self) -> usize {
        self.a.iter().filter(|&&x| x > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWeights {
    pub alpha_src: Vec<f64>,
    pub alpha_tgt: Vec<f64>,
    pub beta: f64,
    pub d: f64,
    pub d_src: Vec<f64>,
    pub d_tgt: Vec<f64>,
    #[serde(default)]
    pub degenerate: bool,
}

impl PairWeights {
    /// Unit weights, as used when re-weighting is disabled.
    pub fn unit(src_len: usize, tgt_len: usize) -> Self {
        Self {
            alpha_src: vec![1.0; src_len],
            alpha_tgt: vec![1.0; tgt_len],
            beta: 1.0,
            d: 0.0,
            d_src: vec![0.0; src_len],
            d_tgt: vec![0.0; tgt_len],
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    pub lambda_token: f64,
    pub lambda_sent: f64,
    /// β given to pairs whose distances cannot be computed.
    pub degenerate_beta: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            lambda_token: 10.0,
            lambda_sent: 5.0,
            degenerate_beta: 0.0,
        }
    }
}

fn row_norm(table: &Tensor, id: usize, side: &str) -> Result<f64> {
    if id >= table.rows() {
        return Err(Error::Data(format!("{side} id {id} outside embedding table of {}", table.rows())));
    }
    let n = table.row(id).iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate(format!("{side} token id {id} has a zero-norm embedding")));
    }
    Ok(n)
}

pub fn distance_matrix(src: &[usize], tgt: &[usize], w_x: &Tensor, w_y: &Tensor) -> Result<DistanceMatrix> {
    if w_x.cols() != w_y.cols() {
        return Err(Error::Contract(format!(
            "embedding widths differ: {} vs {}",
            w_x.cols(),
            w_y.cols()
        )));
    }
    let nx: Vec<f64> = src.iter().map(|&i| row_norm(w_x, i, "source")).collect::<Result<_>>()?;
    let ny: Vec<f64> = tgt.iter().map(|&j| row_norm(w_y, j, "target")).collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(src.len() * tgt.len());
    for (&i, ni) in src.iter().zip(&nx) {
        let u = w_x.row(i);
        for (&j, nj) in tgt.iter().zip(&ny) {
            let dot: f64 = u.iter().zip(w_y.row(j)).map(|(a, b)| a * b).sum();
            data.push((1.0 - dot / (ni * nj)).clamp(0.0, 2.0));
        }
    }
    DistanceMatrix::new(src.len(), tgt.len(), data)
}

/// Exact minimum-cost transport between uniform masses `1/rows` and
/// `1/cols`, returning an optimal basic plan.
pub fn solve_emd(d: &DistanceMatrix) -> Result<TransportPlan> {
    if let Some(x) = d.data.iter().find(|x| !x.is_finite()) {
        return Err(numkit::NumError::NumericDomain(if x.is_nan() {
            "NaN in distance matrix"
        } else {
            "infinite distance"
        })
        .into());
    }
    let (m, n) = (d.rows, d.cols);
    let flows = simplex::transport(&d.data, m, n, &vec![n as i64; m], &vec![m as i64; n]);
    let total = (m * n) as f64;
    let a: Vec<f64> = flows.iter().map(|&f| f as f64 / total).collect();
    let cost = a.iter().zip(&d.data).map(|(x, c)| x * c).sum();
    Ok(TransportPlan { rows: m, cols: n, a, d: cost })
}

/// Per-token share of the transport cost: `(d_x, d_y)`.
pub fn token_distances(plan: &TransportPlan, d: &DistanceMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; plan.rows];
    let mut dy = vec![0.0; plan.cols];
    for i in 0..plan.rows {
        for j in 0..plan.cols {
            let c = plan.get(i, j) * d.get(i, j);
            dx[i] += c;
            dy[j] += c;
        }
    }
    (dx, dy)
}

fn inverse_weights(ds: &[f64], lambda: f64) -> Vec<f64> {
    let min = ds.iter().copied().fold(f64::INFINITY, f64::min);
    ds.iter().map(|&x| (1.0 + (x - min)).powf(-lambda)).collect()
}

pub fn pair_weights(
    d_x: &[f64],
    d_y: &[f64],
    d: f64,
    global_min_d: f64,
    lambda_token: f64,
    lambda_sent: f64,
) -> Result<PairWeights> {
    if !(lambda_token >= 0.0 && lambda_sent >= 0.0) {
        return Err(Error::Contract("λ weights must be nonnegative".into()));
    }
    if global_min_d > d {
        return Err(Error::Contract(format!(
            "global minimum {global_min_d} exceeds pair distance {d}"
        )));
    }
    Ok(PairWeights {
        alpha_src: inverse_weights(d_x, lambda_token),
        alpha_tgt: inverse_weights(d_y, lambda_token),
        beta: (1.0 + (d - global_min_d)).powf(-lambda_sent),
        d,
        d_src: d_x.to_vec(),
        d_tgt: d_y.to_vec(),
        degenerate: false,
    })
}

/// EMD and token distances for one pair, or `None` when an embedding is
/// degenerate.
pub fn pair_distance(src: &[usize], tgt: &[usize], w_x: &Tensor, w_y: &Tensor) -> Result<Option<(f64, Vec<f64>, Vec<f64>)>> {
    let dm = match distance_matrix(src, tgt, w_x, w_y) {
        Ok(dm) => dm,
        Err(Error::Degenerate(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let plan = solve_emd(&dm)?;
    let (dx, dy) = token_distances(&plan, &dm);
    Ok(Some((plan.d, dx, dy)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeighedCorpus {
    pub weights: Vec<PairWeights>,
    pub global_min_d: f64,
    /// Positions of pairs flagged as degenerate.
    pub degenerate: Vec<usize>,
}

/// Weights a pair set: distances for every pair first, then the global
/// minimum over the whole set, then weights in input order.
pub fn weigh_corpus(
    pairs: &[(Vec<usize>, Vec<usize>)],
    w_x: &Tensor,
    w_y: &Tensor,
    cfg: &WeightConfig,
) -> Result<WeighedCorpus> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to weigh".into()));
    }
    if pairs.iter().any(|(s, t)| s.is_empty() || t.is_empty()) {
        return Err(Error::Data("pair with an empty side".into()));
    }
    let dists: Vec<_> = pairs
        .iter()
        .map(|(s, t)| pair_distance(s, t, w_x, w_y))
        .collect::<Result<_>>()?;
    let global_min = dists
        .iter()
        .flatten()
        .map(|x| x.0)
        .fold(f64::INFINITY, f64::min);
    let mut degenerate = Vec::new();
    let mut weights = Vec::with_capacity(pairs.len());
    for (k, (dist, (s, t))) in dists.into_iter().zip(pairs).enumerate() {
        match dist {
            Some((d, dx, dy)) => weights.push(pair_weights(&dx, &dy, d, global_min, cfg.lambda_token, cfg.lambda_sent)?),
            None => {
                degenerate.push(k);
                weights.push(PairWeights {
                    beta: cfg.degenerate_beta,
                    degenerate: true,
                    ..PairWeights::unit(s.len(), t.len())
                });
            }
        }
    }
    Ok(WeighedCorpus {
        weights,
        global_min_d: if global_min.is_finite() { global_min } else { 0.0 },
        degenerate,
    })
}
