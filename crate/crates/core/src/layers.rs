//! Recurrent building blocks shared by the captioner and the translation
//! model. Batches are laid out time-major for recurrent inputs (row
//! `t·B + b`) and batch-major for attention memories and decoder outputs
//! (row `b·T + t`).

use numkit::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::beam::StepDecoder;
use crate::error::Result;

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], bound, rng)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inp: usize, out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let w = store.insert(&format!("{name}.w"), glorot(inp, out, rng))?;
        let b = if bias {
            Some(store.insert(&format!("{name}.b"), Tensor::zeros(&[1, out]))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let mut y = g.matmul(x, w)?;
        if let Some(b) = self.b {
            let b = g.param(store, b);
            y = g.add_row(y, b)?;
        }
        Ok(y)
    }
}

/// LSTM cell whose input is the concatenation of several parts, each with
/// its own input matrix so parts known in advance can be projected for all
/// time steps in one product. Gate order: input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub hidden: usize,
    pub w_in: Vec<ParamId>,
    pub w_hh: ParamId,
    pub b: ParamId,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: &[usize], hidden: usize, rng: &mut R) -> Result<Self> {
        let w_in = inputs
            .iter()
            .enumerate()
            .map(|(k, &d)| store.insert(&format!("{name}.w_in{k}"), glorot(d, 4 * hidden, rng)))
            .collect::<numkit::Result<_>>()?;
        let w_hh = store.insert(&format!("{name}.w_hh"), glorot(hidden, 4 * hidden, rng))?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = store.insert(&format!("{name}.b"), Tensor::new(vec![1, 4 * hidden], bias)?)?;
        Ok(Self { hidden, w_in, w_hh, b })
    }

    /// `x · W_in[part]`.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, part: usize, x: Var) -> Result<Var> {
        let w = g.param(store, self.w_in[part]);
        Ok(g.matmul(x, w)?)
    }

    /// One step given the summed input projections `pre` (B×4H).
    pub fn step(&self, g: &mut Graph, store: &ParamStore, pre: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let w_hh = g.param(store, self.w_hh);
        let b = g.param(store, self.b);
        let rec = g.matmul(h, w_hh)?;
        let gates = g.add(pre, rec)?;
        let gates = g.add_row(gates, b)?;
        let s = g.sigmoid(gates)?;
        let i = g.slice_cols(s, 0, hd)?;
        let f = g.slice_cols(s, hd, hd)?;
        let o = g.slice_cols(s, 3 * hd, hd)?;
        let cand = g.slice_cols(gates, 2 * hd, hd)?;
        let cand = g.tanh(cand)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Runs over time-major projected inputs (`T·B × 4H`), forward or
    /// reversed; returns the hidden state for each position in input order.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, pre: Var, steps: usize, batch: usize, reverse: bool) -> Result<Vec<Var>> {
        let zeros = g.constant(Tensor::zeros(&[batch, self.hidden]));
        let (mut h, mut c) = (zeros, zeros);
        let mut out = vec![zeros; steps];
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let p = g.slice_rows(pre, t * batch, batch)?;
            (h, c) = self.step(g, store, p, h, c)?;
            out[t] = h;
        }
        Ok(out)
    }
}

/// Additive attention `v · tanh(W_h h + W_z z + b)`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub w_h: ParamId,
    pub w_z: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

/// Attention memory for a batch: `z` is `(B·T)×D`, `zp` its projection.
#[derive(Debug, Clone, Copy)]
pub struct Memory {
    pub z: Var,
    pub zp: Var,
    pub len: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, query: usize, key: usize, inner: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_h: store.insert(&format!("{name}.w_h"), glorot(query, inner, rng))?,
            w_z: store.insert(&format!("{name}.w_z"), glorot(key, inner, rng))?,
            b: store.insert(&format!("{name}.b"), Tensor::zeros(&[1, inner]))?,
            v: store.insert(&format!("{name}.v"), glorot(inner, 1, rng))?,
        })
    }

    pub fn memory(&self, g: &mut Graph, store: &ParamStore, z: Var, len: usize) -> Result<Memory> {
        let w_z = g.param(store, self.w_z);
        let b = g.param(store, self.b);
        let zp = g.matmul(z, w_z)?;
        let zp = g.add_row(zp, b)?;
        Ok(Memory { z, zp, len })
    }

    /// Context vectors (B×D) and attention weights (B×T) for queries `h`.
    pub fn context(&self, g: &mut Graph, store: &ParamStore, h: Var, mem: &Memory) -> Result<(Var, Var)> {
        let batch = g.value(h).rows();
        let w_h = g.param(store, self.w_h);
        let v = g.param(store, self.v);
        let hp = g.matmul(h, w_h)?;
        let hp = g.repeat_rows(hp, mem.len);
        let e = g.add(hp, mem.zp)?;
        let e = g.tanh(e)?;
        let s = g.matmul(e, v)?;
        let s = g.reshape(s, vec![batch, mem.len])?;
        let a = g.softmax(s)?;
        let c = g.weighted_row_sum(a, mem.z)?;
        Ok((c, a))
    }
}

/// Attention decoder fed `[embedding(y_{t−1}), context_t]`.
#[derive(Debug, Clone)]
pub struct AttnDecoder {
    pub lstm: Lstm,
    pub attn: Attention,
}

impl AttnDecoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, emb: usize, ctx: usize, hidden: usize, attn: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            lstm: Lstm::new(store, &format!("{name}.lstm"), &[emb, ctx], hidden, rng)?,
            attn: Attention::new(store, &format!("{name}.attn"), hidden, ctx, attn, rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden
    }

    /// Teacher-forced pass. `inputs` holds `steps` time-major rows of
    /// `batch` token ids; returns decoder states as `(B·steps)×H`.
    #[allow(clippy::too_many_arguments)]
    pub fn teacher(&self, g: &mut Graph, store: &ParamStore, emb: Var, mem: &Memory, inputs: &[usize], steps: usize, h0: Var) -> Result<Var> {
        let batch = g.value(h0).rows();
        let x = g.lookup(emb, inputs)?;
        let pe = self.lstm.project(g, store, 0, x)?;
        let mut h = h0;
        let mut c = g.constant(Tensor::zeros(&[batch, self.hidden()]));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let pe_t = g.slice_rows(pe, t * batch, batch)?;
            (h, c) = self.step_projected(g, store, pe_t, mem, h, c)?;
            states.push(h);
        }
        Ok(g.interleave_rows(&states)?)
    }

    fn step_projected(&self, g: &mut Graph, store: &ParamStore, pe: Var, mem: &Memory, h: Var, c: Var) -> Result<(Var, Var)> {
        let (ctx, _) = self.attn.context(g, store, h, mem)?;
        let pc = self.lstm.project(g, store, 1, ctx)?;
        let pre = g.add(pe, pc)?;
        self.lstm.step(g, store, pre, h, c)
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, emb: Var, mem: &Memory, tokens: &[usize], h: Var, c: Var) -> Result<(Var, Var)> {
        let x = g.lookup(emb, tokens)?;
        let pe = self.lstm.project(g, store, 0, x)?;
        self.step_projected(g, store, pe, mem, h, c)
    }
}

/// Tied output layer: `temperature · H · Embᵀ`.
pub fn tied_logits(g: &mut Graph, states: Var, emb: Var, temperature: Option<Var>) -> Result<Var> {
    let logits = g.matmul_t(states, emb)?;
    Ok(match temperature {
        Some(s) => g.scale_by(logits, s)?,
        None => logits,
    })
}

/// Incremental decoding of one source on an inference graph.
pub struct Stepper<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    dec: &'a AttnDecoder,
    emb: Var,
    temperature: Option<Var>,
    z: Var,
    len: usize,
    tiled: Option<(usize, Memory)>,
    h: Var,
    c: Var,
}

impl<'a> Stepper<'a> {
    /// `g` already holds the memory `z` (`len`×D, one source) and the
    /// initial decoder state `h0` (1×H).
    #[allow(clippy::too_many_arguments)]
    pub fn new(mut g: Graph, store: &'a ParamStore, dec: &'a AttnDecoder, emb: Var, temperature: Option<Var>, z: Var, len: usize, h0: Var) -> Self {
        let c = g.constant(Tensor::zeros(&[1, dec.hidden()]));
        Self {
            g,
            store,
            dec,
            emb,
            temperature,
            z,
            len,
            tiled: None,
            h: h0,
            c,
        }
    }

    fn memory(&mut self, k: usize) -> Result<Memory> {
        if let Some((n, m)) = self.tiled {
            if n == k {
                return Ok(m);
            }
        }
        let idx: Vec<usize> = (0..k).flat_map(|_| 0..self.len).collect();
        let z = self.g.lookup(self.z, &idx)?;
        let m = self.dec.attn.memory(&mut self.g, self.store, z, self.len)?;
        self.tiled = Some((k, m));
        Ok(m)
    }
}

impl StepDecoder for Stepper<'_> {
    fn step(&mut self, parents: &[usize], tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mem = self.memory(parents.len())?;
        let h = self.g.lookup(self.h, parents)?;
        let c = self.g.lookup(self.c, parents)?;
        let (h, c) = self.dec.step(&mut self.g, self.store, self.emb, &mem, tokens, h, c)?;
        self.h = h;
        self.c = c;
        let logits = tied_logits(&mut self.g, h, self.emb, self.temperature)?;
        let t = self.g.value(logits);
        Ok(t.data().chunks(t.cols()).map(numkit::log_softmax).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_position_attention_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "att", 3, 4, 5, &mut rng).unwrap();
        let mut g = Graph::new();
        let z = g.constant(Tensor::randn(&[2, 4], 1.0, &mut rng));
        let h = g.constant(Tensor::randn(&[2, 3], 1.0, &mut rng));
        let mem = att.memory(&mut g, &store, z, 1).unwrap();
        let (c, a) = att.context(&mut g, &store, h, &mem).unwrap();
        assert_eq!(g.value(a).data(), &[1.0, 1.0]);
        assert_eq!(g.value(c).data(), g.value(z).data());
    }

    #[test]
    fn uniform_scores_average_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "att", 3, 4, 5, &mut rng).unwrap();
        *store.value_mut(att.v).unwrap() = Tensor::zeros(&[5, 1]);
        let mut g = Graph::new();
        let z = g.constant(Tensor::randn(&[3, 4], 1.0, &mut rng));
        let h = g.constant(Tensor::randn(&[1, 3], 1.0, &mut rng));
        let mem = att.memory(&mut g, &store, z, 3).unwrap();
        let (c, a) = att.context(&mut g, &store, h, &mem).unwrap();
        assert!((g.value(a).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let zv = g.value(z);
        for d in 0..4 {
            let mean = (0..3).map(|t| zv.row(t)[d]).sum::<f64>() / 3.0;
            assert!((g.value(c).data()[d] - mean).abs() < 1e-12);
        }
    }
}
