//! Length-normalized beam search over any incremental decoder.

use crate::error::{Error, Result};
use crate::textproc::{BOS, EOS, PAD};

pub const DEFAULT_BEAM: usize = 5;

pub trait StepDecoder {
    /// Advances the hypotheses selected by `parents` (indices into the
    /// previous step's rows; `[0]` on the first call) by feeding `tokens`.
    /// Returns one row of log-probabilities per hypothesis.
    fn step(&mut self, parents: &[usize], tokens: &[usize]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    score: f64,
}

fn banned(v: usize) -> bool {
    v == BOS || v == PAD
}

/// Highest length-normalized log-probability sequence (score divided by the
/// number of emitted tokens, EOS included). The returned ids exclude BOS
/// and EOS.
pub fn beam_search<D: StepDecoder>(dec: &mut D, beam_width: usize, max_len: usize) -> Result<Vec<usize>> {
    if beam_width < 1 {
        return Err(Error::Contract("beam width must be at least 1".into()));
    }
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut parents = vec![0];
    let mut feed = vec![BOS];
    let mut finished: Vec<(f64, Vec<usize>)> = Vec::new();
    for step in 0..max_len {
        let logp = dec.step(&parents, &feed)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (k, row) in logp.iter().enumerate() {
            for (v, &lp) in row.iter().enumerate() {
                if !banned(v) {
                    cands.push((live[k].score + lp, k, v));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam_width);
        let mut next = Vec::new();
        parents.clear();
        feed.clear();
        for (score, k, v) in cands {
            if v == EOS {
                finished.push((score / (step + 1) as f64, live[k].tokens.clone()));
            } else {
                let mut tokens = live[k].tokens.clone();
                tokens.push(v);
                next.push(Hyp { tokens, score });
                parents.push(k);
                feed.push(v);
            }
        }
        live = next;
        if finished.len() >= beam_width || live.is_empty() {
            break;
        }
    }
    if finished.is_empty() {
        for h in &live {
            finished.push((h.score / h.tokens.len().max(1) as f64, h.tokens.clone()));
        }
    }
    let mut best = 0;
    for (i, f) in finished.iter().enumerate() {
        if f.0 > finished[best].0 {
            best = i;
        }
    }
    Ok(finished.swap_remove(best).1)
}

/// Argmax decoding (ties to the smallest id).
pub fn greedy<D: StepDecoder>(dec: &mut D, max_len: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut feed = BOS;
    for _ in 0..max_len {
        let row = dec.step(&[0], &[feed])?.swap_remove(0);
        let mut best = None;
        for (v, &lp) in row.iter().enumerate() {
            if !banned(v) && best.is_none_or(|(_, b)| lp > b) {
                best = Some((v, lp));
            }
        }
        let (v, _) = best.ok_or_else(|| Error::Contract("no decodable token".into()))?;
        if v == EOS {
            break;
        }
        out.push(v);
        feed = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed Markov table over a 6-token vocabulary: next-token log-probs
    /// depend only on the previous token.
    struct Table(Vec<Vec<f64>>);

    impl StepDecoder for Table {
        fn step(&mut self, _parents: &[usize], tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
            Ok(tokens.iter().map(|&t| self.0[t].clone()).collect())
        }
    }

    fn table(seed: u64) -> Table {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Table(
            (0..6)
                .map(|_| {
                    let mut r: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..0.0)).collect();
                    numkit::softmax_in_place(&mut r);
                    r.iter().map(|p| p.ln()).collect()
                })
                .collect(),
        )
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..50 {
            let a = beam_search(&mut table(seed), 1, 12).unwrap();
            let b = greedy(&mut table(seed), 12).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn wider_beam_never_scores_worse() {
        let score = |t: &Table, seq: &[usize]| {
            let mut prev = BOS;
            let mut s = 0.0;
            for &v in seq.iter().chain([EOS].iter()) {
                s += t.0[prev][v];
                prev = v;
            }
            s / (seq.len() + 1) as f64
        };
        for seed in 0..50 {
            let t = table(seed);
            let a = beam_search(&mut table(seed), 1, 30).unwrap();
            let b = beam_search(&mut table(seed), 5, 30).unwrap();
            assert_eq!(b, beam_search(&mut table(seed), 5, 30).unwrap());
            assert!(!b.contains(&BOS) && !b.contains(&PAD) && !b.contains(&EOS));
            if a.len() < 30 && b.len() < 30 {
                assert!(score(&t, &b) >= score(&t, &a) - 1e-12);
            }
        }
    }

    #[test]
    fn zero_width_is_rejected() {
        assert!(beam_search(&mut table(0), 0, 5).is_err());
    }
}
