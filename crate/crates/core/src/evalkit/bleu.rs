use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu4: f64,
    pub precisions: [f64; MAX_N],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and hypothesis n-gram totals for one segment.
fn segment_counts<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> ([usize; MAX_N], [usize; MAX_N]) {
    let mut matched = [0; MAX_N];
    let mut total = [0; MAX_N];
    for n in 1..=MAX_N {
        let h = ngrams(hyp, n);
        let r = ngrams(reference, n);
        total[n - 1] = hyp.len().saturating_sub(n - 1);
        matched[n - 1] = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    }
    (matched, total)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c >= r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn combine(precisions: [f64; MAX_N], bp: f64) -> f64 {
    if precisions.iter().all(|&p| p > 0.0) {
        bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_N as f64).exp()
    } else {
        0.0
    }
}

/// Corpus-level BLEU-4 with one reference per segment, unsmoothed.
pub fn bleu4<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<S>]) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Contract("empty reference corpus".into()));
    }
    let mut matched = [0usize; MAX_N];
    let mut total = [0usize; MAX_N];
    let mut ref_total = [0usize; MAX_N];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hypotheses.iter().zip(references) {
        let (m, t) = segment_counts(h, rf);
        for n in 0..MAX_N {
            matched[n] += m[n];
            total[n] += t[n];
            ref_total[n] += rf.len().saturating_sub(n);
        }
        c += h.len();
        r += rf.len();
    }
    let mut precisions = [0.0; MAX_N];
    for n in 0..MAX_N {
        // An order absent from both sides has nothing to miss.
        precisions[n] = match (total[n], ref_total[n]) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (t, _) => matched[n] as f64 / t as f64,
        };
    }
    let bp = brevity_penalty(c, r);
    Ok(BleuReport {
        bleu4: combine(precisions, bp),
        precisions,
        brevity_penalty: bp,
        hyp_len: c,
        ref_len: r,
    })
}

/// Sentence-level BLEU-4 for diagnostics: add-one smoothing on the 2- to
/// 4-gram precisions.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    let (m, t) = segment_counts(hyp, reference);
    let mut p = [0.0; MAX_N];
    p[0] = if t[0] > 0 { m[0] as f64 / t[0] as f64 } else { 0.0 };
    for n in 1..MAX_N {
        p[n] = (m[n] + 1) as f64 / (t[n] + 1) as f64;
    }
    combine(p, brevity_penalty(hyp.len(), reference.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn short_hypothesis_pays_brevity_penalty() {
        let r = bleu4(&[toks("a b c d")], &[toks("a b c d e")]).unwrap();
        assert_eq!(r.precisions, [1.0; 4]);
        assert!((r.brevity_penalty - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-15);
        assert!((r.bleu4 - (-0.25f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn clipping_limits_repeated_words() {
        let r = bleu4(&[toks("the the the the")], &[toks("the cat")]).unwrap();
        assert_eq!(r.precisions[0], 0.25);
        assert_eq!(r.bleu4, 0.0);
    }

    #[test]
    fn count_mismatch_is_contract_error() {
        assert!(bleu4(&[toks("a")], &[]).is_err());
    }

    #[test]
    fn smoothed_sentence_score_is_positive() {
        let s = sentence_bleu(&toks("a b x y"), &toks("a b c d"));
        assert!(s > 0.0 && s < 1.0);
        assert_eq!(sentence_bleu(&toks("a b c d"), &toks("a b c d")), 1.0);
    }
}
