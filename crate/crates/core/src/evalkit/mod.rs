//! Scoring: corpus BLEU-4, word-translation precision of the joint
//! embedding space, and the multi-seed ablation report.

mod bleu;
mod report;

pub use bleu::{bleu4, sentence_bleu, BleuReport, MAX_N};
pub use report::{
    ablation_report, median, read_csv, write_csv, AblationReport, AblationTable, Orderings, ScoreRow, ABLATION_CONFIGS,
    CAPTION_CONFIG, DIRECTIONS, SCORES_FILE, SUPERVISED_CONFIGS,
};

use numkit::Tensor;
use serde::{Deserialize, Serialize};

use crate::captioner::word_nn;
use crate::error::{Error, Result};
use crate::synthpivot::SynthLexicon;
use crate::textproc::{Preprocessor, UNK};
use crate::Lang;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconPrecision {
    pub k: usize,
    pub precision: f64,
    pub hits: usize,
    pub evaluated: usize,
    /// Lexicon words without a single in-vocabulary token on either side.
    pub skipped: Vec<String>,
}

fn single_id(pre: &Preprocessor, lang: Lang, word: &str) -> Option<usize> {
    match pre.encode(lang, &[word])[..] {
        [id] if id != UNK => Some(id),
        _ => None,
    }
}

/// Fraction of lexicon entries whose translation is among the `k` target
/// words nearest (cosine) to the source word.
pub fn lexicon_precision(
    w_x: &Tensor,
    w_y: &Tensor,
    lexicon: &SynthLexicon,
    pre: &Preprocessor,
    k: usize,
) -> Result<LexiconPrecision> {
    let mut hits = 0;
    let mut evaluated = 0;
    let mut skipped = Vec::new();
    for (a, b) in &lexicon.pairs {
        let (Some(x), Some(y)) = (single_id(pre, Lang::A, a), single_id(pre, Lang::B, b)) else {
            skipped.push(a.clone());
            continue;
        };
        if x >= w_x.rows() || y >= w_y.rows() {
            skipped.push(a.clone());
            continue;
        }
        evaluated += 1;
        if word_nn(x, k, w_x, w_y)?.iter().any(|&(j, _)| j == y) {
            hits += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::Data("no lexicon entry is embedded in both vocabularies".into()));
    }
    Ok(LexiconPrecision {
        k,
        precision: hits as f64 / evaluated as f64,
        hits,
        evaluated,
        skipped,
    })
}
