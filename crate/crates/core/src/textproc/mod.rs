//! Normalization, vocabularies and joint byte-pair encoding.

mod bpe;
mod normalize;
mod vocab;

use std::io::Write;
use std::path::Path;

pub use bpe::{BpeModel, END_OF_WORD};
pub use normalize::{normalize, normalize_str};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use crate::error::{Error, IoContext, Result};
use crate::Lang;

/// Sentences of token ids for one language; empty sentences are rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCorpus {
    pub lang: Lang,
    sentences: Vec<Vec<usize>>,
}

impl TokenizedCorpus {
    pub fn new(lang: Lang, sentences: Vec<Vec<usize>>, vocab: &Vocabulary) -> Result<Self> {
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Data(format!("sentence {i} is empty")));
            }
            if let Some(bad) = s.iter().find(|&&id| id >= vocab.len()) {
                return Err(Error::Data(format!("sentence {i} has id {bad} outside vocabulary")));
            }
        }
        Ok(Self { lang, sentences })
    }

    pub fn sentences(&self) -> &[Vec<usize>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Word-level text to model ids and back for both languages, optionally
/// through a joint BPE model.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub bpe: Option<BpeModel>,
    pub vocab_a: Vocabulary,
    pub vocab_b: Vocabulary,
}

impl Preprocessor {
    /// Learns the joint BPE (when `bpe_merges > 0`) and both vocabularies.
    pub fn fit(words_a: &[Vec<String>], words_b: &[Vec<String>], min_count: u64, bpe_merges: usize) -> Self {
        let bpe = (bpe_merges > 0)
            .then(|| BpeModel::learn(words_a.iter().chain(words_b.iter()), bpe_merges));
        let seg = |c: &[Vec<String>]| -> Vec<Vec<String>> {
            c.iter()
                .map(|s| match &bpe {
                    Some(m) => m.apply(s),
                    None => s.clone(),
                })
                .collect()
        };
        let vocab_a = Vocabulary::build(&seg(words_a), min_count);
        let vocab_b = Vocabulary::build(&seg(words_b), min_count);
        Self {
            bpe,
            vocab_a,
            vocab_b,
        }
    }

    pub fn vocab(&self, lang: Lang) -> &Vocabulary {
        match lang {
            Lang::A => &self.vocab_a,
            Lang::B => &self.vocab_b,
        }
    }

    /// Model-level tokens (subwords when BPE is active).
    pub fn segment<S: AsRef<str>>(&self, words: &[S]) -> Vec<String> {
        match &self.bpe {
            Some(m) => m.apply(words),
            None => words.iter().map(|w| w.as_ref().to_string()).collect(),
        }
    }

    pub fn encode<S: AsRef<str>>(&self, lang: Lang, words: &[S]) -> Vec<usize> {
        self.vocab(lang).encode(&self.segment(words))
    }

    /// Ids back to words, undoing BPE segmentation.
    pub fn decode(&self, lang: Lang, ids: &[usize]) -> Result<Vec<String>> {
        let toks = self.vocab(lang).decode(ids)?;
        match &self.bpe {
            Some(_) => BpeModel::restore(&toks),
            None => Ok(toks),
        }
    }

    /// Ids to words; a malformed subword tail is dropped rather than failing.
    pub fn decode_lossy(&self, lang: Lang, ids: &[usize]) -> Vec<String> {
        let toks: Vec<String> = ids
            .iter()
            .filter_map(|&i| self.vocab(lang).token(i).map(str::to_string))
            .collect();
        match &self.bpe {
            None => toks,
            Some(_) => {
                let mut keep = toks.len();
                while keep > 0 && !toks[keep - 1].ends_with(END_OF_WORD) {
                    keep -= 1;
                }
                BpeModel::restore(&toks[..keep]).unwrap_or_default()
            }
        }
    }
}

/// One sentence per line, tokens separated by single spaces.
pub fn write_corpus(path: &Path, sentences: &[Vec<String>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).ctx(format!("create {}", path.display()))?,
    );
    for s in sentences {
        writeln!(f, "{}", s.join(" ")).ctx("write corpus")?;
    }
    f.flush().ctx("write corpus")
}

pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let bytes = std::fs::read(path).ctx(format!("read {}", path.display()))?;
    let text = std::str::from_utf8(&bytes)?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}
