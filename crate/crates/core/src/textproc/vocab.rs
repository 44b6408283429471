use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ↔ id bijection with the four reserved ids at 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocabulary {
    pub fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            counts: vec![0; RESERVED.len()],
            index,
        }
    }

    /// Keeps every token whose count is strictly greater than `min_count`.
    /// Ids are assigned by descending count, ties by token text, so the
    /// result does not depend on corpus order.
    pub fn build<'a, I, S>(corpus: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sent in corpus {
            for tok in sent.as_ref() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c > min_count && !RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Self::reserved_only();
        for (t, c) in kept {
            v.index.insert(t.to_string(), v.tokens.len());
            v.tokens.push(t.to_string());
            v.counts.push(c);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Out-of-vocabulary tokens map to UNK.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Data(format!("id {i} outside vocabulary of {}", self.len())))
            })
            .collect()
    }

    /// TSV: `token<TAB>id<TAB>count`, one line per id in order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).ctx(format!("create {}", path.display()))?,
        );
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(f, "{t}\t{i}\t{c}").ctx("write vocabulary")?;
        }
        f.flush().ctx("write vocabulary")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).ctx(format!("read {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut v = Self {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        for (ln, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("vocabulary line {}: {line:?}", ln + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            let id: usize = f[1].parse().map_err(|_| bad())?;
            let count: u64 = f[2].parse().map_err(|_| bad())?;
            if id != v.tokens.len() || v.index.contains_key(f[0]) {
                return Err(bad());
            }
            v.index.insert(f[0].to_string(), id);
            v.tokens.push(f[0].to_string());
            v.counts.push(count);
        }
        if v.tokens.len() < RESERVED.len()
            || v.tokens.iter().zip(RESERVED).any(|(a, b)| a != b)
        {
            return Err(Error::Format("vocabulary must start with the reserved tokens".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sents(xs: &[&str]) -> Vec<Vec<String>> {
        xs.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn threshold_is_strict() {
        let c = sents(&["dog dog dog dog cat cat cat", "bird"]);
        let v = Vocabulary::build(&c, 3);
        assert!(v.id("dog").is_some());
        assert!(v.id("cat").is_none());
        assert_eq!(v.encode(&["cat", "dog"]), vec![UNK, 4]);
    }

    #[test]
    fn empty_corpus_has_reserved_only() {
        let c: Vec<Vec<String>> = Vec::new();
        let v = Vocabulary::build(&c, 0);
        assert_eq!(v.len(), 4);
        assert_eq!(v.tokens(), RESERVED);
    }

    #[test]
    fn tsv_round_trip() {
        let c = sents(&["a b b c c c"]);
        let v = Vocabulary::build(&c, 0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tsv");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
        assert!(Vocabulary::parse("x\t0\t1\n").is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_identities(words in proptest::collection::vec("[a-e]{1,3}", 1..40), seed in 0u64..1000) {
            let corpus = vec![words.clone()];
            let v = Vocabulary::build(&corpus, 0);
            let ids = v.encode(&words);
            prop_assert_eq!(v.decode(&ids).unwrap(), words.clone());
            prop_assert_eq!(v.encode(&v.decode(&ids).unwrap()), ids);

            // permutation invariance
            let mut shuffled = words.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = ((seed as usize).wrapping_mul(31).wrapping_add(i * 17)) % n;
                shuffled.swap(i, j);
            }
            let split: Vec<Vec<String>> = shuffled.chunks(3).map(|c| c.to_vec()).collect();
            prop_assert_eq!(Vocabulary::build(&split, 0), v);
        }
    }
}
